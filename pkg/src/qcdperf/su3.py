"""Single-precision SU(3) linear algebra kernels with exact flop accounting.

Matrices and vectors are plain numpy arrays of ``complex64``: a 3x3 matrix
occupies exactly 72 bytes and a 3-vector 24 bytes, which is what makes the
layout and cache experiments in the rest of the toolkit meaningful.

Flop convention (MILC): one complex multiply = 6 flops, one complex add = 2.
Each kernel's per-call constant is a module constant; benchmark code reports
``calls * constant`` and never infers flops from timings.
"""

from __future__ import annotations

import numpy as np

COMPLEX = np.complex64
REAL = np.float32

#: flops for one 3x3 (complex) matrix times 3-vector: 9 cmul + 6 cadd.
MAT_VEC_FLOPS = 9 * 6 + 6 * 2  # 66
#: flops for one 3x3 times 3x3 matrix product: 27 cmul + 18 cadd.
MAT_MAT_FLOPS = 27 * 6 + 18 * 2  # 198
#: flops for alpha*x + y on 3-vectors with complex alpha: 3 cmul + 3 cadd.
VEC_AXPY_FLOPS_COMPLEX = 3 * 6 + 3 * 2  # 24
#: same with real alpha: a real-by-complex scale is 2 flops per component.
VEC_AXPY_FLOPS_REAL = 3 * 2 + 3 * 2  # 12


def mat_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m @ v for single matrices or batches ((..., 3, 3) x (..., 3))."""
    return np.einsum("...ij,...j->...i", m, v)


def mat_vec_adj(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Adjoint product m^dag @ v."""
    return np.einsum("...ji,...j->...i", np.conj(m), v)


def mat_mat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b for single matrices or batches."""
    return np.einsum("...ij,...jk->...ik", a, b)


def vec_axpy(alpha: complex, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """alpha*x + y, in the working precision of the operands."""
    return (COMPLEX(alpha) * x + y).astype(COMPLEX, copy=False)


def mat_vec_ref(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scalar-loop reference for mat_vec; the oracle for every fast variant.

    Works on a single (3, 3) x (3,) pair, accumulating in the order the flop
    count assumes (j-inner).
    """
    out = np.zeros(3, dtype=COMPLEX)
    for i in range(3):
        acc = COMPLEX(0)
        for j in range(3):
            acc += m[i, j] * v[j]
        out[i] = acc
    return out


def mat_vec_adj_ref(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scalar-loop reference for mat_vec_adj."""
    out = np.zeros(3, dtype=COMPLEX)
    for i in range(3):
        acc = COMPLEX(0)
        for j in range(3):
            acc += np.conj(m[j, i]) * v[j]
        out[i] = acc
    return out


def mat_mat_ref(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scalar-loop reference for mat_mat."""
    out = np.zeros((3, 3), dtype=COMPLEX)
    for i in range(3):
        for k in range(3):
            acc = COMPLEX(0)
            for j in range(3):
                acc += a[i, j] * b[j, k]
            out[i, k] = acc
    return out


def random_su3_field(seed: int, n: int) -> np.ndarray:
    """n deterministic SU(3) matrices, shape (n, 3, 3) complex64.

    Rows are filled with uniform complex entries from a counter-based
    generator (Philox), Gram-Schmidt orthonormalized in double precision, and
    the third row is replaced by the conjugate cross product of the first two,
    which forces det = 1 exactly (up to rounding). Same seed -> bitwise
    identical output.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = np.random.Generator(np.random.Philox(seed))
    m = np.empty((n, 3, 3), dtype=np.complex128)
    m.real = gen.uniform(-1.0, 1.0, size=(n, 3, 3))
    m.imag = gen.uniform(-1.0, 1.0, size=(n, 3, 3))

    def _normalize(row):
        norm = np.sqrt(np.sum(row.real**2 + row.imag**2, axis=-1, keepdims=True))
        return row / norm

    r0 = _normalize(m[:, 0])
    r1 = m[:, 1] - np.sum(np.conj(r0) * m[:, 1], axis=-1, keepdims=True) * r0
    r1 = _normalize(r1)
    # conj(r0 x r1) completes an orthonormal triple with determinant +1
    r2 = np.conj(np.cross(r0, r1))
    out = np.stack([r0, r1, r2], axis=1)
    return out.astype(COMPLEX)


def random_su3(seed: int) -> np.ndarray:
    """One deterministic SU(3) matrix for the given seed."""
    return random_su3_field(seed, 1)[0]


def unitarity_defect(m: np.ndarray) -> float:
    """max |(M^dag M - I)_ij| over the batch; < 1e-5 for generated matrices."""
    mm = np.einsum("...ji,...jk->...ik", np.conj(m), m)
    eye = np.eye(3, dtype=mm.dtype)
    return float(np.max(np.abs(mm - eye)))
