"""Shared test helpers."""

import numpy as np
import pytest


class CountingComplex:
    """Complex scalar that counts real flops through its arithmetic.

    One complex multiply = 4 real multiplies + 2 real adds (6 flops); one
    complex add/sub = 2 real adds. Running kernels on these scalars derives
    the per-call flop constants independently of the shipped numbers.
    """

    flops = 0

    def __init__(self, z):
        self.z = complex(z)

    @classmethod
    def reset(cls):
        cls.flops = 0

    def __mul__(self, other):
        CountingComplex.flops += 6
        return CountingComplex(self.z * other.z)

    def __add__(self, other):
        CountingComplex.flops += 2
        return CountingComplex(self.z + other.z)

    def __sub__(self, other):
        CountingComplex.flops += 2
        return CountingComplex(self.z - other.z)


def counting_matrix(seed: int):
    gen = np.random.Generator(np.random.Philox(seed))
    return [[CountingComplex(complex(gen.random(), gen.random())) for _ in range(3)]
            for _ in range(3)]


def counting_vector(seed: int):
    gen = np.random.Generator(np.random.Philox(seed))
    return [CountingComplex(complex(gen.random(), gen.random())) for _ in range(3)]


@pytest.fixture
def fast_timing(monkeypatch):
    """Shrink the measurement floor so benchmark plumbing tests run quickly."""
    from qcdperf import membench

    monkeypatch.setattr(membench, "MIN_MEASURE_SEC", 0.005)
    monkeypatch.setattr(membench, "BEST_OF", 2)
