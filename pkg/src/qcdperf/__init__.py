"""qcdperf: lattice-QCD performance-engineering toolkit.

Subpackages:

* ``su3``       single-precision SU(3) kernels with exact flop accounting
* ``lattice``   4-D geometry, even-odd ordering, site/field-major layouts
* ``membench``  qcdstream access-pattern benchmarks, Stream copy, SMP runs
* ``solver``    staggered D-slash and even-odd CG with a dense oracle
* ``perfmodel`` analytic cluster model (scaling, substitution, latency)
* ``cli``       the ``qcdperf`` command-line front end
"""

__version__ = "0.1.0"

from . import lattice, membench, perfmodel, solver, su3  # noqa: F401
