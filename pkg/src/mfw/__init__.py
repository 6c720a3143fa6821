"""Slow-fast stochastic evolution equations on 1D grids.

Simulation of coupled slow-fast SPDE truncations, averaging of the fast
component, numerical hypothesis checks, and minimum-action evaluation of
large-deviation rate functions.
"""

import os
import sys

# Thread count is fixed from MFW_THREADS before numba/numpy load their pools.
# BLAS stays single-threaded so reductions never depend on the pool size.
if "numba" not in sys.modules:
    _threads = os.environ.get("MFW_THREADS")
    if _threads:
        os.environ.setdefault("NUMBA_NUM_THREADS", _threads)
if "numpy" not in sys.modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, "1")

import warnings

# numba probes TBB on import of parallel kernels; the fallback layer is fine.
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"
