"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``COEFFCAST_PURE=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("COEFFCAST_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def discrete_frechet(a, b, impl=None):
    return float((impl or _impl).discrete_frechet(_f64(a), _f64(b)))


def nearest_code(z, codebook, impl=None):
    return (impl or _impl).nearest_code(_f64(z), _f64(codebook))


def causal_smooth(x, weights, impl=None):
    return (impl or _impl).causal_smooth(_f64(x), _f64(weights))
