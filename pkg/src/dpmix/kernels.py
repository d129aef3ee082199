"""Backend selection for the shortfall kernel.

DPMIX_BACKEND=numpy forces the vectorized numpy path; otherwise the numba
kernels are used when numba imports cleanly.
"""

import os
import warnings

import numpy as np

from . import _kernels_numpy

_requested = os.environ.get("DPMIX_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"DPMIX_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_impl = _kernels_numpy
BACKEND = "numpy"
if _requested == "numba":
    try:
        from . import _kernels_numba
    except ImportError as exc:  # pragma: no cover - depends on environment
        warnings.warn(f"numba unavailable ({exc}); using numpy kernels")
    else:
        _impl = _kernels_numba
        BACKEND = "numba"


def shortfall_curve(eps, lam, K, phis):
    """Shortfall integral and its phi-slope at unit sensitivity.

    Args:
      eps: privacy parameter epsilon.
      lam: sigma / sensitivity.
      K: number of side components on each side.
      phis: shifts in units of the sensitivity.

    Returns:
      (s, ds) arrays, s[i] = integral of min(e^eps f(x) - f(x + phi_i), 0).
    """
    phis = np.ascontiguousarray(phis, dtype=np.float64)
    return _impl.shortfall_curve(float(eps), float(lam), int(K), phis)
