"""Pick the OMP kernel at import: compiled if available, numpy otherwise.

Set ``DDL_BACKEND=python`` to force the fallback.
"""

import os

from . import _omp_py

BACKENDS = {"python": _omp_py}

try:
    from . import _omp_ext
except ImportError:  # extension not built
    _omp_ext = None
else:
    BACKENDS["cython"] = _omp_ext

_requested = os.environ.get("DDL_BACKEND", "").lower()
if _requested == "python" or _omp_ext is None:
    kernel = _omp_py
    BACKEND = "python"
else:
    kernel = _omp_ext
    BACKEND = "cython"


def get_kernel(name=None):
    """Return the kernel module ``name`` (default: the active one)."""
    if name is None:
        return kernel
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
