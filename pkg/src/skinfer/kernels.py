"""Backend selection for the inner loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy module ``_kernels_py``.  Set ``SKINFER_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and not os.environ.get("SKINFER_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def get(name=None):
    """Kernel module for ``name`` (default: the active backend)."""
    return BACKENDS[name or BACKEND]
