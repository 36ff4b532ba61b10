"""Pick the forest kernel at import time.

The compiled kernel is used when it was built; set ``VPMONDRIAN_PURE=1`` to
force the pure-Python one.
"""
import os

from . import _pykernel

PyForestKernel = _pykernel.ForestKernel

try:
    if os.environ.get("VPMONDRIAN_PURE", "") not in ("", "0"):
        raise ImportError("pure-Python kernel requested")
    from . import _ckernel
except ImportError:
    _ckernel = None
    CForestKernel = None
    ForestKernel = PyForestKernel
else:
    CForestKernel = _ckernel.ForestKernel
    ForestKernel = CForestKernel

BACKEND = ForestKernel.backend
