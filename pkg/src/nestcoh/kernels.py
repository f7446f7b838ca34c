"""Select the compiled kernels when available, else the pure-Python ones.

Set ``NESTCOH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
propagate_split = _kernels_py.propagate_split
conv_simpson = _kernels_py.conv_simpson

if os.environ.get("NESTCOH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        propagate_split = _compiled.propagate_split
        conv_simpson = _compiled.conv_simpson
