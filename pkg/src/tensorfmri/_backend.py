"""Select the variate kernel backend at import time.

The compiled Cython module is used when it imports; otherwise, or when
``TENSORFMRI_PURE_PYTHON`` is set to a non-empty value, the pure-Python
twin is used. Both produce identical draws for identical generator states.
"""
import os

from . import _kernels_py

if os.environ.get("TENSORFMRI_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "compiled"
