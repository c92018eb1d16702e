"""Backend selection for the hot loops.

The compiled module is used when it was built; setting
``UWDPG_PURE_PYTHON=1`` forces the Python twin.
"""
import os

from . import _kernels_py

BACKEND = "python"
patch_correction = _kernels_py.patch_correction

if os.environ.get("UWDPG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        patch_correction = _compiled.patch_correction
        BACKEND = "cython"
