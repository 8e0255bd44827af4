"""Hot-kernel backend selection.

The compiled Cython extension is preferred; the pure NumPy fallback is
used when it is missing.  Set MVG_KERNELS=python or MVG_KERNELS=compiled
to force a backend (forcing `compiled` raises if the extension is not
built).
"""

import os

_choice = os.environ.get("MVG_KERNELS", "auto").strip().lower()

if _choice in ("auto", "", "compiled", "c"):
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        if _choice in ("compiled", "c"):
            raise
        from . import _python as _impl
        BACKEND = "python"
elif _choice in ("python", "py"):
    from . import _python as _impl
    BACKEND = "python"
else:
    raise ValueError(f"MVG_KERNELS must be 'auto', 'compiled', or 'python', got {_choice!r}")

from ._python import NEIGHBORS_CCW  # shared constant, not backend-specific

bilateral_3x3 = _impl.bilateral_3x3
normals_8n = _impl.normals_8n
refine_avg = _impl.refine_avg
splat_signed = _impl.splat_signed
splat_density = _impl.splat_density
mc_core = _impl.mc_core
