"""Multi-view geometry toolkit: depth refinement, KDE depth segmentation,
geometric consistency filtering, surfel densification, and marching-cubes
mesh extraction."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .camera import (
    CameraIntrinsics,
    CameraPose,
    intrinsics_from_fov,
    pad_intrinsics,
    project,
    unproject,
)
from .maps import DepthMap, ImageBuffer, NormalMap
from .surfels import SurfelCloud
from .view import View

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "CameraIntrinsics",
    "CameraPose",
    "DepthMap",
    "ImageBuffer",
    "NormalMap",
    "SurfelCloud",
    "View",
    "intrinsics_from_fov",
    "pad_intrinsics",
    "project",
    "unproject",
    "__version__",
]
