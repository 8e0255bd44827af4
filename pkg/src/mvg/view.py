"""A calibrated view: camera, photograph, and rendered depth."""

from __future__ import annotations

from dataclasses import dataclass

from .camera import CameraIntrinsics, CameraPose
from .errors import DomainError
from .maps import DepthMap, ImageBuffer


@dataclass(frozen=True)
class View:
    id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: ImageBuffer
    depth: DepthMap

    def __post_init__(self):
        k = self.intrinsics
        for name, m in (("image", self.image), ("depth", self.depth)):
            if (m.width, m.height) != (k.width, k.height):
                raise DomainError(
                    f"view {self.id}: {name} is {m.width}x{m.height}, "
                    f"intrinsics say {k.width}x{k.height}"
                )

    def with_depth(self, depth: DepthMap) -> "View":
        return View(self.id, self.intrinsics, self.pose, self.image, depth)
