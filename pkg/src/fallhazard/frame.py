"""The pipeline's unit of input: one synchronized RGB-D frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .pointcloud import DepthImage


@dataclass(frozen=True, eq=False)
class FrameBundle:
    frame_id: str
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: DepthImage
    intrinsics: CameraIntrinsics
    pose: Pose
    fixture: dict | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb image must be HxWx3, got shape {rgb.shape}")
        if rgb.shape[:2] != self.depth.values.shape:
            raise ValueError(f"rgb {rgb.shape[:2]} and depth {self.depth.values.shape} sizes differ")
        if (self.intrinsics.width, self.intrinsics.height) != (rgb.shape[1], rgb.shape[0]):
            raise ValueError(
                f"intrinsics are for {self.intrinsics.width}x{self.intrinsics.height}, "
                f"images are {rgb.shape[1]}x{rgb.shape[0]}"
            )
        object.__setattr__(self, "rgb", rgb.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height
