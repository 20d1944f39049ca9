"""Pinhole camera model and camera/world transforms.

Conventions: the camera frame has Z forward along the optical axis, X to
the right and Y down. The world frame is Z-up with the floor at Z = 0.
Pixel (u, v) refers to the center of column u, row v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BehindCameraError, InvalidDepthError, NoIntersectionError

# Rays whose world-frame vertical component is smaller than this are treated
# as parallel to the floor.
_PARALLEL_EPS = 1e-12


class PixelPoint(NamedTuple):
    x: float
    y: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


CameraPoint = Point3
WorldPoint = Point3


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(R: np.ndarray) -> tuple[float, float, float, float]:
    """Convert a rotation matrix to a unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return tuple(float(v) for v in q)


@dataclass(frozen=True)
class Pose:
    """Camera pose in the world: ``world = R @ camera + translation``.

    The robot base pose and head orientation are expected to be composed
    into this single transform by the caller.
    """

    translation: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z)

    def __post_init__(self) -> None:
        t = tuple(float(v) for v in self.translation)
        q = tuple(float(v) for v in self.orientation)
        if len(t) != 3 or len(q) != 4:
            raise ValueError("pose needs a 3-vector translation and a 4-vector quaternion")
        if not all(math.isfinite(v) for v in t + q):
            raise ValueError("pose components must be finite")
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"orientation quaternion must be unit length, |q| = {norm!r}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> Pose:
        return cls((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, R: np.ndarray, translation) -> Pose:
        return cls(tuple(float(v) for v in translation), matrix_to_quaternion(R))

    @classmethod
    def looking(cls, position, yaw: float = 0.0, pitch: float = 0.0) -> Pose:
        """Camera at ``position`` facing world +X rotated by ``yaw`` about Z,
        tilted down by ``pitch`` radians (pi/2 looks straight at the floor)."""
        cp, sp = math.cos(pitch), math.sin(pitch)
        forward = np.array([cp, 0.0, -sp])
        right = np.array([0.0, -1.0, 0.0])
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        cy, sy = math.cos(yaw), math.sin(yaw)
        Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_matrix(Rz @ R, position)

    @property
    def rotation(self) -> np.ndarray:
        return quaternion_to_matrix(self.orientation)

    @property
    def position(self) -> np.ndarray:
        return np.array(self.translation)

    def up_in_camera(self) -> np.ndarray:
        """World up axis expressed in the camera frame."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def to_dict(self) -> dict:
        return {"translation": list(self.translation), "orientation": list(self.orientation)}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(tuple(d["translation"]), tuple(d["orientation"]))


def back_project(p: PixelPoint, z: float, K: CameraIntrinsics) -> CameraPoint:
    """Lift pixel ``p`` observed at depth ``z`` into the camera frame."""
    if not (math.isfinite(z) and z > 0):
        raise InvalidDepthError(f"depth must be finite and positive, got {z!r}")
    x, y = p
    return Point3((x - K.cx) * z / K.fx, (y - K.cy) * z / K.fy, float(z))


def project(q: CameraPoint, K: CameraIntrinsics) -> PixelPoint:
    x, y, z = q
    if not z > 0:
        raise BehindCameraError(f"point {tuple(q)} is not in front of the camera")
    return PixelPoint(K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def pixel_ray(p: PixelPoint, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray direction through ``p``, scaled so its Z component is 1."""
    return np.array([(p[0] - K.cx) / K.fx, (p[1] - K.cy) / K.fy, 1.0])


def camera_to_world(q: CameraPoint, pose: Pose) -> WorldPoint:
    w = pose.rotation @ np.asarray(q, dtype=float) + pose.position
    return Point3(*(float(v) for v in w))


def world_to_camera(w: WorldPoint, pose: Pose) -> CameraPoint:
    q = pose.rotation.T @ (np.asarray(w, dtype=float) - pose.position)
    return Point3(*(float(v) for v in q))


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Vectorised :func:`camera_to_world` for an ``(N, 3)`` array."""
    return np.asarray(points, dtype=float) @ pose.rotation.T + pose.position


def ray_ground_intersect(p: PixelPoint, K: CameraIntrinsics, pose: Pose) -> WorldPoint:
    """Intersect the ray from the camera center through pixel ``p`` with the floor."""
    origin = pose.position
    if not origin[2] > 0:
        raise NoIntersectionError(f"camera height {origin[2]!r} is not above the floor")
    direction = pose.rotation @ pixel_ray(p, K)
    dz = direction[2]
    if dz > -_PARALLEL_EPS * np.linalg.norm(direction):
        raise NoIntersectionError(f"ray through pixel {tuple(p)} never reaches the floor")
    s = -origin[2] / dz
    hit = origin + s * direction
    return Point3(float(hit[0]), float(hit[1]), 0.0)
