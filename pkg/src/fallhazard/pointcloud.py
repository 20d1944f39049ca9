"""Organized point clouds, RANSAC floor removal and region growing."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoFloorFoundError
from .geometry import CameraIntrinsics, CameraPoint, Point3


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major depth in meters with a per-pixel validity flag."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ValueError("depth values and validity mask must be matching 2-D arrays")
        valid = valid & np.isfinite(values) & (values > 0)
        values = np.where(valid, values, 0.0)
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, depth: np.ndarray) -> DepthImage:
        """Zero, negative and non-finite readings become invalid."""
        depth = np.asarray(depth, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(depth) & (depth > 0)
        return cls(depth, valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class OrganizedCloud:
    """Per-pixel camera-frame points; ``valid`` marks which pixels hold one."""

    points: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W)

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.height, self.width

    def __len__(self) -> int:
        return int(self.valid.sum())

    @property
    def indices(self) -> np.ndarray:
        """Flat (row-major) pixel indices of the points present."""
        return np.flatnonzero(self.valid)

    @property
    def xyz(self) -> np.ndarray:
        return self.points.reshape(-1, 3)[self.indices]

    def with_valid(self, valid: np.ndarray) -> OrganizedCloud:
        return OrganizedCloud(self.points, valid & self.valid)


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 200
    inlier_tol: float = 0.015
    min_inlier_fraction: float = 0.3
    max_tilt_deg: float = 30.0
    seed: int = 0
    # Hypotheses are scored on at most this many points; the final inlier
    # set and refit always use the whole cloud.
    max_scoring_points: int = 5000


@dataclass(frozen=True)
class RegionGrowParams:
    max_neighbor_dist: float = 0.05
    min_segment_size: int = 50


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``{q : normal . q + offset = 0}`` with the cloud indices supporting it."""

    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray = field(repr=False)

    def distances(self, xyz: np.ndarray) -> np.ndarray:
        return xyz @ self.normal + self.offset

    def angle_to(self, direction: np.ndarray) -> float:
        """Angle in degrees between the plane normal and ``direction``."""
        d = np.asarray(direction, dtype=float)
        c = abs(float(self.normal @ d)) / float(np.linalg.norm(d))
        return math.degrees(math.acos(min(1.0, c)))


@dataclass(frozen=True, eq=False)
class ObstacleSegment:
    indices: np.ndarray  # sorted flat pixel indices
    points: np.ndarray = field(repr=False)  # (n, 3) camera-frame points, same order

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def centroid(self) -> CameraPoint:
        return segment_centroid(self)

    def pixel_bounds(self, width: int) -> tuple[int, int, int, int]:
        """Half-open pixel bounds ``(x_min, y_min, x_max, y_max)`` of the members."""
        rows, cols = np.divmod(self.indices, width)
        return int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1


def depth_to_cloud(depth: DepthImage, K: CameraIntrinsics) -> OrganizedCloud:
    if (depth.width, depth.height) != (K.width, K.height):
        raise ConfigError(
            f"depth image is {depth.width}x{depth.height} but intrinsics expect {K.width}x{K.height}"
        )
    v, u = np.mgrid[0 : depth.height, 0 : depth.width].astype(np.float64)
    z = depth.values
    points = np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)
    points[~depth.valid] = 0.0
    return OrganizedCloud(points, depth.valid.copy())


def _plane_through(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    """Vectorised plane through point triples; rows with collinear samples get a zero normal."""
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-12
    n[ok] /= norm[ok, None]
    n[~ok] = 0.0
    d = -np.einsum("ij,ij->i", n, p0)
    return n, d, ok


def _least_squares_plane(xyz: np.ndarray) -> tuple[np.ndarray, float]:
    center = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - center, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ center)


def fit_floor_plane(
    cloud: OrganizedCloud,
    params: RansacParams = RansacParams(),
    rng: np.random.Generator | None = None,
    up: np.ndarray | None = None,
) -> PlaneModel:
    """Estimate the floor with 3-point RANSAC followed by a least-squares refit.

    ``up`` is the world up axis in the camera frame. When given, hypotheses
    tilted more than ``params.max_tilt_deg`` from it are skipped, the final
    plane must satisfy the same bound, and the normal is oriented along it.
    Without it the normal is oriented toward the camera.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    xyz = cloud.xyz
    idx = cloud.indices
    n_points = len(xyz)
    if n_points < 3:
        raise NoFloorFoundError(f"need at least 3 points to fit a plane, got {n_points}")

    samples = np.stack(
        [rng.choice(n_points, size=3, replace=False) for _ in range(params.iterations)]
    )
    normals, offsets, ok = _plane_through(xyz[samples[:, 0]], xyz[samples[:, 1]], xyz[samples[:, 2]])
    cos_max = math.cos(math.radians(params.max_tilt_deg))
    if up is not None:
        up = np.asarray(up, dtype=float) / np.linalg.norm(up)
        ok &= np.abs(normals @ up) >= cos_max

    if n_points > params.max_scoring_points:
        scoring = xyz[rng.choice(n_points, size=params.max_scoring_points, replace=False)]
    else:
        scoring = xyz
    counts = np.zeros(params.iterations, dtype=np.int64)
    chunk = 64
    for start in range(0, params.iterations, chunk):
        sl = slice(start, start + chunk)
        res = np.abs(scoring @ normals[sl].T + offsets[sl])
        counts[sl] = (res <= params.inlier_tol).sum(axis=0)
    counts[~ok] = -1
    best = int(np.argmax(counts))
    if counts[best] < 3:
        raise NoFloorFoundError("no plane hypothesis gathered enough support")

    normal, offset = normals[best], float(offsets[best])
    inliers = np.abs(xyz @ normal + offset) <= params.inlier_tol
    for _ in range(3):
        normal, offset = _least_squares_plane(xyz[inliers])
        refined = np.abs(xyz @ normal + offset) <= params.inlier_tol
        if refined.sum() < 3:
            break
        if np.array_equal(refined, inliers):
            break
        inliers = refined

    flip = (normal @ up < 0) if up is not None else offset < 0
    if flip:
        normal, offset = -normal, -offset
    fraction = inliers.sum() / n_points
    if fraction < params.min_inlier_fraction:
        raise NoFloorFoundError(
            f"floor inlier fraction {fraction:.3f} below {params.min_inlier_fraction}"
        )
    plane = PlaneModel(normal, offset, idx[inliers])
    if up is not None and plane.angle_to(up) > params.max_tilt_deg:
        raise NoFloorFoundError(
            f"plane normal is {plane.angle_to(up):.1f} deg from vertical, not a floor"
        )
    return plane


def remove_plane(cloud: OrganizedCloud, plane: PlaneModel, tol: float) -> OrganizedCloud:
    """Drop every point within ``tol`` of ``plane``; the pixel grid is kept."""
    dist = np.abs(cloud.points @ plane.normal + plane.offset)
    return cloud.with_valid(dist > tol)


def region_grow(
    cloud: OrganizedCloud, params: RegionGrowParams = RegionGrowParams()
) -> list[ObstacleSegment]:
    """Split the cloud into 4-connected pixel regions whose neighbouring
    points are no further apart than ``params.max_neighbor_dist``.

    Segments are returned in raster order of their first pixel; those with
    fewer than ``params.min_segment_size`` points are discarded.
    """
    valid = cloud.valid
    h, w = valid.shape
    if not valid.any():
        return []
    pts = cloud.points
    gate = params.max_neighbor_dist
    # Edge (r, c)-(r, c+1) and (r, c)-(r+1, c) admissibility.
    right = valid[:, :-1] & valid[:, 1:] & (np.linalg.norm(pts[:, 1:] - pts[:, :-1], axis=-1) <= gate)
    down = valid[:-1, :] & valid[1:, :] & (np.linalg.norm(pts[1:] - pts[:-1], axis=-1) <= gate)
    right_l = right.ravel().tolist()
    down_l = down.ravel().tolist()
    wr = w - 1

    labels = np.full(h * w, -1, dtype=np.int64)
    lab = labels  # local alias for the hot loop
    segments: list[ObstacleSegment] = []
    flat_points = pts.reshape(-1, 3)
    next_label = 0
    for seed in np.flatnonzero(valid).tolist():
        if lab[seed] >= 0:
            continue
        lab[seed] = next_label
        members = [seed]
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            r, c = divmod(i, w)
            if c + 1 < w and right_l[r * wr + c] and lab[i + 1] < 0:
                lab[i + 1] = next_label
                members.append(i + 1)
                queue.append(i + 1)
            if c > 0 and right_l[r * wr + c - 1] and lab[i - 1] < 0:
                lab[i - 1] = next_label
                members.append(i - 1)
                queue.append(i - 1)
            if r + 1 < h and down_l[i] and lab[i + w] < 0:
                lab[i + w] = next_label
                members.append(i + w)
                queue.append(i + w)
            if r > 0 and down_l[i - w] and lab[i - w] < 0:
                lab[i - w] = next_label
                members.append(i - w)
                queue.append(i - w)
        next_label += 1
        if len(members) >= params.min_segment_size:
            ind = np.sort(np.asarray(members, dtype=np.int64))
            segments.append(ObstacleSegment(ind, flat_points[ind]))
    return segments


def segment_mask(seg: ObstacleSegment, dims: tuple[int, int]) -> np.ndarray:
    """Binary ``(H, W)`` mask of the segment's pixels."""
    mask = np.zeros(dims[0] * dims[1], dtype=bool)
    mask[seg.indices] = True
    return mask.reshape(dims)


def mask_indices(mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero(mask)


def segment_centroid(seg: ObstacleSegment) -> CameraPoint:
    if len(seg.indices) == 0:
        raise ValueError("centroid of an empty segment is undefined")
    c = seg.points.mean(axis=0)
    return Point3(float(c[0]), float(c[1]), float(c[2]))
