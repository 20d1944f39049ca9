"""Ray-cast renderer for floor scenes with box and cylinder obstacles.

Every frame it produces comes with exact ground truth (per-pixel depth,
object masks, floor plane, centroids), which makes it the reference the
geometric tests are checked against. Objects may name the label a
detector or classifier should report for them; those become the frame's
fixture document.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .frame import FrameBundle
from .geometry import CameraIntrinsics, Pose, Point3, project
from .pointcloud import DepthImage

FLOOR, NOTHING = -1, -2
FLOOR_COLOR = (150, 140, 120)

_DEFAULT_COLORS = {
    "animal": (200, 120, 40),
    "furniture": (110, 70, 40),
    "small_object": (40, 60, 160),
}


@dataclass(frozen=True)
class SceneObject:
    """A floor obstacle. ``position`` is the center of its base in the world.

    Boxes take ``dimensions = (size_x, size_y, size_z)`` before the yaw
    rotation; cylinders stand upright with ``dimensions = (radius, height)``.
    """

    shape: str
    position: tuple[float, float, float]
    dimensions: tuple[float, ...]
    yaw: float = 0.0
    category_hint: str = "small_object"
    name: str = ""
    color: tuple[int, int, int] | None = None
    detector_label: str | None = None
    detector_score: float = 0.9
    classifier_label: str | None = None
    classifier_score: float = 0.8

    def __post_init__(self) -> None:
        if self.shape not in ("box", "cylinder"):
            raise InvalidSpecError(f"unsupported shape {self.shape!r}")
        want = 3 if self.shape == "box" else 2
        if len(self.dimensions) != want or not all(d > 0 for d in self.dimensions):
            raise InvalidSpecError(f"{self.shape} needs {want} positive dimensions, got {self.dimensions}")
        if self.position[2] < 0:
            raise InvalidSpecError(f"object {self.name!r} starts below the floor")

    @property
    def height(self) -> float:
        return self.dimensions[2] if self.shape == "box" else self.dimensions[1]

    @property
    def center(self) -> np.ndarray:
        x, y, z = self.position
        return np.array([x, y, z + self.height / 2.0])

    @property
    def rgb(self) -> tuple[int, int, int]:
        return tuple(self.color) if self.color else _DEFAULT_COLORS.get(self.category_hint, (90, 90, 90))

    def to_dict(self) -> dict:
        d = {
            "shape": self.shape,
            "position": list(self.position),
            "dimensions": list(self.dimensions),
            "yaw_deg": math.degrees(self.yaw),
            "category_hint": self.category_hint,
            "name": self.name,
        }
        if self.color:
            d["color"] = list(self.color)
        if self.detector_label:
            d["detector"] = {"label": self.detector_label, "score": self.detector_score}
        if self.classifier_label:
            d["classifier"] = {"label": self.classifier_label, "score": self.classifier_score}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneObject:
        det = d.get("detector") or {}
        cls_ = d.get("classifier") or {}
        return cls(
            shape=d["shape"],
            position=tuple(float(v) for v in d["position"]),
            dimensions=tuple(float(v) for v in d["dimensions"]),
            yaw=math.radians(float(d.get("yaw_deg", 0.0))),
            category_hint=d.get("category_hint", "small_object"),
            name=d.get("name", ""),
            color=tuple(d["color"]) if d.get("color") else None,
            detector_label=det.get("label"),
            detector_score=float(det.get("score", 0.9)),
            classifier_label=cls_.get("label"),
            classifier_score=float(cls_.get("score", 0.8)),
        )


@dataclass(frozen=True)
class SceneSpec:
    intrinsics: CameraIntrinsics
    pose: Pose
    objects: tuple[SceneObject, ...] = ()
    floor_noise_sigma: float = 0.0
    invalid_pixel_fraction: float = 0.0
    max_range: float = 8.0
    frame_id: str = "synthetic"

    def __post_init__(self) -> None:
        if not self.pose.translation[2] > 0:
            raise InvalidSpecError(f"camera height {self.pose.translation[2]} is not above the floor")
        if self.floor_noise_sigma < 0:
            raise InvalidSpecError("noise sigma must be non-negative")
        if not 0 <= self.invalid_pixel_fraction < 1:
            raise InvalidSpecError("invalid pixel fraction must lie in [0, 1)")
        object.__setattr__(self, "objects", tuple(self.objects))

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "intrinsics": self.intrinsics.to_dict(),
            "pose": self.pose.to_dict(),
            "floor_noise_sigma": self.floor_noise_sigma,
            "invalid_pixel_fraction": self.invalid_pixel_fraction,
            "max_range": self.max_range,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        """Accepts either a full ``pose`` or a ``camera`` block with
        ``position``, ``yaw_deg`` and ``pitch_deg``."""
        try:
            if "pose" in d:
                pose = Pose.from_dict(d["pose"])
            else:
                cam = d["camera"]
                pose = Pose.looking(
                    cam["position"],
                    yaw=math.radians(float(cam.get("yaw_deg", 0.0))),
                    pitch=math.radians(float(cam.get("pitch_deg", 0.0))),
                )
            return cls(
                intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
                pose=pose,
                objects=tuple(SceneObject.from_dict(o) for o in d.get("objects", [])),
                floor_noise_sigma=float(d.get("floor_noise_sigma", 0.0)),
                invalid_pixel_fraction=float(d.get("invalid_pixel_fraction", 0.0)),
                max_range=float(d.get("max_range", 8.0)),
                frame_id=str(d.get("frame_id", "synthetic")),
            )
        except KeyError as exc:
            raise InvalidSpecError(f"scene description is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            if isinstance(exc, InvalidSpecError):
                raise
            raise InvalidSpecError(str(exc)) from None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    true_depth: np.ndarray  # (H, W), NaN where the ray hits nothing in range
    object_index: np.ndarray  # (H, W): object number, FLOOR or NOTHING
    masks: tuple[np.ndarray, ...]  # visible and valid pixels per object
    floor_normal: np.ndarray  # camera frame, pointing up
    floor_offset: float
    centroids_world: tuple[Point3, ...]  # volumetric centers
    visible_centroids: tuple[Point3 | None, ...] = field(default=())  # camera frame


def _ray_box(o: np.ndarray, D: np.ndarray, obj: SceneObject) -> np.ndarray:
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    Rinv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    ol = Rinv @ (o - obj.center)
    Dl = D @ Rinv.T
    half = np.asarray(obj.dimensions) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / Dl
        t1 = (-half - ol) * inv
        t2 = (half - ol) * inv
    tnear = np.fmax.reduce(np.fmin(t1, t2), axis=-1)
    tfar = np.fmin.reduce(np.fmax(t1, t2), axis=-1)
    hit = (tnear <= tfar) & (tnear > 0)
    return np.where(hit, tnear, np.inf)


def _ray_cylinder(o: np.ndarray, D: np.ndarray, obj: SceneObject) -> np.ndarray:
    radius, height = obj.dimensions
    bx, by, z0 = obj.position
    z1 = z0 + height
    ox, oy, oz = o[0] - bx, o[1] - by, o[2]
    dx, dy, dz = D[..., 0], D[..., 1], D[..., 2]
    best = np.full(D.shape[:-1], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - radius * radius
        disc = b * b - 4.0 * a * c
        t_side = (-b - np.sqrt(disc)) / (2.0 * a)
        z = oz + t_side * dz
        side = (a > 0) & (disc >= 0) & (t_side > 0) & (z >= z0) & (z <= z1)
        best = np.where(side, t_side, best)
        for zc in (z0, z1):
            t_cap = (zc - oz) / dz
            px, py = ox + t_cap * dx, oy + t_cap * dy
            cap = (dz != 0) & (t_cap > 0) & (px * px + py * py <= radius * radius)
            best = np.where(cap & (t_cap < best), t_cap, best)
    return best


def camera_rays(K: CameraIntrinsics) -> np.ndarray:
    """``(H, W, 3)`` camera-frame ray directions with unit Z, one per pixel center."""
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(np.float64)
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)


def render(spec: SceneSpec, seed: int = 0) -> tuple[FrameBundle, GroundTruth]:
    """Ray-cast ``spec`` into a frame bundle plus exact ground truth.

    Ray parameters are measured along camera rays with unit Z, so the ray
    parameter of the nearest hit is the pixel's depth. Noise is added along
    the ray after the exact depth is recorded.
    """
    K, pose = spec.intrinsics, spec.pose
    R, o = pose.rotation, pose.position
    rays = camera_rays(K)
    D = rays @ R.T

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(D[..., 2] < 0, -o[2] / D[..., 2], np.inf)
    best = t_floor
    index = np.where(np.isfinite(t_floor), FLOOR, NOTHING)
    for i, obj in enumerate(spec.objects):
        t = _ray_box(o, D, obj) if obj.shape == "box" else _ray_cylinder(o, D, obj)
        closer = t < best
        best = np.where(closer, t, best)
        index = np.where(closer, i, index)
    in_range = np.isfinite(best) & (best <= spec.max_range)
    index = np.where(in_range, index, NOTHING)
    true_depth = np.where(in_range, best, np.nan)

    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=best.shape) * spec.floor_noise_sigma
    dropped = rng.random(size=best.shape) < spec.invalid_pixel_fraction
    measured = np.where(in_range, best + noise, 0.0)
    valid = in_range & ~dropped & (measured > 0)
    depth = DepthImage(np.where(valid, measured, 0.0), valid)

    rgb = np.zeros((K.height, K.width, 3), dtype=np.uint8)
    rgb[index == FLOOR] = FLOOR_COLOR
    for i, obj in enumerate(spec.objects):
        rgb[index == i] = obj.rgb

    masks = tuple((index == i) & valid for i in range(len(spec.objects)))
    exact_pts = rays * np.where(in_range, best, 0.0)[..., None]
    visible = []
    for i in range(len(spec.objects)):
        hit = index == i
        visible.append(Point3(*(float(v) for v in exact_pts[hit].mean(axis=0))) if hit.any() else None)

    up_cam = pose.up_in_camera()
    gt = GroundTruth(
        true_depth=true_depth,
        object_index=index,
        masks=masks,
        floor_normal=up_cam,
        floor_offset=float(o[2]),
        centroids_world=tuple(Point3(*(float(v) for v in obj.center)) for obj in spec.objects),
        visible_centroids=tuple(visible),
    )
    bundle = FrameBundle(spec.frame_id, rgb, depth, K, pose, fixture=fixture_document(spec, gt))
    return bundle, gt


def fixture_document(spec: SceneSpec, gt: GroundTruth) -> dict:
    """Detector/classifier fixture implied by the objects' label hints.

    Detection boxes are the tight pixel bounds of each visible object;
    classification anchors are the projected visible-surface centroids.
    """
    dets, classes = [], []
    for i, obj in enumerate(spec.objects):
        hit = gt.object_index == i
        if not hit.any():
            continue
        rows, cols = np.nonzero(hit)
        if obj.detector_label:
            dets.append({
                "bbox": [int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1],
                "label": obj.detector_label,
                "score": obj.detector_score,
            })
        if obj.classifier_label:
            px = project(gt.visible_centroids[i], spec.intrinsics)
            classes.append({
                "pixel": [round(px.x, 2), round(px.y, 2)],
                "label": obj.classifier_label,
                "score": obj.classifier_score,
            })
    return {"frame_id": spec.frame_id, "detections": dets, "classifications": classes}
