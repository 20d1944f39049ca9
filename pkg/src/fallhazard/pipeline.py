"""Per-frame orchestration of the RGB and depth paths, fusion and hazard rules."""

from __future__ import annotations

import dataclasses
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import geometry, roi_depth
from .backends import (
    BBox,
    Classifier,
    Crop,
    Detector,
    FixtureClassifier,
    FixtureDetector,
    SocketClassifier,
    SocketDetector,
    crop_image,
    expand_roi,
    validate_detections,
)
from .errors import ConfigError, NoDepthError, NoFloorFoundError, NoIntersectionError
from .frame import FrameBundle
from .fusion import FusionParams, merge_paths
from .hazard import HazardParams, HazardReport, OccupancyMap, classify_hazard
from .pointcloud import (
    RansacParams,
    RegionGrowParams,
    depth_to_cloud,
    fit_floor_plane,
    region_grow,
    remove_plane,
    segment_centroid,
)
from .roi_depth import EstimatorParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackendConfig:
    detector: str = "fixture"
    detector_address: str = ""
    classifier: str = "fixture"
    classifier_address: str = ""
    roi_factor: float = 3.0


@dataclass(frozen=True)
class PipelineConfig:
    ransac: RansacParams = RansacParams()
    region_grow: RegionGrowParams = RegionGrowParams()
    estimator: str = "double_threshold"
    roi_depth: EstimatorParams = EstimatorParams()
    fusion: FusionParams = FusionParams()
    hazard: HazardParams = HazardParams()
    backends: BackendConfig = BackendConfig()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.estimator not in roi_depth.ESTIMATORS:
            raise ConfigError(f"unknown roi_depth.estimator {self.estimator!r}")
        if self.backends.detector not in ("fixture", "external"):
            raise ConfigError(f"unknown detector.backend {self.backends.detector!r}")
        if self.backends.classifier not in ("fixture", "external"):
            raise ConfigError(f"unknown classifier.backend {self.backends.classifier!r}")
        if self.backends.roi_factor < 1:
            raise ConfigError("classifier.roi_factor must be >= 1")

    @classmethod
    def from_flat(cls, values: dict[str, str | int | float]) -> PipelineConfig:
        """Build from dotted keys such as ``roi_depth.estimator``; unknown keys are rejected."""
        groups: dict[str, dict] = {}
        top: dict = {}
        for key, raw in values.items():
            try:
                target, attr, typ = _CONFIG_KEYS[key]
            except KeyError:
                raise ConfigError(f"unknown config key {key!r}") from None
            try:
                value = typ(raw.strip() if isinstance(raw, str) else raw)
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {typ.__name__}") from None
            (groups.setdefault(target, {}) if target else top)[attr] = value
        defaults = cls()
        kwargs = dict(top)
        for name, overrides in groups.items():
            try:
                kwargs[name] = dataclasses.replace(getattr(defaults, name), **overrides)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            return cls(**kwargs)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def with_seed(self, seed: int) -> PipelineConfig:
        return dataclasses.replace(self, seed=seed)


# dotted key -> (group attribute or "" for top level, field, type)
_CONFIG_KEYS = {
    "seed": ("", "seed", int),
    "ransac.iterations": ("ransac", "iterations", int),
    "ransac.inlier_tol": ("ransac", "inlier_tol", float),
    "ransac.min_inlier_fraction": ("ransac", "min_inlier_fraction", float),
    "ransac.max_tilt_deg": ("ransac", "max_tilt_deg", float),
    "region_grow.max_neighbor_dist": ("region_grow", "max_neighbor_dist", float),
    "region_grow.min_segment_size": ("region_grow", "min_segment_size", int),
    "roi_depth.estimator": ("", "estimator", str),
    "roi_depth.k_bins": ("roi_depth", "k_bins", int),
    "roi_depth.k_clusters": ("roi_depth", "k_clusters", int),
    "roi_depth.x_b": ("roi_depth", "x_b", float),
    "roi_depth.x_f": ("roi_depth", "x_f", float),
    "roi_depth.max_kmeans_iters": ("roi_depth", "max_kmeans_iters", int),
    "fusion.iou_threshold": ("fusion", "iou_threshold", float),
    "fusion.max_position_gap": ("fusion", "max_position_gap", float),
    "hazard.h_max": ("hazard", "h_max", float),
    "hazard.floor_tolerance": ("hazard", "floor_tolerance", float),
    "hazard.wall_radius": ("hazard", "wall_radius", float),
    "detector.backend": ("backends", "detector", str),
    "detector.address": ("backends", "detector_address", str),
    "classifier.backend": ("backends", "classifier", str),
    "classifier.address": ("backends", "classifier_address", str),
    "classifier.roi_factor": ("backends", "roi_factor", float),
}

CONFIG_KEYS = tuple(_CONFIG_KEYS)


@dataclass(frozen=True)
class Backends:
    detector: Detector
    classifier: Classifier

    @classmethod
    def from_config(cls, cfg: PipelineConfig, fixture_docs=()) -> Backends:
        b = cfg.backends
        if b.detector == "external":
            detector = SocketDetector(b.detector_address)
        else:
            detector = FixtureDetector.from_documents(fixture_docs)
        if b.classifier == "external":
            classifier = SocketClassifier(b.classifier_address)
        else:
            classifier = FixtureClassifier.from_documents(fixture_docs)
        return cls(detector, classifier)


@dataclass
class FrameResult:
    frame_id: str
    report: HazardReport | None
    timings_ms: dict[str, float] = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class _Timer:
    """Accumulates wall time per named stage, in milliseconds."""

    def __init__(self, sink: dict[str, float]):
        self.sink = sink

    @contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.sink[name] = self.sink.get(name, 0.0) + (time.perf_counter() - t0) * 1e3


def run_rgb_path(bundle: FrameBundle, cfg: PipelineConfig, detector: Detector, timer, warnings, stages):
    """Detect, estimate ROI depth, back-project and move to the world frame.

    Falls back to intersecting the box-center ray with the floor when the
    depth image has no valid readings at all (or none inside the box).
    """
    K, pose = bundle.intrinsics, bundle.pose
    with timer("rgb.detect"):
        dets = validate_detections(detector.detect(bundle.frame_id, bundle.rgb), bundle.width, bundle.height)
    depth_available = bool(bundle.depth.valid.any())
    out, methods = [], []
    with timer("rgb.localize"):
        for det in dets:
            center = geometry.PixelPoint(*det.bbox.center)
            world = None
            if depth_available:
                sample = roi_depth.roi_sample(bundle.depth.values, bundle.depth.valid, det.bbox.as_list())
                try:
                    z = roi_depth.estimate(cfg.estimator, sample, cfg.roi_depth)
                    world = geometry.camera_to_world(geometry.back_project(center, z, K), pose)
                    methods.append(cfg.estimator)
                except NoDepthError:
                    warnings.append(f"no depth inside box of {det.label!r}; using floor intersection")
            if world is None:
                try:
                    world = geometry.ray_ground_intersect(center, K, pose)
                    methods.append("ray_ground")
                except NoIntersectionError as exc:
                    warnings.append(f"cannot localize {det.label!r}: {exc}")
                    continue
            out.append((det, world))
    stages["rgb"] = {"detections": len(dets), "localized": len(out), "methods": methods}
    return out


def run_depth_path(bundle: FrameBundle, cfg: PipelineConfig, classifier: Classifier, timer, warnings, stages):
    """Floor removal, region growing, crop classification and centroids."""
    K, pose = bundle.intrinsics, bundle.pose
    with timer("depth.cloud"):
        cloud = depth_to_cloud(bundle.depth, K)
    stages["depth"] = {"points": len(cloud)}
    if len(cloud) == 0:
        stages["depth"]["skipped"] = "no valid depth"
        return []
    with timer("depth.floor"):
        try:
            rng = np.random.default_rng(cfg.seed)
            plane = fit_floor_plane(cloud, cfg.ransac, rng, up=pose.up_in_camera())
        except NoFloorFoundError as exc:
            warnings.append(f"no floor found, depth path skipped: {exc}")
            stages["depth"]["skipped"] = "no floor"
            return []
        rest = remove_plane(cloud, plane, cfg.ransac.inlier_tol)
    stages["depth"]["plane"] = {
        "normal": [float(v) for v in plane.normal],
        "offset": float(plane.offset),
        "inliers": int(len(plane.inlier_indices)),
    }
    with timer("depth.segment"):
        segments = region_grow(rest, cfg.region_grow)
    stages["depth"]["segments"] = len(segments)
    out = []
    with timer("depth.classify"):
        for seg in segments:
            bbox = BBox(*seg.pixel_bounds(bundle.width))
            centroid = segment_centroid(seg)
            anchor = geometry.project(centroid, K)
            roi = expand_roi(bbox, cfg.backends.roi_factor, bundle.width, bundle.height)
            crop = Crop(bundle.frame_id, crop_image(bundle.rgb, roi), roi, (anchor.x, anchor.y))
            result = classifier.classify(crop)
            out.append((bbox, result, geometry.camera_to_world(centroid, pose)))
    return out


def process_frame(
    bundle: FrameBundle,
    cfg: PipelineConfig,
    occupancy: OccupancyMap,
    backends: Backends,
) -> FrameResult:
    """Run both paths on one frame and classify the fused objects.

    Errors from the backends (for instance a missing fixture) propagate; a
    frame without a recognizable floor still yields an RGB-only report.
    """
    timings: dict[str, float] = {}
    timer = _Timer(timings)
    warnings: list[str] = []
    stages: dict = {}
    t0 = time.perf_counter()

    rgb = run_rgb_path(bundle, cfg, backends.detector, timer, warnings, stages)
    depth = run_depth_path(bundle, cfg, backends.classifier, timer, warnings, stages)

    with timer("fusion"):
        fused = merge_paths(rgb, depth, cfg.fusion)
    with timer("hazard"):
        report = classify_hazard(fused, occupancy, cfg.hazard, frame_id=bundle.frame_id)
    stages["fusion"] = {"rgb": len(rgb), "depth": len(depth), "fused": len(fused)}
    timings["total"] = (time.perf_counter() - t0) * 1e3
    for w in warnings:
        log.warning("frame %s: %s", bundle.frame_id, w)
    return FrameResult(bundle.frame_id, report, timings, stages, warnings)


def process_bundle(bundle: FrameBundle, cfg: PipelineConfig | None = None,
                   occupancy: OccupancyMap | None = None) -> FrameResult:
    """Convenience wrapper using the bundle's own fixture document as backends."""
    cfg = cfg or PipelineConfig()
    docs = [bundle.fixture] if bundle.fixture else []
    backends = Backends.from_config(cfg, docs)
    return process_frame(bundle, cfg, occupancy or OccupancyMap.empty(), backends)

