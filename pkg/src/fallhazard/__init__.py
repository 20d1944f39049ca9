"""Fall-hazard detection from RGB-D frames for assisted-living robots.

Two paths run on every frame: RGB detections are localized with ROI depth
estimates, and depth-only obstacles are found by removing the floor and
growing regions in the organized cloud. Their results are fused and graded
by a small rule cascade (none / moderate / high).
"""

from .backends import BBox, ClassificationResult, Detection, Source, expand_roi
from .frame import FrameBundle
from .fusion import Category, LocalizedObject, iou, map_label, merge_paths
from .geometry import CameraIntrinsics, PixelPoint, Point3, Pose, back_project, project
from .hazard import HazardReport, OccupancyMap, Severity, classify_hazard
from .pipeline import Backends, FrameResult, PipelineConfig, process_bundle, process_frame

__version__ = "0.1.0"

__all__ = [
    "BBox", "Backends", "CameraIntrinsics", "Category", "ClassificationResult", "Detection",
    "FrameBundle", "FrameResult", "HazardReport", "LocalizedObject", "OccupancyMap",
    "PipelineConfig", "PixelPoint", "Point3", "Pose", "Severity", "Source", "back_project",
    "classify_hazard", "expand_roi", "iou", "map_label", "merge_paths", "process_bundle",
    "process_frame", "project",
]
