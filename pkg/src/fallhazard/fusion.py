"""Merging RGB-path and depth-path observations into one object list."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .backends import BBox, ClassificationResult, Detection, Source
from .geometry import Point3, WorldPoint
from .pointcloud import ObstacleSegment


class Category(str, Enum):
    ANIMAL = "animal"
    FURNITURE = "furniture"
    SMALL_OBJECT = "small_object"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class FusionParams:
    iou_threshold: float = 0.3
    max_position_gap: float = 0.3


def load_taxonomy(path=None) -> dict[str, Category]:
    """Read a ``{category: [labels...]}`` JSON table into a label lookup."""
    if path is None:
        text = resources.files("fallhazard").joinpath("data/taxonomy.json").read_text()
    else:
        text = Path(path).read_text()
    table: dict[str, Category] = {}
    for cat, labels in json.loads(text).items():
        category = Category(cat)
        for label in labels:
            key = label.strip().lower()
            if key in table and table[key] is not category:
                raise ValueError(f"label {label!r} listed under both {table[key].value} and {cat}")
            table[key] = category
    return table


@lru_cache(maxsize=1)
def default_taxonomy() -> dict[str, Category]:
    return load_taxonomy()


def map_label(label: str, source: Source | None = None, taxonomy: dict[str, Category] | None = None) -> Category:
    # One table covers both COCO-style detector labels and ImageNet-style classifier labels.
    table = default_taxonomy() if taxonomy is None else taxonomy
    return table.get(label.strip().lower(), Category.UNKNOWN)


def compatible(a: Category, b: Category) -> bool:
    return a is b or a is Category.UNKNOWN or b is Category.UNKNOWN


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Observation:
    """One object as seen by a single path, already localized in the world."""

    label: str
    score: float
    source: Source
    bbox: BBox
    position: WorldPoint
    category: Category


@dataclass(frozen=True)
class LocalizedObject:
    category: Category
    raw_labels: tuple[tuple[str, float, Source], ...]
    position: WorldPoint
    bbox: BBox
    sources: frozenset[Source] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.sources:
            raise ValueError("a localized object needs at least one source")
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError(f"non-finite object position {self.position}")

    def sort_key(self):
        return (*self.bbox.as_list(), self.category.value, tuple(self.position))


def rgb_observation(det: Detection, position: WorldPoint, taxonomy=None) -> Observation:
    return Observation(det.label, det.score, Source.RGB, det.bbox, Point3(*position),
                       map_label(det.label, Source.RGB, taxonomy))


def depth_observation(seg_bbox: BBox, result: ClassificationResult, position: WorldPoint,
                      taxonomy=None) -> Observation:
    return Observation(result.label, result.score, Source.DEPTH, seg_bbox, Point3(*position),
                       map_label(result.label, Source.DEPTH, taxonomy))


def candidate_pairs(a: list[Observation], b: list[Observation], params: FusionParams):
    """All admissible (iou, i, j) pairs between the two lists."""
    out = []
    for i, oa in enumerate(a):
        for j, ob in enumerate(b):
            if not compatible(oa.category, ob.category):
                continue
            overlap = iou(oa.bbox, ob.bbox)
            gap = math.dist(oa.position, ob.position)
            if overlap >= params.iou_threshold or gap <= params.max_position_gap:
                out.append((overlap, i, j))
    return out


def _tie_key(oa: Observation, ob: Observation):
    corners = sorted([(oa.bbox.x_min, oa.bbox.y_min), (ob.bbox.x_min, ob.bbox.y_min)])
    return tuple(corners)


def match(a: list[Observation], b: list[Observation], params: FusionParams) -> list[tuple[int, int]]:
    """Greedy one-to-one matching in descending IoU order.

    Equal IoU is broken by the smaller box corner (x_min, then y_min) of the
    pair, which keeps the result independent of which list is which.
    """
    pairs = sorted(
        candidate_pairs(a, b, params),
        key=lambda p: (-p[0], _tie_key(a[p[1]], b[p[2]]), p[1], p[2]),
    )
    used_a, used_b, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j))
    return out


def _fuse(obs: list[Observation]) -> LocalizedObject:
    cats = {o.category for o in obs} - {Category.UNKNOWN}
    category = cats.pop() if cats else Category.UNKNOWN
    depth = [o for o in obs if o.source is Source.DEPTH]
    # Depth centroids are measured directly, so they win over ROI estimates.
    position = (depth or obs)[0].position
    box = obs[0].bbox
    for o in obs[1:]:
        box = box.union(o.bbox)
    return LocalizedObject(
        category=category,
        raw_labels=tuple((o.label, o.score, o.source) for o in obs),
        position=position,
        bbox=box,
        sources=frozenset(o.source for o in obs),
    )


def merge_observations(a: list[Observation], b: list[Observation],
                       params: FusionParams = FusionParams()) -> list[LocalizedObject]:
    pairs = match(a, b, params)
    seen_a = {i for i, _ in pairs}
    seen_b = {j for _, j in pairs}
    fused = [_fuse([a[i], b[j]]) for i, j in pairs]
    fused += [_fuse([o]) for i, o in enumerate(a) if i not in seen_a]
    fused += [_fuse([o]) for j, o in enumerate(b) if j not in seen_b]
    return sorted(fused, key=LocalizedObject.sort_key)


def merge_paths(
    rgb: list[tuple[Detection, WorldPoint]],
    depth: list[tuple[ObstacleSegment | BBox, ClassificationResult, WorldPoint]],
    params: FusionParams = FusionParams(),
    *,
    image_width: int | None = None,
    taxonomy=None,
) -> list[LocalizedObject]:
    """Fuse both paths' results for one frame, removing duplicates.

    Depth entries may carry the segment itself (its pixel bounds become the
    box, which needs ``image_width``) or an already computed box.
    """
    a = [rgb_observation(d, p, taxonomy) for d, p in rgb]
    b = []
    for seg, result, pos in depth:
        if isinstance(seg, ObstacleSegment):
            if image_width is None:
                raise ValueError("image_width is required to box depth segments")
            seg = BBox(*seg.pixel_bounds(image_width))
        b.append(depth_observation(seg, result, pos, taxonomy))
    return merge_observations(a, b, params)
