import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallhazard.backends import BBox, ClassificationResult, Detection, Source
from fallhazard.fusion import (
    Category,
    FusionParams,
    LocalizedObject,
    Observation,
    compatible,
    default_taxonomy,
    iou,
    load_taxonomy,
    map_label,
    match,
    merge_observations,
    merge_paths,
)
from fallhazard.pointcloud import ObstacleSegment


def raster_iou(a: BBox, b: BBox) -> float:
    """IoU by painting integer boxes onto a grid and counting cells."""
    w = int(max(a.x_max, b.x_max)) + 1
    h = int(max(a.y_max, b.y_max)) + 1
    ga = np.zeros((h, w), bool)
    gb = np.zeros((h, w), bool)
    ga[int(a.y_min):int(a.y_max), int(a.x_min):int(a.x_max)] = True
    gb[int(b.y_min):int(b.y_max), int(b.x_min):int(b.x_max)] = True
    return (ga & gb).sum() / (ga | gb).sum()


def obs(bbox, pos, cat=Category.ANIMAL, source=Source.RGB, label="x"):
    return Observation(label, 0.5, source, BBox(*bbox), pos, cat)


def greedy_oracle(a, b, params):
    """Repeatedly take the best remaining admissible pair until none is left."""
    free_a, free_b, out = set(range(len(a))), set(range(len(b))), []
    while True:
        best = None
        for i in sorted(free_a):
            for j in sorted(free_b):
                if not compatible(a[i].category, b[j].category):
                    continue
                v = iou(a[i].bbox, b[j].bbox)
                if v >= params.iou_threshold or math.dist(a[i].position, b[j].position) <= params.max_position_gap:
                    if best is None or v > best[0]:
                        best = (v, i, j)
        if best is None:
            return sorted(out)
        out.append(best[1:])
        free_a.discard(best[1])
        free_b.discard(best[2])


int_boxes = st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 20), st.integers(1, 20)).map(
    lambda t: BBox(t[0], t[1], t[0] + t[2], t[1] + t[3])
)


class TestIoU:
    def test_identical(self):
        assert iou(BBox(0, 0, 10, 10), BBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) == 0.0

    def test_half_overlap(self):
        # intersection 50, union 150
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_box_against_its_half(self):
        assert iou(BBox(0, 0, 10, 10), BBox(0, 0, 5, 10)) == 0.5

    def test_nested(self):
        assert iou(BBox(0, 0, 10, 10), BBox(2, 2, 7, 7)) == pytest.approx(0.25)

    @given(int_boxes, int_boxes)
    def test_matches_raster_oracle(self, a, b):
        assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-12)
        assert iou(a, b) == iou(b, a)


class TestTaxonomy:
    @pytest.mark.parametrize(
        "label,cat",
        [("cat", "animal"), ("Tabby", "animal"), ("papillon", "animal"), ("chair", "furniture"),
         ("book", "small_object"), ("modem", "small_object"), ("zebra crossing", "unknown")],
    )
    def test_map_label(self, label, cat):
        assert map_label(label) is Category(cat)

    def test_source_independent(self):
        assert map_label("cat", Source.RGB) is map_label("cat", Source.DEPTH)

    def test_duplicate_label_rejected(self, tmp_path):
        p = tmp_path / "tax.json"
        p.write_text(json.dumps({"animal": ["cat"], "furniture": ["Cat"]}))
        with pytest.raises(ValueError):
            load_taxonomy(p)

    def test_unknown_category_rejected(self, tmp_path):
        p = tmp_path / "tax.json"
        p.write_text(json.dumps({"plants": ["fern"]}))
        with pytest.raises(ValueError):
            load_taxonomy(p)

    def test_default_table_has_all_categories(self):
        cats = set(default_taxonomy().values())
        assert cats == {Category.ANIMAL, Category.FURNITURE, Category.SMALL_OBJECT}


class TestMerge:
    def test_overlapping_same_object(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), label="cat")]
        b = [obs((2, 1, 11, 10), (1.05, 0.0, 0.1), source=Source.DEPTH, label="tabby")]
        (o,) = merge_observations(a, b)
        assert o.sources == {Source.RGB, Source.DEPTH}
        assert o.position == (1.05, 0.0, 0.1)
        assert o.bbox == BBox(0, 0, 11, 10)
        assert [l for l, _, _ in o.raw_labels] == ["cat", "tabby"]

    def test_far_apart_not_merged(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1))]
        b = [obs((100, 100, 110, 110), (2.0, 1.0, 0.1), source=Source.DEPTH)]
        assert len(merge_observations(a, b)) == 2

    def test_close_in_world_merges_without_overlap(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1))]
        b = [obs((40, 0, 50, 10), (1.2, 0.0, 0.1), source=Source.DEPTH)]
        assert len(merge_observations(a, b)) == 1

    def test_incompatible_categories_not_merged(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), Category.ANIMAL)]
        b = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), Category.FURNITURE, Source.DEPTH)]
        assert len(merge_observations(a, b)) == 2

    def test_unknown_takes_the_known_category(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), Category.SMALL_OBJECT)]
        b = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), Category.UNKNOWN, Source.DEPTH)]
        (o,) = merge_observations(a, b)
        assert o.category is Category.SMALL_OBJECT

    def test_one_to_one(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1))]
        b = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1), source=Source.DEPTH),
             obs((1, 0, 11, 10), (1.0, 0.05, 0.1), source=Source.DEPTH)]
        out = merge_observations(a, b)
        assert len(out) == 2
        assert sum(len(o.sources) for o in out) == 3

    def test_empty_lists(self):
        assert merge_observations([], []) == []

    def test_pass_through(self):
        a = [obs((0, 0, 10, 10), (1.0, 0.0, 0.1)), obs((50, 0, 60, 10), (2.0, 0.0, 0.1))]
        out = merge_observations(a, [])
        assert [o.bbox for o in out] == [x.bbox for x in a]
        assert all(o.sources == {Source.RGB} for o in out)

    def test_merge_paths_with_segment(self):
        det = Detection(BBox(2, 0, 5, 3), "cat", 0.9)
        seg = ObstacleSegment(np.array([2, 3, 12, 13]), np.zeros((4, 3)))  # width 10: cols 2-3, rows 0-1
        out = merge_paths([(det, (1.0, 0.0, 0.1))], [(seg, ClassificationResult("tabby", 0.6), (1.02, 0.0, 0.12))],
                          image_width=10)
        (o,) = out
        assert o.category is Category.ANIMAL and o.bbox == BBox(2, 0, 5, 3)
        with pytest.raises(ValueError):
            merge_paths([], [(seg, ClassificationResult("tabby", 0.6), (0, 0, 0))])

    def test_nonfinite_position_rejected(self):
        with pytest.raises(ValueError):
            LocalizedObject(Category.ANIMAL, (), (math.nan, 0, 0), BBox(0, 0, 1, 1), frozenset({Source.RGB}))


def random_instance(rng, n_max=6):
    cats = list(Category)

    def one(source):
        x, y = rng.integers(0, 60, size=2)
        w, h = rng.integers(4, 25, size=2)
        pos = tuple(float(v) for v in rng.uniform(0, 1.5, size=3))
        return obs((x, y, x + w, y + h), pos, cats[rng.integers(len(cats))], source)

    a = [one(Source.RGB) for _ in range(rng.integers(0, n_max))]
    b = [one(Source.DEPTH) for _ in range(rng.integers(0, n_max))]
    return a, b


class TestMatchingOracle:
    def test_matches_greedy_oracle(self):
        rng = np.random.default_rng(0)
        params = FusionParams()
        for _ in range(300):
            a, b = random_instance(rng)
            assert sorted(match(a, b, params)) == greedy_oracle(a, b, params)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = random_instance(rng)
            ab = merge_observations(a, b)
            ba = merge_observations(b, a)
            assert [(o.bbox, o.category, o.sources, o.position) for o in ab] == \
                   [(o.bbox, o.category, o.sources, o.position) for o in ba]

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_output_count(self, seed):
        a, b = random_instance(np.random.default_rng(seed))
        out = merge_observations(a, b)
        assert len(out) == len(a) + len(b) - len(match(a, b, FusionParams()))
        assert out == sorted(out, key=LocalizedObject.sort_key)
