import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from fallhazard.cli_io import report_document
from fallhazard.errors import ConfigError, MissingFixtureError
from fallhazard.fusion import Category
from fallhazard.hazard import OccupancyMap
from fallhazard.pipeline import Backends, PipelineConfig, process_bundle, process_frame
from fallhazard.pointcloud import DepthImage
from fallhazard.scene_synth import render

from scenes import box, cylinder, floor_scene, separated_objects


def labelled_scene(**kw):
    return floor_scene([
        box(1.3, -0.35, 0.2, 0.15, 0.012, yaw_deg=10, detector_label="book", detector_score=0.7),
        cylinder(1.6, 0.3, r=0.1, h=0.2, detector_label="cat", classifier_label="tabby"),
        box(1.1, 0.25, 0.1, 0.08, 0.05, classifier_label="modem"),
    ], **kw)


def test_empty_room():
    bundle, _ = render(floor_scene(noise=0.003), seed=0)
    result = process_bundle(bundle)
    assert result.report.entries == ()
    assert result.warnings == []
    assert all(t >= 0 for t in result.timings_ms.values())


def test_labelled_scene():
    spec = labelled_scene(noise=0.002)
    bundle, gt = render(spec, seed=1)
    result = process_bundle(bundle)
    entries = result.report.entries
    labels = sorted(tuple(sorted(l for l, _, _ in e.obj.raw_labels)) for e in entries)
    # the thin book is below the floor tolerance for depth segmentation
    assert labels == [("book",), ("cat", "tabby"), ("modem",)]
    cat = next(e for e in entries if e.obj.category is Category.ANIMAL)
    assert cat.severity.label == "moderate" and len(cat.obj.sources) == 2
    assert result.stages["depth"]["segments"] == 2
    assert result.stages["fusion"] == {"rgb": 2, "depth": 2, "fused": 3}


def test_all_invalid_depth_uses_floor_intersection():
    spec = floor_scene([
        box(1.2, -0.3, 0.12, 0.12, 0.02, detector_label="book"),
        box(1.7, 0.4, 0.1, 0.1, 0.03, detector_label="remote"),
    ])
    bundle, _ = render(spec, seed=0)
    blank = DepthImage.from_array(np.zeros(bundle.depth.values.shape))
    bundle = dataclasses.replace(bundle, depth=blank)
    result = process_bundle(bundle)
    assert result.stages["rgb"]["methods"] == ["ray_ground", "ray_ground"]
    assert all(len(e.obj.sources) == 1 for e in result.report.entries)
    got = sorted(e.obj.position for e in result.report.entries)
    truth = sorted(o.position for o in spec.objects)
    for p, q in zip(got, truth):
        assert math.dist(p, q) <= 0.10


def test_no_floor_keeps_rgb_path():
    # a level camera close to a large box sees no floor at all
    spec = floor_scene([box(1.0, 0.0, 0.2, 8.0, 6.0, detector_label="chair")], pitch_deg=0.0, height=1.0)
    bundle, gt = render(spec, seed=0)
    assert not (gt.object_index == -1).any()
    result = process_bundle(bundle)
    assert any("no floor" in w for w in result.warnings)
    assert result.stages["depth"]["skipped"] == "no floor"
    (entry,) = result.report.entries
    assert abs(entry.obj.position[0] - 0.9) < 0.05


def test_object_on_table_is_discarded():
    table = box(1.6, 0.0, 0.6, 0.8, 0.75, classifier_label="dining table")
    cup = box(1.5, 0.1, 0.1, 0.1, 0.12, z=0.75, detector_label="cup")
    bundle, _ = render(floor_scene([table, cup], pitch_deg=30, noise=0.002), seed=0)
    result = process_bundle(bundle)
    (entry,) = [e for e in result.report.entries if e.obj.raw_labels[0][0] == "cup"]
    assert not entry.on_floor
    assert entry.severity.label == "none" and entry.rule_trace == ("R1",)


def test_missing_fixture_is_an_error():
    bundle, _ = render(labelled_scene(), seed=0)
    backends = Backends.from_config(PipelineConfig(), [])
    with pytest.raises(MissingFixtureError):
        process_frame(bundle, PipelineConfig(), OccupancyMap.empty(), backends)


def test_deterministic():
    bundle, _ = render(labelled_scene(noise=0.004, invalid=0.02), seed=3)
    a = report_document(process_bundle(bundle), include_timings=False)
    b = report_document(process_bundle(bundle), include_timings=False)
    assert a == b


def test_frame_independence_under_threads():
    rng = np.random.default_rng(0)
    bundles = []
    for i in range(6):
        objs = [dataclasses.replace(o, detector_label="cat") for o in separated_objects(int(rng.integers(1, 4)), rng)]
        bundles.append(render(floor_scene(objs, noise=0.003, frame_id=f"f{i}"), seed=i)[0])
    sequential = [report_document(process_bundle(b), False) for b in bundles]
    with ThreadPoolExecutor(max_workers=4) as pool:
        concurrent = list(pool.map(lambda b: report_document(process_bundle(b), False), reversed(bundles)))
    assert sequential == concurrent[::-1]


class TestConfig:
    def test_defaults(self):
        assert PipelineConfig.from_flat({}) == PipelineConfig()

    def test_overrides(self):
        cfg = PipelineConfig.from_flat({"roi_depth.estimator": "kmeans", "ransac.iterations": "50", "seed": 4})
        assert cfg.estimator == "kmeans" and cfg.ransac.iterations == 50 and cfg.seed == 4

    @pytest.mark.parametrize("flat", [
        {"ransac.bogus": "1"},
        {"roi_depth.estimator": "median"},
        {"ransac.iterations": "many"},
        {"roi_depth.k_bins": "1"},
        {"detector.backend": "gpu"},
        {"classifier.roi_factor": "0.5"},
    ])
    def test_rejected(self, flat):
        with pytest.raises(ConfigError):
            PipelineConfig.from_flat(flat)
