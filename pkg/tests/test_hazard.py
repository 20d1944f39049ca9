import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallhazard.backends import BBox, Source
from fallhazard.fusion import Category, LocalizedObject
from fallhazard.hazard import (
    FREE,
    OCCUPIED,
    UNKNOWN_CELL,
    HazardParams,
    OccupancyMap,
    Severity,
    apply_rules,
    classify_hazard,
    is_on_floor,
    near_occupied,
)

from scenes import GOLDEN_DIR

# Written out cell by cell rather than derived from the cascade.
RULE_TABLE = {
    # (category, on_floor, near_occupied): (severity, deciding rule)
    ("animal", False, False): ("none", "R1"),
    ("animal", False, True): ("none", "R1"),
    ("animal", True, False): ("moderate", "R4"),
    ("animal", True, True): ("moderate", "R4"),
    ("furniture", False, False): ("none", "R1"),
    ("furniture", False, True): ("none", "R1"),
    ("furniture", True, False): ("high", "R3"),
    ("furniture", True, True): ("none", "R2"),
    ("small_object", False, False): ("none", "R1"),
    ("small_object", False, True): ("none", "R1"),
    ("small_object", True, False): ("high", "R5"),
    ("small_object", True, True): ("high", "R5"),
    ("unknown", False, False): ("none", "R1"),
    ("unknown", False, True): ("none", "R1"),
    ("unknown", True, False): ("high", "R5"),
    ("unknown", True, True): ("high", "R5"),
}


def grid_oracle(p, m: OccupancyMap, r: float) -> bool:
    """Scan every occupied cell of the map."""
    cell = m.cell_of(p[0], p[1])
    if cell is None:
        return True
    ix, iy = cell
    for y in range(m.height):
        for x in range(m.width):
            if m.cells[y, x] == OCCUPIED and math.hypot(x - ix, y - iy) * m.resolution <= r + 1e-12:
                return True
    return False


def room(size_cells=80, res=0.05, wall=1) -> OccupancyMap:
    cells = np.zeros((size_cells, size_cells), np.int8)
    cells[:wall, :] = cells[-wall:, :] = cells[:, :wall] = cells[:, -wall:] = OCCUPIED
    return OccupancyMap(cells, res, (0.0, 0.0))


def thing(category, pos, x=0):
    return LocalizedObject(Category(category), (("x", 0.5, Source.RGB),), pos,
                           BBox(x, 0, x + 10, 10), frozenset({Source.RGB}))


class TestIsOnFloor:
    def test_examples(self):
        assert is_on_floor((0, 0, 0.0), 0.25)
        assert not is_on_floor((0, 0, 0.8), 0.25)
        assert is_on_floor((0, 0, 0.25), 0.25)
        assert not is_on_floor((0, 0, 0.2500001), 0.25)

    def test_tolerance_below_floor(self):
        assert not is_on_floor((0, 0, -0.01), 0.25)
        assert is_on_floor((0, 0, -0.01), 0.25, floor_tolerance=0.05)
        assert not is_on_floor((0, 0, -0.06), 0.25, floor_tolerance=0.05)


class TestNearOccupied:
    def test_adjacent_to_wall(self):
        assert near_occupied((0.07, 2.0, 0), room(), 0.5)

    def test_center_of_free_room(self):
        # 4 x 4 m room, center is 1.95 m from the nearest wall cell
        assert not near_occupied((2.0, 2.0, 0), room(), 0.5)

    def test_all_free(self):
        m = OccupancyMap(np.zeros((10, 10), np.int8), 0.1)
        assert not near_occupied((0.5, 0.5, 0), m, 5.0)

    def test_unknown_cells_are_not_occupied(self):
        m = OccupancyMap(np.full((10, 10), UNKNOWN_CELL, np.int8), 0.1)
        assert not near_occupied((0.5, 0.5, 0), m, 1.0)

    def test_outside_map(self):
        assert near_occupied((-1.0, 2.0, 0), room(), 0.5)
        assert near_occupied((0.0, 0.0, 0), OccupancyMap.empty(), 0.5)

    def test_boundary_distance(self):
        cells = np.zeros((1, 20), np.int8)
        cells[0, 10] = OCCUPIED
        m = OccupancyMap(cells, 0.1)
        assert near_occupied((0.55, 0.05, 0), m, 0.5)  # cell 5, exactly 0.5 m
        assert not near_occupied((0.45, 0.05, 0), m, 0.5)  # cell 4, 0.6 m

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            h, w = rng.integers(1, 15, size=2)
            cells = rng.choice([FREE, OCCUPIED, UNKNOWN_CELL], size=(h, w), p=[0.85, 0.1, 0.05]).astype(np.int8)
            m = OccupancyMap(cells, float(rng.uniform(0.02, 0.2)), tuple(rng.uniform(-1, 1, size=2)))
            p = (m.origin[0] + rng.uniform(-0.2, w * m.resolution + 0.2),
                 m.origin[1] + rng.uniform(-0.2, h * m.resolution + 0.2), 0.0)
            r = float(rng.uniform(0, 1))
            assert near_occupied(p, m, r) == grid_oracle(p, m, r)


class TestRules:
    @pytest.mark.parametrize("cell", sorted(RULE_TABLE))
    def test_table(self, cell):
        category, on_floor, near = cell
        severity, trace = apply_rules(Category(category), on_floor, near)
        assert (severity.label, trace[-1]) == RULE_TABLE[cell]
        assert trace[0] == "R1"
        assert list(trace) == sorted(trace)

    def test_trace_determines_severity(self):
        verdict = {"R1": Severity.NONE, "R2": Severity.NONE, "R3": Severity.HIGH,
                   "R4": Severity.MODERATE, "R5": Severity.HIGH}
        for category, on_floor, near in itertools.product(Category, (False, True), (False, True)):
            severity, trace = apply_rules(category, on_floor, near)
            assert verdict[trace[-1]] is severity

    def test_enumerated_properties(self):
        for category, near in itertools.product(Category, (False, True)):
            sev, _ = apply_rules(category, True, near)
            if category is Category.ANIMAL:
                assert sev <= Severity.MODERATE
            elif category is not Category.FURNITURE:
                assert sev is Severity.HIGH

    def test_severity_order_and_parse(self):
        assert Severity.NONE < Severity.MODERATE < Severity.HIGH
        assert Severity.parse("moderate") is Severity.MODERATE


class TestClassify:
    def test_examples(self):
        m = room()
        objs = [
            thing("animal", (2.0, 2.0, 0.1), 0),
            thing("small_object", (1.5, 1.5, 0.01), 20),
            thing("small_object", (2.5, 1.5, 0.03), 40),
            thing("furniture", (0.1, 2.0, 0.2), 60),
            thing("furniture", (2.0, 2.5, 0.2), 80),
            thing("small_object", (2.0, 2.0, 0.8), 100),
        ]
        report = classify_hazard(objs, m, HazardParams(), "f")
        got = [e.severity.label for e in report.entries]
        assert got == ["moderate", "high", "high", "none", "high", "none"]
        assert len(report.hazards()) == 4
        assert len(report.hazards(Severity.HIGH)) == 3
        assert all(e.rule_trace for e in report.entries)

    def test_every_object_reported(self):
        objs = [thing("unknown", (1, 1, 5.0), i * 12) for i in range(7)]
        assert len(classify_hazard(objs, room()).entries) == 7

    def test_permutation_invariance(self):
        rng = random.Random(3)
        objs = [thing(c, (rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(-0.1, 0.5)), i * 11)
                for i, c in enumerate(["animal", "furniture", "small_object", "unknown"] * 3)]
        base = classify_hazard(objs, room())
        for _ in range(10):
            rng.shuffle(objs)
            assert classify_hazard(objs, room()) == base

    @settings(max_examples=100)
    @given(st.floats(0.0, 4.0), st.floats(0.0, 4.0), st.integers(0, 79), st.integers(0, 79))
    def test_removing_occupied_never_lowers_furniture(self, x, y, ix, iy):
        m = room()
        cells = m.cells.copy()
        cells[iy, ix] = OCCUPIED
        m = OccupancyMap(cells, m.resolution, m.origin)
        obj = thing("furniture", (x, y, 0.1))
        before = classify_hazard([obj], m).entries[0].severity
        after = classify_hazard([obj], m.without_occupied(ix, iy)).entries[0].severity
        assert after >= before


class TestMapFormat:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        cells = rng.choice([FREE, OCCUPIED, UNKNOWN_CELL], size=(7, 11)).astype(np.int8)
        m = OccupancyMap(cells, 0.05, (-1.5, 2.25))
        back = OccupancyMap.parse(m.dumps())
        assert np.array_equal(back.cells, m.cells)
        assert (back.resolution, back.origin) == (m.resolution, m.origin)

    def test_golden_map_loads(self):
        m = OccupancyMap.load(GOLDEN_DIR / "map.txt")
        assert (m.width, m.height, m.resolution) == (120, 120, 0.05)

    @pytest.mark.parametrize("text", [
        "",
        "occmap v2 2 1 0.1 0 0\n..\n",
        "occmap v1 2 2 0.1 0 0\n..\n",
        "occmap v1 2 1 0.1 0 0\n.x\n",
        "occmap v1 3 1 0.1 0 0\n..\n",
        "occmap v1 2 1 0 0 0\n..\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(ValueError):
            OccupancyMap.parse(text)
