"""Rule-based fall-hazard severity over fused objects."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .fusion import Category, LocalizedObject
from .geometry import WorldPoint

FREE, OCCUPIED, UNKNOWN_CELL = 0, 1, 2
_CELL_CHARS = {".": FREE, "#": OCCUPIED, "?": UNKNOWN_CELL}
_CHAR_OF = {v: k for k, v in _CELL_CHARS.items()}


class Severity(IntEnum):
    NONE = 0
    MODERATE = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> Severity:
        return cls[text.upper()]


@dataclass(frozen=True)
class HazardParams:
    h_max: float = 0.25
    floor_tolerance: float = 0.05
    wall_radius: float = 0.5


@dataclass(frozen=True, eq=False)
class OccupancyMap:
    """2-D grid of free/occupied/unknown cells; ``cells[iy, ix]``.

    Cell ``(ix, iy)`` covers ``origin + [ix, ix+1) * resolution`` in X and
    likewise in Y.
    """

    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2:
            raise ValueError("occupancy grid must be 2-D")
        if not self.resolution > 0:
            raise ValueError(f"map resolution must be positive, got {self.resolution}")
        if not np.isin(cells, (FREE, OCCUPIED, UNKNOWN_CELL)).all():
            raise ValueError("occupancy grid holds unknown cell codes")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def empty(cls) -> OccupancyMap:
        """A map with no extent: every position counts as outside."""
        return cls(np.zeros((0, 0), dtype=np.int8), 1.0)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return ix, iy
        return None

    def without_occupied(self, ix: int, iy: int) -> OccupancyMap:
        cells = self.cells.copy()
        if cells[iy, ix] == OCCUPIED:
            cells[iy, ix] = FREE
        return OccupancyMap(cells, self.resolution, self.origin)

    @classmethod
    def parse(cls, text: str) -> OccupancyMap:
        lines = [ln.rstrip("\r") for ln in text.splitlines()]
        if not lines:
            raise ValueError("empty occupancy map")
        head = lines[0].split()
        if len(head) != 7 or head[:2] != ["occmap", "v1"]:
            raise ValueError(f"bad map header {lines[0]!r}; expected 'occmap v1 <w> <h> <res> <ox> <oy>'")
        w, h = int(head[2]), int(head[3])
        res, ox, oy = float(head[4]), float(head[5]), float(head[6])
        rows = lines[1 : 1 + h]
        if len(rows) != h or any(ln.strip() for ln in lines[1 + h :]):
            raise ValueError(f"map header declares {h} rows, found {len(lines) - 1}")
        cells = np.empty((h, w), dtype=np.int8)
        for iy, row in enumerate(rows):
            if len(row) != w:
                raise ValueError(f"map row {iy} has {len(row)} cells, expected {w}")
            try:
                cells[iy] = [_CELL_CHARS[c] for c in row]
            except KeyError as exc:
                raise ValueError(f"map row {iy} has invalid cell character {exc.args[0]!r}") from None
        return cls(cells, res, (ox, oy))

    def dumps(self) -> str:
        head = f"occmap v1 {self.width} {self.height} {self.resolution!r} {self.origin[0]!r} {self.origin[1]!r}"
        rows = ["".join(_CHAR_OF[int(c)] for c in row) for row in self.cells]
        return "\n".join([head, *rows]) + "\n"

    @classmethod
    def load(cls, path) -> OccupancyMap:
        return cls.parse(Path(path).read_text())


def is_on_floor(p: WorldPoint, h_max: float, floor_tolerance: float = 0.0) -> bool:
    """True when the object's reference point sits at floor level.

    ``floor_tolerance`` admits points slightly below Z = 0, which measured
    positions of flat objects produce routinely.
    """
    return -floor_tolerance <= p[2] <= h_max


def near_occupied(p: WorldPoint, m: OccupancyMap, r: float) -> bool:
    """Any occupied cell center within ``r`` of the center of ``p``'s cell.

    Positions outside the map count as near-occupied.
    """
    cell = m.cell_of(p[0], p[1])
    if cell is None:
        return True
    ix, iy = cell
    reach = int(math.ceil(r / m.resolution))
    y0, y1 = max(0, iy - reach), min(m.height, iy + reach + 1)
    x0, x1 = max(0, ix - reach), min(m.width, ix + reach + 1)
    occ_y, occ_x = np.nonzero(m.cells[y0:y1, x0:x1] == OCCUPIED)
    if occ_y.size == 0:
        return False
    d = np.hypot(occ_x + x0 - ix, occ_y + y0 - iy) * m.resolution
    return bool((d <= r + 1e-12).any())


# Rule ids in cascade order; the last id in a trace is the one that decided.
RULES = ("R1", "R2", "R3", "R4", "R5")


def apply_rules(category: Category, on_floor: bool, near_wall: bool) -> tuple[Severity, tuple[str, ...]]:
    """The severity cascade; returns the verdict and the rules evaluated."""
    if not on_floor:
        return Severity.NONE, ("R1",)
    if category is Category.FURNITURE:
        if near_wall:
            return Severity.NONE, ("R1", "R2")
        return Severity.HIGH, ("R1", "R2", "R3")
    if category is Category.ANIMAL:
        return Severity.MODERATE, ("R1", "R2", "R3", "R4")
    return Severity.HIGH, ("R1", "R2", "R3", "R4", "R5")


@dataclass(frozen=True)
class HazardEntry:
    obj: LocalizedObject
    severity: Severity
    rule_trace: tuple[str, ...]
    on_floor: bool
    near_occupied: bool


@dataclass(frozen=True)
class HazardReport:
    frame_id: str
    entries: tuple[HazardEntry, ...]

    def hazards(self, minimum: Severity = Severity.MODERATE) -> list[HazardEntry]:
        return [e for e in self.entries if e.severity >= minimum]


def classify_hazard(objs, m: OccupancyMap, params: HazardParams = HazardParams(),
                    frame_id: str = "") -> HazardReport:
    entries = []
    for obj in sorted(objs, key=LocalizedObject.sort_key):
        on_floor = is_on_floor(obj.position, params.h_max, params.floor_tolerance)
        near = near_occupied(obj.position, m, params.wall_radius)
        severity, trace = apply_rules(obj.category, on_floor, near)
        entries.append(HazardEntry(obj, severity, trace, on_floor, near))
    return HazardReport(frame_id, tuple(entries))
