"""Detector and classifier interfaces with deterministic fixture backends.

Live networks sit behind the same two protocols. ``SocketDetector`` and
``SocketClassifier`` forward requests to an external inference process
as JSON lines over TCP; nothing in the test suite depends on one running.
"""

from __future__ import annotations

import base64
import io
import json
import math
import socket
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import MissingFixtureError

CLASSIFIER_MATCH_RADIUS_PX = 10.0


class Source(str, Enum):
    RGB = "rgb_path"
    DEPTH = "depth_path"


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: covers columns ``x_min <= u < x_max`` and rows likewise."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"bounding box has non-finite corners: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bounding box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        """Center in pixel-center coordinates, where pixel ``u`` sits at ``u``."""
        return (self.x_min + self.x_max - 1) / 2.0, (self.y_min + self.y_max - 1) / 2.0

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def within(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def contains(self, other: BBox) -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def union(self, other: BBox) -> BBox:
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def slices(self) -> tuple[slice, slice]:
        """Row and column slices covering every pixel the box touches."""
        return (
            slice(math.floor(self.y_min), math.ceil(self.y_max)),
            slice(math.floor(self.x_min), math.ceil(self.x_max)),
        )


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    label: str
    score: float
    source: Source = Source.RGB

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("detection label must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class ClassificationResult:
    label: str
    score: float

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("classification label must be non-empty")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"classification score {self.score} outside [0, 1]")


UNKNOWN = ClassificationResult("unknown", 0.0)


@dataclass(frozen=True, eq=False)
class Crop:
    """An RGB cut-out handed to a classifier.

    ``anchor`` is the pixel the crop was built around (the projected segment
    centroid); fixture classifiers key on it.
    """

    frame_id: str
    pixels: np.ndarray
    bbox: BBox
    anchor: tuple[float, float]


@runtime_checkable
class Detector(Protocol):
    def detect(self, frame_id: str, rgb: np.ndarray) -> list[Detection]: ...


@runtime_checkable
class Classifier(Protocol):
    def classify(self, crop: Crop) -> ClassificationResult: ...


def expand_roi(b: BBox, factor: float, width: int, height: int) -> BBox:
    """Scale ``b`` by ``factor`` about its center and clip it to the image."""
    if factor < 1:
        raise ValueError(f"expansion factor must be >= 1, got {factor}")
    mx, my = (b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0
    hw, hh = b.width * factor / 2.0, b.height * factor / 2.0
    return BBox(
        max(0.0, min(b.x_min, mx - hw)),
        max(0.0, min(b.y_min, my - hh)),
        min(float(width), max(b.x_max, mx + hw)),
        min(float(height), max(b.y_max, my + hh)),
    )


def crop_image(rgb: np.ndarray, b: BBox) -> np.ndarray:
    """Pixels of ``rgb`` under ``b``; parts outside the image are dropped."""
    rows, cols = b.slices()
    return rgb[max(rows.start, 0):max(rows.stop, 0), max(cols.start, 0):max(cols.stop, 0)]


def validate_detections(dets, width: int, height: int) -> list[Detection]:
    """Boundary check applied to whatever a backend returns."""
    out = []
    for d in dets:
        if not isinstance(d, Detection):
            raise TypeError(f"backend returned {type(d).__name__}, expected Detection")
        if not d.bbox.within(width, height):
            raise ValueError(f"detection {d.label!r} box {d.bbox.as_list()} outside {width}x{height} image")
        out.append(d)
    return out


def _parse_detection(entry: dict, width: int | None, height: int | None) -> Detection:
    box = BBox(*(float(v) for v in entry["bbox"]))
    if width is not None and not box.within(width, height):
        raise ValueError(f"fixture box {box.as_list()} for {entry.get('label')!r} outside {width}x{height}")
    return Detection(box, str(entry["label"]), float(entry.get("score", 1.0)), Source.RGB)


class FixtureDetector:
    """Returns the detections listed in fixture documents, keyed by frame id."""

    def __init__(self, frames: dict[str, list[Detection]]):
        self._frames = {k: tuple(v) for k, v in frames.items()}

    @classmethod
    def from_documents(cls, docs, image_size: tuple[int, int] | None = None) -> FixtureDetector:
        w, h = image_size if image_size else (None, None)
        frames = {}
        for doc in docs:
            frames[str(doc["frame_id"])] = [_parse_detection(e, w, h) for e in doc.get("detections", [])]
        return cls(frames)

    @classmethod
    def from_file(cls, path, image_size=None) -> FixtureDetector:
        return cls.from_documents([json.loads(Path(path).read_text())], image_size)

    def detect(self, frame_id: str, rgb: np.ndarray) -> list[Detection]:
        try:
            return list(self._frames[frame_id])
        except KeyError:
            raise MissingFixtureError(f"no detection fixture for frame {frame_id!r}") from None


class FixtureClassifier:
    """Maps crops to labels by the anchor pixel, nearest entry within 10 px."""

    def __init__(self, frames: dict[str, list[tuple[tuple[float, float], ClassificationResult]]],
                 radius: float = CLASSIFIER_MATCH_RADIUS_PX):
        self._frames = {k: tuple(v) for k, v in frames.items()}
        self.radius = radius

    @classmethod
    def from_documents(cls, docs) -> FixtureClassifier:
        frames = {}
        for doc in docs:
            frames[str(doc["frame_id"])] = [
                ((float(e["pixel"][0]), float(e["pixel"][1])),
                 ClassificationResult(str(e["label"]), float(e.get("score", 1.0))))
                for e in doc.get("classifications", [])
            ]
        return cls(frames)

    @classmethod
    def from_file(cls, path) -> FixtureClassifier:
        return cls.from_documents([json.loads(Path(path).read_text())])

    def classify(self, crop: Crop) -> ClassificationResult:
        if crop.pixels.size == 0:
            raise ValueError("cannot classify an empty crop")
        best, best_d = UNKNOWN, math.inf
        for (px, py), result in self._frames.get(crop.frame_id, ()):
            d = math.hypot(px - crop.anchor[0], py - crop.anchor[1])
            if d <= self.radius and d < best_d:
                best, best_d = result, d
        return best


def _encode_png(rgb: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _SocketClient:
    def __init__(self, address: str, timeout: float = 10.0):
        host, _, port = address.rpartition(":")
        self.host, self.port, self.timeout = host or "127.0.0.1", int(port), timeout

    def request(self, payload: dict) -> dict:
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
            sock.sendall(json.dumps(payload).encode() + b"\n")
            with sock.makefile("rb") as f:
                line = f.readline()
        if not line:
            raise ConnectionError(f"inference server at {self.host}:{self.port} closed the connection")
        reply = json.loads(line)
        if "error" in reply:
            raise RuntimeError(f"inference server error: {reply['error']}")
        return reply


class SocketDetector:
    """Asks an external process for detections: one JSON request line, one reply line."""

    def __init__(self, address: str):
        self._client = _SocketClient(address)

    def detect(self, frame_id: str, rgb: np.ndarray) -> list[Detection]:
        reply = self._client.request({"op": "detect", "frame_id": frame_id, "image_png": _encode_png(rgb)})
        h, w = rgb.shape[:2]
        return [_parse_detection(e, w, h) for e in reply.get("detections", [])]


class SocketClassifier:
    def __init__(self, address: str):
        self._client = _SocketClient(address)

    def classify(self, crop: Crop) -> ClassificationResult:
        if crop.pixels.size == 0:
            raise ValueError("cannot classify an empty crop")
        reply = self._client.request(
            {"op": "classify", "frame_id": crop.frame_id, "image_png": _encode_png(crop.pixels)}
        )
        return ClassificationResult(str(reply["label"]), float(reply["score"]))
