"""On-disk formats, report serialization, overlays and the command-line tool.

Frame bundle directory layout::

    rgb.png          8-bit RGB
    depth.png        16-bit single channel, millimeters, 0 = no reading
    meta.json        {"frame_id", "intrinsics": {...}, "pose": {...}}
    detections.json  optional fixture document for the fixture backends
    map.txt          optional occupancy map (``occmap v1`` text format)
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .backends import BBox, Source
from .errors import BundleLoadError, ConfigError, HazardError, InvalidSpecError
from .frame import FrameBundle
from .fusion import Category, LocalizedObject
from .geometry import CameraIntrinsics, Point3, Pose
from .hazard import HazardEntry, HazardReport, OccupancyMap, Severity
from .pipeline import Backends, FrameResult, PipelineConfig, process_frame
from .pointcloud import DepthImage
from .scene_synth import SceneSpec, render

log = logging.getLogger(__name__)

SCHEMA = "fallhazard.report/1"
RGB_FILE, DEPTH_FILE, META_FILE, FIXTURE_FILE, MAP_FILE = (
    "rgb.png", "depth.png", "meta.json", "detections.json", "map.txt",
)

SEVERITY_COLORS = {
    Severity.NONE: (128, 128, 128),
    Severity.MODERATE: (255, 191, 0),
    Severity.HIGH: (255, 0, 0),
}

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


# -- frame bundles ------------------------------------------------------------

def _read_image(path: Path) -> np.ndarray:
    if not path.is_file():
        raise BundleLoadError(f"{path.name}: file is missing")
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (OSError, ValueError) as exc:
        raise BundleLoadError(f"{path.name}: cannot decode image ({exc})") from None


def load_frame_bundle(path) -> FrameBundle:
    root = Path(path)
    if not root.is_dir():
        raise BundleLoadError(f"frame bundle {root} is not a directory")
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise BundleLoadError(f"{META_FILE}: file is missing")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleLoadError(f"{META_FILE}: malformed JSON ({exc})") from None
    for key in ("frame_id", "intrinsics", "pose"):
        if key not in meta:
            raise BundleLoadError(f"{META_FILE}: missing field {key!r}")
    try:
        K = CameraIntrinsics.from_dict(meta["intrinsics"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleLoadError(f"{META_FILE}: bad field 'intrinsics' ({exc})") from None
    try:
        pose = Pose.from_dict(meta["pose"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleLoadError(f"{META_FILE}: bad field 'pose' ({exc})") from None

    rgb = _read_image(root / RGB_FILE)
    if rgb.ndim != 3 or rgb.shape[2] < 3 or rgb.dtype != np.uint8:
        raise BundleLoadError(f"{RGB_FILE}: expected 8-bit RGB, got {rgb.dtype} {rgb.shape}")
    rgb = rgb[..., :3]
    depth_mm = _read_image(root / DEPTH_FILE)
    if depth_mm.ndim != 2:
        raise BundleLoadError(f"{DEPTH_FILE}: expected a single channel, got shape {depth_mm.shape}")
    if rgb.shape[:2] != depth_mm.shape:
        raise BundleLoadError(f"{DEPTH_FILE}: size {depth_mm.shape[::-1]} differs from rgb {rgb.shape[1::-1]}")
    if (K.width, K.height) != (rgb.shape[1], rgb.shape[0]):
        raise BundleLoadError(f"{META_FILE}: intrinsics size {K.width}x{K.height} does not match the images")
    depth_mm = depth_mm.astype(np.float64)
    depth = DepthImage(depth_mm / 1000.0, depth_mm > 0)

    fixture = None
    fx_path = root / FIXTURE_FILE
    if fx_path.is_file():
        try:
            fixture = json.loads(fx_path.read_text())
        except json.JSONDecodeError as exc:
            raise BundleLoadError(f"{FIXTURE_FILE}: malformed JSON ({exc})") from None
    return FrameBundle(str(meta["frame_id"]), rgb, depth, K, pose, fixture)


def save_frame_bundle(bundle: FrameBundle, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    Image.fromarray(bundle.rgb).save(root / RGB_FILE)
    mm = np.where(bundle.depth.valid, np.rint(bundle.depth.values * 1000.0), 0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(root / DEPTH_FILE)
    meta = {"frame_id": bundle.frame_id, "intrinsics": bundle.intrinsics.to_dict(), "pose": bundle.pose.to_dict()}
    (root / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if bundle.fixture is not None:
        (root / FIXTURE_FILE).write_text(json.dumps(bundle.fixture, indent=2, sort_keys=True) + "\n")
    return root


# -- config -------------------------------------------------------------------

def parse_config(text: str) -> PipelineConfig:
    """``key=value`` lines with dotted keys; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"config line {n}: duplicate key {key!r}")
        values[key] = value
    return PipelineConfig.from_flat(values)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


# -- reports ------------------------------------------------------------------

def _dump(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats fixed at four decimals."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_dump(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _dump(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite value {obj!r}")
        text = f"{float(obj):.4f}"
        return "0.0000" if text == "-0.0000" else text
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(str(obj))


def canonical_json(doc: dict) -> str:
    return _dump(doc) + "\n"


def _entry_document(e: HazardEntry) -> dict:
    o = e.obj
    return {
        "category": o.category.value,
        "labels": [{"label": lbl, "score": float(score), "source": src.value} for lbl, score, src in o.raw_labels],
        "world_position": [float(v) for v in o.position],
        "bbox": [float(v) for v in o.bbox.as_list()],
        "severity": e.severity.label,
        "rule_trace": list(e.rule_trace),
        "sources": sorted(s.value for s in o.sources),
        "on_floor": e.on_floor,
        "near_occupied": e.near_occupied,
    }


def report_document(result: FrameResult, include_timings: bool = True) -> dict:
    entries = result.report.entries if result.report else ()
    doc = {
        "schema": SCHEMA,
        "frame_id": result.frame_id,
        "entries": [_entry_document(e) for e in entries],
        "warnings": list(result.warnings),
    }
    if include_timings:
        doc["timings_ms"] = {k: float(v) for k, v in result.timings_ms.items()}
    return doc


def write_report(result: FrameResult, path, include_timings: bool = True) -> None:
    Path(path).write_text(canonical_json(report_document(result, include_timings)))


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported report schema {doc.get('schema')!r}")
    return doc


def report_from_document(doc: dict) -> HazardReport:
    entries = []
    for e in doc["entries"]:
        obj = LocalizedObject(
            category=Category(e["category"]),
            raw_labels=tuple((lb["label"], float(lb["score"]), Source(lb["source"])) for lb in e["labels"]),
            position=Point3(*(float(v) for v in e["world_position"])),
            bbox=BBox(*(float(v) for v in e["bbox"])),
            sources=frozenset(Source(s) for s in e["sources"]),
        )
        entries.append(HazardEntry(obj, Severity.parse(e["severity"]), tuple(e["rule_trace"]),
                                   bool(e["on_floor"]), bool(e["near_occupied"])))
    return HazardReport(str(doc["frame_id"]), tuple(entries))


def compare_reports(expected: dict, actual: dict, position_tol: float = 0.05) -> list[str]:
    """Semantic differences between two report documents, one line each."""
    diffs = []
    fid = expected.get("frame_id")
    exp, act = expected["entries"], actual["entries"]
    if len(exp) != len(act):
        diffs.append(f"{fid}: expected {len(exp)} objects, got {len(act)}")
    for i, (a, b) in enumerate(zip(exp, act)):
        name = f"{fid}: object {i} ({a['category']} {'/'.join(lb['label'] for lb in a['labels'])})"
        for key in ("category", "severity", "sources"):
            if a[key] != b[key]:
                diffs.append(f"{name} {key} expected {a[key]} got {b[key]}")
        if sorted(lb["label"] for lb in a["labels"]) != sorted(lb["label"] for lb in b["labels"]):
            diffs.append(f"{name} labels differ: {[lb['label'] for lb in b['labels']]}")
        gap = math.dist(a["world_position"], b["world_position"])
        if gap > position_tol:
            diffs.append(f"{name} position off by {gap:.3f} m")
    return diffs


# -- overlay ------------------------------------------------------------------

def render_overlay(bundle: FrameBundle, report: HazardReport) -> np.ndarray:
    """RGB copy with one severity-colored box and label tag per report entry."""
    image = Image.fromarray(bundle.rgb.copy())
    draw = ImageDraw.Draw(image)
    draw.fontmode = "1"  # crisp text: overlay pixels stay in the palette
    for e in report.entries:
        color = SEVERITY_COLORS[e.severity]
        b = e.obj.bbox
        x0, y0 = int(math.floor(b.x_min)), int(math.floor(b.y_min))
        x1, y1 = int(math.ceil(b.x_max)) - 1, int(math.ceil(b.y_max)) - 1
        draw.rectangle([x0, y0, x1, y1], outline=color, width=2)
        text = f"{e.obj.raw_labels[0][0]}: {e.severity.label}"
        tw, th = draw.textbbox((0, 0), text)[2:]
        ty = y0 - th - 2 if y0 - th - 2 >= 0 else y0
        draw.rectangle([x0, ty, x0 + tw + 3, ty + th + 2], fill=color)
        draw.text((x0 + 2, ty), text, fill=(255, 255, 255))
    return np.array(image)


# -- command line -------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fallhazard", description="Fall-hazard detection on RGB-D frame bundles.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("process", help="process one frame bundle into a hazard report")
    p.add_argument("--frame", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--map", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--overlay", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-timings", action="store_true", help="leave stage timings out of the report")

    s = sub.add_parser("synth", help="render a synthetic scene into a frame bundle")
    s.add_argument("--scene", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="process a directory of bundles and compare to expected reports")
    e.add_argument("--frames", required=True, type=Path)
    e.add_argument("--expected", required=True, type=Path)
    e.add_argument("--config", type=Path)
    e.add_argument("--map", type=Path)
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int, default=1)
    return parser


def _load_map(explicit: Path | None, frame_dir: Path) -> OccupancyMap:
    if explicit is not None:
        return OccupancyMap.load(explicit)
    if (frame_dir / MAP_FILE).is_file():
        return OccupancyMap.load(frame_dir / MAP_FILE)
    return OccupancyMap.empty()


def _config(path: Path | None, seed: int | None) -> PipelineConfig:
    cfg = load_config(path) if path else PipelineConfig()
    return cfg.with_seed(seed) if seed is not None else cfg


def _process_dir(frame_dir: Path, cfg: PipelineConfig, map_path: Path | None) -> tuple[FrameBundle, FrameResult]:
    bundle = load_frame_bundle(frame_dir)
    occupancy = _load_map(map_path, frame_dir)
    backends = Backends.from_config(cfg, [bundle.fixture] if bundle.fixture else [])
    return bundle, process_frame(bundle, cfg, occupancy, backends)


def _cmd_process(args) -> int:
    cfg = _config(args.config, args.seed)
    bundle, result = _process_dir(args.frame, cfg, args.map)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_report(result, args.out, include_timings=not args.no_timings)
    if args.overlay:
        Image.fromarray(render_overlay(bundle, result.report)).save(args.overlay)
    hazards = result.report.hazards() if result.report else []
    print(f"{result.frame_id}: {len(hazards)} hazard(s), report written to {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        spec = SceneSpec.from_dict(json.loads(args.scene.read_text()))
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"{args.scene}: malformed JSON ({exc})") from None
    bundle, _ = render(spec, seed=args.seed)
    save_frame_bundle(bundle, args.out)
    print(f"wrote frame bundle {spec.frame_id!r} to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _config(args.config, args.seed)
    frames = sorted(d for d in args.frames.iterdir() if (d / META_FILE).is_file())
    if not frames:
        raise BundleLoadError(f"no frame bundles under {args.frames}")

    def run(d: Path):
        expected_path = args.expected / f"{d.name}.json"
        if not expected_path.is_file():
            return d.name, [f"{d.name}: no expected report {expected_path.name}"]
        _, result = _process_dir(d, cfg, args.map)
        return d.name, compare_reports(read_report(expected_path), report_document(result, False))

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        outcomes = list(pool.map(run, frames))
    width = max(len(name) for name, _ in outcomes)
    failed = 0
    for name, diffs in outcomes:
        print(f"{name:<{width}}  {'PASS' if not diffs else 'FAIL'}")
        for line in diffs:
            print(f"    {line}")
        failed += bool(diffs)
    print(f"{len(outcomes) - failed}/{len(outcomes)} frames match")
    return EXIT_OK if not failed else EXIT_INVALID


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"process": _cmd_process, "synth": _cmd_synth, "eval": _cmd_eval}[args.command]
    try:
        return handler(args)
    except (ConfigError, BundleLoadError, InvalidSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HazardError as exc:
        print(f"processing failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_cli())
