"""Reading and writing the toolkit's interchange files.

Detections travel as JSON, either a bare list of records or an object
wrapping the list with file-level metadata:

    {
      "source_id": "model_a",
      "categories": [{"id": 1, "name": "Car"}],
      "detections": [
        {"image_id": "cam1_00042", "category_id": 1,
         "bbox": [100.0, 100.0, 50.0, 40.0], "score": 0.9}
      ]
    }

``bbox`` is (x, y, width, height) in pixels and is converted to corner
boxes internally. Records may carry an optional ``window`` of
[x0, y0, x1, y1] marking slice-local coordinates, and an optional
per-record ``source_id`` override. Unknown record keys are ignored so
real-world COCO result files ingest cleanly.

Ground truth is COCO-style (``images`` / ``annotations`` / ``categories``
tables). Pipeline configs are TOML; see `parse_config` for the key set.
"""

from __future__ import annotations

import json
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, ParseError, ValidationError
from .evaluation import GroundTruthBox
from .fusion import DEFAULT_IOU_THRESHOLD, FusionParams, METHODS
from .geometry import Box, Detection
from .slicing import Window
from .thresholding import DEFAULT_BIN_COUNT

__all__ = [
    "DetectionRecord",
    "DetectionFile",
    "ImageInfo",
    "GtAnnotation",
    "GroundTruthFile",
    "SourceSpec",
    "ThresholdSpec",
    "EvalSpec",
    "PipelineConfig",
    "parse_detections",
    "parse_ground_truth",
    "write_detections",
    "write_sliced_detections",
    "write_ground_truth",
    "parse_config",
]

_COORD_DECIMALS = 6


# ---------------------------------------------------------------------------
# detection interchange


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category_id: int
    bbox: tuple[float, float, float, float]
    score: float
    source_id: str
    window: Optional[Window] = None


@dataclass(frozen=True)
class DetectionFile:
    source_id: str
    categories: Mapping[int, str]
    entries: tuple[DetectionRecord, ...]

    @property
    def has_windows(self) -> bool:
        return any(r.window is not None for r in self.entries)

    def to_detections(self) -> list[Detection]:
        """Records as corner-convention detections (coordinates taken as-is)."""
        out = []
        for r in self.entries:
            x, y, w, h = r.bbox
            out.append(
                Detection(
                    box=Box(x, y, x + w, y + h),
                    score=r.score,
                    label=self.categories[r.category_id],
                    image_id=r.image_id,
                    source_id=r.source_id,
                )
            )
        return out

    def slice_groups(self) -> dict[str, list[tuple[Window, list[Detection]]]]:
        """Window-tagged records grouped per image, in slice-local coordinates."""
        grouped: dict[str, dict[Window, list[Detection]]] = {}
        for r in self.entries:
            if r.window is None:
                raise ValidationError(
                    f"record for image {r.image_id!r} has no slice window; "
                    "cannot group a partially tagged file"
                )
            x, y, w, h = r.bbox
            det = Detection(
                box=Box(x, y, x + w, y + h),
                score=r.score,
                label=self.categories[r.category_id],
                image_id=r.image_id,
                source_id=r.source_id,
            )
            grouped.setdefault(r.image_id, {}).setdefault(r.window, []).append(det)
        return {
            image_id: sorted(windows.items(), key=lambda kv: kv[0])
            for image_id, windows in sorted(grouped.items())
        }


def _load_json(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(path), line=e.lineno, column=e.colno) from None


def _as_str_id(value, ctx: str) -> str:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ValidationError(f"{ctx}: expected a string or integer id, got {value!r}")
    return str(value)


def _as_int(value, ctx: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{ctx}: expected an integer, got {value!r}")
    return value


def _as_number(value, ctx: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{ctx}: expected a number, got {value!r}")
    return float(value)


def _as_bbox(value, ctx: str) -> tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ValidationError(f"{ctx}: expected [x, y, width, height], got {value!r}")
    x, y, w, h = (_as_number(v, f"{ctx}[{i}]") for i, v in enumerate(value))
    if w <= 0 or h <= 0:
        raise ValidationError(f"{ctx}: width and height must be > 0, got {w!r} x {h!r}")
    return (x, y, w, h)


def _parse_categories(value, ctx: str) -> dict[int, str]:
    if not isinstance(value, list):
        raise ValidationError(f"{ctx}: expected a list of {{id, name}} entries")
    categories: dict[int, str] = {}
    for i, entry in enumerate(value):
        if not isinstance(entry, dict) or "id" not in entry or "name" not in entry:
            raise ValidationError(f"{ctx}[{i}]: expected an object with 'id' and 'name'")
        cid = _as_int(entry["id"], f"{ctx}[{i}].id")
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise ValidationError(f"{ctx}[{i}].name: expected a nonempty string")
        if cid in categories:
            raise ValidationError(f"{ctx}[{i}]: duplicate category id {cid}")
        categories[cid] = name
    return categories


def _parse_record(entry, i: int, file_source: str, categories: Mapping[int, str]) -> DetectionRecord:
    ctx = f"detections[{i}]"
    if not isinstance(entry, dict):
        raise ValidationError(f"{ctx}: expected an object, got {entry!r}")
    for key in ("image_id", "category_id", "bbox", "score"):
        if key not in entry:
            raise ValidationError(f"{ctx}: missing required field '{key}'")
    image_id = _as_str_id(entry["image_id"], f"{ctx}.image_id")
    category_id = _as_int(entry["category_id"], f"{ctx}.category_id")
    if category_id not in categories:
        raise ValidationError(f"{ctx}.category_id: {category_id} not in the category map")
    bbox = _as_bbox(entry["bbox"], f"{ctx}.bbox")
    score = _as_number(entry["score"], f"{ctx}.score")
    if not 0.0 <= score <= 1.0:
        raise ValidationError(f"{ctx}.score: {score!r} outside [0, 1]")
    source = file_source
    if "source_id" in entry:
        if not isinstance(entry["source_id"], str) or not entry["source_id"]:
            raise ValidationError(f"{ctx}.source_id: expected a nonempty string")
        source = entry["source_id"]
    window: Optional[Window] = None
    if entry.get("window") is not None:
        raw = entry["window"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise ValidationError(f"{ctx}.window: expected [x0, y0, x1, y1], got {raw!r}")
        window = tuple(_as_int(v, f"{ctx}.window[{j}]") for j, v in enumerate(raw))
        if window[2] <= window[0] or window[3] <= window[1]:
            raise ValidationError(f"{ctx}.window: degenerate window {window!r}")
    return DetectionRecord(
        image_id=image_id,
        category_id=category_id,
        bbox=bbox,
        score=score,
        source_id=source,
        window=window,
    )


def parse_detections(
    path: str | Path,
    categories: Optional[Mapping[int, str]] = None,
    source_id: Optional[str] = None,
) -> DetectionFile:
    """Parse a detection file; `categories`/`source_id` are fallbacks for bare
    list files that embed neither."""
    path = Path(path)
    data = _load_json(path)
    file_categories: Optional[Mapping[int, str]] = None
    file_source: Optional[str] = None
    if isinstance(data, dict):
        if "detections" not in data:
            raise ValidationError(f"{path}: detection object lacks a 'detections' list")
        if data.get("source_id") is not None:
            if not isinstance(data["source_id"], str) or not data["source_id"]:
                raise ValidationError(f"{path}: source_id must be a nonempty string")
            file_source = data["source_id"]
        if data.get("categories") is not None:
            file_categories = _parse_categories(data["categories"], "categories")
        entries_raw = data["detections"]
    elif isinstance(data, list):
        entries_raw = data
    else:
        raise ValidationError(f"{path}: expected a JSON object or list at the top level")
    if not isinstance(entries_raw, list):
        raise ValidationError(f"{path}: 'detections' must be a list")

    resolved_categories = file_categories if file_categories is not None else categories
    if resolved_categories is None:
        if entries_raw:
            raise ValidationError(
                f"{path}: no category map; the file embeds none and none was supplied"
            )
        resolved_categories = {}
    resolved_source = file_source or source_id or path.stem

    entries = tuple(
        _parse_record(entry, i, resolved_source, resolved_categories)
        for i, entry in enumerate(entries_raw)
    )
    return DetectionFile(
        source_id=resolved_source,
        categories=dict(resolved_categories),
        entries=entries,
    )


def _category_ids_for(labels: Iterable[str], categories: Optional[Mapping[str, int]]) -> dict[str, int]:
    if categories is not None:
        mapping = dict(categories)
        missing = sorted(set(labels) - set(mapping))
        if missing:
            raise ValidationError(f"category map lacks ids for labels {missing}")
        return mapping
    return {label: i for i, label in enumerate(sorted(set(labels)), start=1)}


def _detection_to_entry(d: Detection, name_to_id: Mapping[str, int], file_source: str) -> dict:
    entry = {
        "image_id": d.image_id,
        "category_id": name_to_id[d.label],
        "bbox": [
            round(d.box.x1, _COORD_DECIMALS),
            round(d.box.y1, _COORD_DECIMALS),
            round(d.box.width, _COORD_DECIMALS),
            round(d.box.height, _COORD_DECIMALS),
        ],
        "score": d.score,
    }
    if d.source_id != file_source:
        entry["source_id"] = d.source_id
    return entry


def _dump_detection_file(
    entries: list[dict],
    name_to_id: Mapping[str, int],
    file_source: str,
    path: str | Path,
) -> None:
    payload = {
        "source_id": file_source,
        "categories": [
            {"id": cid, "name": name}
            for name, cid in sorted(name_to_id.items(), key=lambda kv: kv[1])
        ],
        "detections": entries,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _file_source_for(dets: Sequence[Detection], source_id: Optional[str]) -> str:
    if source_id is not None:
        return source_id
    sources = {d.source_id for d in dets}
    if len(sources) == 1:
        return next(iter(sources))
    return "mixed"


def write_detections(
    dets: Sequence[Detection],
    path: str | Path,
    categories: Optional[Mapping[str, int]] = None,
    source_id: Optional[str] = None,
) -> None:
    """Serialize detections; corner boxes are written back as (x, y, w, h) with
    six-decimal coordinates, so coordinates round-trip to within 1e-4."""
    name_to_id = _category_ids_for((d.label for d in dets), categories)
    file_source = _file_source_for(dets, source_id)
    entries = [_detection_to_entry(d, name_to_id, file_source) for d in dets]
    _dump_detection_file(entries, name_to_id, file_source, path)


def write_sliced_detections(
    per_slice: Sequence[tuple[Window, Sequence[Detection]]],
    path: str | Path,
    categories: Optional[Mapping[str, int]] = None,
    source_id: Optional[str] = None,
) -> None:
    """Serialize slice-local detections, tagging every record with its window."""
    flat = [d for _, dets in per_slice for d in dets]
    name_to_id = _category_ids_for((d.label for d in flat), categories)
    file_source = _file_source_for(flat, source_id)
    entries = []
    for window, dets in per_slice:
        for d in dets:
            entry = _detection_to_entry(d, name_to_id, file_source)
            entry["window"] = list(window)
            entries.append(entry)
    _dump_detection_file(entries, name_to_id, file_source, path)


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class ImageInfo:
    image_id: str
    width: float
    height: float
    file_name: str


@dataclass(frozen=True)
class GtAnnotation:
    image_id: str
    category_id: int
    bbox: tuple[float, float, float, float]


@dataclass(frozen=True)
class GroundTruthFile:
    images: Mapping[str, ImageInfo]
    categories: Mapping[int, str]
    annotations: tuple[GtAnnotation, ...]

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(self.categories.values())

    def to_ground_truth(self) -> list[GroundTruthBox]:
        out = []
        for a in self.annotations:
            x, y, w, h = a.bbox
            out.append(
                GroundTruthBox(
                    box=Box(x, y, x + w, y + h),
                    label=self.categories[a.category_id],
                    image_id=a.image_id,
                )
            )
        return out


def _clip_gt_bbox(
    bbox: tuple[float, float, float, float], image: ImageInfo, ctx: str
) -> tuple[float, float, float, float]:
    x, y, w, h = bbox
    x2, y2 = x + w, y + h
    if x >= 0 and y >= 0 and x2 <= image.width and y2 <= image.height:
        return bbox
    warnings.warn(
        f"{ctx}: bbox {bbox} exceeds image {image.image_id!r} "
        f"({image.width}x{image.height}); clipping",
        stacklevel=3,
    )
    cx1 = min(max(x, 0.0), image.width)
    cy1 = min(max(y, 0.0), image.height)
    cx2 = min(max(x2, 0.0), image.width)
    cy2 = min(max(y2, 0.0), image.height)
    if cx2 - cx1 <= 0 or cy2 - cy1 <= 0:
        raise ValidationError(f"{ctx}: bbox {bbox} lies entirely outside its image")
    return (cx1, cy1, cx2 - cx1, cy2 - cy1)


def parse_ground_truth(path: str | Path) -> GroundTruthFile:
    """Parse a COCO-style ground-truth file, clipping out-of-bounds boxes with a warning."""
    path = Path(path)
    data = _load_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object at the top level")
    for key in ("images", "annotations", "categories"):
        if key not in data or not isinstance(data[key], list):
            raise ValidationError(f"{path}: missing or invalid '{key}' list")

    images: dict[str, ImageInfo] = {}
    for i, entry in enumerate(data["images"]):
        ctx = f"images[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{ctx}: expected an object")
        for key in ("id", "width", "height", "file_name"):
            if key not in entry:
                raise ValidationError(f"{ctx}: missing required field '{key}'")
        image_id = _as_str_id(entry["id"], f"{ctx}.id")
        width = _as_number(entry["width"], f"{ctx}.width")
        height = _as_number(entry["height"], f"{ctx}.height")
        if width <= 0 or height <= 0:
            raise ValidationError(f"{ctx}: image extents must be positive")
        if not isinstance(entry["file_name"], str):
            raise ValidationError(f"{ctx}.file_name: expected a string")
        if image_id in images:
            raise ValidationError(f"{ctx}: duplicate image id {image_id!r}")
        images[image_id] = ImageInfo(image_id, width, height, entry["file_name"])

    categories = _parse_categories(data["categories"], "categories")

    annotations = []
    for i, entry in enumerate(data["annotations"]):
        ctx = f"annotations[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{ctx}: expected an object")
        for key in ("image_id", "category_id", "bbox"):
            if key not in entry:
                raise ValidationError(f"{ctx}: missing required field '{key}'")
        image_id = _as_str_id(entry["image_id"], f"{ctx}.image_id")
        if image_id not in images:
            raise ValidationError(f"{ctx}.image_id: unknown image {image_id!r}")
        category_id = _as_int(entry["category_id"], f"{ctx}.category_id")
        if category_id not in categories:
            raise ValidationError(f"{ctx}.category_id: {category_id} not in the category map")
        bbox = _as_bbox(entry["bbox"], f"{ctx}.bbox")
        bbox = _clip_gt_bbox(bbox, images[image_id], ctx)
        annotations.append(GtAnnotation(image_id, category_id, bbox))

    return GroundTruthFile(images=images, categories=categories, annotations=tuple(annotations))


def write_ground_truth(
    gts: Sequence[GroundTruthBox],
    image_sizes: Mapping[str, tuple[float, float]],
    path: str | Path,
    categories: Optional[Mapping[str, int]] = None,
) -> None:
    """Serialize ground-truth boxes plus image extents as a COCO-style file."""
    missing = sorted({g.image_id for g in gts} - set(image_sizes))
    if missing:
        raise ValidationError(f"image_sizes lacks extents for images {missing}")
    name_to_id = _category_ids_for((g.label for g in gts), categories)
    payload = {
        "images": [
            {"id": image_id, "width": w, "height": h, "file_name": f"{image_id}.jpg"}
            for image_id, (w, h) in sorted(image_sizes.items())
        ],
        "annotations": [
            {
                "id": i,
                "image_id": g.image_id,
                "category_id": name_to_id[g.label],
                "bbox": [
                    round(g.box.x1, _COORD_DECIMALS),
                    round(g.box.y1, _COORD_DECIMALS),
                    round(g.box.width, _COORD_DECIMALS),
                    round(g.box.height, _COORD_DECIMALS),
                ],
            }
            for i, g in enumerate(gts)
        ],
        "categories": [
            {"id": cid, "name": name}
            for name, cid in sorted(name_to_id.items(), key=lambda kv: kv[1])
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# pipeline config


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    path: Path
    weight: float = 1.0
    sliced: bool = False
    slice_method: Optional[str] = None
    slice_iou_threshold: Optional[float] = None


@dataclass(frozen=True)
class ThresholdSpec:
    mode: str = "none"  # none | fixed | otsu
    value: Optional[float] = None
    bins: int = DEFAULT_BIN_COUNT


@dataclass(frozen=True)
class EvalSpec:
    ground_truth: Path
    iou_threshold: float = 0.5
    aggregate: str = "micro"  # micro | macro


@dataclass(frozen=True)
class PipelineConfig:
    name: str
    sources: tuple[SourceSpec, ...]
    fusion: FusionParams = field(default_factory=FusionParams)
    threshold: ThresholdSpec = field(default_factory=ThresholdSpec)
    eval: Optional[EvalSpec] = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sources": [
                {
                    "id": s.source_id,
                    "path": str(s.path),
                    "weight": s.weight,
                    "sliced": s.sliced,
                    "slice_method": s.slice_method,
                    "slice_iou_threshold": s.slice_iou_threshold,
                }
                for s in self.sources
            ],
            "fusion": {"method": self.fusion.method, "iou_threshold": self.fusion.iou_threshold},
            "threshold": {"mode": self.threshold.mode, "value": self.threshold.value, "bins": self.threshold.bins},
            "eval": None
            if self.eval is None
            else {
                "ground_truth": str(self.eval.ground_truth),
                "iou_threshold": self.eval.iou_threshold,
                "aggregate": self.eval.aggregate,
            },
        }


def _reject_unknown_keys(section: Mapping, allowed: set[str], ctx: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{ctx}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")


def _config_number(section: Mapping, key: str, ctx: str, default=None):
    if key not in section:
        return default
    return _as_number(section[key], f"{ctx}.{key}")


def _resolve_existing(base: Path, raw: object, ctx: str) -> Path:
    if not isinstance(raw, str) or not raw:
        raise ConfigError(f"{ctx}: expected a nonempty path string, got {raw!r}")
    resolved = (base / raw).resolve() if not Path(raw).is_absolute() else Path(raw)
    if not resolved.is_file():
        raise ConfigError(f"{ctx}: file not found: {resolved}")
    return resolved


def parse_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a TOML pipeline config.

    Top-level keys: ``name`` (optional, defaults to the file stem), an array
    of ``[[sources]]`` tables (``id``, ``path``, optional ``weight``,
    ``sliced``, ``slice_method``, ``slice_iou_threshold``), and optional
    ``[fusion]`` (``method``, ``iou_threshold``), ``[threshold]`` (``mode``,
    ``value``, ``bins``), and ``[eval]`` (``ground_truth``,
    ``iou_threshold``, ``aggregate``) tables. Relative paths resolve against
    the config file's directory. Unknown keys are errors.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ParseError(str(e), path=str(path)) from None
    base = path.resolve().parent

    _reject_unknown_keys(data, {"name", "sources", "fusion", "threshold", "eval"}, "config")

    name = data.get("name", path.stem)
    if not isinstance(name, str) or not name:
        raise ConfigError("config.name: expected a nonempty string")

    raw_sources = data.get("sources")
    if not isinstance(raw_sources, list) or not raw_sources:
        raise ConfigError("config: at least one [[sources]] table is required")
    sources: list[SourceSpec] = []
    seen_ids: set[str] = set()
    for i, section in enumerate(raw_sources):
        ctx = f"sources[{i}]"
        if not isinstance(section, dict):
            raise ConfigError(f"{ctx}: expected a table")
        _reject_unknown_keys(
            section, {"id", "path", "weight", "sliced", "slice_method", "slice_iou_threshold"}, ctx
        )
        source_id = section.get("id")
        if not isinstance(source_id, str) or not source_id:
            raise ConfigError(f"{ctx}.id: expected a nonempty string")
        if source_id in seen_ids:
            raise ConfigError(f"{ctx}.id: duplicate source id {source_id!r}")
        seen_ids.add(source_id)
        source_path = _resolve_existing(base, section.get("path"), f"{ctx}.path")
        weight = _config_number(section, "weight", ctx, default=1.0)
        if not weight > 0:
            raise ConfigError(f"{ctx}.weight: must be > 0, got {weight!r}")
        sliced = section.get("sliced", False)
        if not isinstance(sliced, bool):
            raise ConfigError(f"{ctx}.sliced: expected a boolean")
        slice_method = section.get("slice_method")
        if slice_method is not None and slice_method not in METHODS:
            raise ConfigError(f"{ctx}.slice_method: unknown method {slice_method!r}")
        slice_iou = _config_number(section, "slice_iou_threshold", ctx)
        if slice_iou is not None and not 0.0 < slice_iou < 1.0:
            raise ConfigError(f"{ctx}.slice_iou_threshold: must lie in (0, 1)")
        if not sliced and (slice_method is not None or slice_iou is not None):
            raise ConfigError(f"{ctx}: slice options are only valid with sliced = true")
        sources.append(
            SourceSpec(
                source_id=source_id,
                path=source_path,
                weight=weight,
                sliced=sliced,
                slice_method=slice_method,
                slice_iou_threshold=slice_iou,
            )
        )

    fusion_section = data.get("fusion", {})
    if not isinstance(fusion_section, dict):
        raise ConfigError("config.fusion: expected a table")
    _reject_unknown_keys(fusion_section, {"method", "iou_threshold"}, "fusion")
    try:
        fusion = FusionParams(
            method=fusion_section.get("method", "wbf"),
            iou_threshold=_config_number(fusion_section, "iou_threshold", "fusion", DEFAULT_IOU_THRESHOLD),
        )
    except ValidationError as e:
        raise ConfigError(f"fusion: {e}") from None

    threshold_section = data.get("threshold", {})
    if not isinstance(threshold_section, dict):
        raise ConfigError("config.threshold: expected a table")
    _reject_unknown_keys(threshold_section, {"mode", "value", "bins"}, "threshold")
    mode = threshold_section.get("mode", "none")
    if mode not in ("none", "fixed", "otsu"):
        raise ConfigError(f"threshold.mode: expected 'none', 'fixed', or 'otsu', got {mode!r}")
    value = _config_number(threshold_section, "value", "threshold")
    bins = threshold_section.get("bins")
    if mode == "fixed":
        if value is None:
            raise ConfigError("threshold: mode 'fixed' requires a 'value'")
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"threshold.value: must lie in [0, 1], got {value!r}")
        if bins is not None:
            raise ConfigError("threshold: 'bins' conflicts with mode 'fixed'")
    else:
        if value is not None:
            raise ConfigError(f"threshold: 'value' conflicts with mode {mode!r}")
        if mode == "none" and bins is not None:
            raise ConfigError("threshold: 'bins' conflicts with mode 'none'")
    if bins is None:
        bins = DEFAULT_BIN_COUNT
    elif not isinstance(bins, int) or isinstance(bins, bool) or bins < 2:
        raise ConfigError(f"threshold.bins: expected an integer >= 2, got {bins!r}")
    threshold = ThresholdSpec(mode=mode, value=value, bins=bins)

    eval_spec: Optional[EvalSpec] = None
    eval_section = data.get("eval")
    if eval_section is not None:
        if not isinstance(eval_section, dict):
            raise ConfigError("config.eval: expected a table")
        _reject_unknown_keys(eval_section, {"ground_truth", "iou_threshold", "aggregate"}, "eval")
        gt_path = _resolve_existing(base, eval_section.get("ground_truth"), "eval.ground_truth")
        iou_threshold = _config_number(eval_section, "iou_threshold", "eval", 0.5)
        if not 0.0 < iou_threshold < 1.0:
            raise ConfigError(f"eval.iou_threshold: must lie in (0, 1), got {iou_threshold!r}")
        aggregate = eval_section.get("aggregate", "micro")
        if aggregate not in ("micro", "macro"):
            raise ConfigError(f"eval.aggregate: expected 'micro' or 'macro', got {aggregate!r}")
        eval_spec = EvalSpec(ground_truth=gt_path, iou_threshold=iou_threshold, aggregate=aggregate)

    return PipelineConfig(
        name=name,
        sources=tuple(sources),
        fusion=fusion,
        threshold=threshold,
        eval=eval_spec,
    )
