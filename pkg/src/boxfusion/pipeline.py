"""Config-driven post-processing runs.

Stage order is fixed: ingest, per-source slice aggregation, source
weighting, fusion, thresholding, evaluation. Inactive stages (no sliced
sources, threshold mode "none", no eval section) still appear in the run
record as pass-throughs. A run writes nothing until every stage has
succeeded; outputs are `detections.json`, `report.json` (when evaluated),
and `manifest.json` under the run directory.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import BoxFusionError, ConfigError, PipelineError, ValidationError
from .evaluation import EvalReport, evaluate
from .fusion import FusionParams, apply_source_weights, fuse_traced
from .geometry import Detection
from .io import (
    DetectionFile,
    GroundTruthFile,
    PipelineConfig,
    parse_detections,
    parse_ground_truth,
    write_detections,
)
from .slicing import aggregate_slices
from .thresholding import OtsuResult, build_histogram, otsu_threshold

__all__ = [
    "STAGES",
    "StageRecord",
    "PipelineRun",
    "RunSummary",
    "ComparisonRow",
    "run_pipeline",
    "compare_runs",
    "load_run",
    "format_comparison",
]

STAGES = ("ingest", "slice_aggregation", "source_weighting", "fusion", "thresholding", "evaluation")


@dataclass(frozen=True)
class StageRecord:
    name: str
    detections_in: int
    detections_out: int
    seconds: float


@dataclass(frozen=True)
class PipelineRun:
    config: PipelineConfig
    stages: tuple[StageRecord, ...]
    detections: tuple[Detection, ...]
    trace: tuple[tuple[Detection, ...], ...]
    report: Optional[EvalReport]
    otsu: Optional[OtsuResult]
    applied_threshold: Optional[float]
    input_digests: dict[str, str]
    gt_digest: Optional[str]
    version: str

    @property
    def name(self) -> str:
        return self.config.name


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _final_order(d: Detection) -> tuple:
    return (d.image_id, d.label, -d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.source_id)


def _timed(records: list[StageRecord], name: str, n_in: int, fn):
    """Run one stage; fn returns (result, detections_out)."""
    start = time.perf_counter()
    try:
        out, n_out = fn()
    except BoxFusionError as e:
        raise PipelineError(name, e) from e
    records.append(StageRecord(name, n_in, n_out, time.perf_counter() - start))
    return out


@dataclass
class _Ingested:
    files: dict[str, DetectionFile]
    plain: list[Detection]
    sliced: dict[str, DetectionFile]
    digests: dict[str, str]
    gt_file: Optional[GroundTruthFile]
    gt_digest: Optional[str]

    @property
    def total(self) -> int:
        return len(self.plain) + sum(len(f.entries) for f in self.sliced.values())


def _ingest(config: PipelineConfig) -> _Ingested:
    gt_file: Optional[GroundTruthFile] = None
    gt_digest: Optional[str] = None
    fallback_categories = None
    if config.eval is not None:
        gt_file = parse_ground_truth(config.eval.ground_truth)
        gt_digest = _digest(config.eval.ground_truth)
        fallback_categories = gt_file.categories
    files: dict[str, DetectionFile] = {}
    plain: list[Detection] = []
    sliced: dict[str, DetectionFile] = {}
    digests: dict[str, str] = {}
    for src in config.sources:
        parsed = parse_detections(src.path, categories=fallback_categories, source_id=src.source_id)
        digests[str(src.path)] = _digest(src.path)
        files[src.source_id] = parsed
        if parsed.entries and src.sliced != parsed.has_windows:
            raise ConfigError(
                f"source {src.source_id!r}: sliced = {src.sliced} but the file "
                f"{'has' if parsed.has_windows else 'lacks'} window tags"
            )
        if src.sliced:
            sliced[src.source_id] = parsed
        else:
            # The config's source id is authoritative within a run.
            plain.extend(replace(d, source_id=src.source_id) for d in parsed.to_detections())
    return _Ingested(files, plain, sliced, digests, gt_file, gt_digest)


def run_pipeline(config: PipelineConfig, out_dir: str | Path | None = None) -> PipelineRun:
    """Execute the fixed stage sequence for a config; optionally write the run
    directory. Deterministic for identical config and input files."""
    records: list[StageRecord] = []

    def ingest() -> tuple[_Ingested, int]:
        ing = _ingest(config)
        return ing, ing.total

    ingested = _timed(records, "ingest", 0, ingest)

    def aggregate() -> tuple[list[Detection], int]:
        out = list(ingested.plain)
        for src in config.sources:
            if not src.sliced:
                continue
            parsed = ingested.sliced[src.source_id]
            slice_params = FusionParams(
                method=src.slice_method or config.fusion.method,
                iou_threshold=src.slice_iou_threshold
                if src.slice_iou_threshold is not None
                else config.fusion.iou_threshold,
            )
            for image_id, groups in parsed.slice_groups().items():
                merged = aggregate_slices(groups, slice_params)
                out.extend(replace(d, source_id=src.source_id) for d in merged)
        return out, len(out)

    detections = _timed(records, "slice_aggregation", ingested.total, aggregate)

    weights = {src.source_id: src.weight for src in config.sources}

    def weighting() -> tuple[list[Detection], int]:
        weighted = apply_source_weights(detections, weights)
        return weighted, len(weighted)

    detections = _timed(records, "source_weighting", len(detections), weighting)

    def fusion() -> tuple[tuple[list[Detection], list[tuple[Detection, ...]]], int]:
        by_image: dict[str, list[Detection]] = {}
        for d in detections:
            by_image.setdefault(d.image_id, []).append(d)
        traced: list[tuple[Detection, tuple[Detection, ...]]] = []
        for image_id in sorted(by_image):
            traced.extend(fuse_traced(by_image[image_id], config.fusion))
        traced.sort(key=lambda pair: _final_order(pair[0]))
        return ([t[0] for t in traced], [t[1] for t in traced]), len(traced)

    fused, trace = _timed(records, "fusion", len(detections), fusion)

    def thresholding() -> tuple[tuple[list, list, Optional[OtsuResult], Optional[float]], int]:
        spec = config.threshold
        if spec.mode == "none":
            return (fused, trace, None, None), len(fused)
        if spec.mode == "fixed":
            otsu = None
            cutoff = spec.value
        else:
            otsu = otsu_threshold(build_histogram([d.score for d in fused], spec.bins))
            cutoff = otsu.threshold
        kept = [(d, members) for d, members in zip(fused, trace) if d.score >= cutoff]
        return ([d for d, _ in kept], [m for _, m in kept], otsu, cutoff), len(kept)

    final, trace, otsu, cutoff = _timed(records, "thresholding", len(fused), thresholding)

    def evaluation() -> tuple[Optional[EvalReport], int]:
        if config.eval is None:
            return None, len(final)
        vocabulary = set(ingested.gt_file.vocabulary)
        for parsed in ingested.files.values():
            vocabulary.update(parsed.categories.values())
        report = evaluate(
            final,
            ingested.gt_file.to_ground_truth(),
            iou_thresh=config.eval.iou_threshold,
            vocabulary=vocabulary,
        )
        return report, len(final)

    report = _timed(records, "evaluation", len(final), evaluation)

    run = PipelineRun(
        config=config,
        stages=tuple(records),
        detections=tuple(final),
        trace=tuple(tuple(members) for members in trace),
        report=report,
        otsu=otsu,
        applied_threshold=cutoff,
        input_digests=ingested.digests,
        gt_digest=ingested.gt_digest,
        version=__version__,
    )
    if out_dir is not None:
        gt_categories = None if ingested.gt_file is None else ingested.gt_file.categories
        _write_run(run, Path(out_dir), gt_categories)
    return run


def _write_run(run: PipelineRun, out_dir: Path, gt_categories: Optional[dict]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    categories = None
    if gt_categories is not None:
        by_name = {name: cid for cid, name in gt_categories.items()}
        if all(d.label in by_name for d in run.detections):
            categories = by_name
    write_detections(list(run.detections), out_dir / "detections.json", categories=categories)
    if run.report is not None:
        (out_dir / "report.json").write_text(
            json.dumps(run.report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    manifest = {
        "name": run.name,
        "version": run.version,
        "config": run.config.to_dict(),
        "input_digests": run.input_digests,
        "gt_digest": run.gt_digest,
        "stages": [
            {
                "name": s.name,
                "detections_in": s.detections_in,
                "detections_out": s.detections_out,
                "seconds": s.seconds,
            }
            for s in run.stages
        ],
        "otsu": None
        if run.otsu is None
        else {
            "threshold": run.otsu.threshold,
            "between_class_variance": run.otsu.between_class_variance,
            "tied_range": list(run.otsu.tied_range),
        },
        "applied_threshold": run.applied_threshold,
        "cluster_sizes": {str(k): v for k, v in sorted(Counter(len(m) for m in run.trace).items())},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class RunSummary:
    """The slice of a finished run that comparison needs."""

    name: str
    gt_digest: Optional[str]
    report: Optional[EvalReport]


def load_run(run_dir: str | Path) -> RunSummary:
    """Load a written run directory back into a comparable summary."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ValidationError(f"not a run directory (no manifest.json): {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    report = None
    report_path = run_dir / "report.json"
    if report_path.is_file():
        report = EvalReport.from_dict(json.loads(report_path.read_text(encoding="utf-8")))
    return RunSummary(name=manifest["name"], gt_digest=manifest.get("gt_digest"), report=report)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    micro_f1: float
    macro_f1: float
    mean_ap: float
    per_class_f1: dict[str, float]


def compare_runs(runs: Sequence[PipelineRun | RunSummary]) -> list[ComparisonRow]:
    """Ablation table over evaluated runs, sorted by ascending micro-F1.

    All runs must have been evaluated against the same ground truth.
    """
    if not runs:
        raise ValidationError("nothing to compare: no runs given")
    for run in runs:
        if run.report is None:
            raise ValidationError(f"run {run.name!r} has no evaluation report")
    digests = {run.gt_digest for run in runs}
    if len(digests) > 1:
        raise ValidationError(
            f"runs were evaluated against different ground truth (digests {sorted(str(d) for d in digests)})"
        )
    rows = [
        ComparisonRow(
            name=run.name,
            micro_f1=run.report.micro.f1,
            macro_f1=run.report.macro_f1,
            mean_ap=run.report.mean_ap,
            per_class_f1={label: m.f1 for label, m in sorted(run.report.per_class.items())},
        )
        for run in runs
    ]
    rows.sort(key=lambda r: (r.micro_f1, r.name))
    return rows


def format_comparison(rows: Iterable[ComparisonRow]) -> str:
    rows = list(rows)
    labels = sorted({label for row in rows for label in row.per_class_f1})
    header = ["name", "micro_f1", "macro_f1", "mAP"] + [f"f1[{label}]" for label in labels]
    table = [header]
    for row in rows:
        table.append(
            [row.name, f"{row.micro_f1:.4f}", f"{row.macro_f1:.4f}", f"{row.mean_ap:.4f}"]
            + [f"{row.per_class_f1.get(label, 0.0):.4f}" for label in labels]
        )
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in table)
