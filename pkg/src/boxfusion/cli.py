"""Command-line interface.

Subcommands: fuse, slice, aggregate, threshold, eval, simulate, pipeline.
Exit codes: 0 success, 1 usage error, 2 validation error (bad data or
config), 3 runtime error. The BOXFUSION_OUT environment variable supplies
the default output directory where one is needed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import BoxFusionError, PipelineError, ValidationError
from .evaluation import EvalReport, evaluate, precision_recall_curve
from .fusion import DEFAULT_IOU_THRESHOLD, METHODS, FusionParams, fuse_images
from .io import (
    parse_config,
    parse_detections,
    parse_ground_truth,
    write_detections,
    write_ground_truth,
    write_sliced_detections,
)
from .pipeline import compare_runs, format_comparison, load_run, run_pipeline
from .simulator import (
    SceneParams,
    derive_seed,
    generate_dataset,
    load_profile,
    simulate_detectors,
)
from .slicing import (
    DEFAULT_OVERLAP_RATIO,
    aggregate_slices,
    default_slice_size,
    plan_slices,
    project_to_slices,
)
from .thresholding import DEFAULT_BIN_COUNT, build_histogram, filter_by_threshold, otsu_threshold

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

ENV_OUT_DIR = "BOXFUSION_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_weights(raw: str | None) -> dict[str, float] | None:
    if raw is None:
        return None
    weights: dict[str, float] = {}
    for item in raw.split(","):
        if "=" not in item:
            raise ValidationError(f"bad --weights item {item!r}; expected source=weight")
        source, _, value = item.partition("=")
        try:
            weights[source.strip()] = float(value)
        except ValueError:
            raise ValidationError(f"bad --weights value {value!r} for source {source!r}") from None
    return weights


def _load_all_detections(paths: list[str], gt_categories=None) -> tuple[list, list]:
    """Parsed detections plus the per-file category maps."""
    detections = []
    category_maps = []
    for path in paths:
        parsed = parse_detections(path, categories=gt_categories)
        detections.extend(parsed.to_detections())
        category_maps.append(dict(parsed.categories))
    return detections, category_maps


def _merged_categories(category_maps: list[dict]) -> dict[str, int] | None:
    """One name->id map when every file agrees; None defers to canonical ids."""
    if not category_maps:
        return None
    first = category_maps[0]
    if all(m == first for m in category_maps[1:]):
        return {name: cid for cid, name in first.items()}
    return None


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUT_DIR)
    if not out:
        raise _UsageError(f"an output directory is required: pass --out or set {ENV_OUT_DIR}")
    return Path(out)


def _print_report(report: EvalReport, aggregate: str) -> None:
    print(f"{'class':<14}{'tp':>7}{'fp':>7}{'fn':>7}{'precision':>11}{'recall':>9}{'f1':>9}{'ap':>9}")
    for label, m in sorted(report.per_class.items()):
        ap = "  n/a" if m.ap is None else f"{m.ap:9.4f}"
        print(
            f"{label:<14}{m.counts.tp:>7}{m.counts.fp:>7}{m.counts.fn:>7}"
            f"{m.precision:>11.4f}{m.recall:>9.4f}{m.f1:>9.4f}{ap:>9}"
        )
    print(f"micro_precision\t{report.micro.precision:.6f}")
    print(f"micro_recall\t{report.micro.recall:.6f}")
    print(f"micro_f1\t{report.micro.f1:.6f}")
    print(f"macro_f1\t{report.macro_f1:.6f}")
    print(f"mAP\t{report.mean_ap:.6f}")
    headline = report.micro.f1 if aggregate == "micro" else report.macro_f1
    print(f"f1[{aggregate}]\t{headline:.6f}")


def _cmd_fuse(args) -> int:
    params = FusionParams(
        method=args.method,
        iou_threshold=args.iou,
        source_weights=_parse_weights(args.weights),
    )
    detections, category_maps = _load_all_detections(args.dets)
    fused = fuse_images(detections, params)
    write_detections(fused, args.out, categories=_merged_categories(category_maps))
    print(f"fused {len(detections)} detections from {len(args.dets)} file(s) "
          f"into {len(fused)} ({args.method}, iou>{params.iou_threshold})")
    return EXIT_OK


def _cmd_slice(args) -> int:
    slice_w, slice_h = args.slice_w, args.slice_h
    if slice_w is None or slice_h is None:
        default_w, default_h = default_slice_size(args.image_w, args.image_h)
        slice_w = slice_w if slice_w is not None else default_w
        slice_h = slice_h if slice_h is not None else default_h
    plan = plan_slices(args.image_w, args.image_h, slice_w, slice_h, args.overlap)
    for x0, y0, x1, y1 in plan.slices:
        print(f"{x0} {y0} {x1} {y1}")
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    parsed = parse_detections(args.dets)
    if parsed.entries and not parsed.has_windows:
        raise ValidationError(f"{args.dets}: records carry no slice windows; nothing to aggregate")
    params = FusionParams(method=args.method, iou_threshold=args.iou)
    out = []
    for image_id, groups in parsed.slice_groups().items():
        out.extend(aggregate_slices(groups, params))
    write_detections(out, args.out, categories={name: cid for cid, name in parsed.categories.items()})
    print(f"aggregated {len(parsed.entries)} slice-local detections into {len(out)}")
    return EXIT_OK


def _cmd_threshold(args) -> int:
    parsed = parse_detections(args.dets)
    detections = parsed.to_detections()
    if args.fixed is not None:
        if args.hist_out is not None:
            raise _UsageError("--hist-out requires Otsu mode; it conflicts with --fixed")
        cutoff = args.fixed
        print(f"threshold\t{cutoff:.9f}")
    else:
        bins = args.bins if args.bins is not None else DEFAULT_BIN_COUNT
        hist = build_histogram([d.score for d in detections], bins)
        result = otsu_threshold(hist)
        cutoff = result.threshold
        print(f"threshold\t{result.threshold:.9f}")
        print(f"between_class_variance\t{result.between_class_variance:.12f}")
        print(f"tied_range\t{result.tied_range[0]:.9f}\t{result.tied_range[1]:.9f}")
        if args.hist_out is not None:
            lines = ["bin_low\tbin_high\tcount"]
            for b, count in enumerate(hist.counts):
                low, high = hist.bin_edges(b)
                lines.append(f"{low:.9f}\t{high:.9f}\t{count}")
            Path(args.hist_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.apply is not None:
        kept = filter_by_threshold(detections, cutoff)
        write_detections(
            kept, args.apply, categories={name: cid for cid, name in parsed.categories.items()}
        )
        print(f"kept\t{len(kept)}/{len(detections)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    gt_file = parse_ground_truth(args.gt)
    gts = gt_file.to_ground_truth()
    detections, category_maps = _load_all_detections(args.dets, gt_categories=gt_file.categories)
    vocabulary = set(gt_file.vocabulary)
    for m in category_maps:
        vocabulary.update(m.values())
    report = evaluate(detections, gts, iou_thresh=args.iou, vocabulary=vocabulary)
    _print_report(report, args.aggregate)
    if args.out is not None:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if args.pr_out is not None:
        pr_dir = Path(args.pr_out)
        pr_dir.mkdir(parents=True, exist_ok=True)
        for label in sorted(gt_file.vocabulary):
            curve = precision_recall_curve(detections, gts, label, args.iou)
            lines = ["score\trecall\tprecision"]
            lines += [f"{s:.6f}\t{r:.6f}\t{p:.6f}" for s, r, p in curve]
            (pr_dir / f"pr_{label}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    out_dir = _out_dir(args)
    profiles = [load_profile(p) for p in args.profile]
    sliced_names = set(args.sliced or [])
    known = {p.name for p in profiles}
    unknown = sorted(sliced_names - known)
    if unknown:
        raise ValidationError(f"--sliced names {unknown} match no loaded profile {sorted(known)}")
    params = SceneParams(
        image_w=args.image_w,
        image_h=args.image_h,
        n_objects=args.objects,
        peripheral_bias=args.bias,
    )
    scenes = generate_dataset(params, args.images, args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    gts = [b for scene in scenes for b in scene.boxes]
    sizes = {scene.image_id: (scene.image_w, scene.image_h) for scene in scenes}
    categories = {label: i for i, label in enumerate(sorted({g.label for g in gts}), start=1)}
    write_ground_truth(gts, sizes, out_dir / "gt.json", categories=categories)

    per_profile: dict[str, list] = {p.name: [] for p in profiles}
    for scene in scenes:
        outputs = simulate_detectors(
            scene, profiles, derive_seed(args.seed, scene.image_id), args.shared_miss
        )
        for name, dets in outputs.items():
            per_profile[name].extend(dets)

    for profile in profiles:
        dets = per_profile[profile.name]
        path = out_dir / f"dets_{profile.name}.json"
        if profile.name in sliced_names:
            groups = []
            for scene in scenes:
                plan = plan_slices(
                    scene.image_w,
                    scene.image_h,
                    *default_slice_size(scene.image_w, scene.image_h),
                    DEFAULT_OVERLAP_RATIO,
                )
                scene_dets = [d for d in dets if d.image_id == scene.image_id]
                groups.extend(project_to_slices(scene_dets, plan))
            write_sliced_detections(groups, path, categories=categories, source_id=profile.name)
        else:
            write_detections(dets, path, categories=categories, source_id=profile.name)
        print(f"{profile.name}\t{len(dets)} detections -> {path}")
    print(f"gt\t{len(gts)} boxes over {len(scenes)} images -> {out_dir / 'gt.json'}")
    return EXIT_OK


def _cmd_pipeline_run(args) -> int:
    config = parse_config(args.config)
    out_dir = _out_dir(args)
    run = run_pipeline(config, out_dir)
    for stage in run.stages:
        print(f"{stage.name}\t{stage.detections_in} -> {stage.detections_out}\t{stage.seconds:.3f}s")
    if run.applied_threshold is not None:
        print(f"applied_threshold\t{run.applied_threshold:.9f}")
    if run.report is not None:
        aggregate = config.eval.aggregate if config.eval is not None else "micro"
        _print_report(run.report, aggregate)
    print(f"run written to {out_dir}")
    return EXIT_OK


def _cmd_pipeline_compare(args) -> int:
    rows = compare_runs([load_run(d) for d in args.runs])
    print(format_comparison(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fuse_p = sub.add_parser("fuse", help="fuse detection files with WBF/NMS/Soft-NMS/NMW")
    fuse_p.add_argument("--dets", action="append", required=True, help="detections file (repeatable)")
    fuse_p.add_argument("--method", choices=METHODS, default="wbf")
    fuse_p.add_argument("--iou", type=float, default=DEFAULT_IOU_THRESHOLD, help="IoU merge threshold")
    fuse_p.add_argument("--weights", help="per-source score weights, e.g. m1=1.0,m2=0.5")
    fuse_p.add_argument("--out", required=True, help="fused detections file to write")
    fuse_p.set_defaults(func=_cmd_fuse)

    slice_p = sub.add_parser("slice", help="print a slice plan, one window per line")
    slice_p.add_argument("--image-w", type=int, required=True)
    slice_p.add_argument("--image-h", type=int, required=True)
    slice_p.add_argument("--slice-w", type=int, help="default: half the image width (even)")
    slice_p.add_argument("--slice-h", type=int, help="default: half the image height (even)")
    slice_p.add_argument("--overlap", type=float, default=DEFAULT_OVERLAP_RATIO)
    slice_p.set_defaults(func=_cmd_slice)

    agg_p = sub.add_parser("aggregate", help="merge slice-local detections into image coordinates")
    agg_p.add_argument("--dets", required=True, help="window-tagged detections file")
    agg_p.add_argument("--method", choices=METHODS, default="wbf")
    agg_p.add_argument("--iou", type=float, default=DEFAULT_IOU_THRESHOLD)
    agg_p.add_argument("--out", required=True)
    agg_p.set_defaults(func=_cmd_aggregate)

    thr_p = sub.add_parser("threshold", help="select a confidence cutoff from the score distribution")
    thr_p.add_argument("--dets", required=True)
    mode = thr_p.add_mutually_exclusive_group()
    mode.add_argument("--bins", type=int, help=f"Otsu histogram bins (default {DEFAULT_BIN_COUNT})")
    mode.add_argument("--fixed", type=float, help="skip Otsu and use this cutoff")
    thr_p.add_argument("--hist-out", help="write the score histogram as TSV (Otsu mode only)")
    thr_p.add_argument("--apply", help="write detections filtered at the cutoff to this file")
    thr_p.set_defaults(func=_cmd_threshold)

    eval_p = sub.add_parser("eval", help="evaluate detections against ground truth")
    eval_p.add_argument("--gt", required=True, help="COCO-style ground-truth file")
    eval_p.add_argument("--dets", action="append", required=True, help="detections file (repeatable)")
    eval_p.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    eval_p.add_argument("--aggregate", choices=("micro", "macro"), default="micro")
    eval_p.add_argument("--out", help="write the report as JSON")
    eval_p.add_argument("--pr-out", help="directory for per-class PR-curve TSV dumps")
    eval_p.set_defaults(func=_cmd_eval)

    sim_p = sub.add_parser("simulate", help="generate synthetic ground truth and detector outputs")
    sim_p.add_argument("--profile", action="append", required=True, help="profile JSON (repeatable)")
    sim_p.add_argument("--out", help=f"output directory (default ${ENV_OUT_DIR})")
    sim_p.add_argument("--seed", type=int, default=0)
    sim_p.add_argument("--images", type=int, default=20)
    sim_p.add_argument("--objects", type=int, default=60, help="objects per image")
    sim_p.add_argument("--image-w", type=int, default=1280)
    sim_p.add_argument("--image-h", type=int, default=1280)
    sim_p.add_argument("--bias", type=float, default=0.5, help="peripheral placement bias in [0, 1]")
    sim_p.add_argument("--shared-miss", type=float, default=0.0, help="fraction of boxes all detectors miss")
    sim_p.add_argument("--sliced", action="append", help="profile name to emit as slice-tagged output")
    sim_p.set_defaults(func=_cmd_simulate)

    pipe_p = sub.add_parser("pipeline", help="run or compare config-driven pipelines")
    pipe_sub = pipe_p.add_subparsers(dest="pipeline_command", required=True, parser_class=_Parser)
    run_p = pipe_sub.add_parser("run", help="execute a pipeline config")
    run_p.add_argument("config", help="TOML pipeline config")
    run_p.add_argument("--out", help=f"run directory (default ${ENV_OUT_DIR})")
    run_p.set_defaults(func=_cmd_pipeline_run)
    cmp_p = pipe_sub.add_parser("compare", help="tabulate evaluated runs")
    cmp_p.add_argument("runs", nargs="+", help="run directories")
    cmp_p.set_defaults(func=_cmd_pipeline_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"boxfusion: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as e:
        print(f"boxfusion: {e}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(e.cause, ValidationError) else EXIT_RUNTIME
    except ValidationError as e:
        print(f"boxfusion: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BoxFusionError, OSError) as e:
        print(f"boxfusion: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
