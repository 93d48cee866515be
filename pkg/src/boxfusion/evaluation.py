"""Ground-truth matching and detection metrics: precision/recall/F1, AP, mAP."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Optional

from .errors import ValidationError
from .geometry import Box, Detection, iou

__all__ = [
    "DEFAULT_MATCH_IOU",
    "GroundTruthBox",
    "ClassCounts",
    "PRF",
    "MatchResult",
    "ClassMetrics",
    "EvalReport",
    "match_detections",
    "precision_recall_f1",
    "precision_recall_curve",
    "average_precision",
    "mean_average_precision",
    "evaluate",
]

DEFAULT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class GroundTruthBox:
    """One annotated reference box."""

    box: Box
    label: str
    image_id: str


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MatchResult:
    """Per-image (detection, matched ground truth or None) pairs plus per-class counts."""

    pairs: Mapping[str, tuple[tuple[Detection, Optional[GroundTruthBox]], ...]]
    counts: Mapping[str, ClassCounts]


@dataclass(frozen=True)
class ClassMetrics:
    counts: ClassCounts
    precision: float
    recall: float
    f1: float
    ap: Optional[float]


@dataclass(frozen=True)
class EvalReport:
    """Per-class and aggregate detection metrics.

    mean_ap and macro_f1 average over the classes present in the ground
    truth; micro pools TP/FP/FN over every class (including detection-only
    classes, whose detections all count as false positives).
    """

    per_class: Mapping[str, ClassMetrics]
    micro: PRF
    macro_f1: float
    mean_ap: float
    iou_threshold: float

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "micro": {"precision": self.micro.precision, "recall": self.micro.recall, "f1": self.micro.f1},
            "macro_f1": self.macro_f1,
            "mean_ap": self.mean_ap,
            "per_class": {
                label: {
                    "tp": m.counts.tp,
                    "fp": m.counts.fp,
                    "fn": m.counts.fn,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "ap": m.ap,
                }
                for label, m in sorted(self.per_class.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        per_class = {
            label: ClassMetrics(
                counts=ClassCounts(tp=int(m["tp"]), fp=int(m["fp"]), fn=int(m["fn"])),
                precision=float(m["precision"]),
                recall=float(m["recall"]),
                f1=float(m["f1"]),
                ap=None if m["ap"] is None else float(m["ap"]),
            )
            for label, m in data["per_class"].items()
        }
        micro = data["micro"]
        return cls(
            per_class=per_class,
            micro=PRF(float(micro["precision"]), float(micro["recall"]), float(micro["f1"])),
            macro_f1=float(data["macro_f1"]),
            mean_ap=float(data["mean_ap"]),
            iou_threshold=float(data["iou_threshold"]),
        )


def _check_iou_thresh(iou_thresh: float) -> float:
    iou_thresh = float(iou_thresh)
    if not 0.0 < iou_thresh < 1.0:
        raise ValidationError(f"iou_thresh must lie in (0, 1), got {iou_thresh!r}")
    return iou_thresh


def _check_vocabulary(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], vocabulary: Optional[Iterable[str]]
) -> None:
    if vocabulary is None:
        return
    vocab = set(vocabulary)
    unknown = {d.label for d in dets if d.label not in vocab}
    unknown |= {g.label for g in gts if g.label not in vocab}
    if unknown:
        raise ValidationError(f"unknown class labels {sorted(unknown)}; vocabulary is {sorted(vocab)}")


def _det_order(d: Detection) -> tuple:
    return (-d.score, d.image_id, d.source_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def _greedy_match(
    dets: Sequence[Detection],
    gts_by_image: Mapping[str, list[GroundTruthBox]],
    iou_thresh: float,
) -> list[tuple[Detection, Optional[GroundTruthBox]]]:
    """Score-descending greedy matching of same-label detections to ground truth.

    Each detection claims the unmatched ground truth with the highest IoU in
    its image, provided that IoU >= iou_thresh; each ground truth is claimed
    at most once.
    """
    matched: dict[str, list[bool]] = {img: [False] * len(g) for img, g in gts_by_image.items()}
    pairs: list[tuple[Detection, Optional[GroundTruthBox]]] = []
    for d in sorted(dets, key=_det_order):
        candidates = gts_by_image.get(d.image_id, [])
        flags = matched.get(d.image_id, [])
        best_i = -1
        best_iou = 0.0
        for i, g in enumerate(candidates):
            if flags[i]:
                continue
            overlap = iou(d.box, g.box)
            if overlap > best_iou:
                best_iou = overlap
                best_i = i
        if best_i >= 0 and best_iou >= iou_thresh:
            flags[best_i] = True
            pairs.append((d, candidates[best_i]))
        else:
            pairs.append((d, None))
    return pairs


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_thresh: float = DEFAULT_MATCH_IOU,
    vocabulary: Optional[Iterable[str]] = None,
) -> MatchResult:
    """Match detections to ground truth per (image, class) and count TP/FP/FN."""
    iou_thresh = _check_iou_thresh(iou_thresh)
    _check_vocabulary(dets, gts, vocabulary)

    labels = sorted({d.label for d in dets} | {g.label for g in gts})
    pairs_by_image: dict[str, list[tuple[Detection, Optional[GroundTruthBox]]]] = {}
    counts: dict[str, ClassCounts] = {}
    for label in labels:
        class_dets = [d for d in dets if d.label == label]
        gts_by_image: dict[str, list[GroundTruthBox]] = {}
        for g in gts:
            if g.label == label:
                gts_by_image.setdefault(g.image_id, []).append(g)
        for group in gts_by_image.values():
            group.sort(key=lambda g: g.box.corners())
        pairs = _greedy_match(class_dets, gts_by_image, iou_thresh)
        tp = sum(1 for _, g in pairs if g is not None)
        fp = len(pairs) - tp
        n_gt = sum(len(g) for g in gts_by_image.values())
        counts[label] = ClassCounts(tp=tp, fp=fp, fn=n_gt - tp)
        for pair in pairs:
            pairs_by_image.setdefault(pair[0].image_id, []).append(pair)
    return MatchResult(
        pairs={img: tuple(ps) for img, ps in pairs_by_image.items()},
        counts=counts,
    )


def _prf(tp: int, fp: int, fn: int) -> PRF:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision=precision, recall=recall, f1=f1)


def precision_recall_f1(result: MatchResult) -> tuple[dict[str, PRF], PRF]:
    """Per-class metrics plus the micro aggregate (counts pooled before dividing)."""
    per_class = {label: _prf(c.tp, c.fp, c.fn) for label, c in result.counts.items()}
    micro = _prf(
        sum(c.tp for c in result.counts.values()),
        sum(c.fp for c in result.counts.values()),
        sum(c.fn for c in result.counts.values()),
    )
    return per_class, micro


def precision_recall_curve(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    label: str,
    iou_thresh: float = DEFAULT_MATCH_IOU,
) -> list[tuple[float, float, float]]:
    """(score, recall, precision) at each point of the score-descending sweep."""
    iou_thresh = _check_iou_thresh(iou_thresh)
    n_gt = sum(1 for g in gts if g.label == label)
    class_dets = [d for d in dets if d.label == label]
    gts_by_image: dict[str, list[GroundTruthBox]] = {}
    for g in gts:
        if g.label == label:
            gts_by_image.setdefault(g.image_id, []).append(g)
    for group in gts_by_image.values():
        group.sort(key=lambda g: g.box.corners())
    pairs = _greedy_match(class_dets, gts_by_image, iou_thresh)
    curve: list[tuple[float, float, float]] = []
    tp = 0
    for i, (d, g) in enumerate(pairs, start=1):
        if g is not None:
            tp += 1
        recall = tp / n_gt if n_gt else 0.0
        curve.append((d.score, recall, tp / i))
    return curve


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    label: str,
    iou_thresh: float = DEFAULT_MATCH_IOU,
) -> Optional[float]:
    """Area under the all-point-interpolated precision/recall curve for one class.

    Returns None when the class has no ground truth (undefined; excluded from
    the mean), and 0.0 when it has ground truth but no detections.
    """
    if not any(g.label == label for g in gts):
        return None
    curve = precision_recall_curve(dets, gts, label, iou_thresh)
    if not curve:
        return 0.0
    recalls = [r for _, r, _ in curve]
    envelope = [p for _, _, p in curve]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for recall, prec in zip(recalls, envelope):
        ap += (recall - prev_recall) * prec
        prev_recall = recall
    return ap


def mean_average_precision(aps: Mapping[str, Optional[float]]) -> float:
    """Arithmetic mean of the defined per-class average precisions."""
    defined = [v for v in aps.values() if v is not None]
    if not defined:
        raise ValidationError("no class has a defined average precision")
    return sum(defined) / len(defined)


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_thresh: float = DEFAULT_MATCH_IOU,
    vocabulary: Optional[Iterable[str]] = None,
) -> EvalReport:
    """Full report: per-class P/R/F1/AP plus micro-F1, macro-F1, and mAP."""
    if not gts:
        raise ValidationError("cannot evaluate against empty ground truth")
    result = match_detections(dets, gts, iou_thresh, vocabulary)
    per_class_prf, micro = precision_recall_f1(result)
    gt_labels = sorted({g.label for g in gts})
    aps = {label: average_precision(dets, gts, label, iou_thresh) for label in result.counts}
    per_class = {
        label: ClassMetrics(
            counts=result.counts[label],
            precision=per_class_prf[label].precision,
            recall=per_class_prf[label].recall,
            f1=per_class_prf[label].f1,
            ap=aps[label],
        )
        for label in result.counts
    }
    macro_f1 = sum(per_class[label].f1 for label in gt_labels) / len(gt_labels)
    mean_ap = mean_average_precision({label: aps[label] for label in gt_labels})
    return EvalReport(
        per_class=per_class,
        micro=micro,
        macro_f1=macro_f1,
        mean_ap=mean_ap,
        iou_threshold=iou_thresh,
    )
