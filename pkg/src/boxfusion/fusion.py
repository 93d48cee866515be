"""Box-fusion kernels for ensembling detections: WBF, NMS, Soft-NMS, and NMW.

All kernels operate on the detections of a single image, group or suppress
only same-label boxes, and are deterministic functions of the input set:
score ties are broken by (source_id, x1, y1, x2, y2, label). When source
weights are supplied they are applied to the scores before clustering, so
they influence both grouping order and the weighted coordinate means.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace

from .errors import ConfigError, ValidationError
from .geometry import Box, Detection, iou

__all__ = [
    "METHODS",
    "DEFAULT_IOU_THRESHOLD",
    "SOFT_NMS_SCORE_FLOOR",
    "FusionParams",
    "BoxCluster",
    "apply_source_weights",
    "group_clusters",
    "fuse",
    "fuse_traced",
    "fuse_images",
    "fuse_wbf",
    "fuse_nms",
    "fuse_soft_nms",
    "fuse_nmw",
]

METHODS = ("wbf", "nms", "soft_nms", "nmw")
DEFAULT_IOU_THRESHOLD = 0.55

# Soft-NMS drops a box once decay pushes its score below this floor,
# bounding output size without a hard suppression step.
SOFT_NMS_SCORE_FLOOR = 0.001

TracedDetection = tuple[Detection, tuple[Detection, ...]]


@dataclass(frozen=True)
class FusionParams:
    """How overlapping boxes are grouped and merged.

    iou_threshold is the strict lower bound for grouping/suppression
    (boxes overlap a cluster seed when IoU > iou_threshold).
    """

    method: str = "wbf"
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    soft_nms_mode: str = "linear"
    source_weights: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown fusion method {self.method!r}; expected one of {METHODS}")
        threshold = float(self.iou_threshold)
        if not 0.0 < threshold < 1.0:
            raise ValidationError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold!r}")
        object.__setattr__(self, "iou_threshold", threshold)
        if self.soft_nms_mode != "linear":
            raise ValidationError(f"unsupported soft_nms_mode {self.soft_nms_mode!r}; only 'linear'")
        if self.source_weights is not None:
            for source_id, weight in self.source_weights.items():
                if not weight > 0:
                    raise ValidationError(f"source weight for {source_id!r} must be > 0, got {weight!r}")


@dataclass(frozen=True)
class BoxCluster:
    """Mutually grouped same-label detections; the seed (max score) comes first."""

    members: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValidationError("a cluster needs at least one member")
        labels = {m.label for m in self.members}
        if len(labels) != 1:
            raise ValidationError(f"cluster mixes labels {sorted(labels)}")
        if any(m.score > self.members[0].score for m in self.members):
            raise ValidationError("cluster seed (first member) must have the maximal score")

    @property
    def seed(self) -> Detection:
        return self.members[0]

    @property
    def label(self) -> str:
        return self.members[0].label


def _rank_key(d: Detection) -> tuple:
    return (-d.score, d.source_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.label)


def apply_source_weights(dets: Iterable[Detection], weights: Mapping[str, float]) -> list[Detection]:
    """Multiply each detection's score by its source's weight, clamped to [0, 1]."""
    out: list[Detection] = []
    for i, d in enumerate(dets):
        if d.source_id not in weights:
            raise ConfigError(f"no weight for source {d.source_id!r} (detection {i})")
        weight = weights[d.source_id]
        if not weight > 0:
            raise ConfigError(f"source weight for {d.source_id!r} must be > 0, got {weight!r}")
        out.append(replace(d, score=min(1.0, d.score * weight)))
    return out


def _prepared(dets: Iterable[Detection], params: FusionParams) -> list[Detection]:
    """Weighted (if configured), single-image-checked, canonically ordered working list."""
    if params.source_weights is not None:
        working = apply_source_weights(dets, params.source_weights)
    else:
        working = list(dets)
    images = {d.image_id for d in working}
    if len(images) > 1:
        raise ValidationError(
            f"fusion expects detections of a single image, got image ids {sorted(images)}"
        )
    working.sort(key=_rank_key)
    return working


def _take_cluster(remaining: list[Detection], threshold: float) -> tuple[list[Detection], list[Detection]]:
    """Pop the max-score seed plus everything it groups (same label, IoU > threshold)."""
    seed = remaining[0]
    members = [seed]
    rest: list[Detection] = []
    for d in remaining[1:]:
        if d.label == seed.label and iou(d.box, seed.box) > threshold:
            members.append(d)
        else:
            rest.append(d)
    return members, rest


def group_clusters(dets: Iterable[Detection], params: FusionParams | None = None) -> list[BoxCluster]:
    """Greedy score-descending clustering: seed = current global max among unclustered."""
    params = params or FusionParams()
    remaining = _prepared(dets, params)
    clusters: list[BoxCluster] = []
    while remaining:
        members, remaining = _take_cluster(remaining, params.iou_threshold)
        clusters.append(BoxCluster(tuple(members)))
    return clusters


def _mean_box(members: list[Detection], weights: list[float], seed: Detection) -> Detection:
    if len(members) == 1:
        return seed
    total = sum(weights)
    if total <= 0.0:
        # All-zero scores leave the weighted mean undefined; fall back to uniform.
        weights = [1.0] * len(members)
        total = float(len(members))
    x1 = sum(w * m.box.x1 for w, m in zip(weights, members)) / total
    y1 = sum(w * m.box.y1 for w, m in zip(weights, members)) / total
    x2 = sum(w * m.box.x2 for w, m in zip(weights, members)) / total
    y2 = sum(w * m.box.y2 for w, m in zip(weights, members)) / total
    return Detection(
        box=Box(x1, y1, x2, y2),
        score=seed.score,
        label=seed.label,
        image_id=seed.image_id,
        source_id=seed.source_id,
    )


def _wbf(working: list[Detection], params: FusionParams) -> list[TracedDetection]:
    out: list[TracedDetection] = []
    while working:
        members, working = _take_cluster(working, params.iou_threshold)
        fused = _mean_box(members, [m.score for m in members], members[0])
        out.append((fused, tuple(members)))
    return out


def _nmw(working: list[Detection], params: FusionParams) -> list[TracedDetection]:
    out: list[TracedDetection] = []
    while working:
        members, working = _take_cluster(working, params.iou_threshold)
        seed = members[0]
        weights = [m.score * iou(m.box, seed.box) for m in members]
        out.append((_mean_box(members, weights, seed), tuple(members)))
    return out


def _nms(working: list[Detection], params: FusionParams) -> list[TracedDetection]:
    out: list[TracedDetection] = []
    while working:
        members, working = _take_cluster(working, params.iou_threshold)
        out.append((members[0], tuple(members)))
    return out


def _soft_nms(working: list[Detection], params: FusionParams) -> list[TracedDetection]:
    # Linear decay above the threshold; boxes decayed below the floor are dropped.
    pairs = [(d, d) for d in working]
    out: list[TracedDetection] = []
    while pairs:
        pairs.sort(key=lambda pair: _rank_key(pair[0]))
        keep, origin = pairs[0]
        out.append((keep, (origin,)))
        survivors: list[tuple[Detection, Detection]] = []
        for current, orig in pairs[1:]:
            if current.label == keep.label:
                overlap = iou(current.box, keep.box)
                if overlap > params.iou_threshold:
                    current = replace(current, score=current.score * (1.0 - overlap))
                    if current.score < SOFT_NMS_SCORE_FLOOR:
                        continue
            survivors.append((current, orig))
        pairs = survivors
    return out


_KERNELS = {"wbf": _wbf, "nms": _nms, "soft_nms": _soft_nms, "nmw": _nmw}


def fuse_traced(dets: Iterable[Detection], params: FusionParams | None = None) -> list[TracedDetection]:
    """Run the configured kernel, returning (fused detection, contributing inputs) pairs."""
    params = params or FusionParams()
    working = _prepared(dets, params)
    traced = _KERNELS[params.method](working, params)
    traced.sort(key=lambda pair: _rank_key(pair[0]))
    return traced


def fuse(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Fuse the detections of one image with the configured method."""
    return [fused for fused, _ in fuse_traced(dets, params)]


def fuse_images(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Fuse a multi-image detection list independently per image."""
    params = params or FusionParams()
    by_image: dict[str, list[Detection]] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    out: list[Detection] = []
    for image_id in sorted(by_image):
        out.extend(fuse(by_image[image_id], params))
    return out


def _with_method(params: FusionParams | None, method: str) -> FusionParams:
    if params is None:
        return FusionParams(method=method)
    if params.method == method:
        return params
    return replace(params, method=method)


def fuse_wbf(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Weighted box fusion: each cluster becomes the score-weighted mean of its
    members' corners, scored and labeled after the cluster's max-score member."""
    return fuse(dets, _with_method(params, "wbf"))


def fuse_nms(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Greedy suppression: keep the max-score box, drop same-label boxes with
    IoU above the threshold against it, repeat. Kept boxes are unmodified inputs."""
    return fuse(dets, _with_method(params, "nms"))


def fuse_soft_nms(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Soft suppression: overlapping boxes are rescored by (1 - IoU) instead of
    dropped; only boxes decayed below the score floor disappear."""
    return fuse(dets, _with_method(params, "soft_nms"))


def fuse_nmw(dets: Iterable[Detection], params: FusionParams | None = None) -> list[Detection]:
    """Like WBF but members are weighted by score times IoU with the cluster seed,
    and the fused score/label are the seed's."""
    return fuse(dets, _with_method(params, "nmw"))
