"""Slice-grid planning, slice-to-image remapping, and overlap-zone aggregation
for tiled inference on large images."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace

from .errors import ValidationError
from .fusion import FusionParams, fuse
from .geometry import Box, Detection, translate

__all__ = [
    "DEFAULT_OVERLAP_RATIO",
    "Window",
    "SlicePlan",
    "default_slice_size",
    "plan_slices",
    "remap_to_global",
    "aggregate_slices",
    "project_to_slices",
]

DEFAULT_OVERLAP_RATIO = 0.25

Window = tuple[int, int, int, int]


@dataclass(frozen=True)
class SlicePlan:
    """Row-major grid of overlapping windows covering an image completely."""

    image_w: int
    image_h: int
    slice_w: int
    slice_h: int
    overlap_ratio: float
    slices: tuple[Window, ...]


def default_slice_size(image_w: int, image_h: int) -> tuple[int, int]:
    """Half the image per axis, rounded down to even pixels."""
    w = image_w // 2
    h = image_h // 2
    return (w - w % 2, h - h % 2)


def _require_positive_int(name: str, value: object) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return value


def _axis_origins(extent: int, size: int, stride: int) -> list[int]:
    origins: list[int] = []
    pos = 0
    while pos + size < extent:
        origins.append(pos)
        pos += stride
    # Clamp the final origin so the last slice ends at the image edge; the
    # clamp can only move it past every earlier origin, so no duplicates.
    last = extent - size
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins


def plan_slices(
    image_w: int,
    image_h: int,
    slice_w: int,
    slice_h: int,
    overlap_ratio: float = DEFAULT_OVERLAP_RATIO,
) -> SlicePlan:
    """Overlapping slice grid: origins advance by round(slice * (1 - overlap))
    from 0 along each axis; the last origin is clamped to the image edge."""
    image_w = _require_positive_int("image_w", image_w)
    image_h = _require_positive_int("image_h", image_h)
    slice_w = _require_positive_int("slice_w", slice_w)
    slice_h = _require_positive_int("slice_h", slice_h)
    overlap_ratio = float(overlap_ratio)
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValidationError(f"overlap_ratio must lie in [0, 1), got {overlap_ratio!r}")
    if slice_w > image_w or slice_h > image_h:
        raise ValidationError(
            f"slice {slice_w}x{slice_h} exceeds image {image_w}x{image_h}"
        )

    def stride(size: int) -> int:
        # Round half up to whole pixels; never advance by less than one.
        return max(1, math.floor(size * (1.0 - overlap_ratio) + 0.5))

    xs = _axis_origins(image_w, slice_w, stride(slice_w))
    ys = _axis_origins(image_h, slice_h, stride(slice_h))
    windows = tuple(
        (x, y, x + slice_w, y + slice_h) for y in ys for x in xs
    )
    return SlicePlan(image_w, image_h, slice_w, slice_h, overlap_ratio, windows)


def remap_to_global(dets: Iterable[Detection], window: Window) -> list[Detection]:
    """Translate slice-local detections by the window origin into image coordinates."""
    x0, y0, x1, y1 = window
    if x1 <= x0 or y1 <= y0:
        raise ValidationError(f"invalid slice window {window!r}")
    slice_w = x1 - x0
    slice_h = y1 - y0
    out: list[Detection] = []
    for i, d in enumerate(dets):
        b = d.box
        if b.x1 < 0 or b.y1 < 0 or b.x2 > slice_w or b.y2 > slice_h:
            raise ValidationError(
                f"detection {i} box ({b.x1}, {b.y1}, {b.x2}, {b.y2}) lies outside "
                f"the {slice_w}x{slice_h} slice extent; mismatched slice plan?"
            )
        out.append(translate(d, x0, y0))
    return out


def aggregate_slices(
    per_slice: Iterable[tuple[Window, Sequence[Detection]]],
    params: FusionParams | None = None,
) -> list[Detection]:
    """Remap every slice's detections to image coordinates and fuse the union,
    merging duplicates that arise in overlap zones."""
    params = params or FusionParams()
    merged: list[Detection] = []
    for window, dets in per_slice:
        merged.extend(remap_to_global(dets, window))
    if not merged:
        return []
    return fuse(merged, params)


def project_to_slices(
    dets: Iterable[Detection], plan: SlicePlan
) -> list[tuple[Window, list[Detection]]]:
    """Inverse of aggregation: copy each image-coordinate detection into every
    window that fully contains it, in slice-local coordinates.

    A detection contained by no window (wider than the slice overlap) is
    cropped into the window it overlaps most. Useful for exercising the
    aggregation path without running a detector per slice.
    """
    groups: dict[Window, list[Detection]] = {w: [] for w in plan.slices}
    for d in dets:
        b = d.box
        hits = [
            w for w in plan.slices
            if w[0] <= b.x1 and w[1] <= b.y1 and b.x2 <= w[2] and b.y2 <= w[3]
        ]
        if hits:
            for w in hits:
                groups[w].append(translate(d, -w[0], -w[1]))
            continue
        def overlap(w: Window) -> float:
            ow = min(b.x2, w[2]) - max(b.x1, w[0])
            oh = min(b.y2, w[3]) - max(b.y1, w[1])
            return max(0.0, ow) * max(0.0, oh)
        best = max(plan.slices, key=overlap)
        if overlap(best) <= 0.0:
            continue
        cropped = Box(
            max(b.x1, best[0]), max(b.y1, best[1]), min(b.x2, best[2]), min(b.y2, best[3])
        )
        groups[best].append(translate(replace(d, box=cropped), -best[0], -best[1]))
    return [(w, groups[w]) for w in plan.slices if groups[w]]
