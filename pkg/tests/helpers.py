"""Independent oracles and builders shared by the test suite.

The oracles deliberately avoid the library's code paths: NMS is checked by
enumerating every keep set, Otsu by an exact per-boundary scan over
Fractions, AP by a literal PR-curve construction, and slice coverage by
rasterizing windows onto a pixel grid.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from boxfusion import Box, Detection, GroundTruthBox


def det(x1, y1, x2, y2, score, label="car", image_id="img", source_id="m1"):
    return Detection(
        box=Box(x1, y1, x2, y2),
        score=score,
        label=label,
        image_id=image_id,
        source_id=source_id,
    )


def gt(x1, y1, x2, y2, label="car", image_id="img"):
    return GroundTruthBox(box=Box(x1, y1, x2, y2), label=label, image_id=image_id)


def iou_plain(a, b):
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def nms_subset_oracle(dets: list[Detection], threshold: float) -> list[Detection]:
    """The unique keep set S such that a detection is in S exactly when no
    higher-ranked member of S suppresses it, found by trying every subset."""
    ranked = sorted(
        dets,
        key=lambda d: (-d.score, d.source_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.label),
    )
    n = len(ranked)
    suppresses = [
        [
            a.label == b.label and iou_plain(a.box.corners(), b.box.corners()) > threshold
            for b in ranked
        ]
        for a in ranked
    ]
    solutions = []
    for mask in range(1 << n):
        ok = True
        for j in range(n):
            suppressed = any(
                (mask >> i) & 1 and suppresses[i][j] for i in range(j)
            )
            member = bool((mask >> j) & 1)
            if member == suppressed:
                ok = False
                break
        if ok:
            solutions.append(mask)
    assert len(solutions) == 1, f"keep-set characterization not unique: {solutions}"
    mask = solutions[0]
    return [ranked[j] for j in range(n) if (mask >> j) & 1]


def otsu_scan_oracle(counts: list[int]) -> tuple[float, float, tuple[float, float]]:
    """Exact exhaustive scan of the between-class variance over every boundary.

    Returns (midpoint threshold, max variance as float, tied range), applying
    the same declared tie rule (midpoint of the maximizing boundary range).
    """
    n = len(counts)
    total = sum(counts)
    best = None
    ties = []
    for b in range(1, n):
        below = sum(counts[:b])
        above = total - below
        if below == 0 or above == 0:
            continue
        w0 = Fraction(below, total)
        w1 = Fraction(above, total)
        mu0 = sum(Fraction(counts[i]) * Fraction(2 * i + 1, 2 * n) for i in range(b)) / below
        mu1 = sum(Fraction(counts[i]) * Fraction(2 * i + 1, 2 * n) for i in range(b, n)) / above
        variance = w0 * w1 * (mu0 - mu1) ** 2
        if best is None or variance > best:
            best = variance
            ties = [b]
        elif variance == best:
            ties.append(b)
    assert ties, "degenerate histogram handed to the oracle"
    low = ties[0] / n
    high = ties[-1] / n
    return (low + high) / 2.0, float(best), (low, high)


def ap_brute_oracle(dets: list[Detection], gts: list[GroundTruthBox], label: str, thresh: float) -> float:
    """Literal PR-curve construction and step integration for one class."""
    class_gts = [g for g in gts if g.label == label]
    class_dets = sorted(
        (d for d in dets if d.label == label),
        key=lambda d: (-d.score, d.image_id, d.source_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2),
    )
    taken = [False] * len(class_gts)
    points = []  # (recall, precision) after each detection
    tp = 0
    for rank, d in enumerate(class_dets, start=1):
        best_i, best_iou = -1, 0.0
        for i, g in enumerate(class_gts):
            if taken[i] or g.image_id != d.image_id:
                continue
            overlap = iou_plain(d.box.corners(), g.box.corners())
            if overlap > best_iou:
                best_iou, best_i = overlap, i
        if best_i >= 0 and best_iou >= thresh:
            taken[best_i] = True
            tp += 1
        points.append((tp / len(class_gts), tp / rank))
    ap = 0.0
    prev_recall = 0.0
    for k, (recall, _) in enumerate(points):
        best_future_precision = max(p for _, p in points[k:])
        ap += (recall - prev_recall) * best_future_precision
        prev_recall = recall
    return ap


def coverage_ok(plan) -> bool:
    """Rasterized check: every pixel covered, every window in bounds and full-size."""
    grid = np.zeros((plan.image_h, plan.image_w), dtype=bool)
    for x0, y0, x1, y1 in plan.slices:
        if not (0 <= x0 < x1 <= plan.image_w and 0 <= y0 < y1 <= plan.image_h):
            return False
        if x1 - x0 != plan.slice_w or y1 - y0 != plan.slice_h:
            return False
        grid[y0:y1, x0:x1] = True
    return bool(grid.all())
