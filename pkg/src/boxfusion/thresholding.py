"""Data-driven confidence cutoffs: score histograms, Otsu threshold selection, filtering."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

from .errors import DegenerateDistributionError, ValidationError
from .geometry import Detection

__all__ = [
    "DEFAULT_BIN_COUNT",
    "ScoreHistogram",
    "OtsuResult",
    "build_histogram",
    "otsu_threshold",
    "filter_by_threshold",
]

DEFAULT_BIN_COUNT = 256


@dataclass(frozen=True)
class ScoreHistogram:
    """Counts over [0, 1]: bin b covers [b/n, (b+1)/n), with the last bin closed at 1."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) < 2:
            raise ValidationError("a score histogram needs at least 2 bins")
        for i, c in enumerate(self.counts):
            if not isinstance(c, int) or isinstance(c, bool) or c < 0:
                raise ValidationError(f"counts[{i}]={c!r} must be a nonnegative integer")

    @property
    def bin_count(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def bin_width(self) -> float:
        return 1.0 / len(self.counts)

    def bin_edges(self, b: int) -> tuple[float, float]:
        return (b / self.bin_count, (b + 1) / self.bin_count)


@dataclass(frozen=True)
class OtsuResult:
    """Selected cutoff, its between-class variance, and the tied boundary range."""

    threshold: float
    between_class_variance: float
    tied_range: tuple[float, float]


def build_histogram(scores: Iterable[float], bin_count: int = DEFAULT_BIN_COUNT) -> ScoreHistogram:
    """Tally confidence scores into bin_count equal bins over [0, 1]."""
    if not isinstance(bin_count, int) or isinstance(bin_count, bool) or bin_count < 2:
        raise ValidationError(f"bin_count must be an integer >= 2, got {bin_count!r}")
    counts = [0] * bin_count
    for i, score in enumerate(scores):
        s = float(score)
        if not 0.0 <= s <= 1.0:
            raise ValidationError(f"scores[{i}]={score!r} outside [0, 1]")
        counts[min(int(s * bin_count), bin_count - 1)] += 1
    return ScoreHistogram(tuple(counts))


def otsu_threshold(h: ScoreHistogram) -> OtsuResult:
    """Threshold maximizing the between-class variance over all bin boundaries.

    Candidates are boundaries t = b / bin_count splitting bins [0, b) from
    [b, bin_count); the variance is w0 * w1 * (mu0 - mu1)^2 with class weights
    w and class mean scores mu taken at bin centers. Ties (common across empty
    bins between well-separated modes) resolve to the midpoint of the
    maximizing boundary range.

    The argmax and tie detection use exact integer arithmetic, so the result
    is invariant under scaling all counts by a positive integer.
    """
    counts = h.counts
    n = h.bin_count
    total = h.total
    if sum(1 for c in counts if c) < 2:
        raise DegenerateDistributionError(
            "scores occupy fewer than two histogram bins; no separating threshold exists"
        )
    # In half-bin units the center of bin i is (2i + 1) / (2n) and
    #   variance(b) = (W0*B - W1*A)^2 / (4 n^2 total^2 A B)
    # with A = count below boundary b, B = total - A, W0 = sum_{i<b} counts[i]*(2i+1),
    # W1 = W - W0. Only the integer pair (numerator, A*B) is needed to compare.
    w_all = sum(c * (2 * i + 1) for i, c in enumerate(counts))
    best_num = -1
    best_den = 1
    ties: list[int] = []
    a = 0
    w0 = 0
    for b in range(1, n):
        a += counts[b - 1]
        w0 += counts[b - 1] * (2 * (b - 1) + 1)
        below = a
        above = total - a
        if below == 0 or above == 0:
            continue
        num = (w0 * above - (w_all - w0) * below) ** 2
        den = below * above
        left = num * best_den
        right = best_num * den
        if left > right:
            best_num, best_den = num, den
            ties = [b]
        elif left == right:
            ties.append(b)
    low = ties[0] / n
    high = ties[-1] / n
    variance = best_num / (4 * n * n * total * total * best_den)
    return OtsuResult(threshold=(low + high) / 2.0, between_class_variance=variance, tied_range=(low, high))


def filter_by_threshold(dets: Iterable[Detection], t: float) -> list[Detection]:
    """Keep exactly the detections with score >= t, preserving order."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"threshold {t!r} outside [0, 1]")
    return [d for d in dets if d.score >= t]
