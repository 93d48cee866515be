"""Axis-aligned boxes and the overlap arithmetic used by fusion, slicing, and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ValidationError

__all__ = ["Box", "Detection", "area", "iou", "translate"]


@dataclass(frozen=True, order=True)
class Box:
    """Corner-convention box: (x1, y1) is the min corner, (x2, y2) the max corner."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ValidationError(f"box coordinate {name}={value!r} is not a number") from None
            if not math.isfinite(value):
                raise ValidationError(f"box coordinate {name}={value!r} is not finite")
            object.__setattr__(self, name, value)
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise ValidationError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "requires x1 < x2 and y1 < y2"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    """One predicted box with its confidence, class label, and provenance ids."""

    box: Box
    score: float
    label: str
    image_id: str
    source_id: str

    def __post_init__(self) -> None:
        try:
            score = float(self.score)
        except (TypeError, ValueError):
            raise ValidationError(f"score {self.score!r} is not a number") from None
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"score {score!r} outside [0, 1]")
        object.__setattr__(self, "score", score)


def area(a: Box) -> float:
    """Box area; always positive for a valid box."""
    return (a.x2 - a.x1) * (a.y2 - a.y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; symmetric, 0 when disjoint, 1 when identical."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = area(a) + area(b) - inter
    return inter / union


def translate(d: Detection, dx: float, dy: float) -> Detection:
    """Shift a detection's box by (dx, dy); score, label, and ids are unchanged."""
    moved = Box(d.box.x1 + dx, d.box.y1 + dy, d.box.x2 + dx, d.box.y2 + dy)
    return replace(d, box=moved)
