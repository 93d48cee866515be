"""Synthetic multi-detector output generation for desk-scale ensemble experiments.

A detector profile declares per-class recall and precision, a localization
jitter, and separate score distributions for true and false positives. The
simulator emits detections whose empirical per-class recall converges on the
profile's (each reference box is emitted independently with probability
recall) and whose false-positive count is drawn so expected precision matches
the profile's. Everything is deterministic given its seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .evaluation import GroundTruthBox
from .geometry import Box, Detection

__all__ = [
    "DEFAULT_CLASS_MIX",
    "DEFAULT_SIZE_TABLE",
    "ClassRates",
    "ScoreModel",
    "DetectorProfile",
    "SceneParams",
    "SyntheticScene",
    "load_profile",
    "derive_seed",
    "generate_scene",
    "generate_dataset",
    "simulate_detector",
    "simulate_detectors",
]

DEFAULT_CLASS_MIX = {"Bus": 0.2, "Bike": 0.2, "Car": 0.2, "Pedestrian": 0.2, "Truck": 0.2}
DEFAULT_SIZE_TABLE = {
    "Bus": (110.0, 70.0),
    "Bike": (30.0, 30.0),
    "Car": (64.0, 44.0),
    "Pedestrian": (16.0, 34.0),
    "Truck": (90.0, 60.0),
}

_SIZE_SPREAD = 0.3  # box extents vary uniformly within +/-30% of the class mean
_PLACEMENT_ATTEMPTS = 64
_MAX_SCENE_FILL = 2.0  # reject scenes whose nominal box area exceeds 2x the image


@dataclass(frozen=True)
class ClassRates:
    recall: float
    precision: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.recall <= 1.0:
            raise ValidationError(f"recall {self.recall!r} outside [0, 1]")
        if not 0.0 < self.precision <= 1.0:
            raise ValidationError(f"precision {self.precision!r} outside (0, 1]")


@dataclass(frozen=True)
class ScoreModel:
    """Beta-shaped score distribution pinned by its mean and concentration."""

    mean: float
    concentration: float = 12.0

    def __post_init__(self) -> None:
        if not 0.0 < self.mean < 1.0:
            raise ValidationError(f"score mean {self.mean!r} outside (0, 1)")
        if not self.concentration > 0:
            raise ValidationError(f"score concentration {self.concentration!r} must be > 0")

    def draw(self, rng: np.random.Generator) -> float:
        return float(rng.beta(self.mean * self.concentration, (1.0 - self.mean) * self.concentration))


@dataclass(frozen=True)
class DetectorProfile:
    """Per-class recall/precision plus localization and score behaviour of one detector."""

    name: str
    classes: Mapping[str, ClassRates]
    jitter: float = 0.0
    tp_score: ScoreModel = field(default_factory=lambda: ScoreModel(mean=0.75))
    fp_score: ScoreModel = field(default_factory=lambda: ScoreModel(mean=0.30))

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("profile name must be nonempty")
        if not self.classes:
            raise ValidationError(f"profile {self.name!r} declares no classes")
        if self.jitter < 0:
            raise ValidationError(f"jitter {self.jitter!r} must be >= 0")


def load_profile(path: str | Path) -> DetectorProfile:
    """Load a detector profile from JSON; unknown keys are errors."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"profile file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(data) - {"name", "classes", "jitter", "tp_score", "fp_score"})
    if unknown:
        raise ConfigError(f"{path}: unknown profile keys {unknown}")
    try:
        classes = {
            label: ClassRates(recall=float(rates["recall"]), precision=float(rates["precision"]))
            for label, rates in data.get("classes", {}).items()
        }
        kwargs = {}
        for key in ("tp_score", "fp_score"):
            if key in data:
                kwargs[key] = ScoreModel(
                    mean=float(data[key]["mean"]),
                    concentration=float(data[key].get("concentration", 12.0)),
                )
        return DetectorProfile(
            name=data.get("name", path.stem),
            classes=classes,
            jitter=float(data.get("jitter", 0.0)),
            **kwargs,
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise ConfigError(f"{path}: {e}") from None
        raise ConfigError(f"{path}: malformed profile: {e}") from None


@dataclass(frozen=True)
class SceneParams:
    """Shape of a synthetic scene: extents, object count, class mix, and sizes."""

    image_w: int = 1280
    image_h: int = 1280
    n_objects: int = 60
    class_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    size_table: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_SIZE_TABLE))
    peripheral_bias: float = 0.0

    def __post_init__(self) -> None:
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValidationError("image extents must be positive")
        if self.n_objects < 0:
            raise ValidationError(f"n_objects {self.n_objects!r} must be >= 0")
        if not self.class_mix:
            raise ValidationError("class_mix must be nonempty")
        if any(share < 0 for share in self.class_mix.values()):
            raise ValidationError("class mix proportions must be >= 0")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValidationError(f"class mix proportions must sum to 1, got {sum(self.class_mix.values())}")
        missing = sorted(set(self.class_mix) - set(self.size_table))
        if missing:
            raise ValidationError(f"size_table lacks entries for classes {missing}")
        if not 0.0 <= self.peripheral_bias <= 1.0:
            raise ValidationError(f"peripheral_bias {self.peripheral_bias!r} outside [0, 1]")


@dataclass(frozen=True)
class SyntheticScene:
    image_id: str
    image_w: int
    image_h: int
    boxes: tuple[GroundTruthBox, ...]
    seed: int


def derive_seed(master_seed: int, name: str) -> int:
    """Stable 64-bit seed from a master seed and a label (profile or scene name)."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _check_feasible(params: SceneParams) -> None:
    nominal_area = 0.0
    for label, share in params.class_mix.items():
        if share <= 0:
            continue
        mw, mh = params.size_table[label]
        if mw <= 0 or mh <= 0:
            raise ValidationError(f"size_table[{label!r}] extents must be positive")
        max_w = mw * (1.0 + _SIZE_SPREAD)
        max_h = mh * (1.0 + _SIZE_SPREAD)
        if max_w >= params.image_w or max_h >= params.image_h:
            raise ValidationError(
                f"class {label!r} boxes (~{mw:.0f}x{mh:.0f}) cannot fit a "
                f"{params.image_w}x{params.image_h} image"
            )
        nominal_area += share * params.n_objects * mw * mh
    if nominal_area > _MAX_SCENE_FILL * params.image_w * params.image_h:
        raise ValidationError(
            f"{params.n_objects} objects cannot fit {params.image_w}x{params.image_h} "
            f"(nominal fill {nominal_area / (params.image_w * params.image_h):.1f}x)"
        )


def generate_scene(params: SceneParams, seed: int, image_id: str | None = None) -> SyntheticScene:
    """Deterministic synthetic scene for (params, seed).

    With peripheral_bias > 0 object centers are pushed toward the image
    periphery (radius drawn as u^(1/(2+4*bias)) of the max radius) and boxes
    shrink moderately with radius, mimicking small objects near the edges.
    """
    _check_feasible(params)
    rng = np.random.default_rng(seed)
    image_id = image_id if image_id is not None else f"synth_{seed}"
    labels = sorted(label for label, share in params.class_mix.items())
    shares = np.array([params.class_mix[label] for label in labels])
    counts = rng.multinomial(params.n_objects, shares) if params.n_objects else [0] * len(labels)

    boxes: list[GroundTruthBox] = []
    half_w = params.image_w / 2.0
    half_h = params.image_h / 2.0
    bias = params.peripheral_bias
    for label, count in zip(labels, counts):
        mean_w, mean_h = params.size_table[label]
        for _ in range(int(count)):
            for _ in range(_PLACEMENT_ATTEMPTS):
                scale = rng.uniform(1.0 - _SIZE_SPREAD, 1.0 + _SIZE_SPREAD)
                r_frac = rng.uniform() ** (1.0 / (2.0 + 4.0 * bias))
                theta = rng.uniform(0.0, 2.0 * math.pi)
                shrink = 1.0 - 0.35 * bias * r_frac
                bw = mean_w * scale * shrink
                bh = mean_h * scale * shrink
                cx = half_w + r_frac * math.cos(theta) * max(0.0, half_w - bw / 2.0 - 1.0)
                cy = half_h + r_frac * math.sin(theta) * max(0.0, half_h - bh / 2.0 - 1.0)
                x1 = min(max(cx - bw / 2.0, 0.0), params.image_w - bw)
                y1 = min(max(cy - bh / 2.0, 0.0), params.image_h - bh)
                if bw >= 1.0 and bh >= 1.0 and x1 >= 0.0 and y1 >= 0.0:
                    boxes.append(
                        GroundTruthBox(box=Box(x1, y1, x1 + bw, y1 + bh), label=label, image_id=image_id)
                    )
                    break
            else:
                raise ValidationError(f"could not place a {label!r} box after {_PLACEMENT_ATTEMPTS} attempts")
    return SyntheticScene(
        image_id=image_id,
        image_w=params.image_w,
        image_h=params.image_h,
        boxes=tuple(boxes),
        seed=seed,
    )


def generate_dataset(params: SceneParams, n_images: int, master_seed: int) -> list[SyntheticScene]:
    """One scene per image, with per-scene seeds derived from the master seed."""
    if n_images < 0:
        raise ValidationError(f"n_images {n_images!r} must be >= 0")
    return [
        generate_scene(params, derive_seed(master_seed, f"scene-{i}"), image_id=f"synth_{i:05d}")
        for i in range(n_images)
    ]


def _jitter_box(rng: np.random.Generator, box: Box, jitter: float) -> Box:
    if jitter == 0.0:
        return box
    sx = jitter * box.width
    sy = jitter * box.height
    for _ in range(_PLACEMENT_ATTEMPTS):
        x1 = box.x1 + rng.normal(0.0, sx)
        x2 = box.x2 + rng.normal(0.0, sx)
        y1 = box.y1 + rng.normal(0.0, sy)
        y2 = box.y2 + rng.normal(0.0, sy)
        if x1 < x2 and y1 < y2:
            return Box(x1, y1, x2, y2)
    return box


def simulate_detector(
    scene: SyntheticScene,
    profile: DetectorProfile,
    seed: int,
    skip_indices: frozenset[int] = frozenset(),
) -> list[Detection]:
    """Simulated detections of one detector on one scene.

    Every reference box (outside skip_indices) is emitted with probability
    recall(class), jittered, and scored from the true-positive distribution.
    Per class, a Poisson-drawn number of false positives with expectation
    TP_expected * (1 - precision) / precision is placed uniformly and scored
    from the false-positive distribution, so expected precision matches the
    profile. Deterministic for fixed (scene, profile, seed, skip_indices).
    """
    missing = sorted({b.label for b in scene.boxes} - set(profile.classes))
    if missing:
        raise ConfigError(f"profile {profile.name!r} lacks rates for classes {missing}")
    rng = np.random.default_rng(seed)
    detections: list[Detection] = []

    by_label: dict[str, list[GroundTruthBox]] = {}
    for i, gt in enumerate(scene.boxes):
        by_label.setdefault(gt.label, []).append(gt)
        if i in skip_indices:
            continue
        rates = profile.classes[gt.label]
        if rng.random() >= rates.recall:
            continue
        detections.append(
            Detection(
                box=_jitter_box(rng, gt.box, profile.jitter),
                score=profile.tp_score.draw(rng),
                label=gt.label,
                image_id=scene.image_id,
                source_id=profile.name,
            )
        )

    for label in sorted(by_label):
        rates = profile.classes[label]
        templates = by_label[label]
        expected_tp = len(templates) * rates.recall
        lam = expected_tp * (1.0 - rates.precision) / rates.precision
        n_fp = int(rng.poisson(lam)) if lam > 0 else 0
        for _ in range(n_fp):
            template = templates[int(rng.integers(len(templates)))]
            bw = min(template.box.width * rng.uniform(0.7, 1.3), scene.image_w - 1.0)
            bh = min(template.box.height * rng.uniform(0.7, 1.3), scene.image_h - 1.0)
            x1 = rng.uniform(0.0, scene.image_w - bw)
            y1 = rng.uniform(0.0, scene.image_h - bh)
            detections.append(
                Detection(
                    box=Box(x1, y1, x1 + bw, y1 + bh),
                    score=profile.fp_score.draw(rng),
                    label=label,
                    image_id=scene.image_id,
                    source_id=profile.name,
                )
            )
    return detections


def simulate_detectors(
    scene: SyntheticScene,
    profiles: Sequence[DetectorProfile],
    master_seed: int,
    shared_miss: float = 0.0,
) -> dict[str, list[Detection]]:
    """Simulate several detectors on one scene with per-profile derived seeds.

    With shared_miss > 0, that fraction of reference boxes (drawn once from
    the master seed) is hidden from every detector, correlating their misses;
    effective recall drops to (1 - shared_miss) * recall.
    """
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate profile names: {sorted(names)}")
    if not 0.0 <= shared_miss < 1.0:
        raise ValidationError(f"shared_miss {shared_miss!r} outside [0, 1)")
    skip: frozenset[int] = frozenset()
    if shared_miss > 0.0:
        rng = np.random.default_rng(derive_seed(master_seed, "shared-miss"))
        skip = frozenset(i for i in range(len(scene.boxes)) if rng.random() < shared_miss)
    return {
        p.name: simulate_detector(scene, p, derive_seed(master_seed, p.name), skip)
        for p in profiles
    }
