"""Training-time sketch transforms and training-set composition."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import axis_rotation, normalize_cloud

logger = logging.getLogger(__name__)

# beyond this many synthetic sketches per human sketch, accuracy was observed to drop
SYNTHETIC_RATIO_WARN = 2.0


@dataclass
class AugmentConfig:
    rotation_enabled: bool = False
    rotation_axis: str = "z"
    scale_enabled: bool = False
    scale_range: tuple[float, float] = (0.9, 1.1)
    renormalize_after: bool = True
    synthetic_ratio: float = 0.0
    apply_to_shapes: bool = False

    def __post_init__(self):
        lo, hi = self.scale_range
        self.scale_range = (float(lo), float(hi))
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.synthetic_ratio < 0:
            raise ValueError("synthetic_ratio must be >= 0")
        if self.rotation_axis not in ("x", "y", "z"):
            raise ValueError(f"rotation_axis must be x, y or z, got {self.rotation_axis!r}")

    @property
    def active(self) -> bool:
        return self.rotation_enabled or self.scale_enabled


def random_axis_rotation(cloud, rng: np.random.Generator, axis: str = "z",
                         renormalize: bool = True, degrees: float | None = None) -> np.ndarray:
    """Rotate about ``axis`` by an angle drawn uniformly from [0, 360) unless
    ``degrees`` is given."""
    if degrees is None:
        degrees = rng.uniform(0.0, 360.0)
    out = np.asarray(cloud, dtype=np.float64) @ axis_rotation(axis, np.deg2rad(degrees)).T
    return normalize_cloud(out) if renormalize else out


def random_anisotropic_scale(cloud, rng: np.random.Generator, scale_range=(0.9, 1.1),
                             renormalize: bool = True, factors=None) -> np.ndarray:
    """Multiply x, y and z by independent factors from ``scale_range``."""
    if factors is None:
        factors = rng.uniform(scale_range[0], scale_range[1], size=3)
    out = np.asarray(cloud, dtype=np.float64) * np.asarray(factors, dtype=np.float64)
    return normalize_cloud(out) if renormalize else out


def augment(cloud, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = cloud
    if config.rotation_enabled:
        out = random_axis_rotation(out, rng, config.rotation_axis, config.renormalize_after)
    if config.scale_enabled:
        out = random_anisotropic_scale(out, rng, config.scale_range, config.renormalize_after)
    return out


def compose_training_set(human, synthetic, ratio: float | None = None, seed: int = 0,
                         count: int | None = None) -> list:
    """Human records plus ``floor(ratio * len(human))`` synthetic ones.

    The synthetic draw is seeded, without replacement and capped at
    ``len(synthetic)``. ``count`` overrides the ratio with an absolute number.
    """
    human, synthetic = list(human), list(synthetic)
    if count is None:
        ratio = 0.0 if ratio is None else float(ratio)
        if ratio < 0:
            raise ValueError("ratio must be >= 0")
        if ratio > SYNTHETIC_RATIO_WARN:
            logger.warning("synthetic ratio %.2f exceeds %.1f; expect degraded retrieval",
                           ratio, SYNTHETIC_RATIO_WARN)
        count = int(np.floor(ratio * len(human) + 1e-9))
    elif count < 0:
        raise ValueError("count must be >= 0")
    count = min(count, len(synthetic))
    if count == 0:
        return human
    pick = np.random.default_rng(seed).choice(len(synthetic), size=count, replace=False)
    return human + [synthetic[i] for i in sorted(pick)]
