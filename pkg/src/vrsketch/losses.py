"""Cross-modal triplet and contrastive objectives.

Both take a batch of ``B`` sketch embeddings ``s`` and ``B`` shape embeddings
``z`` (rows unit-norm); row ``a`` of ``z`` is the positive for row ``a`` of
``s``. Losses are summed over anchors unless ``reduction="mean"``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

logger = logging.getLogger(__name__)

DENOMINATOR_VARIANTS = ("cross_only", "cross_plus_sketch", "cross_plus_shape", "full")


@dataclass
class LossConfig:
    kind: str = "triplet"
    margin: float = 0.3
    temperature: float = 0.1
    denominator_variant: str = "full"
    negatives: str = "all"
    reduction: str = "sum"

    def __post_init__(self):
        if self.kind not in ("triplet", "contrastive"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.denominator_variant not in DENOMINATOR_VARIANTS:
            raise ValueError(f"denominator_variant must be one of {DENOMINATOR_VARIANTS}")
        if self.negatives not in ("all", "random"):
            raise ValueError("negatives must be 'all' or 'random'")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")


def _reduce(per_anchor: torch.Tensor, reduction: str) -> torch.Tensor:
    return per_anchor.sum() if reduction == "sum" else per_anchor.mean()


def triplet_loss(s: torch.Tensor, z: torch.Tensor, margin: float = 0.3, reduction: str = "sum",
                 negatives: str = "all", generator: torch.Generator | None = None) -> torch.Tensor:
    """Hinge on squared Euclidean distances, sketch anchors against every
    other shape in the batch (``negatives="all"``) or one random other shape
    per anchor (``negatives="random"``)."""
    b = s.shape[0]
    if b < 2:
        logger.warning("triplet loss on a batch of %d has no negatives; returning 0", b)
        return (s * 0).sum() + (z * 0).sum()
    d = ((s[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    pos = d.diagonal()
    hinge = torch.relu(pos[:, None] - d + margin)
    off_diag = ~torch.eye(b, dtype=torch.bool, device=s.device)
    if negatives == "all":
        per_anchor = (hinge * off_diag).sum(1)
    else:
        # uniform over b != a: draw from 0..b-2 and skip the anchor
        pick = torch.randint(0, b - 1, (b,), generator=generator, device=s.device)
        pick = pick + (pick >= torch.arange(b, device=s.device))
        per_anchor = hinge[torch.arange(b, device=s.device), pick]
    return _reduce(per_anchor, reduction)


def contrastive_loss(s: torch.Tensor, z: torch.Tensor, temperature: float = 0.1,
                     variant: str = "full", reduction: str = "sum") -> torch.Tensor:
    """Negative log of the positive pair's share of a softmax denominator.

    The denominator always holds every sketch-to-shape similarity of the
    anchor; ``cross_plus_sketch`` adds sketch-to-other-sketch terms,
    ``cross_plus_shape`` adds positive-shape-to-other-shape terms, ``full``
    adds both.
    """
    if variant not in DENOMINATOR_VARIANTS:
        raise ValueError(f"unknown denominator variant {variant!r}")
    b = s.shape[0]
    eye = torch.eye(b, dtype=torch.bool, device=s.device)
    logits = [s @ z.T / temperature]
    if variant in ("cross_plus_sketch", "full"):
        logits.append((s @ s.T / temperature).masked_fill(eye, float("-inf")))
    if variant in ("cross_plus_shape", "full"):
        logits.append((z @ z.T / temperature).masked_fill(eye, float("-inf")))
    log_denominator = torch.logsumexp(torch.cat(logits, dim=1), dim=1)
    per_anchor = log_denominator - logits[0].diagonal()
    return _reduce(per_anchor, reduction)


def compute_loss(config: LossConfig, s: torch.Tensor, z: torch.Tensor,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    if config.kind == "triplet":
        return triplet_loss(s, z, config.margin, config.reduction, config.negatives, generator)
    return contrastive_loss(s, z, config.temperature, config.denominator_variant, config.reduction)
