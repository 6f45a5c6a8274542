"""
Metric-learning objectives
==========================

Sketch embeddings are anchors and their paired shapes are positives. The
triplet loss hinges on squared distances to every other shape in the batch;
the contrastive loss is a softmax over similarities with a choice of what
goes in the denominator.
"""

import torch

from vrsketch.losses import DENOMINATOR_VARIANTS, LossConfig, compute_loss, contrastive_loss, triplet_loss

s = torch.tensor([[1.0, 0.0], [0.0, 1.0]])

# matched pairs are already separated by more than the margin
print("triplet, matched:", triplet_loss(s, s.clone(), margin=0.3).item())
# swapped positives: each anchor pays 2 + 0.3
print("triplet, swapped:", triplet_loss(s, s.flip(0), margin=0.3).item())

# the denominator variants only ever add terms, so cross_only is smallest
torch.manual_seed(0)
a = torch.nn.functional.normalize(torch.randn(6, 16), dim=1)
b = torch.nn.functional.normalize(a + 0.3 * torch.randn(6, 16), dim=1)
for variant in DENOMINATOR_VARIANTS:
    print(f"contrastive {variant:>17}: {contrastive_loss(a, b, 0.1, variant).item():.4f}")

# losses are summed over anchors by default; 'mean' makes them batch-size free
for reduction in ("sum", "mean"):
    cfg = LossConfig(kind="triplet", reduction=reduction)
    print(f"triplet {reduction}: {compute_loss(cfg, a, b).item():.4f}")

# one random negative per anchor instead of all of them
g = torch.Generator().manual_seed(0)
print("triplet, random negatives:", compute_loss(LossConfig(negatives="random"), a, b, g).item())
