"""
Point-cloud encoders
====================

Two encoder families map a normalized cloud to a unit-norm embedding: a
hierarchical set-abstraction network and a dynamic-graph network with edge
convolutions. A Siamese model shares one encoder between sketches and
shapes; a heterogeneous model has one per modality.
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from vrsketch import encoders, geometry, toy

n = 256
sketch, mesh = toy.make_toy_chair(1)
sk = geometry.sample_sketch_cloud(sketch, n)
sh = geometry.sample_mesh_cloud(mesh, n, np.random.default_rng(1))

small_sa = encoders.ModelConfig(n_points=n, embedding_dim=64, head_widths=[128], sa_global_widths=[64, 128],
                                sa_levels=[[128, 0.2, 16, [32, 32]], [32, 0.4, 16, [64]]])
small_dg = encoders.ModelConfig(encoder_family="dynamic_graph", n_points=n, embedding_dim=64, dg_k=10,
                                dg_widths=[32, 32, 64], dg_global_width=128, head_widths=[128])

for cfg in (small_sa, small_dg):
    torch.manual_seed(0)
    model = encoders.RetrievalModel(cfg)
    e_sketch = encoders.encode(model, sk, "sketch")
    e_shape = encoders.encode(model, sh, "shape")
    shuffled = encoders.encode(model, sk[np.random.default_rng(2).permutation(n)], "sketch")
    params = sum(p.numel() for p in model.parameters())
    print(f"{cfg.encoder_family:>16}: {params} parameters, |e| = {np.linalg.norm(e_sketch):.6f}, "
          f"sketch-shape distance {np.linalg.norm(e_sketch - e_shape):.3f}, "
          f"shuffle drift {np.abs(shuffled - e_sketch).max():.1e}")

# the default sizes: 1024 points, 512-d embeddings
full = encoders.RetrievalModel(encoders.ModelConfig())
print("default set-abstraction parameters:", sum(p.numel() for p in full.parameters()))

# heterogeneous models start from a Siamese checkpoint: both branches are
# copies of the shared encoder and then train independently
torch.manual_seed(0)
siamese = encoders.RetrievalModel(small_sa)
ckpt = encoders.save_checkpoint(Path(tempfile.mkdtemp()) / "epoch_100.ckpt", siamese, epoch=100)
hetero = encoders.clone_for_heterogeneous(ckpt)
print("branches:", list(hetero.encoders))
print("identical after cloning:",
      np.array_equal(encoders.encode(hetero, sk, "sketch"), encoders.encode(hetero, sk, "shape")))
