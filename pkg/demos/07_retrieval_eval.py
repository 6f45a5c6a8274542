"""
Gallery retrieval and A@k
=========================

Gallery shapes are embedded once and stored in an index file. Queries are
ranked by Euclidean distance with ties broken by shape id, and A@k counts
the queries whose own shape lands in the top k.
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from vrsketch import geometry, retrieval, toy
from vrsketch.dataset import ManifestRecord
from vrsketch.encoders import ModelConfig, RetrievalModel, encode_batch, model_fingerprint

# a hand-made gallery: distances 0.1, 0.2, 0.2, 0.9 from the query
def at_distance(dist, angle):
    cos = 1 - dist ** 2 / 2
    sin = np.sqrt(1 - cos ** 2)
    return [sin * np.cos(angle), sin * np.sin(angle), cos]


index = retrieval.GalleryIndex(("d", "c", "a", "b"),
                               np.array([at_distance(0.9, 0), at_distance(0.2, 1), at_distance(0.1, 2),
                                         at_distance(0.2, 3)]), "hand-made")
res = retrieval.retrieve(index, [0, 0, 1], 4)
print("ranking:", res.shape_ids, res.distances.round(3))

# ranks 1, 4 and 11 give A@1 = 33.3 and A@5 = A@10 = 66.7
print(retrieval.accuracy_from_ranks([1, 4, 11]))

# a model-built index round-trips through disk and refuses other models
n = 128
torch.manual_seed(0)
model = RetrievalModel(ModelConfig(n_points=n, embedding_dim=32, head_widths=[64], sa_global_widths=[64],
                                   sa_levels=[[64, 0.2, 16, [32]], [16, 0.4, 16, [64]]]))
shapes = np.stack([geometry.sample_mesh_cloud(toy.make_toy_chair(i)[1], n, np.random.default_rng(i))
                   for i in range(10)])
sketches = np.stack([geometry.sample_sketch_cloud(toy.make_toy_chair(i)[0], n) for i in range(10)])
ids = [f"chair{i}" for i in range(10)]
path = Path(tempfile.mkdtemp()) / "gallery.idx"
built = retrieval.build_gallery(model, shapes, ids, path)
loaded = retrieval.load_index(path, model_fingerprint(model))
print(f"index: {len(loaded)} rows, {path.stat().st_size} bytes")
try:
    retrieval.load_index(path, "0" * 32)
except retrieval.StaleIndexError as exc:
    print("stale:", exc)

results = retrieval.retrieve_all(loaded, encode_batch(model, sketches, "sketch"), [f"q{i}" for i in range(10)])

# per-group report: the first three queries come from an unseen participant,
# the last four from group B
records = [ManifestRecord(f"q{i}", "U" if i < 3 else "P", "B" if i >= 6 else "A", "test", None, f"{sid}.obj")
           for i, sid in enumerate(ids)]
records.append(ManifestRecord("t0", "P", "A", "train", None, "other.obj"))
print(retrieval.format_report(retrieval.per_group_report(results, records)))
