"""
Training, checkpoints and model selection
=========================================

Each seed trains one model, validating on a held-out set of sketches
against a gallery of shapes. The best (seed, epoch) by validation A@1 is
kept; a heterogeneous model can then be warm-started from it.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from vrsketch import geometry, toy
from vrsketch.encoders import ModelConfig
from vrsketch.trainer import TrainConfig, TrainingData, load_runs, select_best, train, train_heterogeneous

n = 128


def pairs(ids):
    sk, sh = [], []
    for i in ids:
        boxes = toy.chair_boxes(np.random.default_rng(i))
        sk.append(geometry.sample_sketch_cloud(
            toy.boxes_to_sketch(boxes, np.random.default_rng(1000 + i), jitter=0.03, keep_edges=0.8), n))
        sh.append(geometry.sample_mesh_cloud(toy.boxes_to_mesh(boxes), n, np.random.default_rng(i)))
    return np.stack(sk), np.stack(sh)


train_sk, train_sh = pairs(range(100))
val_sk, val_sh = pairs(range(100, 120))
ids = [f"chair{i:02d}" for i in range(120)]
data = TrainingData(train_sk, train_sh, val_sk, ids[100:], np.concatenate([train_sh, val_sh]), ids)

# on a set this small, batch-norm encoders memorize the training pairs, so
# this demo trains without normalization layers
model = ModelConfig(n_points=n, embedding_dim=64, head_widths=[128], sa_global_widths=[64, 128],
                    sa_levels=[[64, 0.2, 16, [32, 32]], [16, 0.4, 16, [64]]], norm="none")
cfg = TrainConfig(epochs=15, batch_size=6, seeds=[0, 1], validation_every=5, donor_epoch=10)

runs_dir = Path(tempfile.mkdtemp(prefix="vrsketch_runs_"))
runs = train(model, cfg, data, run_dir=runs_dir / "siamese")
for run in runs:
    print(f"seed {run.seed}: loss {run.losses[0]:.2f} -> {run.losses[-1]:.2f}, validation A@1 "
          + " ".join(f"e{v['epoch']}={v['A@1']:.0f}" for v in run.validations))

seed, epoch, ckpt = select_best(runs)
print(f"best: seed {seed}, epoch {epoch}, {Path(ckpt).name}")

# everything needed for selection is on disk
print("first log line:", (runs_dir / "siamese" / "0" / "metrics.jsonl").read_text().splitlines()[0])
print("reloaded selection:", select_best(load_runs(runs_dir / "siamese"))[:2])

# warm start separate sketch and shape encoders from each seed's epoch-10 checkpoint
hetero = train_heterogeneous(runs, model, cfg, data, run_dir=runs_dir / "heterogeneous")
for donor, run in zip(runs, hetero):
    at_donor = next(v for v in donor.validations if v["epoch"] == cfg.donor_epoch)
    print(f"seed {run.seed}: donor A@1 {at_donor['A@1']:.0f} == heterogeneous epoch 0 A@1 "
          f"{run.validations[0]['A@1']:.0f}, final {run.validations[-1]['A@1']:.0f}")
print(json.dumps({"runs_dir": str(runs_dir)}))
