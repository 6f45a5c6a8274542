"""
Command-line workflow
=====================

The same steps a full experiment takes, on a toy dataset and tiny model:
prepare the cloud cache, split, train, evaluate, report and sweep the
training-set size. Each call is equivalent to running ``vrsketch ...``.
"""

import tempfile
from pathlib import Path

from vrsketch import cli, toy

root = Path(tempfile.mkdtemp(prefix="vrsketch_cli_"))
raw = toy.write_toy_dataset(root / "data", n_participants=5, sketches_per_participant=8, gallery_extra=4)
cache = str(root / "cache")
tiny = ["dataset.n_points=64", "model.embedding_dim=16", "model.head_widths=[32]",
        "model.sa_levels=[[32, 0.3, 8, [16, 16]], [8, 0.6, 8, [32]]]", "model.sa_global_widths=[32, 64]",
        "train.epochs=3", "train.batch_size=4"]
sets = [x for s in tiny for x in ("--set", s)]


def run(*argv):
    print("\n$ vrsketch", " ".join(argv))
    code = cli.main(list(argv))
    print(f"(exit {code})")
    return code


run("split", "--manifest", str(raw), "--out", str(root / "split.csv"), "--heldout-count", "1")
manifest = str(root / "split.csv")
run("prepare", "--manifest", manifest, "--cache-dir", cache, "--n-points", "64")
run("prepare", "--manifest", manifest, "--cache-dir", cache, "--n-points", "64")  # warm: nothing computed
run("train", "--preset", "exp14", "--explain", *sets)
run("train", "--preset", "exp01", "--manifest", manifest, "--cache-dir", cache, "--seed", "0", "--seed", "1",
    "--out", str(root / "exp01"), *sets)
run("report", str(root / "exp01"))
best = next((root / "exp01" / "0").glob("epoch_3.ckpt"))
run("eval", "--checkpoint", str(best), "--manifest", manifest, "--cache-dir", cache, "--n-points", "64",
    "--gallery-index", str(root / "gallery.idx"))
run("size-sweep", "--preset", "exp01", "--manifest", manifest, "--cache-dir", cache, "--seed", "0",
    "--fractions", "0.5,1.0", "--draws", "1", "--out", str(root / "sweep"), *sets)
run("train", "--preset", "exp01", "--set", "train.epochs=0", "--explain")  # invalid config -> exit 1
