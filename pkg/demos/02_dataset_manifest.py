"""
Manifest, splits and pair loading
=================================

Sketch-shape pairs are listed in a CSV manifest with participant, group and
split columns. This walks through writing a toy dataset, splitting it with
held-out participants and loading aligned pairs.
"""

import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from vrsketch import dataset, toy

root = Path(tempfile.mkdtemp(prefix="vrsketch_demo_"))
manifest = toy.write_toy_dataset(root, n_participants=6, sketches_per_participant=10, n_group_b=2)
snapshot = dataset.load_manifest(manifest)
print(f"{len(snapshot.records)} records, splits {snapshot.counts()}")

# held-out participants contribute only test sketches; the rest are split
# 7:1:2 per participant, with each shape kept inside a single split
heldout = dataset.draw_heldout_participants(snapshot.records, 1, seed=0)
split = dataset.make_splits(snapshot.records, heldout, seed=0)
print("held out:", heldout, "->", split.counts())
print("test sketches per participant:", dict(Counter(r.participant_id for r in split.split("test"))))
print("gallery (test + gallery-only shapes):", len(split.gallery_ids))
for note in split.notes:
    print("note:", note)

dataset.write_manifest(root / "split.csv", split.records)

# a pair loads as two normalized clouds; alignment fixes are Euler angles
# applied to the sketch before normalization
rec = split.records[0]
fixed = dataset.ManifestRecord(**{**rec.__dict__, "alignment_fix": (0.0, 0.0, 90.0)})
raw_sketch, shape = dataset.load_pair(fixed, 256, aligned=False)
aligned_sketch, _ = dataset.load_pair(fixed, 256, aligned=True)
print("raw sketch extent    ", np.ptp(raw_sketch, axis=0).round(3))
print("aligned sketch extent", np.ptp(aligned_sketch, axis=0).round(3))

# malformed manifests list every problem at once
bad = root / "bad.csv"
bad.write_text((root / "split.csv").read_text().replace("sketches/", "missing/", 2))
try:
    dataset.load_manifest(bad)
except dataset.ManifestError as exc:
    print("manifest errors:", *exc.problems[:2], sep="\n  ")
