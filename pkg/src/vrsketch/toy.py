"""Procedural box chairs with matching sparse sketches.

Used by the demos and the test suite to exercise the full pipeline without
the released dataset. A chair is a seat, a backrest and four legs; its sketch
traces the box edges with hand-like jitter.
"""

from __future__ import annotations

from itertools import product
from pathlib import Path

import numpy as np

from .dataset import ManifestRecord, write_manifest
from .geometry import ShapeMesh, Sketch, Stroke
from .io import write_obj, write_sketch_json

_BOX_FACES = np.array([
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
    [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
])
_BOX_EDGES = [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3), (2, 6), (3, 7), (4, 5), (4, 6), (5, 7), (6, 7)]


def box_corners(lo, hi) -> np.ndarray:
    return np.array([[hi[0] if i else lo[0], hi[1] if j else lo[1], hi[2] if k else lo[2]]
                     for i, j, k in product((0, 1), repeat=3)], dtype=np.float64)


def chair_boxes(rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    width = rng.uniform(0.4, 0.9)
    depth = rng.uniform(0.4, 0.8)
    seat_h = rng.uniform(0.3, 0.6)
    seat_t = rng.uniform(0.03, 0.12)
    back_h = rng.uniform(0.2, 0.8)
    back_t = rng.uniform(0.03, 0.15)
    leg = rng.uniform(0.03, 0.1)
    inset = rng.uniform(0.0, 0.1)
    boxes = [
        (np.array([0, 0, seat_h]), np.array([width, depth, seat_h + seat_t])),
        (np.array([0, depth - back_t, seat_h + seat_t]), np.array([width, depth, seat_h + seat_t + back_h])),
    ]
    for x0, y0 in product((inset, width - inset - leg), (inset, depth - inset - leg)):
        boxes.append((np.array([x0, y0, 0.0]), np.array([x0 + leg, y0 + leg, seat_h])))
    if rng.random() < 0.5:
        arm_h = rng.uniform(0.1, 0.3)
        for x0 in (0.0, width - leg):
            boxes.append((np.array([x0, 0.0, seat_h + seat_t + arm_h]),
                          np.array([x0 + leg, depth, seat_h + seat_t + arm_h + leg])))
    return boxes


def boxes_to_mesh(boxes) -> ShapeMesh:
    verts, faces = [], []
    for i, (lo, hi) in enumerate(boxes):
        verts.append(box_corners(lo, hi))
        faces.append(_BOX_FACES + 8 * i)
    return ShapeMesh(np.concatenate(verts), np.concatenate(faces))


def boxes_to_sketch(boxes, rng: np.random.Generator, jitter: float = 0.01,
                    keep_edges: float = 0.8, points_per_stroke: int = 8) -> Sketch:
    strokes = []
    t = 0.0
    for lo, hi in boxes:
        corners = box_corners(lo, hi)
        for a, b in _BOX_EDGES:
            if rng.random() > keep_edges:
                continue
            u = np.linspace(0, 1, points_per_stroke)[:, None]
            pts = corners[a] + u * (corners[b] - corners[a])
            pts = pts + rng.normal(scale=jitter, size=pts.shape)
            times = t + np.linspace(0, 0.5, points_per_stroke)
            t = times[-1] + 0.2
            strokes.append(Stroke(pts, times, width=float(rng.uniform(0.002, 0.01))))
    if not strokes:
        lo, hi = boxes[0]
        c = box_corners(lo, hi)
        strokes.append(Stroke(np.stack([c[0], c[7]]), np.array([0.0, 0.5]), 0.005))
    return Sketch(strokes)


def make_toy_chair(seed: int, sketch_seed: int | None = None, jitter: float = 0.01):
    """``(sketch, mesh)`` for one procedural chair."""
    boxes = chair_boxes(np.random.default_rng(seed))
    srng = np.random.default_rng(seed + 1_000_003 if sketch_seed is None else sketch_seed)
    return boxes_to_sketch(boxes, srng, jitter=jitter), boxes_to_mesh(boxes)


def write_toy_dataset(root, n_participants: int = 6, sketches_per_participant: int = 10,
                      n_group_b: int = 1, gallery_extra: int = 5, seed: int = 0) -> Path:
    """Write a small dataset (sketch JSON, OBJ shapes, manifest.csv) under
    ``root`` and return the manifest path. Splits are all ``train`` except the
    ``gallery_only`` extras; run ``make_splits`` to assign them."""
    root = Path(root)
    (root / "sketches").mkdir(parents=True, exist_ok=True)
    (root / "shapes").mkdir(parents=True, exist_ok=True)
    records = []
    shape_no = 0
    for p in range(n_participants):
        group = "B" if p < n_group_b else "A"
        for _ in range(sketches_per_participant):
            sid = f"chair{shape_no:04d}"
            sketch, mesh = make_toy_chair(seed * 100_000 + shape_no)
            pair_id = f"p{p:02d}_{sid}"
            write_sketch_json(root / "sketches" / f"{pair_id}.json", sketch)
            write_obj(root / "shapes" / f"{sid}.obj", mesh)
            records.append(ManifestRecord(pair_id, f"P{p:02d}", group, "train",
                                          root / "sketches" / f"{pair_id}.json",
                                          root / "shapes" / f"{sid}.obj"))
            shape_no += 1
    for _ in range(gallery_extra):
        sid = f"chair{shape_no:04d}"
        _, mesh = make_toy_chair(seed * 100_000 + shape_no)
        write_obj(root / "shapes" / f"{sid}.obj", mesh)
        records.append(ManifestRecord(f"gallery_{sid}", "", "A", "gallery_only", None,
                                      root / "shapes" / f"{sid}.obj"))
        shape_no += 1
    manifest = root / "manifest.csv"
    write_manifest(manifest, records)
    return manifest
