"""Readers and writers for the on-disk formats.

* point clouds: one ``x y z`` triple per line, UTF-8
* sketches: ``{"strokes": [{"width": w, "points": [[x, y, z, t], ...]}, ...]}``
* meshes: Wavefront OBJ, ``v`` and ``f`` records only
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import ShapeMesh, Sketch, Stroke


class FormatError(ValueError):
    """A file could not be parsed. The message always names the path."""


def read_xyz(path) -> np.ndarray:
    path = Path(path)
    rows = []
    try:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            rows.append([float(p) for p in parts])
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no points")
    cloud = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(cloud)):
        raise FormatError(f"{path}: non-finite coordinate")
    return cloud


def write_xyz(path, cloud) -> None:
    np.savetxt(path, np.asarray(cloud, dtype=np.float64), fmt="%.9g", encoding="utf-8")


def read_sketch_json(path) -> Sketch:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        strokes = []
        for i, raw in enumerate(doc["strokes"]):
            pts = np.asarray(raw["points"], dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 4:
                raise ValueError(f"stroke {i}: points must be [x, y, z, t] rows")
            strokes.append(Stroke(pts[:, :3], pts[:, 3], float(raw["width"])))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Sketch(strokes)


def write_sketch_json(path, sketch: Sketch) -> None:
    doc = {
        "strokes": [
            {"width": s.width, "points": np.column_stack([s.points, s.times]).tolist()}
            for s in sketch.strokes
        ]
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def _obj_index(token: str, n_vertices: int) -> int:
    idx = int(token.split("/")[0])
    return idx - 1 if idx > 0 else n_vertices + idx


def read_obj(path) -> ShapeMesh:
    """Vertices and faces of an OBJ file; polygons are fan-triangulated and
    zero-area triangles dropped."""
    path = Path(path)
    vertices, faces = [], []
    try:
        for lineno, line in enumerate(path.read_text(encoding="utf-8", errors="replace").splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"line {lineno}: vertex needs 3 coordinates")
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [_obj_index(p, len(vertices)) for p in parts[1:]]
                if len(idx) < 3:
                    raise ValueError(f"line {lineno}: face needs 3 vertices")
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
        mesh = ShapeMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return mesh.cleaned()


def write_obj(path, mesh: ShapeMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
