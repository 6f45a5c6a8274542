"""Point-cloud primitives: normalization, deterministic sampling, neighbourhoods.

Clouds are plain ``(N, 3)`` float arrays. Every routine here is a pure function;
randomness, where needed, comes in as an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_N_POINTS = 1024
NORMALIZE_TOL = 1e-6


class DegenerateInputError(ValueError):
    """Raised when an input has no usable geometric extent."""


@dataclass
class Stroke:
    """One polyline of a VR sketch.

    ``points`` is ``(M, 3)``, ``times`` is ``(M,)`` in seconds and ``width`` is
    the line width in scene units.
    """

    points: np.ndarray
    times: np.ndarray
    width: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if len(self.points) < 2:
            raise ValueError("a stroke needs at least 2 points")
        if len(self.times) != len(self.points):
            raise ValueError("stroke times and points differ in length")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("stroke timestamps must be non-decreasing")
        if not self.width > 0:
            raise ValueError(f"stroke width must be positive, got {self.width}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("stroke coordinates must be finite")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass
class Sketch:
    strokes: list[Stroke] = field(default_factory=list)

    def all_points(self) -> np.ndarray:
        if not self.strokes:
            return np.zeros((0, 3))
        return np.concatenate([s.points for s in self.strokes], axis=0)


@dataclass
class ShapeMesh:
    """Triangle mesh. ``faces`` index into ``vertices``."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def cleaned(self, eps: float = 1e-12) -> "ShapeMesh":
        """Copy without zero-area triangles."""
        keep = self.face_areas() > eps
        return ShapeMesh(self.vertices, self.faces[keep])


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {cloud.shape}")
    if len(cloud) == 0:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(cloud)):
        raise ValueError("point cloud has non-finite coordinates")
    return cloud


def is_normalized(cloud: np.ndarray, tol: float = NORMALIZE_TOL) -> bool:
    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    return bool(np.all(np.abs(0.5 * (lo + hi)) <= tol) and abs((hi - lo).max() - 1.0) <= tol)


def normalize_cloud(cloud) -> np.ndarray:
    """Center on the bounding-box midpoint and scale isotropically so the
    largest axis extent is 1."""
    cloud = as_cloud(cloud)
    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    extent = (hi - lo).max()
    if not extent > 0:
        raise DegenerateInputError("all points coincide; cannot normalize")
    return (cloud - 0.5 * (lo + hi)) / extent


def lexicographic_rank(cloud: np.ndarray) -> np.ndarray:
    """Rank of every point in (x, y, z) lexicographic order, index breaking ties."""
    order = np.lexsort((np.arange(len(cloud)), cloud[:, 2], cloud[:, 1], cloud[:, 0]))
    rank = np.empty(len(cloud), dtype=np.int64)
    rank[order] = np.arange(len(cloud))
    return rank


def _argmax_lex(values: np.ndarray, rank: np.ndarray) -> int:
    best = values == values.max()
    return int(np.argmin(np.where(best, rank, len(rank))))


def farthest_point_sample(cloud, k: int) -> np.ndarray:
    """Greedy farthest-point subset of ``k`` indices, in visiting order.

    The seed is the point farthest from the centroid. Exact distance ties go
    to the lexicographically smallest coordinate, so the selected set does not
    depend on the input order.
    """
    cloud = as_cloud(cloud)
    n = len(cloud)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rank = lexicographic_rank(cloud)
    selected = np.empty(k, dtype=np.int64)
    dist = np.sum((cloud - cloud.mean(axis=0)) ** 2, axis=1)
    selected[0] = _argmax_lex(dist, rank)
    mindist = np.sum((cloud - cloud[selected[0]]) ** 2, axis=1)
    for i in range(1, k):
        # already-chosen points sit at distance 0; mask them so duplicates of
        # selected points are not re-picked before genuinely new points
        masked = mindist.copy()
        masked[selected[:i]] = -1.0
        selected[i] = _argmax_lex(masked, rank)
        np.minimum(mindist, np.sum((cloud - cloud[selected[i]]) ** 2, axis=1), out=mindist)
    return selected


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def knn_indices(cloud, k: int) -> np.ndarray:
    """``(N, k)`` table of each point's nearest neighbours, self excluded.

    Ties are broken by lexicographic coordinate order, then by index.
    """
    cloud = as_cloud(cloud)
    n = len(cloud)
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    d = pairwise_sq_dists(cloud, cloud)
    np.fill_diagonal(d, np.inf)
    rank = lexicographic_rank(cloud)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        out[i] = np.lexsort((rank, d[i]))[:k]
    return out


def drop_degenerate_strokes(sketch: Sketch) -> Sketch:
    kept = [s for s in sketch.strokes if s.length > 0]
    if len(kept) < len(sketch.strokes):
        logger.warning("dropped %d zero-length stroke(s)", len(sketch.strokes) - len(kept))
    return Sketch(kept)


def allocate_by_length(lengths, total: int, minimum: int = 2) -> np.ndarray:
    """Split ``total`` samples across strokes in proportion to their lengths
    (largest remainder), with at least ``minimum`` per stroke."""
    lengths = np.asarray(lengths, dtype=np.float64)
    total = max(total, minimum * len(lengths))
    spare = total - minimum * len(lengths)
    share = spare * lengths / lengths.sum()
    counts = np.floor(share).astype(np.int64)
    leftover = spare - counts.sum()
    if leftover:
        order = np.argsort(-(share - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts + minimum


def resample_polyline(points: np.ndarray, m: int) -> np.ndarray:
    """``m`` points evenly spaced by arc length, endpoints included."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arclen[-1], m)
    return np.stack([np.interp(targets, arclen, points[:, j]) for j in range(3)], axis=1)


def resample_strokes(sketch: Sketch, total: int) -> list[np.ndarray]:
    strokes = drop_degenerate_strokes(sketch).strokes
    if not strokes:
        raise DegenerateInputError("sketch has no stroke of positive length")
    counts = allocate_by_length([s.length for s in strokes], total)
    return [resample_polyline(s.points, int(m)) for s, m in zip(strokes, counts)]


def sample_sketch_cloud(sketch: Sketch, n: int = DEFAULT_N_POINTS, oversample: float = 1.0) -> np.ndarray:
    """Arc-length resample all strokes, reduce to ``n`` points by FPS, normalize."""
    if not sketch.strokes:
        raise ValueError("sketch has no strokes")
    raw = np.concatenate(resample_strokes(sketch, int(np.ceil(n * oversample))), axis=0)
    if len(raw) > n:
        raw = raw[farthest_point_sample(raw, n)]
    return normalize_cloud(raw)


def sample_mesh_surface(mesh: ShapeMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    mesh = mesh.cleaned()
    if len(mesh.faces) == 0:
        raise DegenerateInputError("mesh has no non-degenerate triangle")
    areas = mesh.face_areas()
    face = rng.choice(len(areas), size=count, p=areas / areas.sum())
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[face]]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def sample_mesh_cloud(mesh: ShapeMesh, n: int = DEFAULT_N_POINTS,
                      rng: np.random.Generator | None = None, candidates_per_point: int = 4) -> np.ndarray:
    rng = np.random.default_rng(0) if rng is None else rng
    raw = sample_mesh_surface(mesh, candidates_per_point * n, rng)
    return normalize_cloud(raw[farthest_point_sample(raw, n)])


def fit_cloud_size(cloud, n: int, rng: np.random.Generator) -> np.ndarray:
    """Bring a precomputed cloud to exactly ``n`` points (FPS down, seeded
    duplication up)."""
    cloud = as_cloud(cloud)
    if len(cloud) > n:
        return cloud[farthest_point_sample(cloud, n)]
    if len(cloud) < n:
        extra = rng.choice(len(cloud), size=n - len(cloud), replace=True)
        return np.concatenate([cloud, cloud[extra]], axis=0)
    return cloud


def euler_rotation(degrees) -> np.ndarray:
    """Rotation matrix applying x, then y, then z rotations (degrees)."""
    rx, ry, rz = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    return axis_rotation("z", rz) @ axis_rotation("y", ry) @ axis_rotation("x", rx)


def axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError(f"unknown axis {axis!r}")
