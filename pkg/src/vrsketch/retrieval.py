"""Gallery indexing, ranked retrieval, A@k and per-group reports."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import encode_batch, model_fingerprint

INDEX_MAGIC = b"VRSKIDX1"
_HEADER = struct.Struct("<8sII32s")


class StaleIndexError(RuntimeError):
    """The stored index was produced by a different model."""


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class GalleryIndex:
    shape_ids: tuple[str, ...]
    embeddings: np.ndarray
    fingerprint: str

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "shape_ids", tuple(self.shape_ids))
        if emb.ndim != 2 or emb.shape[0] != len(self.shape_ids):
            raise ValueError("embeddings must be a (len(shape_ids), d) matrix")
        if len(set(self.shape_ids)) != len(self.shape_ids):
            raise ValueError("gallery shape ids must be unique")
        if len(emb) and not np.allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5):
            raise ValueError("gallery embeddings must be unit-norm")
        # position of every id in sorted order, for distance tie-breaking
        order = sorted(range(len(self.shape_ids)), key=self.shape_ids.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        object.__setattr__(self, "_id_rank", rank)

    def __len__(self):
        return len(self.shape_ids)


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    shape_ids: tuple[str, ...]
    distances: np.ndarray

    def rank_of(self, shape_id: str) -> int | None:
        """1-based rank of ``shape_id``, None when it was not retrieved."""
        try:
            return self.shape_ids.index(shape_id) + 1
        except ValueError:
            return None


def build_gallery(model, shape_clouds, shape_ids, path=None, batch_size: int = 32) -> GalleryIndex:
    """Embed every gallery shape once; optionally persist the index."""
    emb = encode_batch(model, shape_clouds, "shape", batch_size)
    index = GalleryIndex(tuple(shape_ids), emb, model_fingerprint(model))
    if path is not None:
        save_index(path, index)
    return index


def save_index(path, index: GalleryIndex) -> None:
    """Header (magic, d, count, fingerprint), row-major float32 rows, then the
    newline-joined UTF-8 id list."""
    d = index.embeddings.shape[1] if len(index) else 0
    fp = index.fingerprint.encode("ascii")[:32].ljust(32, b"\0")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, d, len(index), fp))
        fh.write(np.ascontiguousarray(index.embeddings, dtype="<f4").tobytes())
        fh.write("\n".join(index.shape_ids).encode("utf-8"))


def load_index(path, expected_fingerprint: str | None = None) -> GalleryIndex:
    raw = Path(path).read_bytes()
    magic, d, count, fp = _HEADER.unpack_from(raw)
    if magic != INDEX_MAGIC:
        raise ValueError(f"{path}: not a gallery index file")
    fingerprint = fp.rstrip(b"\0").decode("ascii")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint[:32]:
        raise StaleIndexError(f"{path}: index built by model {fingerprint}, "
                              f"current model is {expected_fingerprint[:32]}")
    start = _HEADER.size
    end = start + 4 * d * count
    emb = np.frombuffer(raw[start:end], dtype="<f4").reshape(count, d).astype(np.float64)
    ids = raw[end:].decode("utf-8").split("\n") if count else []
    return GalleryIndex(tuple(ids), emb, fingerprint)


def _ranked(index: GalleryIndex, query: np.ndarray):
    dist = np.linalg.norm(index.embeddings - query[None, :], axis=1)
    return dist, np.lexsort((index._id_rank, dist))


def retrieve(index: GalleryIndex, query_embedding, k: int, query_id: str = "") -> RetrievalResult:
    """The ``k`` gallery shapes nearest the query by Euclidean distance;
    equal distances are ordered by shape id."""
    if not 1 <= k <= len(index):
        raise ValueError(f"k must be in [1, {len(index)}], got {k}")
    query = np.asarray(query_embedding, dtype=np.float64).reshape(-1)
    dist, order = _ranked(index, query)
    top = order[:k]
    return RetrievalResult(query_id, tuple(index.shape_ids[i] for i in top), dist[top])


def retrieve_all(index: GalleryIndex, query_embeddings, query_ids, k: int | None = None) -> list[RetrievalResult]:
    k = len(index) if k is None else k
    return [retrieve(index, q, k, qid) for q, qid in zip(np.asarray(query_embeddings), query_ids)]


def ground_truth_ranks(index: GalleryIndex, query_embeddings, gt_ids) -> np.ndarray:
    """1-based rank of each query's ground-truth shape in the full ranking."""
    pos = {sid: i for i, sid in enumerate(index.shape_ids)}
    ranks = np.empty(len(gt_ids), dtype=np.int64)
    for j, (q, gt) in enumerate(zip(np.asarray(query_embeddings, dtype=np.float64), gt_ids)):
        if gt not in pos:
            raise EvaluationError(f"ground-truth shape {gt!r} of query {j} is not in the gallery")
        _, order = _ranked(index, q)
        ranks[j] = int(np.nonzero(order == pos[gt])[0][0]) + 1
    return ranks


def accuracy_at_k(results, ground_truth_map: dict, k: int) -> float:
    """Percentage of queries whose ground-truth shape is among their top ``k``."""
    results = list(results)
    if not results:
        raise EvaluationError("no queries to evaluate")
    hits = 0
    for r in results:
        if r.query_id not in ground_truth_map:
            raise EvaluationError(f"no ground truth for query {r.query_id!r}")
        rank = r.rank_of(ground_truth_map[r.query_id])
        hits += rank is not None and rank <= k
    return 100.0 * hits / len(results)


def accuracy_from_ranks(ranks, ks=(1, 5, 10)) -> dict[str, float]:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvaluationError("no queries to evaluate")
    return {f"A@{k}": 100.0 * float(np.mean(ranks <= k)) for k in ks}


# ------------------------------------------------------------------ reporting

REPORT_BLOCKS = ("test", "unseen", "group_a_seen", "group_b")
BLOCK_TITLES = {
    "test": "Test set",
    "unseen": "Unseen participants (U)",
    "group_a_seen": "Group A \\ U",
    "group_b": "Group B",
}


def unseen_participants(records) -> set[str]:
    """Participants with test sketches and no train/val sketches."""
    seen = {r.participant_id for r in records if r.split in ("train", "val")}
    return {r.participant_id for r in records if r.split == "test"} - seen


def per_group_report(results, records, ks=(1, 5, 10), unseen=None) -> dict:
    """A@k on the whole test set and on the unseen-participant, remaining
    group A and group B subsets. Empty subsets map to ``None``."""
    by_pair = {r.pair_id: r for r in records}
    unseen = unseen_participants(records) if unseen is None else set(unseen)
    members = {b: [] for b in REPORT_BLOCKS}
    for res in results:
        rec = by_pair.get(res.query_id)
        if rec is None:
            raise EvaluationError(f"query {res.query_id!r} not in manifest")
        members["test"].append(res)
        if rec.participant_id in unseen:
            members["unseen"].append(res)
        elif rec.group == "A":
            members["group_a_seen"].append(res)
        if rec.group == "B":
            members["group_b"].append(res)
    gt = {pid: r.shape_id for pid, r in by_pair.items()}
    report = {}
    for block, subset in members.items():
        if not subset:
            report[block] = None
            continue
        report[block] = {"n": len(subset), **{f"A@{k}": accuracy_at_k(subset, gt, k) for k in ks}}
    return report


def format_report(report: dict, ks=(1, 5, 10)) -> str:
    cols = [f"A@{k}" for k in ks]
    lines = [f"{'block':<26}{'n':>6}" + "".join(f"{c:>8}" for c in cols)]
    for block in REPORT_BLOCKS:
        row = report.get(block)
        title = BLOCK_TITLES[block]
        if row is None:
            lines.append(f"{title:<26}{'-':>6}" + "".join(f"{'-':>8}" for _ in cols))
        else:
            lines.append(f"{title:<26}{row['n']:>6}" + "".join(f"{row[c]:>8.1f}" for c in cols))
    return "\n".join(lines)


def report_csv(report: dict, ks=(1, 5, 10)) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    cols = [f"A@{k}" for k in ks]
    writer.writerow(["block", "n", *cols])
    for block in REPORT_BLOCKS:
        row = report.get(block)
        if row is None:
            writer.writerow([block, 0, *[""] * len(cols)])
        else:
            writer.writerow([block, row["n"], *[f"{row[c]:.1f}" for c in cols]])
    return buf.getvalue()
