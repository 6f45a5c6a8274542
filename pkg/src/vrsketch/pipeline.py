"""End-to-end experiment plumbing shared by the CLI and the demos."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augmentation import compose_training_set
from .config import RunConfig
from .dataset import (DatasetSnapshot, ManifestRecord, draw_heldout_participants, load_manifest,
                      load_record_sketch, load_shape_cloud, make_splits)
from .encoders import encode_batch, load_model, read_checkpoint
from .io import FormatError
from .retrieval import StaleIndexError, build_gallery, load_index, per_group_report, retrieve_all
from .trainer import RunRecord, TrainingData, load_runs, select_best, train, train_heterogeneous
from .utils import ConfigError

logger = logging.getLogger(__name__)

SAMPLER_VERSION = "v1"
CACHE_ENV = "VRSKETCH_CACHE"


def default_cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "vrsketch"))


class CloudCache:
    """Normalized clouds on disk, keyed by (id, n_points, sampler version,
    alignment)."""

    def __init__(self, root=None, n_points: int = 1024, aligned: bool = False):
        self.root = Path(root) if root is not None else default_cache_root()
        self.n_points = n_points
        self.aligned = aligned
        self.computed = 0

    def _dir(self, kind: str) -> Path:
        sub = f"{SAMPLER_VERSION}/n{self.n_points}"
        if kind == "sketch":
            sub += "/aligned" if self.aligned else "/raw"
        return self.root / sub / kind

    @staticmethod
    def _safe(key: str) -> str:
        return "".join(c if c.isalnum() or c in "-_." else "_" for c in key)

    def _cached(self, kind: str, key: str, compute):
        path = self._dir(kind) / f"{self._safe(key)}.npy"
        if path.exists():
            return np.load(path)
        cloud = compute()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, cloud)
        tmp.replace(path)
        self.computed += 1
        return cloud

    def sketch(self, record: ManifestRecord) -> np.ndarray:
        return self._cached("sketch", record.pair_id,
                            lambda: load_record_sketch(record, self.n_points, self.aligned))

    def shape(self, record: ManifestRecord) -> np.ndarray:
        return self._cached("shape", record.shape_id,
                            lambda: load_shape_cloud(record.shape_path, self.n_points, "shape:" + record.shape_id))


def prepare(snapshot: DatasetSnapshot, cache: CloudCache) -> list[str]:
    """Fill the cache for every record; returns per-file error messages."""
    errors = []
    for rec in snapshot.records:
        try:
            if rec.sketch_path is not None:
                cache.sketch(rec)
            cache.shape(rec)
        except (FormatError, OSError, ValueError) as exc:
            errors.append(f"{rec.pair_id}: {exc}")
    return errors


def dataset_snapshot(cfg: RunConfig) -> DatasetSnapshot:
    ds = cfg.dataset
    if not ds.manifest:
        raise ConfigError("dataset.manifest is not set")
    snapshot = load_manifest(ds.manifest)
    if ds.resplit:
        heldout = ds.heldout_participants or draw_heldout_participants(
            snapshot.records, ds.heldout_count, seed=ds.split_seed)
        snapshot = make_splits(snapshot.records, heldout, seed=ds.split_seed)
        snapshot.notes.append(f"re-drawn split, held-out participants {', '.join(heldout)}")
    return snapshot


def _extra_records(cfg: RunConfig, label: str) -> list[ManifestRecord]:
    path = cfg.dataset.extra_sets.get(label)
    if path is None:
        raise ConfigError(f"dataset.extra_sets has no entry for {label!r}")
    return [r for r in load_manifest(path).records if r.split == "train"]


def training_records(cfg: RunConfig, snapshot: DatasetSnapshot) -> list[ManifestRecord]:
    """Compose the training list: human subset, then any extra set."""
    ds = cfg.dataset
    human = [r for r in snapshot.split("train") if not r.is_synthetic]
    if ds.train_fraction < 1:
        keep = int(round(ds.train_fraction * len(human)))
        pick = np.random.default_rng(ds.subset_seed).choice(len(human), size=keep, replace=False)
        human = [human[i] for i in sorted(pick)]
    if ds.train_source == "synthetic":
        human = []
    if ds.extra_train_set:
        extra = _extra_records(cfg, ds.extra_train_set)
        if ds.extra_train_count is not None:
            return compose_training_set(human, extra, seed=ds.subset_seed, count=ds.extra_train_count)
        return compose_training_set(human, extra, cfg.augment.synthetic_ratio, seed=ds.subset_seed)
    return human


def build_training_data(cfg: RunConfig, snapshot: DatasetSnapshot, cache: CloudCache) -> TrainingData:
    train_recs = training_records(cfg, snapshot)
    val_recs = snapshot.split("val")
    if not train_recs or not val_recs:
        raise ConfigError("need non-empty train and val splits")
    gallery = {}
    for r in val_recs + train_recs:
        gallery.setdefault(r.shape_id, r)
    return TrainingData(
        train_sketches=np.stack([cache.sketch(r) for r in train_recs]),
        train_shapes=np.stack([cache.shape(r) for r in train_recs]),
        val_sketches=np.stack([cache.sketch(r) for r in val_recs]),
        val_gt=[r.shape_id for r in val_recs],
        gallery_shapes=np.stack([cache.shape(r) for r in gallery.values()]),
        gallery_ids=list(gallery),
        train_ids=[r.pair_id for r in train_recs],
        val_ids=[r.pair_id for r in val_recs],
    )


def make_cache(cfg: RunConfig) -> CloudCache:
    return CloudCache(cfg.dataset.cache_dir, cfg.dataset.n_points, cfg.dataset.aligned)


def run_experiment(cfg: RunConfig, out_dir, data: TrainingData | None = None) -> list[RunRecord]:
    """Train every seed of ``cfg`` under ``out_dir`` (heterogeneous runs first
    train Siamese donors under ``out_dir/donor``)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(cfg.dump(), encoding="utf-8")
    if data is None:
        snapshot = dataset_snapshot(cfg)
        if snapshot.notes:
            (out_dir / "dataset_notes.txt").write_text("\n".join(snapshot.notes) + "\n", encoding="utf-8")
        data = build_training_data(cfg, snapshot, make_cache(cfg))
    if cfg.model.architecture == "heterogeneous":
        donor_model = replace(cfg.model, architecture="siamese")
        donor_train = replace(cfg.train, epochs=cfg.train.donor_epoch, keep_checkpoints="best")
        donors = train(donor_model, donor_train, data, cfg.augment, cfg.loss, out_dir / "donor")
        return train_heterogeneous(donors, cfg.model, cfg.train, data, cfg.augment, cfg.loss, out_dir)
    return train(cfg.model, cfg.train, data, cfg.augment, cfg.loss, out_dir)


@dataclass
class Evaluation:
    metrics: dict
    report: dict
    results: list
    checkpoint: str
    fingerprint: str
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"checkpoint": self.checkpoint, "fingerprint": self.fingerprint,
                "metrics": self.metrics, "report": self.report, "notes": self.notes}


def gallery_records(snapshot: DatasetSnapshot) -> list[ManifestRecord]:
    wanted = set(snapshot.gallery_ids)
    out = {}
    for r in snapshot.records:
        if r.shape_id in wanted:
            out.setdefault(r.shape_id, r)
    return [out[sid] for sid in snapshot.gallery_ids]


def evaluate(checkpoint, snapshot: DatasetSnapshot, cache: CloudCache, index_path=None,
             ks=(1, 5, 10)) -> Evaluation:
    """Test sketches against the gallery (test and gallery-only shapes not
    used in train/val)."""
    payload = read_checkpoint(checkpoint)
    model = load_model(payload)
    index = None
    if index_path is not None and Path(index_path).exists():
        try:
            index = load_index(index_path, payload["fingerprint"])
        except StaleIndexError:
            logger.warning("rebuilding stale gallery index %s", index_path)
    if index is None:
        recs = gallery_records(snapshot)
        index = build_gallery(model, np.stack([cache.shape(r) for r in recs]),
                              [r.shape_id for r in recs], index_path)
    queries = snapshot.split("test")
    if not queries:
        raise ConfigError("manifest has no test records")
    emb = encode_batch(model, np.stack([cache.sketch(r) for r in queries]), "sketch")
    results = retrieve_all(index, emb, [r.pair_id for r in queries])
    report = per_group_report(results, snapshot.records, ks)
    return Evaluation(report["test"], report, results, str(checkpoint), payload["fingerprint"],
                      list(snapshot.notes))


def best_of_runs(runs_dir) -> dict:
    runs = load_runs(runs_dir)
    if not runs:
        raise ConfigError(f"no runs with metrics.jsonl under {runs_dir}")
    seed, epoch, ckpt = select_best(runs)
    val = next(v for r in runs if r.seed == seed for v in r.validations if v["epoch"] == epoch)
    return {"seed": seed, "epoch": epoch, "checkpoint": ckpt,
            "validation": {k: val[k] for k in ("A@1", "A@5", "A@10")}}


def size_sweep(cfg: RunConfig, fractions, out_dir, draws: int = 3) -> list[dict]:
    """Train on random subsets of the human training set, ``draws`` subsets per
    fraction, and evaluate each subset's best checkpoint on the test split."""
    fractions = sorted({float(f) for f in fractions})
    bad = [f for f in fractions if not 0 < f <= 1]
    if bad:
        raise ConfigError(f"fractions must lie in (0, 1], got {bad}")
    out_dir = Path(out_dir)
    snapshot = dataset_snapshot(cfg)
    cache = make_cache(cfg)
    batch = cfg.train.batch_for(cfg.model.encoder_family)
    n_train = len([r for r in snapshot.split("train") if not r.is_synthetic])
    rows = []
    for frac in fractions:
        if round(frac * n_train) < batch:
            logger.warning("fraction %.2f gives fewer than one batch (%d pairs); skipped",
                           frac, round(frac * n_train))
            continue
        for draw in range(draws):
            sub = replace(cfg, dataset=replace(cfg.dataset, train_fraction=frac, subset_seed=draw))
            run_dir = out_dir / f"frac{frac:.2f}" / f"draw{draw}"
            run_experiment(sub, run_dir, build_training_data(sub, snapshot, cache))
            best = best_of_runs(run_dir)
            ev = evaluate(best["checkpoint"], snapshot, cache)
            rows.append({"fraction": frac, "draw": draw, **best, "test": ev.metrics})
    (out_dir).mkdir(parents=True, exist_ok=True)
    (out_dir / "size_sweep.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    return rows


def summarize_sweep(rows) -> dict[float, dict]:
    """Mean test A@k per fraction."""
    out: dict[float, dict] = {}
    for frac in sorted({r["fraction"] for r in rows}):
        sel = [r["test"] for r in rows if r["fraction"] == frac]
        out[frac] = {k: float(np.mean([s[k] for s in sel])) for k in sel[0] if k.startswith("A@")}
    return out
