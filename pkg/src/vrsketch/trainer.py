"""Optimization loop, checkpointing, repeated runs and model selection."""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augmentation as aug
from .augmentation import AugmentConfig
from .encoders import RetrievalModel, ModelConfig, clone_for_heterogeneous, encode_batch, save_checkpoint
from .losses import LossConfig, compute_loss
from .retrieval import GalleryIndex, accuracy_from_ranks, ground_truth_ranks
from .utils import ConfigError, to_plain

logger = logging.getLogger(__name__)

DEFAULT_BATCH = {"set_abstraction": 6, "dynamic_graph": 24}
METRIC_KEYS = ("A@1", "A@5", "A@10")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int | None = None
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = "none"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    validation_every: int = 1
    selection_metric: str = "A@1"
    deterministic: bool = False
    dtype: str = "float32"
    keep_checkpoints: str = "all"
    donor_epoch: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.validation_every < 1:
            raise ValueError("validation_every must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.schedule not in ("none", "cosine"):
            raise ValueError("schedule must be 'none' or 'cosine'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.keep_checkpoints not in ("all", "best"):
            raise ValueError("keep_checkpoints must be 'all' or 'best'")
        if self.selection_metric != "A@1":
            raise ValueError("only A@1 model selection is supported")

    def batch_for(self, family: str) -> int:
        return self.batch_size or DEFAULT_BATCH[family]

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class TrainingData:
    """In-memory clouds for one experiment.

    Validation sketches are ranked against ``gallery_shapes``; ``val_gt``
    holds each validation sketch's shape id.
    """

    train_sketches: np.ndarray
    train_shapes: np.ndarray
    val_sketches: np.ndarray
    val_gt: list
    gallery_shapes: np.ndarray
    gallery_ids: list
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.train_sketches) == 0 or len(self.val_sketches) == 0:
            raise ValueError("training data needs non-empty train and val splits")
        if len(self.train_sketches) != len(self.train_shapes):
            raise ValueError("train sketches and shapes differ in count")


@dataclass
class RunRecord:
    seed: int
    losses: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    run_dir: str | None = None

    def checkpoint_at(self, epoch: int) -> str | None:
        for v in self.validations:
            if v["epoch"] == epoch:
                return v.get("checkpoint")
        return None


@contextlib.contextmanager
def execution_mode(deterministic: bool):
    if not deterministic:
        yield
        return
    prev_alg = torch.are_deterministic_algorithms_enabled()
    prev_threads = torch.get_num_threads()
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev_alg)
        torch.set_num_threads(prev_threads)


def validate(model: RetrievalModel, data: TrainingData) -> dict:
    gallery = GalleryIndex(tuple(data.gallery_ids), encode_batch(model, data.gallery_shapes, "shape"), "")
    queries = encode_batch(model, data.val_sketches, "sketch")
    return accuracy_from_ranks(ground_truth_ranks(gallery, queries, data.val_gt), (1, 5, 10))


def _make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=0.9,
                           weight_decay=cfg.weight_decay)


def _run(model: RetrievalModel, seed: int, train_config: TrainConfig, data: TrainingData,
         augment_config: AugmentConfig, loss_config: LossConfig, run_dir: Path | None) -> RunRecord:
    cfg = train_config
    dtype = cfg.torch_dtype
    batch = cfg.batch_for(model.config.encoder_family)
    shuffle_gen = torch.Generator().manual_seed(seed)
    loss_gen = torch.Generator().manual_seed(seed + 7919)
    aug_rng = np.random.default_rng([seed, 0xA06])
    optimizer = _make_optimizer(model, cfg)
    scheduler = (torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, cfg.epochs)
                 if cfg.schedule == "cosine" else None)
    record = RunRecord(seed=seed, run_dir=None if run_dir is None else str(run_dir))
    log = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log = (run_dir / "metrics.jsonl").open("w", encoding="utf-8")
    best = -math.inf

    def checkpoint(epoch: int, metrics: dict):
        nonlocal best
        entry = {"epoch": epoch, **metrics, "checkpoint": None}
        if run_dir is not None:
            keep = (cfg.keep_checkpoints == "all" or metrics["A@1"] > best
                    or epoch == cfg.donor_epoch)
            if keep:
                path = run_dir / f"epoch_{epoch}.ckpt"
                save_checkpoint(path, model, epoch, {"seed": seed, "metrics": metrics,
                                                     "rng": {"torch": shuffle_gen.get_state(),
                                                             "numpy": aug_rng.bit_generator.state}})
                entry["checkpoint"] = str(path)
        best = max(best, metrics["A@1"])
        record.validations.append(entry)
        return entry

    def write_log(epoch, loss, metrics):
        if log is not None:
            row = {"epoch": epoch, "loss": loss, **{k: metrics.get(k) for k in METRIC_KEYS}, "seed": seed}
            log.write(json.dumps(row) + "\n")
            log.flush()

    try:
        metrics0 = validate(model, data)
        checkpoint(0, metrics0)
        write_log(0, None, metrics0)
        n = len(data.train_sketches)
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            perm = torch.randperm(n, generator=shuffle_gen).numpy()
            total, steps = 0.0, 0
            for start in range(0, n, batch):
                idx = perm[start:start + batch]
                if len(idx) < 2:
                    continue
                sk = data.train_sketches[idx]
                sh = data.train_shapes[idx]
                if augment_config.active:
                    sk = np.stack([aug.augment(c, augment_config, aug_rng) for c in sk])
                    if augment_config.apply_to_shapes:
                        sh = np.stack([aug.augment(c, augment_config, aug_rng) for c in sh])
                s, z = model.embed_pairs(torch.as_tensor(sk, dtype=dtype), torch.as_tensor(sh, dtype=dtype))
                loss = compute_loss(loss_config, s, z, loss_gen)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"seed {seed}, epoch {epoch}, step {steps}: loss became {loss.item()}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item()
                steps += 1
            if scheduler is not None:
                scheduler.step()
            epoch_loss = total / steps if steps else 0.0
            record.losses.append(epoch_loss)
            metrics = {}
            if epoch % cfg.validation_every == 0 or epoch == cfg.epochs:
                metrics = validate(model, data)
                checkpoint(epoch, metrics)
            write_log(epoch, epoch_loss, metrics)
            logger.info("seed %d epoch %d loss %.4f %s", seed, epoch, epoch_loss,
                        " ".join(f"{k}={v:.1f}" for k, v in metrics.items()))
    finally:
        if log is not None:
            log.close()
    return record


def _init_model(model_config: ModelConfig, seed: int, dtype) -> RetrievalModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return RetrievalModel(model_config).to(dtype)


def train(model_config: ModelConfig, train_config: TrainConfig, data: TrainingData,
          augment_config: AugmentConfig | None = None, loss_config: LossConfig | None = None,
          run_dir=None, init_model=None) -> list[RunRecord]:
    """One run per seed. Checkpoints and ``metrics.jsonl`` land in
    ``run_dir/<seed>/`` when ``run_dir`` is given.

    ``init_model(seed)`` may supply the starting model instead of a fresh one.
    """
    augment_config = augment_config or AugmentConfig()
    loss_config = loss_config or LossConfig()
    runs = []
    with execution_mode(train_config.deterministic):
        for seed in train_config.seeds:
            seed = int(seed)
            if init_model is None:
                model = _init_model(model_config, seed, train_config.torch_dtype)
            else:
                model = init_model(seed)
            out = None if run_dir is None else Path(run_dir) / str(seed)
            runs.append(_run(model, seed, train_config, data, augment_config, loss_config, out))
    return runs


def select_best(runs) -> tuple[int, int, str | None]:
    """``(seed, epoch, checkpoint)`` with the best validation A@1; ties go to
    higher A@5, then A@10, then the earlier epoch."""
    best_key, best = None, None
    for run in runs:
        for v in run.validations:
            key = (v["A@1"], v["A@5"], v["A@10"], -v["epoch"])
            if best_key is None or key > best_key:
                best_key, best = key, (run.seed, v["epoch"], v.get("checkpoint"))
    if best is None:
        raise ValueError("no validation points to select from")
    return best


def train_heterogeneous(siamese_runs, model_config: ModelConfig, train_config: TrainConfig,
                        data: TrainingData, augment_config: AugmentConfig | None = None,
                        loss_config: LossConfig | None = None, run_dir=None) -> list[RunRecord]:
    """Warm-start separate sketch/shape encoders from each Siamese run's
    checkpoint at ``train_config.donor_epoch`` and train them."""
    donors = {}
    for run in siamese_runs:
        ckpt = run.checkpoint_at(train_config.donor_epoch)
        if ckpt is None or not Path(ckpt).exists():
            where = f"{run.run_dir}/epoch_{train_config.donor_epoch}.ckpt" if run.run_dir else \
                f"epoch_{train_config.donor_epoch}.ckpt of seed {run.seed}"
            raise ConfigError(f"heterogeneous training needs the Siamese donor checkpoint {where}")
        donors[run.seed] = ckpt
    if not donors:
        raise ConfigError("heterogeneous training needs at least one Siamese donor run")
    hetero_cfg = ModelConfig(**{**to_plain(model_config), "architecture": "heterogeneous"})
    seeds = list(donors)
    cfg = TrainConfig(**{**to_plain(train_config), "seeds": seeds})

    def init(seed):
        return clone_for_heterogeneous(donors[seed], hetero_cfg).to(cfg.torch_dtype)

    return train(hetero_cfg, cfg, data, augment_config, loss_config, run_dir, init_model=init)


def load_runs(runs_dir) -> list[RunRecord]:
    """Rebuild run records from ``<runs_dir>/<seed>/metrics.jsonl`` files."""
    runs = []
    for log in sorted(Path(runs_dir).glob("*/metrics.jsonl")):
        seed_dir = log.parent
        run = RunRecord(seed=int(seed_dir.name) if seed_dir.name.isdigit() else seed_dir.name,
                        run_dir=str(seed_dir))
        for line in log.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            if row["loss"] is not None:
                run.losses.append(row["loss"])
            if row.get("A@1") is not None:
                ckpt = seed_dir / f"epoch_{row['epoch']}.ckpt"
                run.validations.append({"epoch": row["epoch"], **{k: row[k] for k in METRIC_KEYS},
                                        "checkpoint": str(ckpt) if ckpt.exists() else None})
        runs.append(run)
    return runs
