"""Point-cloud encoders and the Siamese / heterogeneous retrieval model.

Two families map a normalized ``(n, 3)`` cloud to a unit-norm embedding:

* ``set_abstraction``: hierarchical farthest-point centroids, radius-bounded
  neighbourhoods, shared per-point MLPs and max pooling.
* ``dynamic_graph``: edge convolutions over a kNN graph recomputed in feature
  space at every layer.

Input points are put in lexicographic order first. Every tie-break further
down (FPS, ball query, kNN) is by index, so the output does not depend on the
order the points arrive in.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .utils import dataclass_from_dict, to_plain

logger = logging.getLogger(__name__)

ENCODER_FAMILIES = ("set_abstraction", "dynamic_graph")
ARCHITECTURES = ("siamese", "heterogeneous")
MODALITIES = ("sketch", "shape")


class CheckpointError(RuntimeError):
    """A checkpoint is missing or does not fit the requested model."""


@dataclass
class ModelConfig:
    encoder_family: str = "set_abstraction"
    architecture: str = "siamese"
    embedding_dim: int = 512
    n_points: int = 1024
    # (centroids, radius, neighbours, widths) per set-abstraction level
    sa_levels: list = field(default_factory=lambda: [
        [512, 0.2, 32, [64, 64, 128]],
        [128, 0.4, 64, [128, 128, 256]],
    ])
    sa_global_widths: list = field(default_factory=lambda: [256, 512, 1024])
    dg_k: int = 20
    dg_widths: list = field(default_factory=lambda: [64, 64, 128, 256])
    dg_global_width: int = 1024
    head_widths: list = field(default_factory=lambda: [512])
    norm: str = "batch"

    def __post_init__(self):
        if self.encoder_family not in ENCODER_FAMILIES:
            raise ValueError(f"encoder_family must be one of {ENCODER_FAMILIES}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.norm not in ("batch", "none"):
            raise ValueError("norm must be 'batch' or 'none'")
        if self.embedding_dim < 1 or self.n_points < 1:
            raise ValueError("embedding_dim and n_points must be positive")
        if self.encoder_family == "set_abstraction" and self.sa_levels:
            if self.sa_levels[0][0] > self.n_points:
                raise ValueError("first set-abstraction level has more centroids than input points")
        if self.encoder_family == "dynamic_graph" and self.dg_k >= self.n_points:
            raise ValueError("dg_k must be smaller than n_points")


# --------------------------------------------------------------------------- ops


def canonical_order(xyz: torch.Tensor) -> torch.Tensor:
    """Per-cloud permutation sorting points by (x, y, z)."""
    b, n, _ = xyz.shape
    idx = torch.arange(n, device=xyz.device).expand(b, n)
    for c in (2, 1, 0):
        key = torch.gather(xyz[..., c], 1, idx)
        idx = torch.gather(idx, 1, torch.sort(key, dim=1, stable=True).indices)
    return idx


def gather_points(points: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """``points`` (B, N, C) indexed by ``idx`` (B, ...) -> (B, ..., C)."""
    b = points.shape[0]
    flat = idx.reshape(b, -1)
    out = torch.gather(points, 1, flat.unsqueeze(-1).expand(-1, -1, points.shape[-1]))
    return out.reshape(*idx.shape, points.shape[-1])


@torch.no_grad()
def batched_fps(xyz: torch.Tensor, k: int) -> torch.Tensor:
    """Farthest-point indices (B, k). Seeded at the point farthest from the
    centroid; exact ties go to the lowest index."""
    b, n, _ = xyz.shape
    if not 1 <= k <= n:
        raise ValueError(f"cannot pick {k} centroids from {n} points")
    rows = torch.arange(b, device=xyz.device)
    out = torch.empty(b, k, dtype=torch.long, device=xyz.device)
    dist = ((xyz - xyz.mean(1, keepdim=True)) ** 2).sum(-1)
    out[:, 0] = torch.argmax(dist, dim=1)
    mindist = ((xyz - xyz[rows, out[:, 0]][:, None]) ** 2).sum(-1)
    chosen = torch.zeros(b, n, dtype=torch.bool, device=xyz.device)
    chosen[rows, out[:, 0]] = True
    for i in range(1, k):
        nxt = torch.argmax(mindist.masked_fill(chosen, -1.0), dim=1)
        out[:, i] = nxt
        chosen[rows, nxt] = True
        mindist = torch.minimum(mindist, ((xyz - xyz[rows, nxt][:, None]) ** 2).sum(-1))
    return out


@torch.no_grad()
def ball_group(xyz: torch.Tensor, centers: torch.Tensor, radius: float, k: int) -> torch.Tensor:
    """(B, S, k) indices of the nearest points within ``radius`` of each
    center; short groups are padded with the nearest point."""
    sqd = ((centers[:, :, None, :] - xyz[:, None, :, :]) ** 2).sum(-1)
    k = min(k, xyz.shape[1])
    vals, idx = torch.sort(sqd, dim=-1, stable=True)
    vals, idx = vals[..., :k], idx[..., :k]
    return torch.where(vals > radius * radius, idx[..., :1], idx)


@torch.no_grad()
def feature_knn(x: torch.Tensor, k: int) -> torch.Tensor:
    """(B, N, k) nearest neighbours in feature space, self excluded."""
    n = x.shape[1]
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    sqd = ((x[:, :, None, :] - x[:, None, :, :]) ** 2).sum(-1)
    sqd.diagonal(dim1=1, dim2=2).fill_(float("inf"))
    return torch.sort(sqd, dim=-1, stable=True).indices[..., :k]


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Row-wise unit norm. All-zero rows become the first basis vector."""
    norm = x.norm(dim=-1, keepdim=True)
    zero = norm <= eps
    if bool(zero.any()):
        warnings.warn("zero embedding before normalization; substituting a fixed unit vector",
                      RuntimeWarning, stacklevel=2)
        basis = torch.zeros_like(x)
        basis[..., 0] = 1.0
        return torch.where(zero, basis, x / norm.clamp_min(eps))
    return x / norm


class PointNorm(nn.Module):
    """BatchNorm over the channel (last) axis of an arbitrary-rank tensor."""

    def __init__(self, channels: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(channels)

    def forward(self, x):
        shape = x.shape
        return self.bn(x.reshape(-1, shape[-1])).reshape(shape)


def shared_mlp(widths, norm: str, act: str = "relu") -> nn.Sequential:
    layers = []
    for c_in, c_out in zip(widths[:-1], widths[1:]):
        layers.append(nn.Linear(c_in, c_out, bias=norm == "none"))
        if norm == "batch":
            layers.append(PointNorm(c_out))
        layers.append(nn.ReLU() if act == "relu" else nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def projection_head(c_in: int, widths, dim: int, norm: str) -> nn.Sequential:
    seq = shared_mlp([c_in, *widths], norm)
    seq.append(nn.Linear(widths[-1] if widths else c_in, dim))
    return seq


# ---------------------------------------------------------------------- encoders


class SetAbstractionEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.levels = [(int(s), float(r), int(k)) for s, r, k, _ in config.sa_levels]
        self.mlps = nn.ModuleList()
        c = 0
        for _, _, _, widths in config.sa_levels:
            self.mlps.append(shared_mlp([c + 3, *widths], config.norm))
            c = widths[-1]
        self.global_mlp = shared_mlp([c + 3, *config.sa_global_widths], config.norm)
        self.head = projection_head(config.sa_global_widths[-1], config.head_widths,
                                    config.embedding_dim, config.norm)

    def forward(self, xyz: torch.Tensor) -> torch.Tensor:
        if self.levels and xyz.shape[1] < self.levels[0][0]:
            raise ValueError(f"{xyz.shape[1]} points cannot feed {self.levels[0][0]} centroids")
        xyz = gather_points(xyz, canonical_order(xyz))
        feats = None
        for (s, radius, k), mlp in zip(self.levels, self.mlps):
            centers_idx = batched_fps(xyz.detach(), s)
            centers = gather_points(xyz, centers_idx)
            group = ball_group(xyz.detach(), centers.detach(), radius, k)
            local = gather_points(xyz, group) - centers[:, :, None, :]
            if feats is not None:
                local = torch.cat([local, gather_points(feats, group)], dim=-1)
            feats = mlp(local).max(dim=2).values
            xyz = centers
        glob = xyz if feats is None else torch.cat([xyz, feats], dim=-1)
        pooled = self.global_mlp(glob).max(dim=1).values
        return l2_normalize(self.head(pooled))


class DynamicGraphEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.k = config.dg_k
        self.edge_mlps = nn.ModuleList()
        c = 3
        for w in config.dg_widths:
            self.edge_mlps.append(shared_mlp([2 * c, w], config.norm, act="leaky"))
            c = w
        self.fuse = shared_mlp([sum(config.dg_widths), config.dg_global_width], config.norm, act="leaky")
        self.head = projection_head(config.dg_global_width, config.head_widths,
                                    config.embedding_dim, config.norm)

    def edge_conv(self, x: torch.Tensor, mlp: nn.Module) -> torch.Tensor:
        nbr = gather_points(x, feature_knn(x.detach(), self.k))
        center = x[:, :, None, :].expand_as(nbr)
        return mlp(torch.cat([center, nbr - center], dim=-1)).max(dim=2).values

    def forward(self, xyz: torch.Tensor) -> torch.Tensor:
        if self.k >= xyz.shape[1]:
            raise ValueError(f"k={self.k} needs more than {xyz.shape[1]} points")
        x = gather_points(xyz, canonical_order(xyz))
        outs = []
        for mlp in self.edge_mlps:
            x = self.edge_conv(x, mlp)
            outs.append(x)
        pooled = self.fuse(torch.cat(outs, dim=-1)).max(dim=1).values
        return l2_normalize(self.head(pooled))


def build_encoder(config: ModelConfig) -> nn.Module:
    if config.encoder_family == "set_abstraction":
        return SetAbstractionEncoder(config)
    return DynamicGraphEncoder(config)


class RetrievalModel(nn.Module):
    """One shared encoder (siamese) or one encoder per modality (heterogeneous)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.architecture == "siamese":
            self.encoders = nn.ModuleDict({"shared": build_encoder(config)})
        else:
            self.encoders = nn.ModuleDict({m: build_encoder(config) for m in MODALITIES})

    def encoder_for(self, modality: str) -> nn.Module:
        if modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
        if self.config.architecture == "siamese":
            return self.encoders["shared"]
        return self.encoders[modality]

    def forward(self, points: torch.Tensor, modality: str) -> torch.Tensor:
        if points.shape[-2] != self.config.n_points:
            raise ValueError(f"model expects {self.config.n_points} points, got {points.shape[-2]}")
        return self.encoder_for(modality)(points)

    def embed_pairs(self, sketches: torch.Tensor, shapes: torch.Tensor):
        if self.config.architecture == "siamese":
            both = self(torch.cat([sketches, shapes], dim=0), "sketch")
            return both[: len(sketches)], both[len(sketches):]
        return self(sketches, "sketch"), self(shapes, "shape")


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def encode_batch(model: RetrievalModel, clouds, modality: str, batch_size: int = 32) -> np.ndarray:
    """Embed an ``(M, n, 3)`` stack of clouds in eval mode."""
    clouds = np.asarray(clouds)
    if clouds.ndim != 3 or clouds.shape[-1] != 3:
        raise ValueError(f"expected (M, n, 3) clouds, got shape {clouds.shape}")
    was_training = model.training
    model.eval()
    try:
        dtype = _model_dtype(model)
        out = [model(torch.as_tensor(clouds[i:i + batch_size], dtype=dtype), modality).cpu().numpy()
               for i in range(0, len(clouds), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.embedding_dim))


def encode(model: RetrievalModel, cloud, modality: str) -> np.ndarray:
    cloud = np.asarray(cloud)
    if cloud.ndim != 2 or len(cloud) != model.config.n_points:
        raise ValueError(f"model expects a ({model.config.n_points}, 3) cloud, got {cloud.shape}")
    return encode_batch(model, cloud[None], modality)[0]


def model_fingerprint(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:32]


# ------------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: RetrievalModel, epoch: int, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": to_plain(model.config),
        "state_dict": model.state_dict(),
        "epoch": int(epoch),
        "fingerprint": model_fingerprint(model),
        "rng": {"torch": torch.get_rng_state()},
    }
    payload.update(extra or {})
    torch.save(payload, path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return torch.load(path, map_location="cpu", weights_only=False)


def load_model(checkpoint) -> RetrievalModel:
    payload = checkpoint if isinstance(checkpoint, dict) else read_checkpoint(checkpoint)
    config = dataclass_from_dict(ModelConfig, payload["config"], "checkpoint model config")
    model = RetrievalModel(config)
    dtype = next(iter(payload["state_dict"].values())).dtype
    model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    return model


def clone_for_heterogeneous(siamese_checkpoint, expected: ModelConfig | None = None) -> RetrievalModel:
    """Heterogeneous model whose sketch and shape branches both start as copies
    of a Siamese checkpoint's shared encoder."""
    donor = load_model(siamese_checkpoint)
    if donor.config.architecture != "siamese":
        raise CheckpointError("donor checkpoint is not a Siamese model")
    config = copy.deepcopy(donor.config)
    config.architecture = "heterogeneous"
    if expected is not None:
        want = to_plain(expected)
        have = to_plain(config)
        diff = [k for k in want if k != "architecture" and want[k] != have[k]]
        if diff:
            raise CheckpointError(f"donor checkpoint differs from model config in: {', '.join(diff)}")
    model = RetrievalModel(config).to(_model_dtype(donor))
    shared = donor.encoders["shared"].state_dict()
    for m in MODALITIES:
        model.encoders[m].load_state_dict(shared)
    return model

