"""Run configuration files and the experiment presets.

A run config is a YAML document with sections ``dataset``, ``model``,
``loss``, ``train``, ``augment`` and ``eval`` plus ``experiment_name`` and an
optional ``preset``. Values resolve in the order: dataclass defaults, preset,
config file, command-line overrides. Unknown keys are errors.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augmentation import AugmentConfig
from .encoders import ModelConfig
from .losses import LossConfig
from .trainer import TrainConfig
from .utils import ConfigError, dataclass_from_dict, to_plain

SECTIONS = ("dataset", "model", "loss", "train", "augment", "eval")


@dataclass
class DatasetConfig:
    manifest: str | None = None
    n_points: int = 1024
    aligned: bool = False
    resplit: bool = False
    heldout_participants: list = field(default_factory=list)
    heldout_count: int = 5
    split_seed: int = 0
    train_source: str = "human"
    extra_sets: dict = field(default_factory=dict)
    extra_train_set: str | None = None
    extra_train_count: int | None = None
    train_fraction: float = 1.0
    subset_seed: int = 0
    cache_dir: str | None = None

    def __post_init__(self):
        if self.train_source not in ("human", "synthetic"):
            raise ValueError("train_source must be 'human' or 'synthetic'")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.train_source == "synthetic" and not self.extra_train_set:
            raise ValueError("train_source 'synthetic' needs extra_train_set")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [1, 5, 10])
    batch_size: int = 32


@dataclass
class RunConfig:
    experiment_name: str = "experiment"
    preset: str | None = None
    description: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return to_plain(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTION_TYPES = {
    "dataset": DatasetConfig, "model": ModelConfig, "loss": LossConfig,
    "train": TrainConfig, "augment": AugmentConfig, "eval": EvalConfig,
}

_SA = {"encoder_family": "set_abstraction"}
_DG = {"encoder_family": "dynamic_graph"}
_HET = {"architecture": "heterogeneous"}
_CL = {"kind": "contrastive"}


def _p(description, dataset=None, model=None, loss=None, train=None, augment=None):
    out = {"description": description}
    for key, value in (("dataset", dataset), ("model", model), ("loss", loss),
                       ("train", train), ("augment", augment)):
        if value:
            out[key] = value
    return out


def _t5(count):
    return _p(f"40% human sketches + {count} SS ModelNet, set-abstraction Siamese triplet",
              dataset={"train_fraction": 0.4, "extra_train_set": "ss_modelnet", "extra_train_count": count},
              model=_SA)


# Experiment ids follow the numbering of the reference ablation tables.
PRESETS: dict[str, dict] = {
    "exp01": _p("human sketches, set-abstraction, Siamese, triplet, batch 6", model=_SA),
    "exp02": _p("human sketches, set-abstraction, heterogeneous, triplet, batch 6", model={**_SA, **_HET}),
    "exp03a": _p("human sketches, dynamic-graph, Siamese, triplet, batch 6", model=_DG, train={"batch_size": 6}),
    "exp03b": _p("human sketches, dynamic-graph, Siamese, triplet, batch 24", model=_DG, train={"batch_size": 24}),
    "exp04": _p("aligned human sketches, set-abstraction, Siamese, triplet", dataset={"aligned": True}, model=_SA),
    "exp05": _p("aligned human sketches, set-abstraction, heterogeneous, triplet",
                dataset={"aligned": True}, model={**_SA, **_HET}),
    "exp06": _p("aligned human sketches, dynamic-graph, Siamese, triplet, batch 6",
                dataset={"aligned": True}, model=_DG, train={"batch_size": 6}),
    "exp07": _p("human sketches, set-abstraction, Siamese, contrastive, batch 6", model=_SA, loss=_CL),
    "exp08": _p("human sketches, dynamic-graph, Siamese, contrastive, batch 24",
                model=_DG, loss=_CL, train={"batch_size": 24}),
    "exp09": _p("702 synthetic sketches (ModelNet) only",
                dataset={"train_source": "synthetic", "extra_train_set": "ss_modelnet", "extra_train_count": 702},
                model=_SA),
    "exp10": _p("702 curve networks (ShapeNet) only",
                dataset={"train_source": "synthetic", "extra_train_set": "cn_shapenet", "extra_train_count": 702},
                model=_SA),
    "exp11": _p("702 synthetic sketches (ShapeNet) only",
                dataset={"train_source": "synthetic", "extra_train_set": "ss_shapenet", "extra_train_count": 702},
                model=_SA),
    "exp12": _p("human sketches + 702 synthetic sketches (ModelNet)",
                dataset={"extra_train_set": "ss_modelnet", "extra_train_count": 702}, model=_SA),
    "exp13": _p("aligned human sketches + 702 synthetic sketches (ModelNet)",
                dataset={"aligned": True, "extra_train_set": "ss_modelnet", "extra_train_count": 702}, model=_SA),
    "exp14": _p("human sketches + anisotropic scale distortion", model=_SA, augment={"scale_enabled": True}),
    "exp15": _p("human sketches + random vertical-axis rotation", model=_SA, augment={"rotation_enabled": True}),
    "exp16": _p("human sketches + 363 repeat human sketches of training shapes",
                dataset={"extra_train_set": "repeat_human", "extra_train_count": 363}, model=_SA),
    "exp17": _p("human sketches + 363 synthetic sketches (ShapeNet) of training shapes",
                dataset={"extra_train_set": "ss_shapenet", "extra_train_count": 363}, model=_SA),
    "t5_hs40": _p("40% human sketches only", dataset={"train_fraction": 0.4}, model=_SA),
    "t5_ss140": _t5(140),
    "t5_ss280": _t5(280),
    "t5_ss421": _t5(421),
    "t5_ss561": _t5(561),
    "t5_ss702": _t5(702),
    "t5_aug": _p("40% human sketches + anisotropic scale distortion",
                 dataset={"train_fraction": 0.4}, model=_SA, augment={"scale_enabled": True}),
}
PRESETS["exp03"] = PRESETS["exp03a"]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key in SECTIONS:
            out[key] = {**out[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """``section.key=value`` (value parsed as YAML) to a nested dict."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    value = yaml.safe_load(raw)
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"override key must be <section>.<key>, got {key!r}")
    return {parts[0]: {parts[1]: value}}


def _sync_n_points(merged: dict) -> None:
    """dataset.n_points and model.n_points must agree; either one fills the other."""
    ds = merged.setdefault("dataset", {}) or {}
    model = merged.setdefault("model", {}) or {}
    merged["dataset"], merged["model"] = ds, model
    if "n_points" in ds and "n_points" in model and ds["n_points"] != model["n_points"]:
        raise ConfigError(f"dataset.n_points={ds['n_points']} disagrees with model.n_points={model['n_points']}")
    if "n_points" in ds:
        model["n_points"] = ds["n_points"]
    elif "n_points" in model:
        ds["n_points"] = model["n_points"]


def build_config(data: dict | None = None, preset: str | None = None, overrides=()) -> RunConfig:
    """Resolve defaults, then the preset, then ``data``, then each override."""
    data = dict(data or {})
    preset = preset or data.get("preset")
    merged: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        merged = _merge(merged, PRESETS[preset])
        merged["experiment_name"] = preset
    merged = _merge(merged, data)
    for ov in overrides:
        merged = _merge(merged, ov if isinstance(ov, dict) else parse_override(ov))
    if preset:
        merged["preset"] = preset
    unknown = sorted(set(merged) - {"experiment_name", "preset", "description", *SECTIONS})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for name in SECTIONS:
        if merged.get(name) is not None and not isinstance(merged[name], dict):
            raise ConfigError(f"section {name!r} must be a mapping")
    _sync_n_points(merged)
    sections = {name: dataclass_from_dict(_SECTION_TYPES[name], merged.get(name), name) for name in SECTIONS}
    return RunConfig(experiment_name=str(merged.get("experiment_name", "experiment")),
                     preset=merged.get("preset"), description=str(merged.get("description", "")),
                     **sections)


def load_config(path=None, preset: str | None = None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        ds = data.get("dataset") or {}
        # relative data paths in a config file are relative to that file
        if isinstance(ds, dict):
            if ds.get("manifest"):
                ds["manifest"] = str((path.parent / ds["manifest"]).resolve())
            if isinstance(ds.get("extra_sets"), dict):
                ds["extra_sets"] = {k: str((path.parent / v).resolve()) for k, v in ds["extra_sets"].items()}
    return build_config(data, preset, overrides)
