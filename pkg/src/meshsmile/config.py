"""Flat, namespaced run configuration.

Keys look like ``model.d`` or ``train.lr``.  Values come from the defaults
below, then an optional JSON file (flat keys or nested objects), then
command-line overrides.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .classifier import ModelConfig
from .errors import ConfigInvalid
from .synthetic import KinematicsConfig
from .training import TrainConfig

# key -> (default, help)
DEFAULTS: dict[str, tuple[Any, str]] = {
    "model.n_landmarks": (478, "landmarks per frame; replaced by the data's count when training"),
    "model.d": (64, "feature width"),
    "model.tokens": (32, "tokens after mixing the landmark axis"),
    "model.heads": (4, "attention heads; must divide model.d"),
    "model.curves": (8, "curves per grouping step"),
    "model.curve_len": (16, "steps per curve walk"),
    "model.knn": (8, "neighbours per landmark"),
    "model.tau": (1.0, "Gumbel-Softmax temperature"),
    "model.spatial_blocks": (6, "transformer blocks attending over tokens"),
    "model.temporal_blocks": (3, "transformer blocks attending over frames"),
    "model.block_order": ("sequential", "sequential | interleaved"),
    "model.attention": ("both", "both | spatial | time"),
    "model.relativity": ("curvenet", "curvenet | none"),
    "model.pool": ("mean", "mean | max global pooling in the head"),
    "model.normalize": ("frame", "frame | video | off coordinate normalization"),
    "model.dtype": ("float64", "float64 | float32"),
    "train.batch_size": (16, "clips per optimizer step"),
    "train.epochs": (300, "passes over the training videos"),
    "train.lr": (5e-4, "AdamW learning rate"),
    "train.weight_decay": (0.01, "AdamW decoupled weight decay"),
    "train.seed": (0, "root seed for every random stream"),
    "trials.count": (1, "repeated cross-validation runs"),
    "trials.reseed_folds": (False, "re-draw fold assignment per trial (else only re-initialize)"),
    "data.fps": (None, "resample rate in frames per second; null keeps the native rate"),
    "data.clip_len": (16, "frames per clip"),
    "data.folds": (10, "cross-validation folds"),
    "data.eval_clips": (5, "evaluation clips averaged per video"),
    "synth.subjects": (40, "synthetic subjects"),
    "synth.per_class": (1, "videos per subject per label"),
    "synth.n_landmarks": (68, "landmarks per synthetic face"),
    "synth.fps": (25.0, "synthetic frame rate"),
    "synth.duration_s": (5.0, "synthetic video length in seconds"),
    "synth.onset_range_spontaneous": ([0.8, 1.5], "10-90% rise time range for label 0, seconds"),
    "synth.onset_range_posed": ([0.2, 0.5], "10-90% rise time range for label 1, seconds"),
    "synth.amplitude_range": ([0.08, 0.15], "peak smile displacement range"),
    "synth.noise_sd": (0.01, "i.i.d. coordinate noise"),
    "synth.asymmetry_range": ([0.0, 0.2], "left/right amplitude imbalance range"),
    "synth.null_mode": (False, "draw both labels' onsets from one range"),
}


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key][0]
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float) or key == "data.fps":
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = json.loads(value)
            lo, hi = value
            return [float(lo), float(hi)]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{key}: cannot interpret {value!r}") from exc


def _flatten(obj: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: (list(v) if isinstance(v, list) else v) for k, (v, _) in DEFAULTS.items()})

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Defaults, then ``path`` (JSON), then ``overrides``."""
        cfg = cls.defaults()
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ConfigInvalid(f"config file not found: {path}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(data, Mapping):
                raise ConfigInvalid("config file must hold a JSON object")
            cfg.update(_flatten(data))
        if overrides:
            cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cfg

    def update(self, changes: Mapping[str, Any]) -> None:
        unknown = sorted(set(changes) - set(DEFAULTS))
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        for k, v in changes.items():
            self.values[k] = _coerce(k, v)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, prefix: str) -> dict[str, Any]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def to_json(self) -> dict[str, Any]:
        return dict(self.values)

    # typed views --------------------------------------------------------------

    def model_config(self) -> ModelConfig:
        m = self.section("model")
        m["clip_len"] = self["data.clip_len"]
        return ModelConfig(**m)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self["train.batch_size"], epochs=self["train.epochs"],
            lr=self["train.lr"], weight_decay=self["train.weight_decay"],
            clip_len=self["data.clip_len"], fps=self["data.fps"], seed=self["train.seed"],
            fold_count=self["data.folds"], trials=self["trials.count"],
            reseed_folds=self["trials.reseed_folds"], eval_clips=self["data.eval_clips"],
            model=self.model_config())

    def kinematics_config(self) -> KinematicsConfig:
        s = self.section("synth")
        null = s.pop("null_mode")
        s.pop("subjects")
        s.pop("per_class")
        names = {f.name for f in fields(KinematicsConfig)}
        kc = KinematicsConfig(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in s.items() if k in names})
        kc.validate()
        return kc.null_mode() if null else kc


def describe_defaults() -> str:
    """One line per key: name, default, meaning."""
    width = max(map(len, DEFAULTS))
    return "\n".join(f"{k:<{width}}  {json.dumps(v)!s:<14} {h}" for k, (v, h) in DEFAULTS.items())
