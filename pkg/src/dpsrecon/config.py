"""Run configuration: JSON file + CLI overrides -> validated RunConfig."""

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import jsonschema

from .degrade import DegradationProfile
from .loss import LossConfig
from .model import ModelConfig
from .stft import MODEL_STFT


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "dpsrecon run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "corpus": {"type": ["string", "null"], "description": "directory of mono WAV files (read-only)"},
        "workdir": {"type": "string", "description": "output directory for pairs, checkpoints, reports"},
        "seed": {"type": "integer"},
        "profile": {"type": "object", "description": "DegradationProfile fields"},
        "model": {"type": "object", "description": "ModelConfig fields"},
        "loss": {"type": "object", "description": "LossConfig fields"},
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["adam"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "betas": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "batch_size": {"type": "integer", "minimum": 1},
        "max_steps": {"type": "integer", "minimum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 1},
        "log_every": {"type": "integer", "minimum": 1},
        "valid_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "test_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "test_speakers": {"type": ["array", "null"], "items": {"type": "string"}},
        "externals": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"pesq": {"type": "string"}, "nisqa": {"type": "string"}},
        },
        "workers": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class RunConfig:
    corpus: str = None
    workdir: str = "work"
    seed: int = None
    profile: DegradationProfile = field(default_factory=DegradationProfile)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: dict = field(default_factory=lambda: {"name": "adam", "lr": 1e-4, "betas": [0.9, 0.999]})
    batch_size: int = 4
    max_steps: int = 2000
    checkpoint_every: int = 100
    log_every: int = 10
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    test_speakers: list = None
    externals: dict = field(default_factory=dict)
    workers: int = 1

    @property
    def data_dir(self):
        return Path(self.workdir) / "data"

    @property
    def manifest_path(self):
        return self.data_dir / "manifest.json"

    @property
    def checkpoint_dir(self):
        return Path(self.workdir) / "checkpoints"

    def to_dict(self):
        d = asdict(self)
        d["loss"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["loss"].items()}
        return d

    def freeze(self, path):
        """Write the fully resolved configuration next to a run's outputs."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _sub(cls, raw, name):
    try:
        if cls is LossConfig:
            raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
            return cls(**raw)
        return cls.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def load_config(path=None, overrides=None):
    """Merge a JSON config file with override values (None entries are ignored)."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, sub = key.partition(".")
        if sub:
            raw.setdefault(section, {})[sub] = value
        else:
            raw[key] = value
    cfg = RunConfig(
        **{k: v for k, v in raw.items() if k not in ("profile", "model", "loss")},
    )
    cfg.profile = _sub(DegradationProfile, raw.get("profile", {}), "profile")
    cfg.model = _sub(ModelConfig, raw.get("model", {}), "model")
    cfg.loss = _sub(LossConfig, raw.get("loss", {}), "loss")
    if cfg.seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    # the run seed drives both the capture simulator and weight init
    cfg.profile = replace(cfg.profile, seed=cfg.seed)
    cfg.model = replace(cfg.model, seed=cfg.seed)
    try:
        cfg.model.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc
    frames = MODEL_STFT.n_frames(cfg.profile.clip_samples)
    if cfg.model.n_freq != MODEL_STFT.n_bins - 1 or cfg.model.n_frames != frames:
        raise ConfigError(
            f"model expects {cfg.model.n_freq} x {cfg.model.n_frames} spectrograms but "
            f"{cfg.profile.clip_seconds} s clips give {MODEL_STFT.n_bins - 1} x {frames}"
        )
    return cfg
