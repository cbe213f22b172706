"""Run configuration: YAML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import logging
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model.config import ModelConfig
from .seqmix import MixerKind

log = logging.getLogger(__name__)

COMMANDS = ("prepare", "train", "synth", "eval", "bench")
DEFAULT_SEED = 0


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = DEFAULT_SEED
    out: str | None = None
    # inputs
    manifest: str | None = None
    registry: str | None = None
    data: str | None = None
    checkpoint: str | None = None
    text: str | None = None
    syn_dir: str | None = None
    synthetic_corpus: bool = False
    # model
    mixer: str = "attention"
    desk_scale: bool = False
    model: dict = field(default_factory=dict)
    # training
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = 4
    scheduler: str = "cosine"
    attention_low_lr: bool = False
    checkpoint_every: int = 50
    threads: int = 1
    # synthesis
    n_steps: int = 10
    speaker: str | None = None
    language: str | None = None
    gl_iterations: int = 32
    # evaluation
    pesq_binary: str | None = None
    # benchmarking
    bench_mixers: list = field(default_factory=lambda: [k.value for k in MixerKind])
    bench_batches: list = field(default_factory=lambda: [1, 8])
    bench_tokens: int = 32
    bench_repeats: int = 5
    scaling_lens: list = field(default_factory=lambda: [256, 512, 1024, 2048, 4096])
    figures: bool = True

    def model_config(self, **dataset_dims) -> ModelConfig:
        base = {"mixer": self.mixer, "desk_scale": self.desk_scale}
        return ModelConfig.from_dict(base | dict(self.model) | dataset_dims)

    def effective_lr(self) -> tuple[float, str]:
        """(learning rate, scheduler) after the optional published-table override."""
        if self.attention_low_lr and MixerKind.parse(self.mixer) is MixerKind.ATTENTION:
            return 1e-6, "none"
        return self.lr, self.scheduler

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_HINTS = typing.get_type_hints(RunConfig)
_REQUIRED_PATHS = {
    "prepare": ("out",),
    "train": ("data", "out"),
    "synth": ("checkpoint", "text", "out"),
    "eval": ("manifest", "syn_dir", "out"),
    "bench": ("out",),
}


def _coerce(name: str, value):
    hint = _HINTS[name]
    allowed = hint.__args__ if isinstance(hint, types.UnionType) else (hint,)
    if value is None:
        if type(None) in allowed:
            return None
        raise ConfigError(f"{name}: value is required")
    for typ in allowed:
        origin = typing.get_origin(typ) or typ
        if origin is bool:
            if isinstance(value, bool):
                return value
        elif origin is float:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
        elif origin is int:
            if isinstance(value, int) and not isinstance(value, bool):
                return value
        elif origin in (list, dict, str):
            if isinstance(value, origin):
                return value
    names = " | ".join(getattr(t, "__name__", str(t)) for t in allowed)
    raise ConfigError(f"{name}: expected {names}, got {type(value).__name__} {value!r}")


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not parseable: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_config(command: str, file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults < config file < flags, validate names, types and paths."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    merged: dict = {}
    for source, values in (("config file", file_values or {}), ("flags", overrides or {})):
        for key, value in values.items():
            if key == "command" or key not in _HINTS:
                raise ConfigError(f"unknown config key {key!r} (from {source})")
            if value is not None or source == "config file":
                merged[key] = _coerce(key, value)
    cfg = RunConfig(command=command, **merged)
    _validate(cfg)
    log.info("event=config seed=%d %s", cfg.seed, " ".join(f"{k}={v}" for k, v in sorted(merged.items())))
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        MixerKind.parse(cfg.mixer)
        for m in cfg.bench_mixers:
            MixerKind.parse(m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    defaults = {f.name: f.default for f in dataclasses.fields(ModelConfig)}
    for key, value in cfg.model.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key 'model.{key}'")
        want = defaults[key]
        if key != "mixer" and not (
            type(value) is type(want) or (isinstance(want, float) and type(value) is int)
        ):
            raise ConfigError(f"model.{key}: expected {type(want).__name__}, got {type(value).__name__} {value!r}")
    try:
        ModelConfig.from_dict({"mixer": cfg.mixer, "desk_scale": cfg.desk_scale} | dict(cfg.model))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    for name in ("epochs", "batch_size", "checkpoint_every", "threads", "n_steps", "gl_iterations", "bench_repeats"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    for name in _REQUIRED_PATHS[cfg.command]:
        if getattr(cfg, name) is None:
            raise ConfigError(f"{cfg.command}: missing required path '{name}'")
    if cfg.command == "prepare" and not cfg.synthetic_corpus:
        if cfg.manifest is None or cfg.registry is None:
            raise ConfigError("prepare: needs 'manifest' and 'registry', or synthetic_corpus")
    for name in ("manifest", "registry", "data", "checkpoint", "text", "syn_dir"):
        value = getattr(cfg, name)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"{cfg.command}: {name} path does not exist: {value}")
