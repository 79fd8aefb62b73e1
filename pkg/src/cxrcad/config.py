"""Pipeline configuration: a flat 'section.key = value' text format.

Lines are 'section.key = value'; '#' starts a comment; blank lines are
ignored. Every CLI flag overrides its corresponding key.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .augment import AugmentConfig
from .errors import DataError
from .nn import TrainConfig
from .preprocess import PreprocessConfig


@dataclass
class SplitConfig:
    test_fraction: float = 0.1
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class NetConfig:
    widths: tuple[int, ...] = (4, 8, 8, 16, 16)   # one conv per block
    head: tuple[int, ...] = (256, 128)
    freeze_below: int = 0


@dataclass
class PathsConfig:
    manifest: str = "manifest.csv"
    sample_dir: str = "samples"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optimizer: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    net: NetConfig = field(default_factory=NetConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    augment_enabled: bool = True


_SECTIONS = {
    "preprocess": PreprocessConfig,
    "augment": AugmentConfig,
    "optimizer": TrainConfig,
    "schedule": TrainConfig,   # schedule.* keys live on TrainConfig too
    "split": SplitConfig,
    "net": NetConfig,
    "paths": PathsConfig,
}

_SCHEDULE_KEYS = {"patience": "patience", "factor": "lr_factor", "min_lr": "min_lr"}


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    cfg = PipelineConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source} line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        _assign(cfg, key.strip(), value.strip(), f"{source} line {lineno}")
    _validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read(), source=str(path))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc


def _assign(cfg: PipelineConfig, dotted: str, value: str, where: str) -> None:
    if dotted == "augment.enabled":
        cfg.augment_enabled = _parse_bool(value, where)
        return
    section, _, key = dotted.partition(".")
    if not key or section not in _SECTIONS:
        raise DataError(f"{where}: unknown config key {dotted!r}")
    if section == "schedule":
        if key not in _SCHEDULE_KEYS:
            raise DataError(f"{where}: unknown config key {dotted!r}")
        key = _SCHEDULE_KEYS[key]
        target = cfg.optimizer
    else:
        target = getattr(cfg, "optimizer" if section == "optimizer" else section)
    spec = {f.name: f for f in fields(target)}
    if key not in spec:
        raise DataError(f"{where}: unknown config key {dotted!r}")
    current = getattr(target, key)
    try:
        setattr(target, key, _coerce(value, current))
    except ValueError as exc:
        raise DataError(f"{where}: bad value for {dotted!r}: {exc}") from exc


def _coerce(value: str, current):
    if isinstance(current, bool):
        return _parse_bool(value, "")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty tuple")
        cast = float if current and isinstance(current[0], float) else int
        return tuple(cast(p) for p in parts)
    return value


def _parse_bool(value: str, where: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise DataError(f"{where}: expected a boolean, got {value!r}")


def _validate(cfg: PipelineConfig) -> None:
    # dataclass __post_init__ ran at defaults; re-run checks after assignment
    try:
        PreprocessConfig(
            **{f.name: getattr(cfg.preprocess, f.name) for f in fields(cfg.preprocess)}
        )
        AugmentConfig(**{f.name: getattr(cfg.augment, f.name) for f in fields(cfg.augment)})
    except ValueError as exc:
        raise DataError(f"invalid config value: {exc}") from exc
    if cfg.optimizer.batch_size < 1 or cfg.optimizer.max_epochs < 1:
        raise DataError("optimizer.batch_size and optimizer.max_epochs must be >= 1")
    if cfg.optimizer.learning_rate <= 0:
        raise DataError("optimizer.learning_rate must be > 0")
    if not 0 < cfg.split.test_fraction < 1 or not 0 < cfg.split.val_fraction < 1:
        raise DataError("split fractions must be in (0, 1)")
    if not cfg.net.widths or any(w < 1 for w in cfg.net.widths):
        raise DataError("net.widths must be positive")
    if cfg.net.freeze_below < 0:
        raise DataError("net.freeze_below must be >= 0")
