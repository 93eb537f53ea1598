"""Experiment configuration: defaults, then a key=value file, then overrides."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from bitforge.nets import Architecture

GENERATORS = ("linear_gradient", "radial_gradient", "smooth_noise", "shapes")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    depth_in: int = 4
    depth_out: int = 8
    # schedule; epochs_sgd = 0 means a quarter of epochs_total (200 -> 50 SGD + 150 Adam)
    patch_size: int = 32
    batch_size: int = 8
    patches_per_epoch: int = 96
    epochs_total: int = 40
    epochs_sgd: int = 0
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    decay_mode: str = "l2"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # architecture
    trunk_width: int = 16
    res_blocks: int = 4
    fused_width: int = 32
    ira_blocks: int = 4
    expansion: int = 2
    use_sr: bool = True
    # bit-depth dataset
    data_dir: str = ""
    synth_count: int = 40
    synth_size: int = 96
    synth_generators: str = "linear_gradient,radial_gradient,smooth_noise,shapes"
    holdout_fraction: float = 0.1
    # SR pretraining
    sr_count: int = 16
    sr_size: int = 64
    sr_patch: int = 32
    sr_batch: int = 4
    sr_epochs: int = 8
    sr_steps_per_epoch: int = 10
    sr_lr: float = 0.001

    def __post_init__(self):
        if not 1 <= self.depth_in < self.depth_out <= 16:
            raise ConfigError(f"need 1 <= depth_in < depth_out <= 16, got {self.depth_in} -> {self.depth_out}")
        if self.epochs_total < 1:
            raise ConfigError("epochs_total must be positive")
        if not 0 <= self.epochs_sgd < self.epochs_total:
            raise ConfigError(f"epochs_sgd ({self.epochs_sgd}) must be below epochs_total ({self.epochs_total})")
        if self.decay_mode not in ("l2", "lr"):
            raise ConfigError(f"decay_mode must be 'l2' or 'lr', got {self.decay_mode!r}")
        if self.patch_size < 8 or self.batch_size < 1 or self.patches_per_epoch < self.batch_size:
            raise ConfigError("need patch_size >= 8, batch_size >= 1, patches_per_epoch >= batch_size")
        if self.synth_size < self.patch_size:
            raise ConfigError("synth_size must be at least patch_size")
        if self.sr_patch % 4 or self.sr_size < self.sr_patch:
            raise ConfigError("sr_patch must be a multiple of 4 and fit in sr_size")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        gens = self.generators
        if not gens or any(g not in GENERATORS for g in gens):
            raise ConfigError(f"synth_generators must be a non-empty subset of {GENERATORS}")
        try:
            self.architecture
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def generators(self) -> tuple[str, ...]:
        return tuple(g.strip() for g in self.synth_generators.split(",") if g.strip())

    @property
    def sgd_epochs(self) -> int:
        return self.epochs_sgd if self.epochs_sgd else self.epochs_total // 4

    @property
    def stages(self) -> list[int]:
        """Input depth of every cascade stage, in order."""
        return list(range(self.depth_in, self.depth_out))

    @property
    def architecture(self) -> Architecture:
        return Architecture(
            trunk_width=self.trunk_width,
            res_blocks=self.res_blocks,
            fused_width=self.fused_width,
            ira_blocks=self.ira_blocks,
            expansion=self.expansion,
            use_sr=self.use_sr,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``[section]`` headers group keys but do not namespace them."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string("[__top__]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}".replace("\n", " ")) from None
    values: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in values:
                raise ConfigError(f"key {key!r} given more than once in {path}")
            values[key] = value
    return values


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        out[key.strip()] = value
    return out


def parse_config(path=None, overrides=None) -> TrainConfig:
    """Defaults <- file <- overrides; unknown keys and broken invariants raise ConfigError."""
    raw: dict[str, str] = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        raw.update(read_config_file(path))
    if isinstance(overrides, dict):
        raw.update({k: str(v) for k, v in overrides.items()})
    else:
        raw.update(parse_overrides(overrides))
    values = {key: coerce(key, value) for key, value in raw.items()}
    return TrainConfig(**values)
