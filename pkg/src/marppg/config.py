"""Flat run configuration stored as ``key = value`` text."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SynthConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # paths; empty means "derive from out_dir"
    out_dir: str = "run"
    manifest: str = ""
    checkpoint: str = ""
    # dataset sizes (clips per split)
    n_train: int = 10
    n_val: int = 2
    n_test: int = 4
    # training
    alpha: float = 0.3
    beta: float = 0.5
    chunk_len: int = 60
    mask_size: int = 16
    mask_fill: float = 0.0
    batch_size: int = 4
    epochs: int = 30
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    # model
    height: int = 64
    width: int = 64
    in_channels: int = 3
    encoder_channels: tuple = (16, 32, 32, 32)
    feature_size: int = 8
    gate_hidden: int = 0
    # synthetic generator
    eval_frames: int = 300
    fs: float = 30.0
    hr_min: float = 48.0
    hr_max: float = 144.0
    harmonic: float = 0.35
    pulse_amplitude: float = 0.02
    noise_sigma: float = 0.02
    drift_amplitude: float = 0.05
    motion_min: float = 0.0
    motion_max: float = 4.0
    # HR readout band in Hz
    hr_band_lo: float = 0.75
    hr_band_hi: float = 2.5

    def train_config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, beta=self.beta, chunk_len=self.chunk_len,
                           mask_size=self.mask_size, mask_fill=self.mask_fill,
                           batch_size=self.batch_size, epochs=self.epochs, max_lr=self.max_lr,
                           warmup_fraction=self.warmup_fraction, seed=self.seed)

    def model_config(self) -> ModelConfig:
        return ModelConfig(frames=self.chunk_len, height=self.height, width=self.width,
                           in_channels=self.in_channels,
                           encoder_channels=tuple(self.encoder_channels),
                           feature_size=self.feature_size, gate_hidden=self.gate_hidden)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(frames=self.chunk_len, eval_frames=self.eval_frames, height=self.height,
                           width=self.width, fs=self.fs, hr_min=self.hr_min, hr_max=self.hr_max,
                           harmonic=self.harmonic, pulse_amplitude=self.pulse_amplitude,
                           noise_sigma=self.noise_sigma, drift_amplitude=self.drift_amplitude,
                           motion_min=self.motion_min, motion_max=self.motion_max, seed=self.seed)

    @property
    def band(self) -> tuple[float, float]:
        return (self.hr_band_lo, self.hr_band_hi)

    def manifest_path(self) -> Path:
        return Path(self.manifest) if self.manifest else Path(self.out_dir) / "manifest.txt"

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint.marw"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_TYPES = typing.get_type_hints(RunConfig)


def _convert(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_overrides(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    unknown = sorted(set(pairs) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return base.replace(**{k: _convert(k, v) for k, v in pairs.items()})


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        pairs[key.strip()] = value.strip()
    return parse_overrides(pairs, base)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
