"""Run configuration read from plain ``key = value`` files.

Recognized keys (defaults in parentheses):

    quantizer.delta (0.2)        quantizer.noise (1.0, noise half-width in steps)
    model.K (3)  model.C_v (128)  model.C_h (128)  model.C_c (32)
    model.hidden (128)  model.head_hidden (128)  model.visual_channels (16)
    model.causal_embed (16)  model.causal_hidden (32)  model.uv_scale (10)
    model.seed (0)
    horizon.S (5)                history.R (5)
    viewport (252x484@63x112)    provider (pooled_luminance)
    train.lr (1e-4)  train.batch (16)  train.epochs (20)  train.seed (0)
    train.stride (1)  train.patience (5)  train.plateau_tol (0.01)
    pid.ku (60)  pid.pu (0.29)  pid.scaled (false)  pid.windup (1000)
    sampler.beam_width (20)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..context.network import ModelConfig
from ..context.train import TrainConfig
from ..entropy import QuantizerSpec
from ..geometry import ViewportSpec
from ..sampler import PidGains, SamplerConfig
from .io import FormatError, parse_kv, read_kv

DEFAULTS = {
    "quantizer.delta": "0.2",
    "quantizer.noise": "1.0",
    "model.K": "3",
    "model.C_v": "128",
    "model.C_h": "128",
    "model.C_c": "32",
    "model.hidden": "128",
    "model.head_hidden": "128",
    "model.visual_channels": "16",
    "model.causal_embed": "16",
    "model.causal_hidden": "32",
    "model.uv_scale": "10",
    "model.seed": "0",
    "horizon.S": "5",
    "history.R": "5",
    "viewport": "252x484@63x112",
    "provider": "pooled_luminance",
    "train.lr": "1e-4",
    "train.batch": "16",
    "train.epochs": "20",
    "train.seed": "0",
    "train.stride": "1",
    "train.patience": "5",
    "train.plateau_tol": "0.01",
    "pid.ku": "60",
    "pid.pu": "0.29",
    "pid.scaled": "false",
    "pid.windup": "1000",
    "sampler.beam_width": "20",
}

_MODEL_INT = ("K", "C_v", "C_h", "C_c", "hidden", "head_hidden", "visual_channels",
              "causal_embed", "causal_hidden", "seed")


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        unknown = sorted(set(mapping) - set(DEFAULTS))
        if unknown:
            raise FormatError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(DEFAULTS)
        values.update({k: str(v) for k, v in mapping.items()})
        cfg = cls(values)
        cfg.model_config()  # validate numbers early
        cfg.train_config()
        cfg.viewport()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_mapping(read_kv(path))

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls.from_mapping(parse_kv(text))

    def __getitem__(self, key):
        return self.values[key]

    def _num(self, key, kind=float):
        try:
            return kind(self.values[key])
        except ValueError:
            raise FormatError(f"config key {key} must be a number, got {self.values[key]!r}") from None

    def quantizer(self) -> QuantizerSpec:
        return QuantizerSpec(self._num("quantizer.delta"), self._num("quantizer.noise"))

    def viewport(self) -> ViewportSpec:
        return ViewportSpec.parse(self.values["viewport"])

    def model_config(self, provider_channels: int = 1, grid=(8, 14)) -> ModelConfig:
        kw = {k: self._num(f"model.{k}", int) for k in _MODEL_INT}
        return ModelConfig(R=self._num("history.R", int), S=self._num("horizon.S", int),
                           uv_scale=self._num("model.uv_scale"), provider_channels=provider_channels,
                           grid_h=grid[0], grid_w=grid[1], **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self._num("train.lr"), batch=self._num("train.batch", int),
                           epochs=self._num("train.epochs", int), seed=self._num("train.seed", int),
                           plateau_patience=self._num("train.patience", int),
                           plateau_tol=self._num("train.plateau_tol"))

    def gains(self) -> PidGains:
        return PidGains.ziegler_nichols(self._num("pid.ku"), self._num("pid.pu"))

    def sampler_config(self, rounds: int = 1, seed: int = 0, mode: str = "pid",
                       beam_width: int | None = None, rate: float = 5.0) -> SamplerConfig:
        return SamplerConfig(rounds=rounds, horizon=self._num("horizon.S", int), seed=seed, mode=mode,
                             beam_width=beam_width or self._num("sampler.beam_width", int),
                             gains=self.gains(), scaled=_bool(self.values["pid.scaled"]),
                             windup=self._num("pid.windup"), rate=rate, quant=self.quantizer())

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
