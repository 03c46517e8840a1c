"""Conditioning network: visual, historical-path and causal-path features fused
into three heads that emit per-step Gaussian-mixture parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..entropy import VAR_FLOOR, GmmParams

DTYPE = torch.float64
NEG_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    K: int = 3
    R: int = 5
    S: int = 5
    C_v: int = 128
    C_h: int = 128
    C_c: int = 32
    hidden: int = 128
    head_hidden: int = 128
    visual_channels: int = 16
    causal_embed: int = 16
    causal_hidden: int = 32
    grid_h: int = 8
    grid_w: int = 14
    provider_channels: int = 1
    uv_scale: float = 10.0
    intensity_scale: float = 255.0
    seed: int = 0

    @property
    def fused_width(self) -> int:
        return self.C_v + self.C_h + self.C_c

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in known:
                raise ValueError(f"unknown model setting {k!r}")
            out[k] = float(v) if known[k] == "float" else int(v)
        return cls(**out)


def causal_mask(S: int, c_in: int, c_out: int, strict: bool) -> torch.Tensor:
    """Block mask of shape (S*c_out, S*c_in).

    Output row i belongs to step ``i // c_out`` and input column j to step
    ``j // c_in``; strict masks connect only earlier steps.
    """
    row = torch.arange(S * c_out)[:, None] // c_out
    col = torch.arange(S * c_in)[None, :] // c_in
    keep = col < row if strict else col <= row
    return keep.to(DTYPE)


class MaskedLinear(nn.Linear):
    """Fully connected layer over S stacked time blocks with a block-causal mask."""

    def __init__(self, S: int, c_in: int, c_out: int, strict: bool):
        super().__init__(S * c_in, S * c_out, dtype=DTYPE)
        self.S, self.c_in, self.c_out, self.strict = S, c_in, c_out, strict
        self.register_buffer("mask", causal_mask(S, c_in, c_out, strict))

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ValueError(f"masked layer expects {self.in_features} inputs, got {x.shape[-1]}")
        return F.linear(x, self.weight * self.mask, self.bias)


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width, dtype=DTYPE)
        self.fc2 = nn.Linear(width, width, dtype=DTYPE)
        self.norm1 = nn.LayerNorm(width, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(width, dtype=DTYPE)

    def forward(self, x):
        h = F.leaky_relu(self.norm1(self.fc1(x)), NEG_SLOPE)
        h = F.leaky_relu(self.norm2(self.fc2(h)), NEG_SLOPE)
        return x + h


class MaskedResidualBlock(nn.Module):
    # layer norm runs per time block so that no step sees later steps' statistics
    def __init__(self, S: int, width: int):
        super().__init__()
        self.S, self.width = S, width
        self.fc1 = MaskedLinear(S, width, width, strict=False)
        self.fc2 = MaskedLinear(S, width, width, strict=False)
        self.norm1 = nn.LayerNorm(width, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(width, dtype=DTYPE)

    def _norm(self, norm, x):
        shape = x.shape
        return norm(x.reshape(*shape[:-1], self.S, self.width)).reshape(shape)

    def forward(self, x):
        h = F.leaky_relu(self._norm(self.norm1, self.fc1(x)), NEG_SLOPE)
        h = F.leaky_relu(self._norm(self.norm2, self.fc2(h)), NEG_SLOPE)
        return x + h


class MLP(nn.Module):
    """Front-end FC, residual blocks, back-end FC."""

    def __init__(self, n_in: int, hidden: int, n_out: int, blocks: int):
        super().__init__()
        self.front = nn.Linear(n_in, hidden, dtype=DTYPE)
        self.blocks = nn.Sequential(*[ResidualBlock(hidden) for _ in range(blocks)])
        self.back = nn.Linear(hidden, n_out, dtype=DTYPE)

    def forward(self, x):
        return self.back(self.blocks(self.front(x)))


class TimeMix(nn.Module):
    """Learned linear map over the time axis: (..., R, C) -> (..., S, C)."""

    def __init__(self, R: int, S: int):
        super().__init__()
        self.fc = nn.Linear(R, S, dtype=DTYPE)

    def forward(self, x):
        return self.fc(x.transpose(-1, -2)).transpose(-1, -2)


class ScanpathModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        R, S, K = cfg.R, cfg.S, cfg.K
        gen = torch.random.fork_rng(devices=[])
        with gen:
            torch.manual_seed(cfg.seed)
            self.visual_embed = nn.Linear(cfg.provider_channels, cfg.visual_channels, dtype=DTYPE)
            self.visual_time = TimeMix(R, S)
            self.visual_mlp = MLP(cfg.visual_channels * cfg.grid_h * cfg.grid_w, cfg.hidden, cfg.C_v, 3)

            self.path_front = nn.Linear(2 * (2 * R + 1), cfg.C_h, dtype=DTYPE)
            self.path_block = ResidualBlock(cfg.C_h)
            self.path_time = TimeMix(R, S)
            self.path_blocks = nn.Sequential(*[ResidualBlock(cfg.C_h) for _ in range(4)])

            self.causal_embed = nn.Linear(2, cfg.causal_embed, dtype=DTYPE)
            self.causal_front = MaskedLinear(S, cfg.causal_embed, cfg.causal_hidden, strict=True)
            self.causal_blocks = nn.Sequential(
                *[MaskedResidualBlock(S, cfg.causal_hidden) for _ in range(4)])
            self.causal_back = MaskedLinear(S, cfg.causal_hidden, cfg.C_c, strict=False)

            F_ = cfg.fused_width
            self.weight_head = MLP(F_, cfg.head_hidden, K, 2)
            self.mean_head = MLP(F_, cfg.head_hidden, 2 * K, 2)
            self.var_head = MLP(F_, cfg.head_hidden, 2 * K, 2)

    # -- feature pathways -------------------------------------------------

    def provider_features(self, grids: torch.Tensor) -> torch.Tensor:
        """(..., channels, gh, gw) provider grids -> (..., C*gh*gw) embedded features."""
        x = grids.movedim(-3, -1) / self.cfg.intensity_scale
        x = self.visual_embed(x).movedim(-1, -3)
        return x.flatten(-3)

    def visual_features(self, grids: torch.Tensor) -> torch.Tensor:
        """(B, R, channels, gh, gw) -> (B, S, C_v)."""
        return self.visual_mlp(self.visual_time(self.provider_features(grids)))

    def path_features(self, paths: torch.Tensor) -> torch.Tensor:
        """(B, R, 2R+1, 2) relative uv windows -> (B, S, C_h)."""
        x = (paths / self.cfg.uv_scale).flatten(-2)
        x = self.path_block(self.path_front(x))
        return self.path_blocks(self.path_time(x))

    def causal_features(self, causal: torch.Tensor) -> torch.Tensor:
        """(B, S, 2) emitted uv points -> (B, S, C_c); step t reads entries < t only."""
        B, S = causal.shape[0], self.cfg.S
        x = self.causal_embed(causal / self.cfg.uv_scale).reshape(B, S * self.cfg.causal_embed)
        x = self.causal_back(self.causal_blocks(self.causal_front(x)))
        return x.reshape(B, S, self.cfg.C_c)

    def heads(self, fused: torch.Tensor):
        """Fused features -> (logits, means, variances) with shapes (B,S,K), (B,S,K,2) x2."""
        K, scale = self.cfg.K, self.cfg.uv_scale
        logits = self.weight_head(fused)
        means = self.mean_head(fused).unflatten(-1, (K, 2)) * scale
        raw = self.var_head(fused).unflatten(-1, (K, 2))
        variances = VAR_FLOOR + scale * scale * F.softplus(raw)
        return logits, means, variances

    def encode_history(self, grids: torch.Tensor, paths: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.visual_features(grids), self.path_features(paths)], dim=-1)

    def predict(self, static: torch.Tensor, causal: torch.Tensor):
        return self.heads(torch.cat([static, self.causal_features(causal)], dim=-1))

    def forward(self, grids, paths, causal):
        return self.predict(self.encode_history(grids, paths), causal)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def to_gmm_params(logits, means, variances) -> list[GmmParams]:
    """Per-step mixtures from head outputs of a single sample, shapes (S, ...)."""
    logits = np.asarray(logits.detach() if torch.is_tensor(logits) else logits)
    means = np.asarray(means.detach() if torch.is_tensor(means) else means)
    variances = np.asarray(variances.detach() if torch.is_tensor(variances) else variances)
    return [GmmParams.from_logits(l, m, v) for l, m, v in zip(logits, means, variances)]
