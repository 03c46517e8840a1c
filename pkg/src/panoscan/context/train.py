"""Training-window assembly and expected-code-length minimization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..entropy import QuantizerSpec, code_length_and_grad, quantize, softmax
from ..geometry import SphericalPoint, ViewportSpec, extract_viewport, project_points
from .history import project_window
from .network import DTYPE, ModelConfig, ScanpathModel, to_gmm_params
from .providers import FeatureProvider, PooledLuminanceProvider

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class WindowData:
    """Stacked training windows.

    grids (N, R, ch, gh, gw) provider output per historical viewport;
    paths (N, R, 2R+1, 2) projected history; targets (N, S, 2) continuous uv of
    the next S viewpoints on the anchor viewport.
    """

    grids: np.ndarray
    paths: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "WindowData":
        return WindowData(self.grids[idx], self.paths[idx], self.targets[idx])

    @classmethod
    def concat(cls, parts: Sequence["WindowData"]) -> "WindowData":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("grids", "paths", "targets")))


def scanpath_windows(points: np.ndarray, R: int, S: int, spec: ViewportSpec,
                     provider: FeatureProvider | None = None, frames=None,
                     frame_index: Callable[[int], int] | None = None, stride: int = 1) -> WindowData:
    """All training windows of one scanpath (rows of (phi, theta))."""
    provider = provider or PooledLuminanceProvider()
    points = np.asarray(points, dtype=np.float64)
    L = len(points)
    anchors = list(range(2 * R, L - S, stride))
    gshape = (provider.channels,) + tuple(provider.grid)
    if not anchors:
        return WindowData(np.zeros((0, R) + gshape), np.zeros((0, R, 2 * R + 1, 2)), np.zeros((0, S, 2)))

    # provider output is per (index, viewpoint); compute once and share across windows
    grid_cache: dict[int, np.ndarray] = {}

    def grid_at(k):
        if k not in grid_cache:
            raster = None
            if frames is not None:
                fi = k if frame_index is None else frame_index(k)
                if 0 <= fi < len(frames):
                    raster = extract_viewport(frames[fi], SphericalPoint(*points[k]), spec)
                else:
                    log.warning("no frame %d for scanpath index %d; using an empty viewport", fi, k)
            grid_cache[k] = provider.describe(raster)
        return grid_cache[k]

    grids, paths, targets = [], [], []
    for t in anchors:
        p, _ = project_window(points[t - 2 * R: t + 1], R, spec)
        fut = points[t + 1: t + 1 + S]
        uv, _ = project_points(fut[:, 0], fut[:, 1], SphericalPoint(*points[t]), spec, clamp=True)
        paths.append(p)
        targets.append(uv)
        grids.append(np.stack([grid_at(k) for k in range(t - R + 1, t + 1)]))
    return WindowData(np.stack(grids), np.stack(paths), np.stack(targets))


class _CodeLength(torch.autograd.Function):
    """Mean bits of the discretized mixture with the hand-derived gradient."""

    @staticmethod
    def forward(ctx, logits, means, variances, centers, step):
        res = code_length_and_grad(centers.numpy(), softmax(logits.detach().numpy()),
                                   means.detach().numpy(), variances.detach().numpy(), step)
        ctx.save_for_backward(torch.from_numpy(res.d_logits), torch.from_numpy(res.d_means),
                              torch.from_numpy(res.d_variances))
        return torch.tensor(res.bits, dtype=DTYPE)

    @staticmethod
    def backward(ctx, grad):
        dl, dm, dv = ctx.saved_tensors
        return grad * dl, grad * dm, grad * dv, None, None


def code_length_loss(logits, means, variances, centers, step: float) -> torch.Tensor:
    return _CodeLength.apply(logits, means, variances, torch.as_tensor(centers, dtype=DTYPE), step)


def _tensors(data: WindowData, idx=slice(None)):
    return (torch.from_numpy(np.ascontiguousarray(data.grids[idx], dtype=np.float64)),
            torch.from_numpy(np.ascontiguousarray(data.paths[idx], dtype=np.float64)),
            torch.from_numpy(np.ascontiguousarray(data.targets[idx], dtype=np.float64)))


def batch_loss(model: ScanpathModel, data: WindowData, idx, centers: np.ndarray, step: float) -> torch.Tensor:
    """Code length of ``centers`` given the windows ``idx``; causal input is the true future."""
    grids, paths, targets = _tensors(data, idx)
    logits, means, variances = model(grids, paths, targets)
    return code_length_loss(logits, means, variances, centers, step)


@torch.no_grad()
def evaluate_bits(model: ScanpathModel, data: WindowData, quant: QuantizerSpec, batch: int = 256) -> float:
    """Bits per viewpoint with hard quantization of the targets."""
    if len(data) == 0:
        raise ValueError("no windows to evaluate")
    total = 0.0
    for start in range(0, len(data), batch):
        idx = slice(start, start + batch)
        centers = quantize(data.targets[idx], quant)
        n = centers.shape[0] * centers.shape[1]
        total += float(batch_loss(model, data, idx, centers, quant.step)) * n
    return total / (len(data) * data.targets.shape[1])


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 16
    epochs: int = 20
    seed: int = 0
    plateau_patience: int = 5
    plateau_tol: float = 0.01
    lr_decay: float = 0.1
    min_lr: float = 1e-7


@dataclass
class TrainResult:
    model: ScanpathModel
    epoch_bits: list = field(default_factory=list)
    lrs: list = field(default_factory=list)


class PlateauSchedule:
    """Decay the learning rate when the epoch loss stops improving.

    Improvement means dropping more than ``tol`` below the best loss seen;
    after ``patience`` epochs without one the rate is multiplied by ``decay``.
    """

    def __init__(self, patience: int = 5, tol: float = 0.01, decay: float = 0.1, min_lr: float = 0.0):
        self.patience, self.tol, self.decay, self.min_lr = patience, tol, decay, min_lr
        self.best = math.inf
        self.stale = 0

    def update(self, loss: float, lr: float) -> float:
        if loss < self.best - self.tol:
            self.best = loss
            self.stale = 0
            return lr
        self.best = min(self.best, loss)
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            return max(lr * self.decay, self.min_lr)
        return lr


def train(data: WindowData, model_cfg: ModelConfig, quant: QuantizerSpec, cfg: TrainConfig,
          model: ScanpathModel | None = None, on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit the network by minimizing expected code length under the noise surrogate."""
    if len(data) == 0:
        raise ValueError("empty training set")
    torch.use_deterministic_algorithms(True)
    model = model or ScanpathModel(model_cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauSchedule(cfg.plateau_patience, cfg.plateau_tol, cfg.lr_decay, cfg.min_lr)
    result = TrainResult(model)
    lr = cfg.lr
    half = quant.noise_scale * quant.step
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            idx = np.sort(order[start: start + cfg.batch])
            target = data.targets[idx]
            centers = target + rng.uniform(-half, half, size=target.shape)
            opt.zero_grad()
            loss = batch_loss(model, data, idx, centers, quant.step)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingError(f"non-finite code length {value} at epoch {epoch}, batch {start // cfg.batch}")
            loss.backward()
            opt.step()
            total += value * len(idx)
            count += len(idx)
        epoch_bits = total / count
        result.epoch_bits.append(epoch_bits)
        result.lrs.append(lr)
        if on_epoch is not None:
            on_epoch(epoch, epoch_bits)
        log.info("epoch %d: %.4f bits/viewpoint (lr %.3g)", epoch, epoch_bits, lr)
        new_lr = sched.update(epoch_bits, lr)
        if new_lr != lr:
            lr = new_lr
            for group in opt.param_groups:
                group["lr"] = lr
    return result


@torch.no_grad()
def predict_params(model: ScanpathModel, grids, paths, causal):
    """GmmParams for each of the S steps of one window."""
    g = torch.as_tensor(np.asarray(grids, dtype=np.float64))[None]
    p = torch.as_tensor(np.asarray(paths, dtype=np.float64))[None]
    c = torch.as_tensor(np.asarray(causal, dtype=np.float64))[None]
    logits, means, variances = model(g, p, c)
    return to_gmm_params(logits[0], means[0], variances[0])
