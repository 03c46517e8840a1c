"""Drawing scanpaths from a trained model.

The default sampler moves a proxy viewer with Newtonian dynamics whose
acceleration is set by a PID controller chasing references drawn from the
model.  Random, max-mass and beam-search samplers are provided for ablation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .context.history import CausalContext, project_window
from .context.network import DTYPE, ScanpathModel, to_gmm_params
from .context.providers import FeatureProvider, PooledLuminanceProvider
from .entropy import BinIndex, GmmParams, QuantizerSpec, axis_bin_masses, cdf_interval
from .geometry import (ErpFrame, SphericalPoint, ViewportSpec, extract_viewport, project_points,
                       uv_points_to_sph)

log = logging.getLogger(__name__)

MODES = ("pid", "random", "max", "beam")


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("PID gains must be finite")

    @classmethod
    def ziegler_nichols(cls, ku: float, pu: float) -> "PidGains":
        """Classic PID tuning from the ultimate gain and oscillation period."""
        return cls(0.6 * ku, 2.0 * ku / pu, ku * pu / 8.0)


@dataclass(frozen=True)
class PidState:
    """Proxy viewer state in uv pixels (velocity px/s, acceleration px/s^2)."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    integral: np.ndarray
    prev_error: np.ndarray
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("sampling interval must be positive")
        for name in ("position", "velocity", "acceleration", "integral", "prev_error"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(2)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def at_rest(cls, dt: float, position=(0.0, 0.0), velocity=(0.0, 0.0)) -> "PidState":
        z = np.zeros(2)
        return cls(np.asarray(position, dtype=np.float64), np.asarray(velocity, dtype=np.float64), z, z, z, dt)


def pid_step(state: PidState, reference, gains: PidGains, scaled: bool = False,
             windup: float = 1e3) -> PidState:
    """Advance the proxy viewer one interval, then update its acceleration.

    By default the integral and derivative act on raw error sums and
    differences; ``scaled`` multiplies the sum by dt and divides the
    difference by dt instead.  The error integral is clamped to ``windup``
    per axis.
    """
    dt = state.dt
    position = state.position + dt * state.velocity + 0.5 * dt * dt * state.acceleration
    velocity = state.velocity + dt * state.acceleration
    error = np.asarray(reference, dtype=np.float64) - position
    integral = np.clip(state.integral + (error * dt if scaled else error), -windup, windup)
    diff = error - state.prev_error
    if scaled:
        diff = diff / dt
    acceleration = gains.kp * error + gains.ki * integral + gains.kd * diff
    return PidState(position, velocity, acceleration, integral, error, dt)


def simulate_pid(reference, gains: PidGains, dt: float, steps: int, scaled: bool = False,
                 windup: float = 1e3, state: PidState | None = None) -> np.ndarray:
    """Positions of the proxy viewer chasing a constant reference from rest."""
    state = state or PidState.at_rest(dt)
    out = np.empty((steps, 2))
    for t in range(steps):
        state = pid_step(state, reference, gains, scaled, windup)
        out[t] = state.position
    return out


def settling_step(positions: np.ndarray, reference, tol: float = 0.02) -> int | None:
    """First step after which every position stays within ``tol * |reference|``.

    ``None`` when the trajectory is not inside the band at its final step.
    """
    reference = np.asarray(reference, dtype=np.float64)
    band = tol * np.linalg.norm(reference)
    err = np.linalg.norm(np.asarray(positions) - reference, axis=1)
    outside = np.flatnonzero(~(err <= band))
    if len(outside) == 0:
        return 0
    if outside[-1] == len(err) - 1:
        return None
    return int(outside[-1] + 1)


# -- drawing bins from a discretized mixture ---------------------------------

def sample_reference(params: GmmParams, quant: QuantizerSpec, rng: np.random.Generator) -> BinIndex:
    """Inverse-transform draw of a bin: component first, then each axis independently."""
    cum = np.cumsum(params.weights)
    k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), params.K - 1)
    out = []
    for d in range(2):
        idx, p = axis_bin_masses(params.means[k, d], params.variances[k, d], quant.step)
        c = np.cumsum(p)
        j = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(idx) - 1)
        out.append(int(idx[j]))
    return BinIndex(*out)


def _candidate_grids(params: GmmParams, step: float, width: float = 4.0, max_half: int = 200):
    """Bin-index ranges around each component, capped at ``max_half`` bins per side."""
    sig = np.sqrt(params.variances)
    for mu, s in zip(params.means, sig):
        axes = []
        for d in range(2):
            c = int(math.floor(mu[d] / step + 0.5))
            half = min(max_half, max(1, int(math.ceil(width * s[d] / step))))
            axes.append(np.arange(c - half, c + half + 1))
        yield axes


def _grid_masses(params: GmmParams, iu: np.ndarray, iv: np.ndarray, step: float) -> np.ndarray:
    sig = np.sqrt(params.variances)
    cu, cv = iu * step, iv * step
    total = np.zeros((len(iu), len(iv)))
    for w, mu, s in zip(params.weights, params.means, sig):
        au = cdf_interval((cu - 0.5 * step - mu[0]) / s[0], (cu + 0.5 * step - mu[0]) / s[0])
        av = cdf_interval((cv - 0.5 * step - mu[1]) / s[1], (cv + 0.5 * step - mu[1]) / s[1])
        total += w * np.outer(au, av)
    return total


def top_bins(params: GmmParams, quant: QuantizerSpec, n: int = 1) -> list[tuple[BinIndex, float]]:
    """The ``n`` most probable bins with their masses, most probable first.

    Ties break toward the smaller (u, v) index so results are reproducible.
    """
    best: dict[BinIndex, float] = {}
    for iu, iv in _candidate_grids(params, quant.step):
        m = _grid_masses(params, iu, iv, quant.step)
        flat = m.ravel()
        k = min(n, flat.size)
        pick = np.argpartition(-flat, k - 1)[:k]
        for p in pick:
            a, b = divmod(int(p), len(iv))
            best[BinIndex(int(iu[a]), int(iv[b]))] = float(flat[p])
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


def mode_bin(params: GmmParams, quant: QuantizerSpec) -> BinIndex:
    return top_bins(params, quant, 1)[0][0]


# -- generation ----------------------------------------------------------------

@dataclass
class SamplerConfig:
    rounds: int = 1
    horizon: int = 5
    seed: int = 0
    mode: str = "pid"
    beam_width: int = 20
    gains: PidGains = field(default_factory=lambda: PidGains.ziegler_nichols(60.0, 0.29))
    scaled: bool = False
    windup: float = 1e3
    rate: float = 5.0
    quant: QuantizerSpec = field(default_factory=QuantizerSpec)

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}; expected one of {MODES}")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


@dataclass
class RoundResult:
    points: np.ndarray
    references: np.ndarray
    state: PidState | None
    clamped: np.ndarray
    context_lengths: list


class StepPredictor:
    """Evaluates per-step mixtures for one round given fixed history features."""

    def __init__(self, model: ScanpathModel, grids: np.ndarray, paths: np.ndarray):
        self.model = model
        with torch.no_grad():
            g = torch.as_tensor(np.asarray(grids, dtype=np.float64), dtype=DTYPE)[None]
            p = torch.as_tensor(np.asarray(paths, dtype=np.float64), dtype=DTYPE)[None]
            self.static = model.encode_history(g, p)

    @torch.no_grad()
    def __call__(self, causal: CausalContext, t: int) -> GmmParams:
        c = torch.as_tensor(causal.as_array(), dtype=DTYPE)[None]
        logits, means, variances = self.model.predict(self.static, c)
        return to_gmm_params(logits[0, t: t + 1], means[0, t: t + 1], variances[0, t: t + 1])[0]


def _clamp_to_fov(uv: np.ndarray, spec: ViewportSpec) -> tuple[np.ndarray, bool]:
    half = np.array([0.5 * spec.width, 0.5 * spec.height])
    out = np.clip(uv, -half, half)
    return out, bool(np.any(out != uv))


def generate_round(predictor: Callable[[CausalContext, int], GmmParams], state: PidState | None,
                   cfg: SamplerConfig, rng: np.random.Generator, spec: ViewportSpec) -> RoundResult:
    """One round of S ancestral steps in the anchor's uv frame."""
    S = cfg.horizon
    if cfg.mode == "beam":
        return _beam_round(predictor, cfg, spec)
    causal = CausalContext(S)
    points = np.empty((S, 2))
    refs = np.empty((S, 2))
    clamped = np.zeros(S, dtype=bool)
    lengths = []
    if cfg.mode == "pid" and state is None:
        state = PidState.at_rest(cfg.dt)
    for t in range(S):
        lengths.append(len(causal))
        params = predictor(causal, t)
        if cfg.mode == "max":
            ref = np.array(mode_bin(params, cfg.quant).center(cfg.quant))
        else:
            ref = np.array(sample_reference(params, cfg.quant, rng).center(cfg.quant))
        if cfg.mode == "pid":
            state = pid_step(state, ref, cfg.gains, cfg.scaled, cfg.windup)
            pos, clamped[t] = _clamp_to_fov(state.position, spec)
            if clamped[t]:
                state = replace(state, position=pos)
        else:
            pos, clamped[t] = _clamp_to_fov(ref, spec)
        refs[t] = ref
        points[t] = pos
        causal.append(pos)
    return RoundResult(points, refs, state if cfg.mode == "pid" else None, clamped, lengths)


def _beam_round(predictor, cfg: SamplerConfig, spec: ViewportSpec) -> RoundResult:
    S, w = cfg.horizon, cfg.beam_width
    beams: list[tuple[float, list]] = [(0.0, [])]
    lengths = []
    for t in range(S):
        lengths.append(t)
        expanded = []
        for bi, (score, pts) in enumerate(beams):
            causal = CausalContext(S, list(pts))
            for rank, (b, mass) in enumerate(top_bins(predictor(causal, t), cfg.quant, w)):
                center = _clamp_to_fov(np.array(b.center(cfg.quant)), spec)[0]
                expanded.append((score + math.log(mass), bi, rank, pts + [tuple(center)]))
        expanded.sort(key=lambda e: (-e[0], e[1], e[2]))
        beams = [(e[0], e[3]) for e in expanded[:w]]
    points = np.array(beams[0][1])
    return RoundResult(points, points.copy(), None, np.zeros(S, dtype=bool), lengths)


@dataclass
class Generation:
    points: np.ndarray
    clamped: np.ndarray
    rounds: list = field(default_factory=list)


def generate_scanpath(model: ScanpathModel, history: np.ndarray, cfg: SamplerConfig, spec: ViewportSpec,
                      rng: np.random.Generator | None = None, frames: Sequence[ErpFrame] | None = None,
                      provider: FeatureProvider | None = None,
                      frame_index: Callable[[int], int] | None = None,
                      initial_velocity=(0.0, 0.0)) -> Generation:
    """Generate ``cfg.rounds * cfg.horizon`` viewpoints continuing ``history``.

    ``history`` holds at least 2R+1 (phi, theta) rows; its last row is the
    first anchor.  Each round re-anchors on the last emitted viewpoint,
    rebuilds the history context, clears the causal context, carries the
    average speed over into the new uv frame and zeroes the acceleration.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    provider = provider or PooledLuminanceProvider(grid=(model.cfg.grid_h, model.cfg.grid_w))
    R = model.cfg.R
    if cfg.horizon != model.cfg.S:
        raise ValueError(f"sampler horizon {cfg.horizon} differs from model horizon {model.cfg.S}")
    points = np.array(history, dtype=np.float64).reshape(-1, 2)
    if len(points) < 2 * R + 1:
        raise ValueError(f"need at least {2 * R + 1} historical viewpoints, got {len(points)}")
    n_hist = len(points)
    if frames is None:
        log.warning("no frames available; the visual provider sees empty viewports")
    grid_cache: dict[int, np.ndarray] = {}

    def grid_at(k):
        if k not in grid_cache:
            raster = None
            if frames is not None:
                fi = k if frame_index is None else frame_index(k)
                if 0 <= fi < len(frames):
                    raster = extract_viewport(frames[fi], SphericalPoint(*points[k]), spec)
                else:
                    log.warning("no frame %d for timeline index %d; using an empty viewport", fi, k)
            grid_cache[k] = provider.describe(raster)
        return grid_cache[k]

    velocity = np.asarray(initial_velocity, dtype=np.float64)
    generated, flags, rounds = [], [], []
    for _ in range(cfg.rounds):
        n = len(points)
        anchor = SphericalPoint(*points[-1])
        paths, _ = project_window(points[-(2 * R + 1):], R, spec)
        grids = np.stack([grid_at(k) for k in range(n - R, n)])
        predictor = StepPredictor(model, grids, paths)
        state = PidState.at_rest(cfg.dt, velocity=velocity) if cfg.mode == "pid" else None
        res = generate_round(predictor, state, cfg, rng, spec)
        rounds.append(res)
        phi, theta = uv_points_to_sph(res.points, anchor, spec)
        new = np.stack([phi, theta], axis=1)
        points = np.concatenate([points, new])
        generated.append(new)
        flags.append(res.clamped)
        if cfg.mode == "pid":
            velocity = handoff_velocity(res.points, anchor, spec, cfg.dt)
    return Generation(np.concatenate(generated), np.concatenate(flags), rounds)


def handoff_velocity(points: np.ndarray, anchor: SphericalPoint, spec: ViewportSpec, dt: float) -> np.ndarray:
    """Average speed over the last emitted step, re-expressed in the uv frame
    of the last emitted viewpoint (the next round's anchor).

    ``points`` are the round's emitted uv positions on ``anchor``'s viewport;
    with a single point the round's start (the origin) is the previous one.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    prev = pts[-2] if len(pts) > 1 else np.zeros(2)
    phi, theta = uv_points_to_sph(np.stack([prev, pts[-1]]), anchor, spec)
    new_anchor = SphericalPoint(phi[1], theta[1])
    uv, _ = project_points(phi[:1], theta[:1], new_anchor, spec, clamp=True)
    # the new anchor sits at the origin of its own frame
    return -uv[0] / dt
