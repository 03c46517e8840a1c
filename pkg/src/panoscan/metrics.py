"""Scanpath comparison metrics on the sphere."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import wrap_longitude


@dataclass
class Scanpath:
    """Viewpoints (phi, theta) in radians sampled at ``rate`` Hz."""

    video_id: str
    user_id: str
    points: np.ndarray
    start: int = 0
    rate: float = 5.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("scanpath contains non-finite viewpoints")
        if np.any(np.abs(pts[:, 0]) > np.pi / 2):
            raise ValueError("latitude outside [-pi/2, pi/2]")
        pts[:, 1] = wrap_longitude(pts[:, 1])
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def phi(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def theta(self) -> np.ndarray:
        return self.points[:, 1]

    def slice(self, start: int, stop: int) -> "Scanpath":
        return Scanpath(self.video_id, self.user_id, self.points[start:stop], self.start + start, self.rate)


def _points(s) -> np.ndarray:
    return s.points if isinstance(s, Scanpath) else np.asarray(s, dtype=np.float64).reshape(-1, 2)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if len(a) != len(b):
        raise ValueError(f"scanpaths differ in length ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise ValueError("empty scanpath")


def _unit(pts: np.ndarray) -> np.ndarray:
    c = np.cos(pts[:, 0])
    return np.stack([c * np.cos(pts[:, 1]), c * np.sin(pts[:, 1]), np.sin(pts[:, 0])], axis=1)


def orthodromic_distance(s, s_hat) -> float:
    """Mean great-circle distance (radians) between time-aligned viewpoints."""
    a, b = _points(s), _points(s_hat)
    _check_pair(a, b)
    # central angle from chord lengths: symmetric, well conditioned near 0 and
    # pi, and exactly zero for identical points
    p, q = _unit(a), _unit(b)
    return float(np.mean(2.0 * np.arctan2(np.linalg.norm(p - q, axis=1), np.linalg.norm(p + q, axis=1))))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; 0 when either series is constant."""
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def temporal_correlation(s, s_hat) -> float:
    """Average of the latitude and longitude Pearson correlations."""
    a, b = _points(s), _points(s_hat)
    _check_pair(a, b)
    if len(a) < 2:
        raise ValueError("temporal correlation needs at least two viewpoints")
    return 0.5 * (pearson(a[:, 0], b[:, 0]) + pearson(a[:, 1], b[:, 1]))


def mean_tc(paths: Sequence) -> float:
    """Mean temporal correlation over all unordered pairs of a set."""
    if len(paths) < 2:
        raise ValueError("mean temporal correlation needs at least two scanpaths")
    tcs = [temporal_correlation(a, b) for a, b in itertools.combinations(paths, 2)]
    return float(np.mean(tcs))


def _pairwise(S, S_hat, fn) -> np.ndarray:
    if len(S) == 0 or len(S_hat) == 0:
        raise ValueError("scanpath sets must be nonempty")
    return np.array([[fn(a, b) for b in S_hat] for a in S])


def min_od(S, S_hat) -> float:
    """Best-case orthodromic distance over all (truth, prediction) pairs."""
    return float(_pairwise(S, S_hat, orthodromic_distance).min())


def max_tc(S, S_hat) -> float:
    """Best-case temporal correlation over all (truth, prediction) pairs."""
    return float(_pairwise(S, S_hat, temporal_correlation).max())


def slice_offsets(T: int, Ts: int) -> list[int]:
    """Start offsets of the length-Ts slices.

    Consecutive slices overlap by Ts // 2.  Slices never run past the end; when
    the stride leaves a tail uncovered, one extra slice aligned to the end is
    added (T=10, Ts=5 gives offsets 0, 3, 5).
    """
    if Ts < 2:
        raise ValueError("slice length must be >= 2")
    if Ts > T:
        raise ValueError(f"slice length {Ts} exceeds scanpath length {T}")
    stride = Ts - Ts // 2
    offsets = list(range(0, T - Ts + 1, stride))
    if offsets[-1] != T - Ts:
        offsets.append(T - Ts)
    return offsets


def sliced_metrics(S, S_hat, Ts: int) -> tuple[float, float]:
    """(SminOD, SmaxTC): best-case metrics averaged over overlapping slices."""
    truth = [_points(s) for s in S]
    pred = [_points(s) for s in S_hat]
    if not truth or not pred:
        raise ValueError("scanpath sets must be nonempty")
    T = len(truth[0])
    if any(len(p) != T for p in truth + pred):
        raise ValueError("all scanpaths must share one length")
    offsets = slice_offsets(T, Ts)
    ods, tcs = [], []
    for o in offsets:
        a = [p[o: o + Ts] for p in truth]
        b = [p[o: o + Ts] for p in pred]
        ods.append(min_od(a, b))
        tcs.append(max_tc(a, b))
    return float(np.mean(ods)), float(np.mean(tcs))
