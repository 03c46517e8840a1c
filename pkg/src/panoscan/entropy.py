"""Uniform quantization and the discretized Gaussian-mixture entropy model.

Everything here works in viewport-relative uv pixels.  Covariances are
diagonal, so the mass of a rectangular bin factorizes per axis into normal
CDF differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import erfc

P_FLOOR = 1e-12
VAR_FLOOR = 1e-4
LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform quantizer with step ``step``.

    ``noise_scale`` sets the half-width of the training noise as a multiple of
    the step (1.0 gives noise on [-step, step]).
    """

    step: float = 0.2
    noise_scale: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValueError(f"quantizer step must be positive, got {self.step}")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be non-negative")


class BinIndex(NamedTuple):
    bu: int
    bv: int

    def center(self, spec: QuantizerSpec) -> tuple[float, float]:
        return (spec.step * self.bu, spec.step * self.bv)


def _bin_of(xi, step):
    ratio = np.asarray(xi, dtype=np.float64) / step
    # Decimal inputs such as 0.3 / 0.2 land one ulp shy of an exact tie;
    # snap ratios within 1e-9 of a half-integer so ties round up as intended.
    snapped = np.round(ratio * 2.0) / 2.0
    ratio = np.where(np.abs(ratio - snapped) <= 1e-9 * np.maximum(1.0, np.abs(ratio)), snapped, ratio)
    return np.floor(ratio + 0.5)


def quantize(xi, spec: QuantizerSpec):
    """Nearest bin center ``step * floor(xi / step + 1/2)``."""
    out = spec.step * _bin_of(xi, spec.step)
    return float(out) if np.ndim(out) == 0 else out


def bin_index(uv, spec: QuantizerSpec) -> BinIndex:
    b = _bin_of(uv, spec.step)
    return BinIndex(int(b[0]), int(b[1]))


def bin_indices(uv: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Integer bin coordinates for an array of uv points (last axis 2)."""
    return _bin_of(uv, spec.step).astype(np.int64)


def noise_surrogate(xi, spec: QuantizerSpec, rng: np.random.Generator):
    """Additive uniform noise standing in for the quantizer during training."""
    half = spec.noise_scale * spec.step
    xi = np.asarray(xi, dtype=np.float64)
    out = xi + rng.uniform(-half, half, size=xi.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GmmParams:
    """K-component 2D Gaussian mixture with diagonal covariances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64).reshape(-1, 2)
        var = np.array(self.variances, dtype=np.float64).reshape(-1, 2)
        if not (len(w) == len(mu) == len(var)) or len(w) == 0:
            raise ValueError("weights, means and variances must describe the same K >= 1 components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {w}")
        if np.any(~np.isfinite(mu)):
            raise ValueError("means must be finite")
        if np.any(~(var >= VAR_FLOOR * (1 - 1e-12))):
            raise ValueError(f"variances must be >= {VAR_FLOOR}")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def from_logits(cls, logits, means, variances) -> "GmmParams":
        return cls(softmax(np.asarray(logits, dtype=np.float64)), means,
                   np.maximum(np.asarray(variances, dtype=np.float64), VAR_FLOOR))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def normal_cdf(z):
    """Standard normal CDF through erfc, accurate in both tails."""
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / _SQRT2)


def normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def cdf_interval(a, b):
    """Phi(b) - Phi(a) for a <= b, evaluated on the tail that avoids cancellation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    upper = a > 0
    # in the upper tail use Phi(-a) - Phi(-b), i.e. differences of small erfc values
    lo = np.where(upper, -b, a)
    hi = np.where(upper, -a, b)
    return 0.5 * (erfc(-hi / _SQRT2) - erfc(-lo / _SQRT2))


def gmm_density(eta, params: GmmParams) -> float:
    """Mixture density at a uv point (per square pixel)."""
    d = np.asarray(eta, dtype=np.float64) - params.means
    var = params.variances
    expo = -0.5 * np.sum(d * d / var, axis=1)
    norm = 2.0 * math.pi * np.sqrt(np.prod(var, axis=1))
    return float(np.sum(params.weights * np.exp(expo) / norm))


def _axis_terms(centers, means, variances, step):
    """Per-component, per-axis CDF differences and the standardized limits."""
    sigma = np.sqrt(variances)
    c = centers[..., None, :]
    a = (c - 0.5 * step - means) / sigma
    b = (c + 0.5 * step - means) / sigma
    return cdf_interval(a, b), a, b, sigma


def bin_masses(centers, weights, means, variances, step: float, floor: float = P_FLOOR) -> np.ndarray:
    """Vectorized mixture mass of bins centered at ``centers``.

    Shapes: centers (..., 2), weights (..., K), means/variances (..., K, 2).
    Centers need not lie on the bin grid (the training surrogate uses noisy
    centers).
    """
    centers = np.asarray(centers, dtype=np.float64)
    A, _, _, _ = _axis_terms(centers, np.asarray(means, dtype=np.float64),
                             np.asarray(variances, dtype=np.float64), step)
    mass = np.sum(np.asarray(weights, dtype=np.float64) * A[..., 0] * A[..., 1], axis=-1)
    return np.maximum(mass, floor)


def discretized_prob(b: BinIndex, params: GmmParams, spec: QuantizerSpec) -> float:
    """Probability mass of one quantization bin."""
    center = np.array(b.center(spec))
    return float(bin_masses(center, params.weights, params.means, params.variances, spec.step))


def _stack(params_seq: Sequence[GmmParams]):
    w = np.stack([p.weights for p in params_seq])
    mu = np.stack([p.means for p in params_seq])
    var = np.stack([p.variances for p in params_seq])
    return w, mu, var


def code_length(bins: Sequence[BinIndex], params_seq: Sequence[GmmParams], spec: QuantizerSpec) -> float:
    """Mean code length in bits per symbol, ``-mean(log2 P(bin))``.

    ``bins`` and ``params_seq`` are flat, aligned sequences covering every
    (scanpath, step) pair of the minibatch.
    """
    if len(bins) != len(params_seq):
        raise ValueError(f"{len(bins)} bins but {len(params_seq)} parameter sets")
    if not bins:
        raise ValueError("code length of an empty sequence")
    centers = spec.step * np.asarray(bins, dtype=np.float64)
    w, mu, var = _stack(params_seq)
    return float(-np.mean(np.log2(bin_masses(centers, w, mu, var, spec.step))))


class CodeLengthGrad(NamedTuple):
    bits: float
    d_logits: np.ndarray
    d_means: np.ndarray
    d_variances: np.ndarray


def code_length_and_grad(centers, weights, means, variances, step: float,
                         floor: float = P_FLOOR) -> CodeLengthGrad:
    """Mean bits over all leading positions and its exact gradient.

    The gradient is taken with respect to the softmax logits of ``weights``,
    the means and the variances.  Bins clamped by ``floor`` contribute zero
    gradient, matching the clamp in the forward pass.
    """
    centers = np.asarray(centers, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    A, a, b, sigma = _axis_terms(centers, means, variances, step)
    Au, Av = A[..., 0], A[..., 1]
    joint = Au * Av
    raw = np.sum(weights * joint, axis=-1)
    mass = np.maximum(raw, floor)
    n = mass.size
    bits = float(-np.sum(np.log2(mass)) / n)

    # d(bits)/d(mass) = -1 / (n * mass * ln 2), zero where the floor is active
    g = np.where(raw > floor, -1.0 / (n * mass * LN2), 0.0)[..., None]

    d_logits = g * weights * (joint - raw[..., None])
    pa, pb = normal_pdf(a), normal_pdf(b)
    dA_dmu = (pa - pb) / sigma
    dA_dvar = (a * pa - b * pb) / (2.0 * variances)
    other = np.stack([Av, Au], axis=-1)
    scale = (g * weights)[..., None] * other
    return CodeLengthGrad(bits, d_logits, scale * dA_dmu, scale * dA_dvar)


def code_length_grad(params_seq: Sequence[GmmParams], bins: Sequence[BinIndex],
                     spec: QuantizerSpec) -> CodeLengthGrad:
    """Gradient of :func:`code_length` for a sequence of mixtures."""
    if len(bins) != len(params_seq):
        raise ValueError(f"{len(bins)} bins but {len(params_seq)} parameter sets")
    centers = spec.step * np.asarray(bins, dtype=np.float64)
    w, mu, var = _stack(params_seq)
    return code_length_and_grad(centers, w, mu, var, spec.step)


def axis_bin_masses(mean: float, var: float, step: float, width: float = 8.0):
    """Bins of a 1D Gaussian within ``width`` standard deviations.

    Returns (integer bin indices, masses renormalized to sum to one).
    """
    sigma = math.sqrt(var)
    lo = int(math.floor((mean - width * sigma) / step + 0.5))
    hi = int(math.floor((mean + width * sigma) / step + 0.5))
    idx = np.arange(lo, hi + 1)
    c = idx * step
    m = cdf_interval((c - 0.5 * step - mean) / sigma, (c + 0.5 * step - mean) / sigma)
    return idx, m / m.sum()


def discrete_entropy(params: GmmParams, spec: QuantizerSpec, width: float = 8.0) -> float:
    """Exact entropy in bits of the discretized mixture, by summing over every bin
    within ``width`` standard deviations of any component."""
    step = spec.step
    sig = np.sqrt(params.variances)
    lo = np.floor((np.min(params.means - width * sig, axis=0)) / step + 0.5).astype(int)
    hi = np.floor((np.max(params.means + width * sig, axis=0)) / step + 0.5).astype(int)
    cu = np.arange(lo[0], hi[0] + 1) * step
    cv = np.arange(lo[1], hi[1] + 1) * step
    # separable per component: outer products of 1D bin masses
    total = np.zeros((len(cu), len(cv)))
    for w, mu, s in zip(params.weights, params.means, sig):
        mu_ = cdf_interval((cu - 0.5 * step - mu[0]) / s[0], (cu + 0.5 * step - mu[0]) / s[0])
        mv_ = cdf_interval((cv - 0.5 * step - mu[1]) / s[1], (cv + 0.5 * step - mu[1]) / s[1])
        total += w * np.outer(mu_, mv_)
    p = total[total > 0]
    return float(-np.sum(p * np.log2(p)))
