"""Synthetic scanpaths with a known generator, for recovery checks.

Each path is a random walk on the bin grid of the viewport tangent at a
random anchor: every quantized uv increment is an independent draw from a
fixed discretized Gaussian mixture.  The walk is then mapped to the sphere.
A model that sees the previous viewpoint can at best reach the generator's
discrete entropy per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..entropy import GmmParams, QuantizerSpec, discrete_entropy
from ..geometry import SphericalPoint, ViewportSpec, uv_points_to_sph
from ..metrics import Scanpath
from ..sampler import sample_reference
from .io import FormatError, read_kv


@dataclass
class SyntheticSpec:
    gmm: GmmParams = field(default_factory=lambda: GmmParams(
        [0.6, 0.4], [[1.5, 0.0], [-1.0, 1.0]], [[1.0, 1.0], [0.5, 2.0]]))
    n_paths: int = 100
    length: int = 25
    seed: int = 0
    step: float = 0.2
    lat_range: float = 0.6
    video_id: str = "synth"
    rate: float = 5.0
    viewport: ViewportSpec = field(default_factory=ViewportSpec)

    @classmethod
    def from_mapping(cls, kv: dict) -> "SyntheticSpec":
        spec = cls()
        known = {"gmm.weights", "gmm.means", "gmm.variances", "paths", "length", "seed", "delta",
                 "lat_range", "video", "rate", "viewport"}
        unknown = sorted(set(kv) - known)
        if unknown:
            raise FormatError(f"unknown synthetic spec keys: {', '.join(unknown)}")

        def floats(key):
            return [float(x) for x in kv[key].replace(",", " ").split()]

        try:
            if {"gmm.weights", "gmm.means", "gmm.variances"} & set(kv):
                spec.gmm = GmmParams(floats("gmm.weights"), floats("gmm.means"), floats("gmm.variances"))
            spec.n_paths = int(kv.get("paths", spec.n_paths))
            spec.length = int(kv.get("length", spec.length))
            spec.seed = int(kv.get("seed", spec.seed))
            spec.step = float(kv.get("delta", spec.step))
            spec.lat_range = float(kv.get("lat_range", spec.lat_range))
            spec.rate = float(kv.get("rate", spec.rate))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad synthetic spec: {exc}") from None
        spec.video_id = kv.get("video", spec.video_id)
        if "viewport" in kv:
            spec.viewport = ViewportSpec.parse(kv["viewport"])
        return spec

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        return cls.from_mapping(read_kv(path))


@dataclass
class SyntheticData:
    scanpaths: list
    entropy_bits: float
    walks: list


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Random-walk scanpaths and the generator's exact entropy (bits per step)."""
    quant = QuantizerSpec(spec.step)
    rng = np.random.default_rng(spec.seed)
    paths, walks = [], []
    for i in range(spec.n_paths):
        anchor = SphericalPoint(rng.uniform(-spec.lat_range, spec.lat_range), rng.uniform(-math.pi, math.pi))
        bins = np.zeros((spec.length, 2), dtype=np.int64)
        for t in range(1, spec.length):
            b = sample_reference(spec.gmm, quant, rng)
            bins[t] = bins[t - 1] + b
        uv = bins * spec.step
        phi, theta = uv_points_to_sph(uv, anchor, spec.viewport)
        paths.append(Scanpath(spec.video_id, f"u{i:05d}", np.stack([phi, theta], axis=1), 0, spec.rate))
        walks.append(uv)
    return SyntheticData(paths, discrete_entropy(spec.gmm, quant), walks)
