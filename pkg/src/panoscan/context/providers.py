"""Visual feature providers: fixed transforms from a viewport raster to a small
feature grid.  The learned part of the visual pathway lives in the network."""

from __future__ import annotations

from functools import lru_cache
from typing import Protocol

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])


class FeatureProvider(Protocol):
    name: str
    channels: int
    grid: tuple[int, int]

    def describe(self, raster: np.ndarray | None) -> np.ndarray:
        """Feature grid of shape (channels, *grid); ``None`` means no frame."""
        ...


def luminance(raster: np.ndarray) -> np.ndarray:
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim == 2:
        return raster
    if raster.shape[2] == 1:
        return raster[:, :, 0]
    return raster @ _LUMA


@lru_cache(maxsize=32)
def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging equal fractional-width bins of a 1D axis."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo = np.arange(n_in)
    overlap = np.clip(np.minimum(edges[1:, None], lo + 1.0) - np.maximum(edges[:-1, None], lo), 0.0, None)
    w = overlap / (n_in / n_out)
    w.flags.writeable = False
    return w


def area_pool(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average pooling to (out_h, out_w); preserves the mean."""
    h, w = image.shape
    return _area_weights(h, out_h) @ image @ _area_weights(w, out_w).T


class PooledLuminanceProvider:
    """Luminance average-pooled onto an 8x14 grid (one channel)."""

    name = "pooled_luminance"
    channels = 1

    def __init__(self, grid: tuple[int, int] = (8, 14)):
        self.grid = tuple(grid)

    def describe(self, raster):
        if raster is None:
            return np.zeros((1,) + self.grid)
        return area_pool(luminance(raster), *self.grid)[None]


PROVIDERS = {PooledLuminanceProvider.name: PooledLuminanceProvider}


def get_provider(name: str) -> FeatureProvider:
    try:
        return PROVIDERS[name]()
    except KeyError:
        raise ValueError(f"unknown feature provider {name!r}; known: {sorted(PROVIDERS)}") from None
