from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import ErpFrame, SphericalPoint, ViewportSpec, extract_viewport, project_points

log = logging.getLogger(__name__)


@dataclass
class HistoryWindow:
    """Historical context ending at the anchor viewpoint (time T-1).

    ``paths[j]`` is the last 2R+1 viewpoints projected onto the viewport of
    historical viewpoint ``T-R+j``; ``clamped`` marks entries that fell behind
    that viewport and were pushed to its border.
    """

    viewports: list
    paths: np.ndarray
    anchor: SphericalPoint
    rate: float = 5.0
    clamped: np.ndarray = field(default=None)

    @property
    def R(self) -> int:
        return self.paths.shape[0]

    def __post_init__(self):
        R = self.paths.shape[0]
        if self.paths.shape != (R, 2 * R + 1, 2):
            raise ValueError(f"projected paths must have shape (R, 2R+1, 2), got {self.paths.shape}")
        if len(self.viewports) != R:
            raise ValueError("need one viewport (or None) per historical viewpoint")
        if self.clamped is None:
            self.clamped = np.zeros(self.paths.shape[:2], dtype=bool)


@dataclass
class CausalContext:
    """Viewpoints already emitted in the current round (anchor uv frame)."""

    horizon: int
    points: list = field(default_factory=list)

    def append(self, uv) -> None:
        if len(self.points) >= self.horizon:
            raise ValueError(f"causal context is limited to {self.horizon} entries")
        self.points.append((float(uv[0]), float(uv[1])))

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        """Padded (S, 2) array; entries past ``len(self)`` are zero and never read."""
        out = np.zeros((self.horizon, 2))
        if self.points:
            out[: len(self.points)] = self.points
        return out


def project_window(points: np.ndarray, R: int, spec: ViewportSpec):
    """Project the 2R+1 trailing viewpoints onto each of the last R viewports.

    ``points`` is a (2R+1, 2) array of (phi, theta).  Returns (paths, clamped).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (2 * R + 1, 2):
        raise ValueError(f"expected {2 * R + 1} viewpoints, got {points.shape}")
    paths = np.empty((R, 2 * R + 1, 2))
    clamped = np.zeros((R, 2 * R + 1), dtype=bool)
    for j in range(R):
        a = points[R + j]
        paths[j], clamped[j] = project_points(points[:, 0], points[:, 1], SphericalPoint(a[0], a[1]),
                                              spec, clamp=True)
        # the anchor maps to the origin by construction; pin it against rounding
        paths[j, R + j] = 0.0
    if clamped.any():
        log.debug("%d historical viewpoints clamped to the viewport border", int(clamped.sum()))
    return paths, clamped


def build_history(points: np.ndarray, frames: Sequence[ErpFrame] | None, t_anchor: int, R: int,
                  spec: ViewportSpec, rate: float = 5.0, frame_index=None,
                  extract: bool = True) -> HistoryWindow:
    """History window for anchor index ``t_anchor`` of a scanpath.

    ``points`` holds (phi, theta) rows.  Viewports are taken at the R viewpoints
    ending at the anchor; ``frame_index`` maps a scanpath index to a frame
    index (identity by default).  Without frames the viewports are ``None``.
    """
    points = np.asarray(points, dtype=np.float64)
    if R < 1:
        raise ValueError("R must be >= 1")
    if t_anchor < 2 * R or t_anchor >= len(points):
        raise ValueError(f"anchor {t_anchor} needs 2R={2 * R} earlier viewpoints within a path of "
                         f"length {len(points)}")
    window = points[t_anchor - 2 * R: t_anchor + 1]
    paths, clamped = project_window(window, R, spec)
    viewports = []
    for k in range(t_anchor - R + 1, t_anchor + 1):
        raster = None
        if frames is not None and extract:
            fi = k if frame_index is None else frame_index(k)
            if 0 <= fi < len(frames):
                raster = extract_viewport(frames[fi], SphericalPoint(*points[k]), spec)
            else:
                log.warning("no frame %d for history index %d; using an empty viewport", fi, k)
        viewports.append(raster)
    anchor = SphericalPoint(*points[t_anchor])
    return HistoryWindow(viewports, paths, anchor, rate, clamped)
