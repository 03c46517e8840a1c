"""Spherical, ERP and viewport-relative (uv) coordinate transforms.

Conventions: latitude ``phi`` in [-pi/2, pi/2], longitude ``theta`` in
[-pi, pi).  A viewport is the plane ``x = r`` tangent to a sphere of radius
``r`` (pixels); relative uv coordinates put the tangent point at (0, 0), with
``u`` to the right and ``v`` downwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

TWO_PI = 2.0 * math.pi
# points whose rotated x-coordinate falls below this fraction of r are
# treated as lying behind the viewport plane
BEHIND_EPS = 1e-6


class BehindViewportError(ValueError):
    """A point cannot be projected because it lies at or behind the viewport plane."""


def wrap_longitude(theta):
    """Map longitude(s) into [-pi, pi)."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    # mod can return exactly 2*pi - pi for inputs a hair below the seam
    out = np.where(out >= math.pi, out - TWO_PI, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SphericalPoint:
    phi: float
    theta: float

    def __post_init__(self):
        phi = float(self.phi)
        if not math.isfinite(phi) or not math.isfinite(float(self.theta)):
            raise ValueError(f"non-finite viewpoint ({self.phi}, {self.theta})")
        if abs(phi) > math.pi / 2:
            raise ValueError(f"latitude {phi} outside [-pi/2, pi/2]")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", wrap_longitude(float(self.theta)))


class UvPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class ViewportSpec:
    """Viewport raster size and field of view (radians)."""

    height: int = 252
    width: int = 484
    fov_v: float = math.radians(63.0)
    fov_h: float = math.radians(112.0)
    radius: float = field(init=False)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("viewport height and width must be >= 1")
        if not 0.0 < self.fov_h < math.pi:
            raise ValueError("horizontal FoV must lie in (0, pi)")
        # r depends on the horizontal extent only; fov_v is metadata
        object.__setattr__(self, "radius", 0.5 * self.width / math.tan(0.5 * self.fov_h))

    @classmethod
    def parse(cls, text: str) -> "ViewportSpec":
        """Parse ``"HxW@FOVVxFOVH"`` with FoV in degrees, e.g. ``252x484@63x112``."""
        try:
            size, fov = text.strip().split("@")
            h, w = (int(s) for s in size.lower().split("x"))
            fv, fh = (float(s) for s in fov.lower().split("x"))
        except ValueError as exc:
            raise ValueError(f"bad viewport spec {text!r}; expected HxW@FOVVxFOVH") from exc
        return cls(h, w, math.radians(fv), math.radians(fh))

    def format(self) -> str:
        return (f"{self.height}x{self.width}@"
                f"{math.degrees(self.fov_v):.12g}x{math.degrees(self.fov_h):.12g}")


@dataclass(frozen=True)
class ErpFrame:
    """Equirectangular frame stored as an (H, W, C) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"ERP frame must be HxW or HxWx{{1,3}}, got {data.shape}")
        object.__setattr__(self, "data", np.ascontiguousarray(data, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def sph_to_vec(phi, theta, r: float = 1.0) -> np.ndarray:
    """Cast latitude/longitude to 3D points on a sphere of radius r (last axis = xyz)."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    cp = np.cos(phi)
    return r * np.stack([cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)], axis=-1)


def vec_to_sph(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latitude/longitude of 3D vectors of any length (atan2 over all quadrants)."""
    q = np.asarray(q, dtype=np.float64)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    norm = np.sqrt(x * x + y * y + z * z)
    phi = np.arcsin(np.clip(z / norm, -1.0, 1.0))
    theta = np.arctan2(y, x)
    # atan2 returns +pi on the negative-x half axis; the canonical range is [-pi, pi)
    theta = np.where(theta >= math.pi, theta - TWO_PI, theta)
    return phi, theta


def cross_matrix(k) -> np.ndarray:
    kx, ky, kz = (float(c) for c in k)
    return np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])


def rodrigues_matrix(k, omega: float) -> np.ndarray:
    """Matrix of the right-handed rotation by ``omega`` about the unit axis ``k``."""
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (3,) or abs(np.linalg.norm(k) - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be a unit 3-vector, got {k}")
    K = cross_matrix(k)
    return np.eye(3) + math.sin(omega) * K + (1.0 - math.cos(omega)) * (K @ K)


def rodrigues_rotate(q, k, omega: float) -> np.ndarray:
    """Rotate vector(s) ``q`` (last axis xyz) about unit axis ``k`` by ``omega``."""
    return np.asarray(q, dtype=np.float64) @ rodrigues_matrix(k, omega).T


_Z_AXIS = np.array([0.0, 0.0, 1.0])
_Y_AXIS = np.array([0.0, 1.0, 0.0])


def rotation_matrix(viewpoint: SphericalPoint) -> np.ndarray:
    """Rotation taking the viewport center (r, 0, 0) to the given viewpoint.

    First a turn about z by theta, then a turn by -phi about the rotated y axis.
    """
    rz = rodrigues_matrix(_Z_AXIS, viewpoint.theta)
    y_rot = rz @ _Y_AXIS
    y_rot /= np.linalg.norm(y_rot)
    return rodrigues_matrix(y_rot, -viewpoint.phi) @ rz


def sph_to_erp(p: SphericalPoint, H: int, W: int) -> tuple[float, float]:
    """Continuous ERP sampling position (row m, column n) of a viewpoint."""
    m = (0.5 - p.phi / math.pi) * H - 0.5
    n = (p.theta / TWO_PI + 0.5) * W - 0.5
    return m, n


def _erp_positions(phi, theta, H, W):
    m = (0.5 - phi / math.pi) * H - 0.5
    n = (theta / TWO_PI + 0.5) * W - 0.5
    return m, n


def bilinear_sample(frame: ErpFrame, m, n) -> np.ndarray:
    """Bilinear interpolation at ERP positions; columns wrap, rows clamp.

    Returns float64 samples with shape ``np.shape(m) + (channels,)``.
    """
    H, W, C = frame.data.shape
    flat = frame.data.reshape(H * W, C)
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    shape = m.shape
    m = m.ravel()
    n = n.ravel()
    m0 = np.floor(m)
    n0 = np.floor(n)
    wm = m - m0
    wn = n - n0
    m0 = m0.astype(np.int64)
    n0 = n0.astype(np.int64)
    r0 = np.clip(m0, 0, H - 1) * W
    r1 = np.clip(m0 + 1, 0, H - 1) * W
    c0 = np.mod(n0, W)
    c1 = c0 + 1
    c1[c1 == W] = 0
    out = np.empty((m.size, C))
    for ch in range(C):
        band = flat[:, ch]
        top = band[r0 + c0] + wn * (band[r0 + c1] - band[r0 + c0].astype(np.float64))
        bottom = band[r1 + c0] + wn * (band[r1 + c1] - band[r1 + c0].astype(np.float64))
        out[:, ch] = top + wm * (bottom - top)
    return out.reshape(shape + (C,))


@lru_cache(maxsize=8)
def _viewport_rays(spec: ViewportSpec) -> tuple[np.ndarray, np.ndarray]:
    """Viewport pixel positions (r, y, z) as a (3, Hv*Wv) array, and their lengths."""
    y = np.arange(spec.width, dtype=np.float64) - 0.5 * spec.width + 0.5
    z = 0.5 * spec.height - np.arange(spec.height, dtype=np.float64) - 0.5
    zz, yy = np.meshgrid(z, y, indexing="ij")
    rays = np.stack([np.full(yy.size, spec.radius), yy.ravel(), zz.ravel()])
    norm = np.sqrt(np.sum(rays * rays, axis=0))
    rays.flags.writeable = False
    norm.flags.writeable = False
    return rays, norm


def _padded_band(frame: ErpFrame, r0: int, r1: int) -> torch.Tensor:
    """Rows r0..r1 as a (1, C, rows, W+2) float64 tensor with one wrapped column per side."""
    d = frame.data[r0: r1 + 1]
    padded = np.concatenate([d[:, -1:], d, d[:, :1]], axis=1).transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(padded, dtype=np.float64))[None]


def extract_viewport(frame: ErpFrame, viewpoint: SphericalPoint, spec: ViewportSpec) -> np.ndarray:
    """Rectilinear viewport raster (Hv, Wv, C) tangent to the sphere at ``viewpoint``.

    Equivalent to :func:`bilinear_sample` at the ERP positions of every
    viewport ray; the interpolation itself runs through torch's grid sampler
    on a column-wrapped copy of the frame.
    """
    rays, norm = _viewport_rays(spec)
    q = rotation_matrix(viewpoint) @ rays
    phi = np.arcsin(np.clip(q[2] / norm, -1.0, 1.0))
    theta = np.arctan2(q[1], q[0])
    H, W = frame.height, frame.width
    m, n = _erp_positions(phi, theta, H, W)
    # only the band of rows the viewport touches is converted for the sampler
    r0 = min(max(int(math.floor(m.min())), 0), H - 1)
    r1 = min(max(int(math.floor(m.max())) + 1, 0), H - 1)
    rows = r1 - r0 + 1
    # Normalized grid coordinates.  Rows clamp at the band border, which is
    # the frame border whenever a sample falls outside the frame.  theta lies
    # in [-pi, pi], so the padded column n + 1 stays within [0.5, W + 0.5]
    # and needs no wrapping.
    gx = (n + 1.0) * (2.0 / (W + 1)) - 1.0
    gy = (m - r0) * (2.0 / (rows - 1)) - 1.0 if rows > 1 else np.zeros_like(m)
    grid = torch.from_numpy(np.stack([gx, gy], axis=-1).reshape(1, spec.height, spec.width, 2))
    out = F.grid_sample(_padded_band(frame, r0, r1), grid, mode="bilinear", padding_mode="border",
                        align_corners=True)
    return out[0].permute(1, 2, 0).numpy()


def project_to_uv(point: SphericalPoint, anchor: SphericalPoint, spec: ViewportSpec) -> UvPoint:
    """Relative uv coordinates of ``point`` on the viewport tangent at ``anchor``."""
    uv, behind = project_points(np.array([point.phi]), np.array([point.theta]), anchor, spec)
    if behind[0]:
        raise BehindViewportError(f"{point} lies behind the viewport plane at {anchor}")
    return UvPoint(float(uv[0, 0]), float(uv[0, 1]))


def project_points(phi, theta, anchor: SphericalPoint, spec: ViewportSpec,
                   clamp: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection onto the anchor viewport.

    Returns ``(uv, behind)`` where ``uv`` has shape (N, 2) and ``behind`` flags
    points at or behind the plane.  Behind points are NaN unless ``clamp`` is
    set, in which case they are pushed to the viewport border along their
    in-plane direction.
    """
    r = spec.radius
    local = sph_to_vec(np.atleast_1d(phi), np.atleast_1d(theta), r) @ rotation_matrix(anchor)
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    behind = x <= BEHIND_EPS * r
    safe_x = np.where(behind, 1.0, x)
    uv = np.stack([y * r / safe_x, -z * r / safe_x], axis=1)
    if behind.any():
        if clamp:
            uv[behind] = _to_border(np.stack([y[behind], -z[behind]], axis=1), spec)
        else:
            uv[behind] = np.nan
    return uv, behind


def _to_border(direction: np.ndarray, spec: ViewportSpec) -> np.ndarray:
    half = np.array([0.5 * spec.width, 0.5 * spec.height])
    scale = np.max(np.abs(direction) / half, axis=1)
    out = np.zeros_like(direction)
    nz = scale > 0
    out[nz] = direction[nz] / scale[nz, None]
    return out


def uv_to_sph(p: UvPoint, anchor: SphericalPoint, spec: ViewportSpec) -> SphericalPoint:
    """Inverse of :func:`project_to_uv`."""
    phi, theta = uv_points_to_sph(np.array([[p[0], p[1]]], dtype=np.float64), anchor, spec)
    return SphericalPoint(float(phi[0]), float(theta[0]))


def uv_points_to_sph(uv: np.ndarray, anchor: SphericalPoint,
                     spec: ViewportSpec) -> tuple[np.ndarray, np.ndarray]:
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    q = np.stack([np.full(len(uv), spec.radius), uv[:, 0], -uv[:, 1]], axis=1)
    phi, theta = vec_to_sph(q @ rotation_matrix(anchor).T)
    return np.atleast_1d(phi), np.atleast_1d(theta)
