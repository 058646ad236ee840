"""MERL binary BRDF tables, Rusinkiewicz coordinates and log-relative mapping.

File layout: three little-endian int32 extents ``(90, 90, 180)`` followed by
``90*90*180*3`` little-endian float64 values, channel-major (all red, then
green, then blue), each channel C-ordered over ``(theta_h, theta_d, phi_d)``.
Negative raw values mark unmeasured configurations.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

N_THETA_H = 90
N_THETA_D = 90
N_PHI_D = 180
SHAPE = (N_THETA_H, N_THETA_D, N_PHI_D)
CHANNEL_SCALE = np.array([1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0])
DEFAULT_EPS = 1e-3

_HALF_PI = 0.5 * np.pi


class MerlFormatError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(eq=False)
class MerlBrdf:
    """A tabulated isotropic BRDF.

    ``raw`` holds the file payload as ``(90, 90, 180, 3)`` float64; ``grid``
    is the scaled, linear-radiometric view with masked cells set to zero.
    """

    raw: np.ndarray
    name: str = ""

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.shape != SHAPE + (3,):
            raise MerlFormatError(f"grid must be {SHAPE + (3,)}, got {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise MerlFormatError("non-finite entries in BRDF table")
        raw.setflags(write=False)
        self.raw = raw
        # a cell is valid only if all three channels were measured
        mask = np.all(raw >= 0.0, axis=-1)
        mask.setflags(write=False)
        self.mask = mask
        grid = np.where(mask[..., None], raw * CHANNEL_SCALE, 0.0)
        grid.setflags(write=False)
        self.grid = grid
        self._median = None

    @classmethod
    def from_linear(cls, values, mask=None, name=""):
        """Build from linear reflectance values; ``mask`` marks valid cells."""
        values = np.asarray(values, dtype=np.float64)
        raw = values / CHANNEL_SCALE
        if mask is not None:
            raw = np.where(np.asarray(mask, bool)[..., None], raw, -1.0)
        return cls(raw, name)

    @property
    def n_valid(self):
        return int(self.mask.sum())

    def median(self):
        """Per-channel median over valid cells (the log-relative reference)."""
        if self._median is None:
            if self.n_valid == 0:
                raise DomainError(f"material {self.name!r} has no valid cells")
            self._median = np.median(self.grid[self.mask], axis=0)
        return self._median.copy()


def load_merl(path, name=None) -> MerlBrdf:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise OSError(f"{path}: truncated header")
        dims = tuple(int(d) for d in np.frombuffer(header, dtype="<i4"))
        if dims != SHAPE:
            raise MerlFormatError(f"{path}: expected extents {SHAPE}, found {dims}")
        n = 3 * int(np.prod(SHAPE))
        payload = fh.read(8 * n)
    if len(payload) != 8 * n:
        raise OSError(f"{path}: truncated payload ({len(payload)} of {8 * n} bytes)")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    raw = np.moveaxis(data.reshape((3,) + SHAPE), 0, -1)
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    return MerlBrdf(np.ascontiguousarray(raw), name)


def save_merl(brdf: MerlBrdf, path):
    payload = np.ascontiguousarray(np.moveaxis(brdf.raw, -1, 0)).astype("<f8")
    with open(os.fspath(path), "wb") as fh:
        fh.write(np.asarray(SHAPE, dtype="<i4").tobytes())
        fh.write(payload.tobytes())


# -- grid geometry --------------------------------------------------------

def theta_h_index(theta_h):
    idx = np.floor(np.sqrt(np.maximum(np.asarray(theta_h, float), 0.0) / _HALF_PI) * N_THETA_H)
    return np.clip(idx, 0, N_THETA_H - 1).astype(np.intp)


def theta_d_index(theta_d):
    idx = np.floor(np.asarray(theta_d, float) / _HALF_PI * N_THETA_D)
    return np.clip(idx, 0, N_THETA_D - 1).astype(np.intp)


def phi_d_index(phi_d):
    # reciprocity: phi_d and phi_d + pi share a cell
    p = np.mod(np.asarray(phi_d, float), np.pi)
    idx = np.floor(p / np.pi * N_PHI_D)
    return np.clip(idx, 0, N_PHI_D - 1).astype(np.intp)


def cell_centers():
    """Angles of the cell centres along each axis: ``(theta_h, theta_d, phi_d)``."""
    th = ((np.arange(N_THETA_H) + 0.5) / N_THETA_H) ** 2 * _HALF_PI
    td = (np.arange(N_THETA_D) + 0.5) / N_THETA_D * _HALF_PI
    pd = (np.arange(N_PHI_D) + 0.5) / N_PHI_D * np.pi
    return th, td, pd


@dataclass
class RusinCoords:
    theta_h: np.ndarray
    theta_d: np.ndarray
    phi_d: np.ndarray
    phi_h: np.ndarray | float = 0.0


@dataclass
class DirectionPair:
    h: np.ndarray
    d: np.ndarray


def _check_range(c: RusinCoords, tol=1e-9):
    th = np.asarray(c.theta_h, float)
    td = np.asarray(c.theta_d, float)
    pd = np.asarray(c.phi_d, float)
    if np.any(th < -tol) or np.any(th > _HALF_PI + tol):
        raise DomainError("theta_h outside [0, pi/2]")
    if np.any(td < -tol) or np.any(td > _HALF_PI + tol):
        raise DomainError("theta_d outside [0, pi/2]")
    if np.any(pd < -tol) or np.any(pd >= 2.0 * np.pi + tol):
        raise DomainError("phi_d outside [0, 2pi)")


def lookup(brdf: MerlBrdf, c: RusinCoords):
    """Nearest-cell lookup. Returns ``(rgb, valid)``; invalid cells give zeros."""
    _check_range(c)
    i = theta_h_index(c.theta_h)
    j = theta_d_index(c.theta_d)
    k = phi_d_index(c.phi_d)
    return brdf.grid[i, j, k], brdf.mask[i, j, k]


def io_to_hd(wi, wo):
    """Half/difference vectors and Rusinkiewicz angles of direction pairs.

    Works on single vectors or stacks of shape ``(..., 3)``.  ``phi_d`` is
    returned over the full circle ``[0, 2pi)`` so the map stays invertible;
    table lookups fold it onto ``[0, pi)``.
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if np.any(wi[..., 2] < -1e-12) or np.any(wo[..., 2] < -1e-12):
        raise DomainError("directions must lie in the upper hemisphere")
    s = wi + wo
    norm = np.linalg.norm(s, axis=-1)
    if np.any(norm < 1e-12):
        raise DomainError("degenerate pair: wi = -wo leaves the half vector undefined")
    h = s / norm[..., None]
    theta_h = np.arctan2(np.hypot(h[..., 0], h[..., 1]), h[..., 2])
    phi_h = np.arctan2(h[..., 1], h[..., 0])
    cp, sp = np.cos(phi_h), np.sin(phi_h)
    ct, st = np.cos(theta_h), np.sin(theta_h)
    # rotate wi by -phi_h about z, then by -theta_h about y
    x = wi[..., 0] * cp + wi[..., 1] * sp
    y = -wi[..., 0] * sp + wi[..., 1] * cp
    z = wi[..., 2]
    d = np.stack([x * ct - z * st, y, x * st + z * ct], axis=-1)
    theta_d = np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])
    phi_d = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * np.pi)
    phi_d = np.where(phi_d >= 2.0 * np.pi, 0.0, phi_d)
    phi_h = np.mod(phi_h, 2.0 * np.pi)
    return DirectionPair(h, d), RusinCoords(theta_h, theta_d, phi_d, phi_h)


def hd_vectors(c: RusinCoords):
    """Cartesian half and difference vectors for the given angles."""
    th = np.asarray(c.theta_h, float)
    td = np.asarray(c.theta_d, float)
    pd = np.asarray(c.phi_d, float)
    ph = np.asarray(c.phi_h, float) + np.zeros_like(th)
    h = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    d = np.stack([np.sin(td) * np.cos(pd), np.sin(td) * np.sin(pd), np.cos(td)], axis=-1)
    return DirectionPair(h, d)


def hd_to_io(c: RusinCoords):
    """Inverse of :func:`io_to_hd`: returns ``(wi, wo)``."""
    pair = hd_vectors(c)
    d = pair.d
    th = np.asarray(c.theta_h, float)
    ph = np.asarray(c.phi_h, float) + np.zeros_like(th)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(ph), np.sin(ph)
    # rotate d by theta_h about y, then by phi_h about z
    x = d[..., 0] * ct + d[..., 2] * st
    y = d[..., 1]
    z = -d[..., 0] * st + d[..., 2] * ct
    wi = np.stack([x * cp - y * sp, x * sp + y * cp, z], axis=-1)
    wo = 2.0 * np.sum(wi * pair.h, axis=-1, keepdims=True) * pair.h - wi
    return wi, wo


def cos_theta_in(c: RusinCoords):
    """Cosine between the incoming direction and the surface normal."""
    wi, _ = hd_to_io(c)
    return wi[..., 2]


# -- log-relative mapping -------------------------------------------------

def log_relative_map(values, f_ref, eps=DEFAULT_EPS):
    values = np.asarray(values, dtype=np.float64)
    if eps <= 0:
        raise DomainError("eps must be positive")
    if np.any(values < 0.0):
        raise DomainError("log-relative map is undefined for negative reflectance")
    return np.log((values + eps) / (np.asarray(f_ref, float) + eps))


def inverse_log_relative_map(mapped, f_ref, eps=DEFAULT_EPS):
    out = np.exp(np.asarray(mapped, float)) * (np.asarray(f_ref, float) + eps) - eps
    return np.maximum(out, 0.0)
