"""Continuous functions on the unit sphere from BRDF slices.

Fixing the third tabulated angle (``phi_d = alpha``) leaves a function of
``(theta_h, theta_d)`` on ``[0, pi/2]^2``, which is stretched linearly onto
sphere coordinates: ``theta = 2 * theta_h`` and ``phi = 4 * theta_d``.
Tabulated slices are turned into continuous fields by Gaussian-weighted
k-nearest-neighbour interpolation under the chord distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .merl import MerlBrdf, RusinCoords, cell_centers, phi_d_index

THETA_SCALE = 2.0
PHI_SCALE = 4.0


@dataclass(frozen=True)
class InterpConfig:
    k: int = 8
    sigma: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class SliceSpec:
    alpha: float
    theta_scale: float = THETA_SCALE
    phi_scale: float = PHI_SCALE

    def __post_init__(self):
        if not 0.0 <= self.alpha < 2.0 * np.pi:
            raise ValueError(f"slice angle {self.alpha} outside [0, 2pi)")

    def to_sphere(self, theta_h, theta_d):
        return self.theta_scale * np.asarray(theta_h, float), self.phi_scale * np.asarray(theta_d, float)

    def from_sphere(self, theta, phi):
        return np.asarray(theta, float) / self.theta_scale, np.asarray(phi, float) / self.phi_scale

    def coords(self, theta, phi):
        """Rusinkiewicz coordinates of sphere points on this slice."""
        th, td = self.from_sphere(theta, phi)
        return RusinCoords(th, td, np.full_like(th, self.alpha), 0.0)


def slice_angles(n_slices):
    """``n_slices`` values of the third angle, evenly spread over ``[0, pi)``."""
    if n_slices < 1:
        raise ValueError("need at least one slice")
    return (np.arange(n_slices) + 0.5) * np.pi / n_slices


def to_cartesian(theta, phi):
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


@dataclass
class SphereSamples:
    """Sample positions on the sphere with their RGB values, stored column-wise."""

    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    xyz: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float).ravel()
        self.phi = np.asarray(self.phi, float).ravel()
        self.values = np.asarray(self.values, float).reshape(len(self.theta), -1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample values must be finite")
        self.xyz = to_cartesian(self.theta, self.phi)

    def __len__(self):
        return len(self.theta)

    def permuted(self, order):
        return SphereSamples(self.theta[order], self.phi[order], self.values[order])


def slice_to_sphere(brdf_eval, spec: SliceSpec, grid_positions) -> SphereSamples:
    """Sample ``brdf_eval`` on one slice at the given ``(theta_h, theta_d)`` nodes.

    ``brdf_eval`` takes :class:`RusinCoords` and returns ``(rgb, valid)``;
    invalid samples are dropped.
    """
    theta_h, theta_d = (np.asarray(a, float) for a in grid_positions)
    if theta_h.size == 0 or theta_d.size == 0:
        raise ValueError("empty grid")
    th, td = np.meshgrid(theta_h, theta_d, indexing="ij")
    th, td = th.ravel(), td.ravel()
    rgb, valid = brdf_eval(RusinCoords(th, td, np.full_like(th, spec.alpha), 0.0))
    valid = np.broadcast_to(np.asarray(valid, bool), th.shape)
    theta, phi = spec.to_sphere(th[valid], td[valid])
    if theta.size == 0:
        raise ValueError("slice has no valid samples")
    return SphereSamples(theta, phi, np.asarray(rgb)[valid])


def merl_slice(brdf: MerlBrdf, spec: SliceSpec, transform=None) -> SphereSamples:
    """Valid cells of the tabulated slice whose ``phi_d`` cell holds ``alpha``.

    ``transform`` maps the ``(n, 3)`` reflectance values before they are
    stored (e.g. a log-relative map).
    """
    th, td, _ = cell_centers()
    k = int(phi_d_index(spec.alpha))
    vals = brdf.grid[:, :, k]
    mask = brdf.mask[:, :, k]
    tt, dd = np.meshgrid(th, td, indexing="ij")
    values = vals[mask]
    if values.shape[0] == 0:
        raise ValueError(f"slice at alpha={spec.alpha} has no valid cells")
    if transform is not None:
        values = transform(values)
    theta, phi = spec.to_sphere(tt[mask], dd[mask])
    return SphereSamples(theta, phi, values)


def chord_distance(p, q):
    """Euclidean distance between two sphere points given as ``(theta, phi)``."""
    t, f = (np.asarray(a, float) for a in p)
    ti, fi = (np.asarray(a, float) for a in q)
    inner = np.sin(t) * np.sin(ti) * np.cos(f - fi) + np.cos(t) * np.cos(ti)
    return np.sqrt(np.maximum(2.0 - 2.0 * inner, 0.0))


def knn_weights(p, samples: SphereSamples, cfg: InterpConfig):
    """Indices and normalised Gaussian weights of the ``k`` nearest samples."""
    if cfg.k > len(samples):
        raise ValueError(f"k={cfg.k} exceeds the {len(samples)} available samples")
    d = chord_distance(p, (samples.theta, samples.phi))
    idx = np.argsort(d * d, kind="stable")[: cfg.k]
    d2 = d[idx] ** 2
    # subtracting the smallest distance cancels in the normalisation
    w = np.exp(-(d2 - d2[0]) / (2.0 * cfg.sigma ** 2))
    w /= w.sum()
    return list(zip(idx.tolist(), w.tolist()))


def interpolate_on_sphere(p, samples: SphereSamples, cfg: InterpConfig):
    out = np.zeros(samples.values.shape[1])
    for i, w in knn_weights(p, samples, cfg):
        out += w * samples.values[i]
    return out


def interpolate_many(theta, phi, samples: SphereSamples, cfg: InterpConfig):
    """Vectorised :func:`interpolate_on_sphere` over arrays of query angles."""
    if cfg.k > len(samples):
        raise ValueError(f"k={cfg.k} exceeds the {len(samples)} available samples")
    q = to_cartesian(np.ravel(theta), np.ravel(phi))
    return kernels.knn_interpolate(q, samples.xyz, samples.values, cfg.k, cfg.sigma)
