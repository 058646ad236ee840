"""Spherical-harmonic analysis of BRDF slices.

Complex orthonormal harmonics with the Condon-Shortley phase; coefficients
are stored flat at index ``l*l + l + m``.  The forward transform is a
quadrature sum over a Gauss-Legendre (in ``cos theta``) by uniform-``phi``
product grid, exact for band-limited fields of degree ``<= L``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .merl import MerlBrdf
from .sphere import InterpConfig, SliceSpec, interpolate_many, merl_slice, slice_angles

DEFAULT_BAND_LIMIT = 8


def n_coeffs(L):
    return (L + 1) ** 2


def coeff_index(l, m):
    return l * l + l + m


def _normalized_legendre(L, x):
    """``p[l, m]`` = orthonormal associated Legendre part of ``Y_lm`` for ``m >= 0``."""
    x = np.asarray(x, float)
    s = np.sqrt(np.maximum(1.0 - x * x, 0.0))
    p = np.zeros((L + 1, L + 1) + x.shape)
    pmm = np.full(x.shape, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(L + 1):
        if m > 0:
            pmm = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        p[m, m] = pmm
        if m + 1 <= L:
            p[m + 1, m] = x * np.sqrt(2.0 * m + 3.0) * pmm
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    return p


def sh_matrix(L, theta, phi):
    """All harmonics up to degree ``L`` at the given points: ``(npoints, (L+1)^2)``."""
    theta = np.ravel(np.asarray(theta, float))
    phi = np.ravel(np.asarray(phi, float))
    p = _normalized_legendre(L, np.cos(theta))
    out = np.empty((theta.size, n_coeffs(L)), dtype=np.complex128)
    for m in range(L + 1):
        e = np.exp(1j * m * phi)
        sign = -1.0 if m % 2 else 1.0
        for l in range(m, L + 1):
            y = p[l, m] * e
            out[:, coeff_index(l, m)] = y
            if m:
                out[:, coeff_index(l, -m)] = sign * np.conj(y)
    return out


def sh_basis(l, m, theta, phi):
    """Orthonormal complex spherical harmonic ``Y_l^m(theta, phi)``."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid degree/order (l={l}, m={m})")
    theta = np.asarray(theta, float)
    val = sh_matrix(l, theta, np.broadcast_to(phi, theta.shape))[:, coeff_index(l, m)]
    return val.reshape(theta.shape) if theta.ndim else complex(val[0])


@dataclass(frozen=True)
class QuadratureGrid:
    """Product quadrature on the sphere; ``theta``/``phi``/``weights`` are per node."""

    L: int
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.theta.size


def quadrature_grid(L, n_theta=None, n_phi=None) -> QuadratureGrid:
    """Gauss-Legendre in ``cos theta`` times uniform ``phi`` (offset by half a step).

    The defaults ``L+1`` by ``2L+2`` integrate products of two degree-``L``
    harmonics exactly.
    """
    n_theta = L + 1 if n_theta is None else n_theta
    n_phi = 2 * L + 2 if n_phi is None else n_phi
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    w = np.repeat(wx * (2.0 * np.pi / n_phi), n_phi)
    return QuadratureGrid(L, tt.ravel(), pp.ravel(), w)


@dataclass
class ShSpectrum:
    L: int
    coeffs: np.ndarray  # ((L+1)^2, channels) complex
    slice_id: int = 0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[:, None]
        if self.coeffs.shape[0] != n_coeffs(self.L):
            raise ValueError(f"expected {n_coeffs(self.L)} coefficients, got {self.coeffs.shape[0]}")

    def coeff(self, l, m):
        return self.coeffs[coeff_index(l, m)]

    def band_power(self):
        """Per-degree power ``sum_m |c_lm|^2``, shape ``(L+1, channels)``."""
        power = np.abs(self.coeffs) ** 2
        return np.array([power[l * l:(l + 1) ** 2].sum(axis=0) for l in range(self.L + 1)])


def transform_matrix(grid: QuadratureGrid, L):
    """Complex matrix ``A`` with ``coeffs = A @ node_values``."""
    if L > grid.L:
        raise ValueError(f"band limit {L} exceeds the grid's exactness degree {grid.L}")
    return (np.conj(sh_matrix(L, grid.theta, grid.phi)) * grid.weights[:, None]).T


def forward_transform(field, grid: QuadratureGrid, L=None, slice_id=0) -> ShSpectrum:
    """Quadrature estimate of ``c_lm = int f conj(Y_lm) dOmega`` per channel.

    ``field`` is either a callable ``(theta, phi) -> (n, channels)`` or the
    array of its values at the grid nodes.
    """
    L = grid.L if L is None else L
    values = field(grid.theta, grid.phi) if callable(field) else field
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != grid.size:
        raise ValueError(f"field has {values.shape[0]} node values, grid has {grid.size} nodes")
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        j = int(bad[0])
        raise ValueError(f"non-finite field value at node {j} (theta={grid.theta[j]:.6g}, phi={grid.phi[j]:.6g})")
    return ShSpectrum(L, transform_matrix(grid, L) @ values, slice_id)


def quadrature_energy(values, grid: QuadratureGrid):
    """Quadrature estimate of ``int |f|^2 dOmega`` per channel."""
    values = np.asarray(values, float).reshape(grid.size, -1)
    return grid.weights @ (values * values)


@dataclass(frozen=True)
class SliceConfig:
    n_slices: int = 4
    interp: InterpConfig = InterpConfig()

    def specs(self):
        return [SliceSpec(float(a)) for a in slice_angles(self.n_slices)]


def slice_node_values(brdf_eval, spec: SliceSpec, grid: QuadratureGrid, interp: InterpConfig, transform=None):
    """Field values of one slice at the quadrature nodes.

    Tabulated materials are interpolated from their valid cells; anything
    else is a callable taking :class:`RusinCoords` and is evaluated directly.
    """
    if isinstance(brdf_eval, MerlBrdf):
        samples = merl_slice(brdf_eval, spec, transform)
        return interpolate_many(grid.theta, grid.phi, samples, interp)
    values = np.asarray(brdf_eval(spec.coords(grid.theta, grid.phi)), float)
    return transform(values) if transform is not None else values


def brdf_frequency_coefficients(brdf_eval, slices: SliceConfig, grid: QuadratureGrid, L=None, transform=None):
    """One spectrum per slice of ``brdf_eval`` (tabulated or callable)."""
    return [
        forward_transform(slice_node_values(brdf_eval, spec, grid, slices.interp, transform), grid, L, slice_id=s)
        for s, spec in enumerate(slices.specs())
    ]


def frequency_loss(a, b):
    """Mean squared coefficient difference over slices, channels and ``(l, m)``."""
    if len(a) != len(b):
        raise ValueError(f"slice count mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("no spectra given")
    total = 0.0
    count = 0
    for sa, sb in zip(a, b):
        if sa.L != sb.L:
            raise ValueError(f"band-limit mismatch: {sa.L} vs {sb.L}")
        if sa.coeffs.shape != sb.coeffs.shape:
            raise ValueError(f"channel mismatch: {sa.coeffs.shape} vs {sb.coeffs.shape}")
        diff = sa.coeffs - sb.coeffs
        total += float(np.sum(diff.real ** 2 + diff.imag ** 2))
        count += diff.size
    return total / count


def write_spectra_csv(spectra, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slice", "channel", "l", "m", "re", "im"])
        for spec in spectra:
            for c in range(spec.coeffs.shape[1]):
                for l in range(spec.L + 1):
                    for m in range(-l, l + 1):
                        v = spec.coeffs[coeff_index(l, m), c]
                        w.writerow([spec.slice_id, c, l, m, repr(float(v.real)), repr(float(v.imag))])


def read_spectra_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["slice"]), []).append(r)
    out = []
    for s in sorted(rows):
        rs = rows[s]
        L = max(int(r["l"]) for r in rs)
        nch = max(int(r["channel"]) for r in rs) + 1
        coeffs = np.zeros((n_coeffs(L), nch), dtype=np.complex128)
        for r in rs:
            coeffs[coeff_index(int(r["l"]), int(r["m"])), int(r["channel"])] = complex(float(r["re"]), float(r["im"]))
        out.append(ShSpectrum(L, coeffs, s))
    return out
