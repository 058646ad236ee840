"""Analytic materials tabulated onto the MERL grid.

These let every experiment run without the (separately licensed) measured
dataset.  Configurations with either direction below the horizon are
stored as unmeasured, like the holes in measured tables.
"""
from __future__ import annotations

import numpy as np

from .merl import MerlBrdf, RusinCoords, cell_centers, hd_to_io
from .seeding import stream


def phong(kd, ks, exponent):
    """Energy-normalised Phong lobe: ``kd/pi + ks (n+2)/(2 pi) max(0, r.wo)^n``."""
    kd = np.asarray(kd, float)
    ks = np.asarray(ks, float)

    def f(wi, wo):
        wi = np.asarray(wi, float)
        wo = np.asarray(wo, float)
        r = wi * np.array([-1.0, -1.0, 1.0])
        c = np.clip(np.sum(r * wo, axis=-1), 0.0, 1.0)
        spec = (exponent + 2.0) / (2.0 * np.pi) * c ** exponent
        out = kd / np.pi + ks * spec[..., None]
        above = (wi[..., 2] > 0.0) & (wo[..., 2] > 0.0)
        return np.where(above[..., None], out, 0.0)

    return f


def lambertian(albedo):
    albedo = np.asarray(albedo, float)

    def f(wi, wo):
        wi = np.asarray(wi, float)
        above = (wi[..., 2] > 0.0) & (np.asarray(wo, float)[..., 2] > 0.0)
        return np.where(above[..., None], albedo / np.pi, 0.0) * np.ones(wi.shape[:-1] + (3,))

    return f


def constant(value):
    value = np.asarray(value, float)

    def f(wi, wo):
        return np.broadcast_to(value, np.asarray(wi).shape[:-1] + (3,)).copy()

    return f


def _grid_directions():
    th, td, pd = cell_centers()
    tt, dd, pp = np.meshgrid(th, td, pd, indexing="ij")
    return hd_to_io(RusinCoords(tt, dd, pp, 0.0))


def tabulate(brdf, name="", mask_below_horizon=True) -> MerlBrdf:
    """Evaluate ``brdf(wi, wo)`` at every cell centre of the MERL grid."""
    wi, wo = _grid_directions()
    values = np.asarray(brdf(wi, wo), float)
    mask = None
    if mask_below_horizon:
        mask = (wi[..., 2] > 0.0) & (wo[..., 2] > 0.0)
    return MerlBrdf.from_linear(values, mask, name)


def random_params(rng):
    """Draw one analytic material description."""
    kind = "lambertian" if rng.random() < 0.25 else "phong"
    kd = rng.uniform(0.05, 0.7, size=3)
    if kind == "lambertian":
        return {"kind": kind, "albedo": kd.tolist()}
    ks = rng.uniform(0.05, 0.5) * rng.uniform(0.7, 1.0, size=3)
    exponent = float(np.exp(rng.uniform(np.log(5.0), np.log(120.0))))
    return {"kind": kind, "kd": (0.6 * kd).tolist(), "ks": ks.tolist(), "exponent": exponent}


def from_params(p):
    if p["kind"] == "lambertian":
        return lambertian(p["albedo"])
    if p["kind"] == "phong":
        return phong(p["kd"], p["ks"], p["exponent"])
    if p["kind"] == "constant":
        return constant(p["value"])
    raise ValueError(f"unknown synthetic kind {p['kind']!r}")


def material_family(n, seed, prefix="synth"):
    """``n`` reproducible synthetic materials as ``(MerlBrdf, params)`` pairs."""
    rng = stream(seed, "synthetic")
    out = []
    for i in range(n):
        p = random_params(rng)
        name = f"{prefix}_{p['kind']}_{i:03d}"
        out.append((tabulate(from_params(p), name), p))
    return out
