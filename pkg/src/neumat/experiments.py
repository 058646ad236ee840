"""Reconstruction, editing and frequency-analysis pipelines shared by the CLI."""
from __future__ import annotations

import numpy as np

from .autoencoder import (
    Autoencoder,
    FrequencySetup,
    TrainConfig,
    decode,
    encode_material,
    ground_truth_spectra,
    interpolate_latent,
    interpolate_scale,
    merl_ground_truth_interp,
    nbrdf_spectra,
)
from .harmonics import frequency_loss
from .merl import MerlBrdf, io_to_hd, lookup
from .nbrdf import eval_io
from .render import SceneSpec, psnr, render_sphere, rmse, ssim

EDIT_WEIGHTS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def table_eval(brdf: MerlBrdf):
    """``(wi, wo) -> rgb`` nearest-cell evaluation of a table (holes read as zero)."""

    def f(wi, wo):
        _, c = io_to_hd(wi, wo)
        rgb, valid = lookup(brdf, c)
        return np.where(np.asarray(valid)[..., None], rgb, 0.0)

    return f


def weights_eval(weights, arch, scale=1.0):
    return lambda wi, wo: eval_io(weights, wi, wo, arch) * scale


def compare(gt_img, rec_img):
    return {"rmse": rmse(gt_img, rec_img), "psnr": psnr(gt_img, rec_img), "ssim": ssim(gt_img, rec_img)}


def score(model: Autoencoder, gt: MerlBrdf, weights, scale, cfg: TrainConfig, setup: FrequencySetup, scene, res):
    """Render ground truth and ``scale * nbrdf`` and compute all four metrics."""
    gt_img = render_sphere(table_eval(gt), scene, res, res)
    rec_img = render_sphere(weights_eval(weights, model.arch.nbrdf, scale), scene, res, res)
    f_ref = gt.median()
    fre = frequency_loss(
        ground_truth_spectra(gt, setup, cfg.eps, f_ref),
        nbrdf_spectra(weights, setup, f_ref, model.arch.nbrdf, cfg.eps, scale),
    )
    row = compare(gt_img, rec_img)
    row["L_fre"] = fre
    return row, gt_img, rec_img


def reconstruct(model: Autoencoder, materials, cfg: TrainConfig, scene=SceneSpec(), res=256):
    """Encode/decode each material; yields ``(name, metrics, gt_img, rec_img)``."""
    setup = FrequencySetup.build(cfg.slices, cfg.grid, cfg.band_limit)
    for m in materials:
        yield reconstruct_one(model, m, cfg, setup, scene, res)


def reconstruct_one(model, m, cfg, setup, scene, res):
    w = decode(model.dec, encode_material(model, m, cfg), model.arch)
    row, gi, ri = score(model, m, w, m.median(), cfg, setup, scene, res)
    return m.name, row, gi, ri


def edit(model: Autoencoder, a: MerlBrdf, b: MerlBrdf, cfg: TrainConfig, weights=EDIT_WEIGHTS,
         scene=SceneSpec(), res=256, setup=None):
    """Latent interpolation strip against the per-cell blend of the two tables."""
    setup = setup or FrequencySetup.build(cfg.slices, cfg.grid, cfg.band_limit)
    za = encode_material(model, a, cfg)
    zb = encode_material(model, b, cfg)
    for t in weights:
        row, gi, ri = edit_one(model, a, b, za, zb, t, cfg, setup, scene, res)
        yield t, row, gi, ri


def edit_one(model, a, b, za, zb, t, cfg, setup, scene, res):
    w = decode(model.dec, interpolate_latent(za, zb, t), model.arch)
    scale = interpolate_scale(a.median(), b.median(), t)
    return score(model, merl_ground_truth_interp(a, b, t), w, scale, cfg, setup, scene, res)
