"""Direct-lighting sphere renderer and image quality metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

LUMA = np.array([0.299, 0.587, 0.114])


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """Unit sphere at the origin seen by an orthographic camera looking down -z."""

    light_dir: tuple = (1.0, 1.0, 1.0)
    intensity: tuple = (1.0, 1.0, 1.0)
    background: tuple = (0.0, 0.0, 0.0)
    gamma: float = 2.2

    def __post_init__(self):
        d = np.asarray(self.light_dir, float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("light direction must be non-zero")
        object.__setattr__(self, "light_dir", tuple((d / n).tolist()))
        if np.any(np.asarray(self.intensity, float) < 0):
            raise ValueError("light intensity must be non-negative")


def _frame(n):
    # orthonormal tangent frame without branches on the visible hemisphere
    sign = np.copysign(1.0, n[:, 2])
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    s = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t, s


def render_sphere(brdf_eval, scene: SceneSpec = SceneSpec(), w=256, h=256, region=None):
    """Render ``brdf_eval(wi, wo) -> rgb`` on a sphere; returns ``(rows, cols, 3)``.

    ``region = (row0, row1, col0, col1)`` renders only that window of the
    full ``h`` by ``w`` frame.
    """
    r0, r1, c0, c1 = region if region is not None else (0, h, 0, w)
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    y = 1.0 - 2.0 * (rows + 0.5) / h
    x = 2.0 * (cols + 0.5) / w - 1.0
    xx, yy = np.meshgrid(x, y)
    rr = xx * xx + yy * yy
    img = np.empty(xx.shape + (3,))
    img[:] = np.asarray(scene.background, float)
    on = rr < 1.0
    if not on.any():
        return np.clip(img, 0.0, 1.0)
    n = np.stack([xx[on], yy[on], np.sqrt(1.0 - rr[on])], axis=1)
    light = np.asarray(scene.light_dir, float)
    t, s = _frame(n)
    wi = np.stack([t @ light, s @ light, n @ light], axis=1)
    wo = np.stack([t[:, 2], s[:, 2], n[:, 2]], axis=1)
    radiance = np.zeros((n.shape[0], 3))
    lit = (wi[:, 2] > 0.0) & (wo[:, 2] > 0.0)
    if lit.any():
        pix = np.argwhere(on)[lit]
        try:
            f = np.asarray(brdf_eval(wi[lit], wo[lit]), float)
        except Exception as exc:
            raise RenderError(
                f"BRDF evaluation failed for pixels rows {r0 + pix[0, 0]}..{r0 + pix[-1, 0]}: {exc}"
            ) from exc
        bad = ~np.all(np.isfinite(f) & (f >= 0.0), axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise RenderError(f"BRDF returned {f[i]} at pixel (row {r0 + pix[i, 0]}, col {c0 + pix[i, 1]})")
        radiance[lit] = f * np.asarray(scene.intensity, float) * wi[lit, 2:3]
    img[on] = np.clip(radiance, 0.0, None) ** (1.0 / scene.gamma)
    return np.clip(img, 0.0, 1.0)


def _check_pair(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(i1, i2):
    a, b = _check_pair(i1, i2)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr_from_rmse(err, peak=1.0):
    if peak <= 0:
        raise ValueError("peak must be positive")
    if err == 0:
        return float("inf")
    return float(20.0 * np.log10(peak / err))


def psnr(i1, i2, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    return psnr_from_rmse(rmse(i1, i2), peak)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def luminance(img):
    img = np.asarray(img, float)
    return img @ LUMA if img.ndim == 3 else img


def ssim(i1, i2, peak=1.0, window=11, sigma=1.5):
    """Mean SSIM over all full windows of the luminance images.

    With unit exponents and ``C3 = C2 / 2`` the luminance, contrast and
    structure product reduces to the usual two-factor expression used here.
    """
    a, b = _check_pair(i1, i2)
    ya, yb = luminance(a), luminance(b)
    if min(ya.shape) < window:
        raise ValueError(f"images smaller than the {window}x{window} window")
    k = gaussian_window(window, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu1 = kernels.filter_valid(ya, k)
    mu2 = kernels.filter_valid(yb, k)
    s11 = kernels.filter_valid(ya * ya, k) - mu1 * mu1
    s22 = kernels.filter_valid(yb * yb, k) - mu2 * mu2
    s12 = kernels.filter_valid(ya * yb, k) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def save_png(img, path):
    from PIL import Image

    arr = np.round(np.clip(np.asarray(img, float), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def load_png(path):
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), float) / 255.0
