"""Lightweight neural BRDF: an MLP from Cartesian (H, D) to RGB reflectance.

Weights are one flat vector, layer by layer; each layer stores its
``(fan_in, fan_out)`` matrix row-major followed by its bias.  Hidden layers
use relu, the output ``max(exp(x) - 1, 0)``.

Isotropic queries are canonicalised before evaluation: the half vector is
rotated to ``phi_h = 0`` and ``phi_d`` is folded onto ``[0, pi)``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import mlp
from .merl import (
    DEFAULT_EPS,
    MerlBrdf,
    RusinCoords,
    cell_centers,
    cos_theta_in,
    hd_vectors,
    io_to_hd,
    log_relative_map,
)
from .seeding import stream
from .serialize import read_params, read_sidecar, write_params, write_sidecar

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NbrdfArch:
    hidden: tuple = (21, 21)
    n_in: int = 6
    n_out: int = 3

    @property
    def widths(self):
        return (self.n_in,) + tuple(self.hidden) + (self.n_out,)

    @property
    def layer_shapes(self):
        return mlp.layer_shapes(self.widths)

    @property
    def n_weights(self):
        return mlp.n_params(self.widths)

    @classmethod
    def from_widths(cls, widths):
        widths = tuple(int(w) for w in widths)
        return cls(hidden=widths[1:-1], n_in=widths[0], n_out=widths[-1])


DEFAULT_ARCH = NbrdfArch()


def unflatten(weights, arch: NbrdfArch = DEFAULT_ARCH):
    return mlp.unflatten(weights, arch.widths)


flatten = mlp.flatten


def init_weights(arch: NbrdfArch, rng, out_bias=None):
    """He-normal hidden layers, a small output layer, zero biases."""
    w = mlp.init(arch.widths, rng, out_std=0.1 / np.sqrt(arch.widths[-2]))
    if out_bias is not None:
        w[-arch.n_out:] = np.asarray(out_bias, float) * np.ones(arch.n_out)
    return w


def forward_features(weights, x, arch: NbrdfArch = DEFAULT_ARCH):
    """Network output for an ``(n, 6)`` feature array."""
    return mlp.forward(weights, arch.widths, x, out="expm1")


def canonical_features(c: RusinCoords):
    """``(n, 6)`` network inputs for isotropic coordinates."""
    folded = RusinCoords(c.theta_h, c.theta_d, np.mod(np.asarray(c.phi_d, float), np.pi), 0.0)
    pair = hd_vectors(folded)
    return np.concatenate([pair.h, pair.d], axis=-1).reshape(-1, 6)


def nbrdf_eval(weights, h, d, arch: NbrdfArch = DEFAULT_ARCH):
    """Evaluate at Cartesian half/difference vectors (single or stacked)."""
    h = np.asarray(h, float)
    d = np.asarray(d, float)
    for name, v in (("H", h), ("D", d)):
        if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-6):
            raise ValueError(f"{name} must be unit length")
    x = np.concatenate([h, d], axis=-1)
    out = forward_features(weights, x.reshape(-1, 6), arch)
    return out.reshape(h.shape[:-1] + (arch.n_out,))


def eval_coords(weights, c: RusinCoords, arch: NbrdfArch = DEFAULT_ARCH):
    th = np.asarray(c.theta_h, float)
    return forward_features(weights, canonical_features(c), arch).reshape(th.shape + (arch.n_out,))


def eval_io(weights, wi, wo, arch: NbrdfArch = DEFAULT_ARCH):
    """Evaluate at incoming/outgoing direction pairs ``(..., 3)``."""
    _, c = io_to_hd(wi, wo)
    return eval_coords(weights, c, arch)


# -- autodiff graph pieces ----------------------------------------------

def graph_layers(g: ad.Graph, weights_node, arch: NbrdfArch = DEFAULT_ARCH):
    return mlp.graph_layers(g, weights_node, arch.widths)


def graph_forward(g: ad.Graph, layers, x_node):
    return mlp.graph_forward(g, layers, x_node, out="expm1")


def graph_log_relative(g: ad.Graph, f_node, f_ref, eps=DEFAULT_EPS):
    """``log(f + eps) - log(f_ref + eps)`` as graph ops."""
    return g.shift(g.log(g.shift(f_node, eps)), -np.log(np.asarray(f_ref, float) + eps))


def graph_l1_cos(g: ad.Graph, pred_node, target_node, cos_node):
    """``mean_i sum_c |(target - pred) * cos_i|`` for ``(n, 3)`` operands and ``(n, 1)`` cosines."""
    diff = g.sub(target_node, pred_node)
    return g.sum(g.mean(g.abs(g.multiply(diff, cos_node)), axis=0))


# -- training data --------------------------------------------------------

@dataclass
class CellSamples:
    """Valid grid cells of one material, ready for loss evaluation."""

    features: np.ndarray  # (n, 6)
    cos_in: np.ndarray  # (n, 1)
    values: np.ndarray  # (n, 3) linear
    mapped: np.ndarray  # (n, 3) log-relative
    f_ref: np.ndarray  # (3,)

    def take(self, idx):
        return CellSamples(self.features[idx], self.cos_in[idx], self.values[idx], self.mapped[idx], self.f_ref)

    def __len__(self):
        return self.features.shape[0]


def valid_cells(brdf: MerlBrdf):
    """Flat indices of valid cells (C order over the table)."""
    return np.flatnonzero(brdf.mask.ravel())


def cell_samples(brdf: MerlBrdf, flat_idx, eps=DEFAULT_EPS, f_ref=None):
    th, td, pd = cell_centers()
    i, j, k = np.unravel_index(flat_idx, brdf.mask.shape)
    c = RusinCoords(th[i], td[j], pd[k], 0.0)
    values = brdf.grid[i, j, k]
    f_ref = brdf.median() if f_ref is None else np.asarray(f_ref, float)
    cos_in = np.clip(cos_theta_in(c), 0.0, None)[:, None]
    return CellSamples(canonical_features(c), cos_in, values, log_relative_map(values, f_ref, eps), f_ref)


@dataclass
class SampleSet:
    """Encoder input: rows of ``[H(3), D(3), log-relative rgb(3)]``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, float)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("a sample set needs at least one row")

    def __len__(self):
        return self.data.shape[0]


def sample_brdf_set(brdf_eval, n, seed, eps=DEFAULT_EPS, arch: NbrdfArch = DEFAULT_ARCH) -> SampleSet:
    """Draw ``n`` coordinate/value rows from a table or a weight vector."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream(seed, "sample_set")
    if isinstance(brdf_eval, MerlBrdf):
        cells = valid_cells(brdf_eval)
        if cells.size < n:
            raise ValueError(f"only {cells.size} valid cells, {n} requested")
        pick = np.sort(rng.choice(cells, size=n, replace=False))
        s = cell_samples(brdf_eval, pick, eps)
        return SampleSet(np.concatenate([s.features, s.mapped], axis=1))
    c = RusinCoords(
        rng.uniform(0, np.pi / 2, n), rng.uniform(0, np.pi / 2, n), rng.uniform(0, np.pi, n), 0.0
    )
    feats = canonical_features(c)
    values = forward_features(brdf_eval, feats, arch)
    f_ref = np.median(values, axis=0)
    return SampleSet(np.concatenate([feats, log_relative_map(values, f_ref, eps)], axis=1))


# -- single-material fitting --------------------------------------------

@dataclass
class FitConfig:
    seed: int
    epochs: int = 100
    batch: int = 512
    lr: float = 5e-4
    batches_per_epoch: int = 64
    n_validation: int = 4096
    l2: float = 0.0
    eps: float = DEFAULT_EPS
    arch: NbrdfArch = field(default_factory=NbrdfArch)


@dataclass
class FitResult:
    weights: np.ndarray
    train_loss: list
    val_loss: list
    best_epoch: int


class DivergenceError(FloatingPointError):
    pass


def fit_loss_graph(arch: NbrdfArch, f_ref, eps=DEFAULT_EPS, l2=0.0):
    """Graph of the cosine-weighted L1 fitting loss in log-relative space."""
    g = ad.Graph()
    w = g.input("weights", (arch.n_weights,))
    x = g.input("features")
    target = g.input("mapped")
    cos = g.input("cos_in")
    pred = graph_log_relative(g, graph_forward(g, graph_layers(g, w, arch), x), f_ref, eps)
    loss = graph_l1_cos(g, pred, target, cos)
    if l2:
        loss = g.add(loss, g.scale(g.sum(g.square(w)), l2))
    g.set_root(loss)
    return g


def l1_cos_loss(weights, s: CellSamples, arch=DEFAULT_ARCH, eps=DEFAULT_EPS):
    pred = log_relative_map(forward_features(weights, s.features, arch), s.f_ref, eps)
    return float(np.mean(np.sum(np.abs((s.mapped - pred) * s.cos_in), axis=1)))


def fit_nbrdf_single(brdf: MerlBrdf, cfg: FitConfig) -> FitResult:
    arch = cfg.arch
    cells = valid_cells(brdf)
    if cells.size == 0:
        raise ValueError(f"material {brdf.name!r} has no valid cells")
    rng = stream(cfg.seed, "fit")
    f_ref = brdf.median()
    perm = rng.permutation(cells)
    n_val = min(cfg.n_validation, max(1, cells.size // 10))
    val = cell_samples(brdf, np.sort(perm[:n_val]), cfg.eps, f_ref)
    train_cells = perm[n_val:] if cells.size > n_val else perm
    weights = init_weights(arch, stream(cfg.seed, "init"), out_bias=np.log1p(f_ref))
    state = ad.AdamState(arch.n_weights, lr=cfg.lr)
    graph = fit_loss_graph(arch, f_ref, cfg.eps, cfg.l2)
    best = (np.inf, weights.copy(), -1)
    train_hist, val_hist = [], []
    for epoch in range(cfg.epochs):
        running = 0.0
        for _ in range(cfg.batches_per_epoch):
            batch = cell_samples(brdf, rng.choice(train_cells, size=cfg.batch), cfg.eps, f_ref)
            loss = float(ad.forward(graph, {
                "weights": weights, "features": batch.features,
                "mapped": batch.mapped, "cos_in": batch.cos_in,
            }))
            if not np.isfinite(loss):
                raise DivergenceError(f"fit of {brdf.name!r} diverged at epoch {epoch}")
            grads = ad.backward(graph)["weights"]
            weights, state = ad.adam_step(state, weights, grads)
            running += loss
        train_hist.append(running / cfg.batches_per_epoch)
        v = l1_cos_loss(weights, val, arch, cfg.eps)
        if not np.isfinite(v):
            raise DivergenceError(f"fit of {brdf.name!r} diverged at epoch {epoch}")
        val_hist.append(v)
        if v < best[0]:
            best = (v, weights.copy(), epoch)
        log.debug("fit %s epoch %d train %.5g val %.5g", brdf.name, epoch, train_hist[-1], v)
    return FitResult(best[1], train_hist, val_hist, best[2])


# -- persistence -----------------------------------------------------------

def save_weights(path, weights, arch: NbrdfArch = DEFAULT_ARCH, meta=None):
    weights = np.asarray(weights, float)
    if weights.shape != (arch.n_weights,):
        raise ValueError("weight vector does not match the architecture")
    write_params(path, arch.widths, weights)
    if meta is not None:
        write_sidecar(path, meta)


def load_weights(path):
    widths, payload = read_params(path)
    arch = NbrdfArch.from_widths(widths)
    if payload.size != arch.n_weights:
        raise ValueError(f"{path}: payload has {payload.size} reals, architecture needs {arch.n_weights}")
    return payload, arch


def fit_meta(name, cfg: FitConfig):
    d = asdict(cfg)
    d["arch"] = list(cfg.arch.widths)
    return {"material": name, "fit_config": d}


__all__ = [
    "NbrdfArch", "DEFAULT_ARCH", "unflatten", "flatten", "init_weights", "forward_features",
    "canonical_features", "nbrdf_eval", "eval_coords", "eval_io", "SampleSet", "sample_brdf_set",
    "FitConfig", "FitResult", "fit_nbrdf_single", "save_weights", "load_weights", "read_sidecar",
]
