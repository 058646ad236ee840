"""Set encoder, weight-emitting decoder, losses, training and latent editing.

The encoder maps each ``[H, D, log-relative rgb]`` row through a shared MLP
and mean-pools the results into a latent code; the decoder maps the code to
a full NBRDF weight vector.  The set rows carry no absolute scale, so the
decoded network predicts reflectance relative to the material's per-channel
median and the reconstruction is ``median * nbrdf(H, D)``.  Training
minimises, per material,

    L = L1(cos-weighted, log-relative) + l_w |w|^2 + l_z |z|^2 + eta * L_fre

where ``L_fre`` compares spherical-harmonic spectra of the decoded NBRDF
(evaluated directly at quadrature nodes) with cached ground-truth spectra
of the table (kNN-interpolated).
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import mlp
from .harmonics import (
    QuadratureGrid,
    ShSpectrum,
    SliceConfig,
    brdf_frequency_coefficients,
    frequency_loss,
    n_coeffs,
    quadrature_grid,
    transform_matrix,
)
from .merl import DEFAULT_EPS, MerlBrdf, log_relative_map
from .nbrdf import NbrdfArch, SampleSet, canonical_features, cell_samples, forward_features, sample_brdf_set, valid_cells
from .seeding import stream
from .serialize import read_params, write_params
from .sphere import InterpConfig

log = logging.getLogger(__name__)

SET_WIDTH = 9
# expm1(log 2) = 1: a fresh decoder predicts the median everywhere
RELATIVE_BIAS = float(np.log(2.0))


@dataclass(frozen=True)
class AutoencoderArch:
    z_dim: int = 32
    enc_hidden: tuple = (128, 128)
    dec_hidden: tuple = (256, 512)
    nbrdf: NbrdfArch = NbrdfArch()

    @property
    def enc_widths(self):
        return (SET_WIDTH,) + tuple(self.enc_hidden) + (self.z_dim,)

    @property
    def dec_widths(self):
        return (self.z_dim,) + tuple(self.dec_hidden) + (self.nbrdf.n_weights,)


@dataclass
class Autoencoder:
    arch: AutoencoderArch
    enc: np.ndarray
    dec: np.ndarray

    @classmethod
    def init(cls, arch: AutoencoderArch, seed, nbrdf_out_bias=RELATIVE_BIAS):
        """Random encoder; decoder starts near one He-initialised NBRDF."""
        enc = mlp.init(arch.enc_widths, stream(seed, "init-encoder"))
        dec = mlp.init(arch.dec_widths, stream(seed, "init-decoder"), out_std=1e-3)
        base = mlp.init(arch.nbrdf.widths, stream(seed, "init-nbrdf"), out_std=0.1 / np.sqrt(arch.nbrdf.widths[-2]))
        base[-arch.nbrdf.n_out:] = nbrdf_out_bias
        dec[-arch.nbrdf.n_weights:] = base
        return cls(arch, enc, dec)

    @property
    def params(self):
        return np.concatenate([self.enc, self.dec])

    def with_params(self, flat):
        k = self.enc.size
        return Autoencoder(self.arch, np.array(flat[:k]), np.array(flat[k:]))


def encode(enc, s: SampleSet, arch: AutoencoderArch) -> np.ndarray:
    """Mean-pooled per-row MLP output (a length-``z_dim`` latent code)."""
    data = s.data if isinstance(s, SampleSet) else np.asarray(s, float)
    if data.ndim != 2 or data.shape[1] != SET_WIDTH:
        raise ValueError(f"set rows must have width {SET_WIDTH}, got shape {data.shape}")
    h = mlp.forward(enc, arch.enc_widths, data)
    # fixed-order reduction over rows sorted lexicographically: exactly permutation invariant
    order = np.lexsort(data.T[::-1])
    return np.mean(h[order], axis=0)


def decode(dec, z, arch: AutoencoderArch) -> np.ndarray:
    z = np.asarray(z, float)
    if z.shape != (arch.z_dim,):
        raise ValueError(f"latent code must have length {arch.z_dim}, got shape {z.shape}")
    return mlp.forward(dec, arch.dec_widths, z[None, :])[0]


def interpolate_latent(z1, z2, t):
    z1 = np.asarray(z1, float)
    z2 = np.asarray(z2, float)
    if z1.shape != z2.shape:
        raise ValueError("latent codes differ in length")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation weight {t} outside [0, 1]")
    if t == 0.0:
        return z1.copy()
    if t == 1.0:
        return z2.copy()
    return (1.0 - t) * z1 + t * z2


def merl_ground_truth_interp(a: MerlBrdf, b: MerlBrdf, t, name=None) -> MerlBrdf:
    """Per-cell linear blend of two tables; cells invalid in either stay invalid."""
    if t == 0.0:
        return MerlBrdf(a.raw.copy(), name or a.name)
    if t == 1.0:
        return MerlBrdf(b.raw.copy(), name or b.name)
    mask = a.mask & b.mask
    values = (1.0 - t) * a.grid + t * b.grid
    return MerlBrdf.from_linear(values, mask, name or f"{a.name}~{b.name}@{t:g}")


def reconstruction_loss(f_true, f_pred, cos_in, w, z, lambda_w, lambda_z):
    """Cosine-weighted L1 between sample values plus the two L2 regularisers."""
    f_true = np.asarray(f_true, float).reshape(len(cos_in), -1)
    f_pred = np.asarray(f_pred, float).reshape(f_true.shape)
    cos_in = np.asarray(cos_in, float).reshape(-1, 1)
    data = np.mean(np.sum(np.abs((f_true - f_pred) * cos_in), axis=1))
    return float(data + lambda_w * np.sum(np.square(w)) + lambda_z * np.sum(np.square(z)))


def total_loss(rec, fre, eta):
    return rec + eta * fre


# -- configuration ---------------------------------------------------------

@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    steps_per_epoch: int = 10
    lr: float = 3e-4
    z_dim: int = 32
    enc_hidden: tuple = (128, 128)
    dec_hidden: tuple = (256, 512)
    nbrdf_hidden: tuple = (21, 21)
    lambda_w: float = 1e-4
    lambda_z: float = 1e-4
    eta: float = 1.0
    set_size: int = 1024
    n_loss_samples: int = 512
    split: tuple = (0.7, 0.1, 0.2)
    collapse_splits: bool = False
    band_limit: int = 8
    n_slices: int = 4
    knn_k: int = 8
    knn_sigma: float = 0.1
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or any(f <= 0 for f in self.split):
            raise ValueError(f"split fractions {self.split} must be positive and sum to 1")

    @property
    def arch(self):
        return AutoencoderArch(self.z_dim, tuple(self.enc_hidden), tuple(self.dec_hidden), NbrdfArch(tuple(self.nbrdf_hidden)))

    @property
    def slices(self):
        return SliceConfig(self.n_slices, InterpConfig(self.knn_k, self.knn_sigma))

    @property
    def grid(self) -> QuadratureGrid:
        return quadrature_grid(self.band_limit)


def material_seed(seed, name, purpose):
    return int(stream(seed, f"{purpose}:{name}").integers(0, 2 ** 62))


# -- frequency machinery ------------------------------------------------

@dataclass
class FrequencySetup:
    """Quadrature nodes of every slice and the stacked coefficient operator."""

    slices: SliceConfig
    grid: QuadratureGrid
    L: int
    features: np.ndarray  # (S * nodes, 6)
    op_re: np.ndarray  # (S * C, S * nodes), block diagonal
    op_im: np.ndarray

    @classmethod
    def build(cls, slices: SliceConfig, grid: QuadratureGrid, L=None):
        L = grid.L if L is None else L
        a = transform_matrix(grid, L)
        specs = slices.specs()
        feats = np.concatenate([canonical_features(s.coords(grid.theta, grid.phi)) for s in specs])
        eye = np.eye(len(specs))
        return cls(slices, grid, L, feats, np.kron(eye, a.real), np.kron(eye, a.imag))

    def spectra_from_nodes(self, node_values):
        """Per-slice spectra from stacked ``(S * nodes, 3)`` values."""
        c = (self.op_re + 1j * self.op_im) @ node_values
        per = n_coeffs(self.L)
        return [ShSpectrum(self.L, c[s * per:(s + 1) * per], s) for s in range(self.slices.n_slices)]

    def stack(self, spectra):
        re = np.concatenate([s.coeffs.real for s in spectra])
        im = np.concatenate([s.coeffs.imag for s in spectra])
        return re, im


def ground_truth_spectra(brdf: MerlBrdf, setup: FrequencySetup, eps=DEFAULT_EPS, f_ref=None):
    """Spectra of the log-relative table, interpolated onto the quadrature nodes."""
    f_ref = brdf.median() if f_ref is None else f_ref
    return brdf_frequency_coefficients(
        brdf, setup.slices, setup.grid, setup.L, transform=lambda v: log_relative_map(v, f_ref, eps)
    )


def nbrdf_spectra(weights, setup: FrequencySetup, f_ref, arch: NbrdfArch, eps=DEFAULT_EPS, scale=1.0):
    """Spectra of ``scale * nbrdf`` evaluated directly at the nodes, in the same log-relative space."""
    values = log_relative_map(forward_features(weights, setup.features, arch) * scale, f_ref, eps)
    return setup.spectra_from_nodes(values)


# -- per-material training data -----------------------------------------

@dataclass
class MaterialData:
    name: str
    brdf: MerlBrdf
    f_ref: np.ndarray
    gt_re: np.ndarray
    gt_im: np.ndarray
    cells: np.ndarray = field(repr=False)
    _fixed: tuple = field(default=None, repr=False)

    def batch(self, cfg: TrainConfig, rng):
        s = sample_brdf_set(self.brdf, cfg.set_size, int(rng.integers(0, 2 ** 62)), cfg.eps)
        loss_cells = cell_samples(self.brdf, rng.choice(self.cells, size=cfg.n_loss_samples), cfg.eps, self.f_ref)
        return s, loss_cells

    def fixed_batch(self, cfg: TrainConfig):
        """Deterministic evaluation batch for this material."""
        key = (cfg.seed, cfg.set_size, cfg.n_loss_samples, cfg.eps)
        if self._fixed is None or self._fixed[0] != key:
            self._fixed = (key, self.batch(cfg, stream(cfg.seed, f"eval:{self.name}")))
        return self._fixed[1]


def prepare_material(brdf: MerlBrdf, setup: FrequencySetup, cfg: TrainConfig, cache_dir=None) -> MaterialData:
    """Median reference and ground-truth spectra, read from ``cache_dir`` when present."""
    f_ref = brdf.median()
    cells = valid_cells(brdf)
    want = (setup.slices.n_slices * n_coeffs(setup.L), 3)
    path = None if cache_dir is None else os.path.join(cache_dir, f"{brdf.name}.npz")
    if path is not None and os.path.exists(path):
        with np.load(path) as z:
            if z["re"].shape == want:
                return MaterialData(brdf.name, brdf, f_ref, z["re"], z["im"], cells)
    gt_re, gt_im = setup.stack(ground_truth_spectra(brdf, setup, cfg.eps, f_ref))
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(path, re=gt_re, im=gt_im)
    return MaterialData(brdf.name, brdf, f_ref, gt_re, gt_im, cells)


def build_loss_graph(arch: AutoencoderArch, setup: FrequencySetup, cfg: TrainConfig) -> ad.Graph:
    """Per-material training objective; root is the total loss.

    Named outputs for reporting are stored on ``graph.parts``.
    """
    g = ad.Graph()
    enc = g.input("enc", (mlp.n_params(arch.enc_widths),))
    dec = g.input("dec", (mlp.n_params(arch.dec_widths),))
    sset = g.input("set")
    feats = g.input("features")
    target = g.input("mapped")
    cos = g.input("cos_in")
    log_ref = g.input("log_ref", (3,))
    scale = g.input("scale", (3,))
    gt_re = g.input("gt_re")
    gt_im = g.input("gt_im")

    z = g.mean(mlp.graph_forward(g, mlp.graph_layers(g, enc, arch.enc_widths), sset), axis=0)
    zrow = g.slice(z, (slice(None),), shape=(1, arch.z_dim))
    w = g.slice(mlp.graph_forward(g, mlp.graph_layers(g, dec, arch.dec_widths), zrow), (0,))
    layers = mlp.graph_layers(g, w, arch.nbrdf.widths)

    def log_rel(r):
        return g.sub(g.log(g.shift(g.multiply(r, scale), cfg.eps)), log_ref)

    pred = log_rel(mlp.graph_forward(g, layers, feats, out="expm1"))
    l1 = g.sum(g.mean(g.abs(g.multiply(g.sub(target, pred), cos)), axis=0))
    reg = g.add(g.scale(g.sum(g.square(w)), cfg.lambda_w), g.scale(g.sum(g.square(z)), cfg.lambda_z))
    rec = g.add(l1, reg)

    nodes = log_rel(mlp.graph_forward(g, layers, g.constant(setup.features), out="expm1"))
    d_re = g.sub(g.matmul(g.constant(setup.op_re), nodes), gt_re)
    d_im = g.sub(g.matmul(g.constant(setup.op_im), nodes), gt_im)
    fre = g.mean(g.concat([g.square(d_re), g.square(d_im)], axis=1))
    # mean over the 2*3 real columns equals the mean |dc|^2 over channels
    fre = g.scale(fre, 2.0)
    total = g.add(rec, g.scale(fre, cfg.eta))
    g.set_root(total)
    g.parts = {"rec": rec, "fre": fre, "l1": l1, "z": z, "w": w}
    return g


def graph_feed(model: Autoencoder, m: MaterialData, sset: SampleSet, cells, eps):
    return {
        "enc": model.enc,
        "dec": model.dec,
        "set": sset.data,
        "features": cells.features,
        "mapped": cells.mapped,
        "cos_in": cells.cos_in,
        "log_ref": np.log(m.f_ref + eps),
        "scale": m.f_ref,
        "gt_re": m.gt_re,
        "gt_im": m.gt_im,
    }


def evaluate(model: Autoencoder, graph, m: MaterialData, cfg: TrainConfig):
    sset, cells = m.fixed_batch(cfg)
    ad.forward(graph, graph_feed(model, m, sset, cells, cfg.eps))
    rec = float(graph.parts["rec"].value)
    fre = float(graph.parts["fre"].value)
    return rec, fre, total_loss(rec, fre, cfg.eta)


# -- splits and training -------------------------------------------------

def split_materials(names, cfg: TrainConfig):
    """Seeded 3-way split of material names (each split non-empty)."""
    names = sorted(names)
    if cfg.collapse_splits:
        return {"train": list(names), "val": list(names), "test": list(names)}
    n = len(names)
    if n < 3:
        raise ValueError(f"need at least 3 materials to fill train/val/test, got {n}")
    order = stream(cfg.seed, "split").permutation(n)
    shuffled = [names[i] for i in order]
    n_val = max(1, int(round(cfg.split[1] * n)))
    n_test = max(1, int(round(cfg.split[2] * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_test = 1, n - 1 - n_val
    return {
        "train": shuffled[:n_train],
        "val": shuffled[n_train:n_train + n_val],
        "test": shuffled[n_train + n_val:],
    }


@dataclass
class TrainState:
    model: Autoencoder
    adam: ad.AdamState
    epoch: int = 0
    best_model: Autoencoder = None
    best_val: float = float("inf")
    best_epoch: int = -1


@dataclass
class TrainResult:
    model: Autoencoder
    report: list
    splits: dict
    state: TrainState


class TrainingError(FloatingPointError):
    pass


def train_autoencoder(materials, cfg: TrainConfig, state: TrainState | None = None, cache_dir=None, on_epoch=None):
    """Jointly train encoder and decoder with Adam; keeps the best-on-validation model.

    ``state`` resumes a previous run; ``on_epoch(state, rows)`` is called after
    every epoch (used for checkpointing).
    """
    by_name = {m.name: m for m in materials}
    if len(by_name) != len(materials):
        raise ValueError("material names must be unique")
    splits = split_materials(list(by_name), cfg)
    arch = cfg.arch
    setup = FrequencySetup.build(cfg.slices, cfg.grid, cfg.band_limit)
    data = {name: prepare_material(by_name[name], setup, cfg, cache_dir) for name in sorted(by_name)}
    graph = build_loss_graph(arch, setup, cfg)
    if state is None:
        model = Autoencoder.init(arch, cfg.seed)
        state = TrainState(model, ad.AdamState(model.params.size, lr=cfg.lr), 0, model, float("inf"), -1)
    report = []
    n_train = len(splits["train"])
    for epoch in range(state.epoch, cfg.epochs):
        rng = stream(cfg.seed, f"epoch:{epoch}")
        for step in range(cfg.steps_per_epoch):
            grad = np.zeros(state.model.params.size)
            for name in splits["train"]:
                m = data[name]
                sset, cells = m.batch(cfg, rng)
                loss = float(ad.forward(graph, graph_feed(state.model, m, sset, cells, cfg.eps)))
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, material {name!r}")
                gr = ad.backward(graph)
                grad += np.concatenate([gr["enc"], gr["dec"]])
            try:
                params, state.adam = ad.adam_step(state.adam, state.model.params, grad / n_train)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            state.model = state.model.with_params(params)
        rows = []
        for split in ("train", "val", "test"):
            vals = np.array([evaluate(state.model, graph, data[n], cfg) for n in splits[split]])
            if not np.all(np.isfinite(vals)):
                raise TrainingError(f"non-finite {split} loss at epoch {epoch}")
            mean = vals.mean(axis=0)
            rows.append({"epoch": epoch, "split": split, "L_rec": mean[0], "L_fre": mean[1], "total": mean[2]})
        val_total = rows[1]["total"]
        if val_total < state.best_val:
            state.best_val, state.best_model, state.best_epoch = val_total, state.model, epoch
        state.epoch = epoch + 1
        report.extend(rows)
        log.info("epoch %d train %.5g val %.5g (L_fre %.4g)", epoch, rows[0]["total"], val_total, rows[1]["L_fre"])
        if on_epoch is not None:
            on_epoch(state, rows)
    return TrainResult(state.best_model, report, splits, state)


# -- reconstruction helpers ----------------------------------------------

def encode_material(model: Autoencoder, brdf: MerlBrdf, cfg: TrainConfig):
    s = sample_brdf_set(brdf, cfg.set_size, material_seed(cfg.seed, brdf.name, "encode"), cfg.eps)
    return encode(model.enc, s, model.arch)


def reconstruct_weights(model: Autoencoder, brdf: MerlBrdf, cfg: TrainConfig):
    """Decoded relative NBRDF weights and the per-channel scale that restores reflectance."""
    return decode(model.dec, encode_material(model, brdf, cfg), model.arch), brdf.median()


def interpolate_scale(a, b, t):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    return (1.0 - t) * a + t * b


# -- persistence -----------------------------------------------------------

REPORT_FIELDS = ["epoch", "split", "L_rec", "L_fre", "total"]


def write_report(rows, path, append=False):
    new = not (append and os.path.exists(path))
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([r["epoch"], r["split"], repr(float(r["L_rec"])), repr(float(r["L_fre"])), repr(float(r["total"]))])


def read_report(path):
    with open(path, newline="") as fh:
        return [
            {"epoch": int(r["epoch"]), "split": r["split"], "L_rec": float(r["L_rec"]),
             "L_fre": float(r["L_fre"]), "total": float(r["total"])}
            for r in csv.DictReader(fh)
        ]


def config_to_dict(cfg: TrainConfig):
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def config_from_dict(d):
    names = {f.name for f in fields(TrainConfig)}
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
    return TrainConfig(**kw)


def save_checkpoint(directory, model: Autoencoder, cfg: TrainConfig, adam: ad.AdamState | None = None, extra=None):
    os.makedirs(directory, exist_ok=True)
    write_params(os.path.join(directory, "encoder.bin"), model.arch.enc_widths, model.enc)
    write_params(os.path.join(directory, "decoder.bin"), model.arch.dec_widths, model.dec)
    meta = {"config": config_to_dict(cfg), "nbrdf_widths": list(model.arch.nbrdf.widths)}
    if adam is not None:
        write_params(os.path.join(directory, "adam.bin"), (adam.size, adam.t), np.concatenate([adam.m, adam.v]))
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "t": adam.t}
    if extra:
        meta.update(extra)
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(directory):
    """Return ``(model, cfg, adam_state_or_None, meta)``."""
    with open(os.path.join(directory, "checkpoint.json")) as fh:
        meta = json.load(fh)
    cfg = config_from_dict(meta["config"])
    arch = AutoencoderArch(cfg.z_dim, tuple(cfg.enc_hidden), tuple(cfg.dec_hidden),
                           NbrdfArch.from_widths(meta["nbrdf_widths"]))
    ew, enc = read_params(os.path.join(directory, "encoder.bin"))
    dw, dec = read_params(os.path.join(directory, "decoder.bin"))
    if tuple(ew) != arch.enc_widths or tuple(dw) != arch.dec_widths:
        raise CheckpointError(f"{directory}: stored widths {ew}/{dw} disagree with the configuration")
    if enc.size != mlp.n_params(ew) or dec.size != mlp.n_params(dw):
        raise CheckpointError(f"{directory}: parameter payload has the wrong length")
    adam = None
    apath = os.path.join(directory, "adam.bin")
    if os.path.exists(apath) and "adam" in meta:
        (size, t), mv = read_params(apath)
        a = meta["adam"]
        adam = ad.AdamState(size, a["lr"], a["beta1"], a["beta2"], a["eps"], t, mv[:size].copy(), mv[size:].copy())
    return Autoencoder(arch, enc, dec), cfg, adam, meta


__all__ = [
    "AutoencoderArch", "Autoencoder", "TrainConfig", "encode", "decode", "interpolate_latent",
    "merl_ground_truth_interp", "reconstruction_loss", "total_loss", "train_autoencoder",
    "FrequencySetup", "ground_truth_spectra", "nbrdf_spectra", "frequency_loss",
    "save_checkpoint", "load_checkpoint",
]
