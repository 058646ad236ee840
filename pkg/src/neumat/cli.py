"""Command-line entry point: ``neumat [global options] <verb> ...``.

Configuration precedence, lowest first: built-in defaults, the ``--config``
file (``key = value`` lines, ``#`` comments), ``NEUMAT_<KEY>`` environment
variables, ``--set key=value`` pairs, then the dedicated global flags.
The resolved configuration is echoed to ``<out>/config.txt``.
"""
from __future__ import annotations

import csv
import glob
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import click
import numpy as np

from . import autoencoder as ae
from . import experiments as ex
from .harmonics import SliceConfig, brdf_frequency_coefficients, quadrature_grid, write_spectra_csv
from .merl import load_merl, log_relative_map, save_merl
from .nbrdf import FitConfig, NbrdfArch, eval_coords, fit_meta, fit_nbrdf_single, load_weights, save_weights
from .render import SceneSpec, save_png
from .serialize import read_sidecar
from .sphere import InterpConfig
from . import synthetic

log = logging.getLogger("neumat")

ENV_PREFIX = "NEUMAT_"
MERL_SUFFIX = ".binary"
METRICS = ("rmse", "psnr", "ssim", "L_fre")
N_BINS = 20

_TRAIN_DEFAULTS = {f.name: getattr(ae.TrainConfig(), f.name) for f in fields(ae.TrainConfig)}
_RUN_DEFAULTS = {
    "dataset": "",
    "out": "run",
    "workers": 1,
    "render_res": 256,
    "light_dir": (1.0, 1.0, 1.0),
    "fit_epochs": 100,
    "fit_batch": 512,
    "fit_lr": 5e-4,
    "fit_batches_per_epoch": 64,
    "edit_t": ex.EDIT_WEIGHTS,
    "edit_pairs": 2000,
    "freq_space": "log",
}
DEFAULTS = {**_TRAIN_DEFAULTS, **_RUN_DEFAULTS}


class ConfigError(click.UsageError):
    pass


def _parse_value(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None
    return text


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


class RunConfig:
    """Flat key/value run configuration; every key has a default."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, value) if isinstance(value, str) else value

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    @staticmethod
    def parse_lines(text):
        out = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected 'key = value'")
            k, v = line.split("=", 1)
            k = k.strip()
            if k not in DEFAULTS:
                raise ConfigError(f"config line {n}: unknown key {k!r}")
            out[k] = _parse_value(k, v)
        return out

    @classmethod
    def from_text(cls, text):
        return cls(cls.parse_lines(text))

    def to_text(self):
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in sorted(self.values))

    @classmethod
    def resolve(cls, path=None, env=None, pairs=(), flags=None):
        cfg = cls()
        if path:
            with open(path) as fh:
                for k, v in cls.parse_lines(fh.read()).items():
                    cfg.set(k, v)
        env = os.environ if env is None else env
        for k in DEFAULTS:
            name = ENV_PREFIX + k.upper()
            if name in env:
                cfg.set(k, env[name])
        for p in pairs:
            if "=" not in p:
                raise ConfigError(f"--set expects key=value, got {p!r}")
            k, v = p.split("=", 1)
            cfg.set(k.strip(), v)
        for k, v in (flags or {}).items():
            if v is not None:
                cfg.set(k, v)
        return cfg

    def train_config(self):
        return ae.TrainConfig(**{k: self.values[k] for k in _TRAIN_DEFAULTS})

    def fit_config(self, seed):
        return FitConfig(seed=seed, epochs=self.fit_epochs, batch=self.fit_batch, lr=self.fit_lr,
                         batches_per_epoch=self.fit_batches_per_epoch, eps=self.eps,
                         arch=NbrdfArch(tuple(self.nbrdf_hidden)))

    def scene(self):
        return SceneSpec(light_dir=tuple(self.light_dir))

    def echo(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w") as fh:
            fh.write(self.to_text())


# -- helpers -------------------------------------------------------------

def material_paths(paths):
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(sorted(glob.glob(os.path.join(p, "*" + MERL_SUFFIX))))
        else:
            out.append(p)
    return out


def load_materials(paths):
    files = material_paths(paths)
    if not files:
        raise click.UsageError(f"no {MERL_SUFFIX} materials found in {', '.join(paths) or '(nothing)'}")
    mats = [load_merl(f) for f in files]
    names = [m.name for m in mats]
    if len(set(names)) != len(names):
        raise click.UsageError("material names must be unique")
    return mats


def pool_map(fn, items, workers):
    """Ordered map; with more than one worker items run on a thread pool."""
    if workers <= 1:
        return map(fn, items)
    ex_ = ThreadPoolExecutor(max_workers=workers)
    try:
        return list(ex_.map(fn, items))
    finally:
        ex_.shutdown()


def _num(v):
    return repr(float(v))


def write_metrics_csv(path, rows, lead=("material",)):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(lead) + list(METRICS))
        for r in rows:
            w.writerow([r[k] for k in lead] + [_num(r[k]) for k in METRICS])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in METRICS:
            if k in r:
                r[k] = float(r[k])
    return rows


def side_by_side(a, b):
    return np.concatenate([a, b], axis=1)


def _checkpoint_materials(ckpt, cfg_paths, split):
    if split:
        meta_path = os.path.join(ckpt, "checkpoint.json")
        with open(meta_path) as fh:
            splits = json.load(fh).get("splits")
        if not splits or split not in splits:
            raise click.UsageError(f"checkpoint {ckpt} has no {split!r} split")
        wanted = set(splits[split])
        mats = [m for m in load_materials(cfg_paths) if m.name in wanted]
        missing = wanted - {m.name for m in mats}
        if missing:
            raise click.UsageError(f"materials of split {split!r} not found: {', '.join(sorted(missing))}")
        return mats
    return load_materials(cfg_paths)


def _load_model(ckpt, run_cfg):
    try:
        model, tcfg, _, meta = ae.load_checkpoint(ckpt)
    except (OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"cannot load checkpoint {ckpt}: {exc}") from exc
    # evaluation knobs come from the run config; the architecture from the checkpoint
    vals = ae.config_to_dict(tcfg)
    for k in ("set_size", "band_limit", "n_slices", "knn_k", "knn_sigma", "eps", "seed"):
        vals[k] = run_cfg.values[k]
    return model, ae.config_from_dict(vals), meta


# -- CLI -------------------------------------------------------------------

@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key = value config file.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--eta", type=float, default=None, help="Frequency-loss weight.")
@click.option("--set-size", type=int, default=None, help="Encoder sample-set size.")
@click.option("--set", "pairs", multiple=True, metavar="KEY=VALUE", help="Override any config key.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, seed, out, eta, set_size, pairs, verbose):
    """Neural material fitting, set autoencoder training and analysis."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(message)s")
    flags = {"seed": seed, "out": out, "eta": eta, "set_size": set_size}
    ctx.obj = RunConfig.resolve(config_path, pairs=pairs, flags=flags)


def _start(ctx):
    cfg = ctx.obj
    cfg.echo(cfg.out)
    return cfg


@main.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--n", "count", type=int, default=12, show_default=True)
@click.pass_context
def synth(ctx, directory, count):
    """Write a reproducible family of synthetic materials."""
    cfg = ctx.obj
    os.makedirs(directory, exist_ok=True)
    params = {}
    for brdf, p in synthetic.material_family(count, cfg.seed):
        save_merl(brdf, os.path.join(directory, brdf.name + MERL_SUFFIX))
        params[brdf.name] = p
    with open(os.path.join(directory, "materials.json"), "w") as fh:
        json.dump(params, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"wrote {count} materials to {directory}")


@main.command()
@click.argument("dataset", nargs=-1, type=click.Path(exists=True))
@click.pass_context
def fit(ctx, dataset):
    """Fit one NBRDF per material."""
    cfg = _start(ctx)
    files = material_paths(dataset or ([cfg.dataset] if cfg.dataset else []))
    if not files:
        raise click.UsageError(f"no {MERL_SUFFIX} materials to fit")
    wdir = os.path.join(cfg.out, "weights")
    os.makedirs(wdir, exist_ok=True)

    def work(path):
        name = os.path.splitext(os.path.basename(path))[0]
        fcfg = cfg.fit_config(ae.material_seed(cfg.seed, name, "fit"))
        try:
            m = load_merl(path)
            return name, m, fcfg, fit_nbrdf_single(m, fcfg), None
        except (OSError, FloatingPointError, ValueError) as exc:
            return name, None, fcfg, None, exc

    failed = 0
    with open(os.path.join(cfg.out, "fit_log.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["material", "epoch", "train_loss", "val_loss", "status"])
        for name, m, fcfg, res, err in pool_map(work, files, cfg.workers):
            if err is not None:
                failed += 1
                log.error("fit %s failed: %s", name, err)
                w.writerow([name, -1, "", "", f"failed: {err}"])
                continue
            meta = fit_meta(m.name, fcfg)
            meta["f_ref"] = m.median().tolist()
            meta["best_epoch"] = res.best_epoch
            save_weights(os.path.join(wdir, m.name + ".bin"), res.weights, fcfg.arch, meta)
            for e, (tl, vl) in enumerate(zip(res.train_loss, res.val_loss)):
                w.writerow([m.name, e, _num(tl), _num(vl), "ok"])
    click.echo(f"fitted {len(files) - failed}/{len(files)} materials")
    if failed:
        ctx.exit(1)


def _save_state(directory, state: ae.TrainState, tcfg, splits, best):
    model = state.best_model if best else state.model
    extra = {"splits": splits, "epoch": state.epoch, "best_epoch": state.best_epoch,
             "best_val": state.best_val if np.isfinite(state.best_val) else None}
    ae.save_checkpoint(directory, model, tcfg, None if best else state.adam, extra)


def _resume_state(ckpt_dir):
    last = os.path.join(ckpt_dir, "last")
    model, _, adam, meta = ae.load_checkpoint(last)
    best_model = ae.load_checkpoint(os.path.join(ckpt_dir, "best"))[0]
    if adam is None:
        raise click.ClickException(f"{last} has no optimiser state; cannot resume")
    best_val = meta["best_val"] if meta.get("best_val") is not None else float("inf")
    return ae.TrainState(model, adam, meta["epoch"], best_model, best_val, meta["best_epoch"]), meta


@main.command()
@click.argument("dataset", nargs=-1, type=click.Path(exists=True))
@click.option("--resume", is_flag=True, help="Continue from <out>/checkpoints/last.")
@click.pass_context
def train(ctx, dataset, resume):
    """Train the set autoencoder with a seeded train/val/test split."""
    cfg = _start(ctx)
    tcfg = cfg.train_config()
    mats = load_materials(dataset or ([cfg.dataset] if cfg.dataset else []))
    if len(mats) < 3 and not tcfg.collapse_splits:
        raise click.UsageError(f"training needs at least 3 materials, got {len(mats)}")
    splits = ae.split_materials([m.name for m in mats], tcfg)
    ckpt = os.path.join(cfg.out, "checkpoints")
    csv_path = os.path.join(cfg.out, "train.csv")
    state = None
    if resume:
        state, meta = _resume_state(ckpt)
        if meta.get("splits") != splits:
            raise click.ClickException("dataset/seed give a different split than the checkpoint")
    with open(os.path.join(cfg.out, "split.json"), "w") as fh:
        json.dump(splits, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not resume:
        ae.write_report([], csv_path)

    def on_epoch(st, rows):
        ae.write_report(rows, csv_path, append=True)
        _save_state(os.path.join(ckpt, "last"), st, tcfg, splits, best=False)
        if st.best_epoch == st.epoch - 1:
            _save_state(os.path.join(ckpt, "best"), st, tcfg, splits, best=True)

    try:
        res = ae.train_autoencoder(mats, tcfg, state, cache_dir=os.path.join(cfg.out, "cache"), on_epoch=on_epoch)
    except ae.TrainingError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"trained to epoch {res.state.epoch}; best epoch {res.state.best_epoch}")


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False))
@click.argument("materials", nargs=-1, type=click.Path(exists=True))
@click.option("--split", default=None, help="Only materials of this split of the checkpoint's run.")
@click.pass_context
def reconstruct(ctx, checkpoint, materials, split):
    """Encode/decode materials; write renders and a metrics CSV."""
    cfg = _start(ctx)
    model, tcfg, _ = _load_model(checkpoint, cfg)
    mats = _checkpoint_materials(checkpoint, materials or ([cfg.dataset] if cfg.dataset else []), split)
    rdir = os.path.join(cfg.out, "renders")
    os.makedirs(rdir, exist_ok=True)
    setup = ae.FrequencySetup.build(tcfg.slices, tcfg.grid, tcfg.band_limit)
    scene = cfg.scene()
    rows = []
    work = lambda m: ex.reconstruct_one(model, m, tcfg, setup, scene, cfg.render_res)  # noqa: E731
    for name, row, gi, ri in pool_map(work, mats, cfg.workers):
        save_png(side_by_side(gi, ri), os.path.join(rdir, name + ".png"))
        rows.append({"material": name, **row})
    write_metrics_csv(os.path.join(cfg.out, "metrics.csv"), rows)
    click.echo(f"reconstructed {len(rows)} materials")


def _edit_pairs(n_mats, n_pairs, seed):
    from .seeding import stream

    rng = stream(seed, "edit_pairs")
    out = []
    for _ in range(n_pairs):
        a, b = rng.choice(n_mats, size=2, replace=False)
        out.append((int(a), int(b), float(rng.uniform(0.0, 1.0))))
    return out


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False))
@click.argument("materials", nargs=-1, type=click.Path(exists=True))
@click.option("--batch", is_flag=True, help="Random pairs and weights (edit_pairs of them) over MATERIALS.")
@click.option("--split", default=None, help="Restrict batch mode to one split of the checkpoint's run.")
@click.pass_context
def edit(ctx, checkpoint, materials, batch, split):
    """Latent interpolation between two materials (or random pairs with --batch)."""
    cfg = _start(ctx)
    model, tcfg, _ = _load_model(checkpoint, cfg)
    setup = ae.FrequencySetup.build(tcfg.slices, tcfg.grid, tcfg.band_limit)
    scene = cfg.scene()
    if not batch:
        files = material_paths(materials)
        if len(files) != 2:
            raise click.UsageError("edit needs exactly two materials (or --batch)")
        a, b = (load_merl(f) for f in files)
        sdir = os.path.join(cfg.out, "strip")
        os.makedirs(sdir, exist_ok=True)
        rows = []
        for i, (t, row, gi, ri) in enumerate(ex.edit(model, a, b, tcfg, cfg.edit_t, scene, cfg.render_res, setup)):
            save_png(side_by_side(gi, ri), os.path.join(sdir, f"{i:02d}_t{t:.3f}.png"))
            rows.append({"t": repr(float(t)), **row})
        write_metrics_csv(os.path.join(cfg.out, "edit.csv"), rows, lead=("t",))
        click.echo(f"wrote {len(rows)} interpolation steps")
        return
    mats = _checkpoint_materials(checkpoint, materials or ([cfg.dataset] if cfg.dataset else []), split)
    if len(mats) < 2:
        raise click.UsageError("batch editing needs at least two materials")
    codes = {m.name: ae.encode_material(model, m, tcfg) for m in mats}
    pairs = _edit_pairs(len(mats), cfg.edit_pairs, cfg.seed)

    def work(item):
        i, (ia, ib, t) = item
        a, b = mats[ia], mats[ib]
        try:
            row = ex.edit_one(model, a, b, codes[a.name], codes[b.name], t, tcfg, setup, scene, cfg.render_res)[0]
            return {"pair": i, "material_a": a.name, "material_b": b.name, "t": repr(t), **row}, None
        except (ValueError, FloatingPointError) as exc:
            return {"pair": i, "material_a": a.name, "material_b": b.name, "t": repr(t)}, exc

    rows, failed = [], 0
    for row, err in pool_map(work, list(enumerate(pairs)), cfg.workers):
        if err is not None:
            failed += 1
            log.error("pair %d failed: %s", row["pair"], err)
            continue
        rows.append(row)
    write_metrics_csv(os.path.join(cfg.out, "edit_batch.csv"), rows, lead=("pair", "material_a", "material_b", "t"))
    click.echo(f"scored {len(rows)}/{len(pairs)} interpolated materials")
    if failed:
        ctx.exit(1)


def _freq_source(path, cfg):
    """``(name, evaluator, f_ref)``; evaluator is a table or a coords callable."""
    name = os.path.splitext(os.path.basename(path))[0]
    if path.endswith(MERL_SUFFIX):
        m = load_merl(path)
        return name, m, (m.median() if cfg.freq_space == "log" else None)
    weights, arch = load_weights(path)
    f = lambda c: eval_coords(weights, c, arch)  # noqa: E731
    f_ref = None
    if cfg.freq_space == "log":
        meta = read_sidecar(path) if os.path.exists(path + ".json") else {}
        f_ref = np.asarray(meta["f_ref"]) if "f_ref" in meta else None
        if f_ref is None:
            raise click.ClickException(f"{path}: log space needs f_ref in the JSON sidecar")
    return name, f, f_ref


@main.command("analyze-freq")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--space", type=click.Choice(["log", "linear"]), default=None, help="Value space (overrides freq_space).")
@click.pass_context
def analyze_freq(ctx, inputs, space):
    """Spherical-harmonic spectra of materials (.binary) or NBRDF weights (.bin)."""
    if space:
        ctx.obj.set("freq_space", space)
    cfg = _start(ctx)
    slices = SliceConfig(cfg.n_slices, InterpConfig(cfg.knn_k, cfg.knn_sigma))
    grid = quadrature_grid(cfg.band_limit)
    sdir = os.path.join(cfg.out, "spectra")
    os.makedirs(sdir, exist_ok=True)
    paths = []
    for p in inputs:
        if os.path.isdir(p):
            paths.extend(sorted(glob.glob(os.path.join(p, "*" + MERL_SUFFIX)) + glob.glob(os.path.join(p, "*.bin"))))
        else:
            paths.append(p)
    failed = 0
    with open(os.path.join(cfg.out, "band_power.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["material", "slice", "channel", "l", "power"])
        for p in paths:
            try:
                name, src, f_ref = _freq_source(p, cfg)
                tf = None if f_ref is None else (lambda v, r=f_ref: log_relative_map(np.maximum(v, 0.0), r, cfg.eps))
                spectra = brdf_frequency_coefficients(src, slices, grid, cfg.band_limit, tf)
            except (ValueError, OSError) as exc:
                failed += 1
                log.error("%s: %s", p, exc)
                continue
            write_spectra_csv(spectra, os.path.join(sdir, name + ".csv"))
            for s in spectra:
                bp = s.band_power()
                for c in range(bp.shape[1]):
                    for l in range(bp.shape[0]):
                        w.writerow([name, s.slice_id, c, l, _num(bp[l, c])])
    click.echo(f"analysed {len(paths) - failed}/{len(paths)} inputs")
    if failed:
        ctx.exit(1)


# -- report --------------------------------------------------------------

def aggregate(rows):
    """Per-metric ``(n, mean, variance)`` over finite values (population variance)."""
    out = {}
    for k in METRICS:
        vals = np.array([r[k] for r in rows if k in r], float)
        fin = vals[np.isfinite(vals)]
        if vals.size == 0:
            continue
        out[k] = {"n": int(fin.size), "n_nonfinite": int(vals.size - fin.size),
                  "mean": float(fin.mean()) if fin.size else float("nan"),
                  "variance": float(fin.var()) if fin.size else float("nan")}
    return out


def histogram(values, bins=N_BINS):
    vals = np.asarray(values, float)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return np.zeros(bins, int), np.linspace(0.0, 1.0, bins + 1)
    return np.histogram(vals, bins=bins, range=(vals.min(), vals.max()) if vals.max() > vals.min() else None)


def load_report(directory, rtol=1e-12):
    """Read ``summary.csv`` and verify it against the stored ``rows.csv``."""
    rows = read_metrics_csv(os.path.join(directory, "rows.csv"))
    with open(os.path.join(directory, "summary.csv"), newline="") as fh:
        summary = {r["metric"]: {"n": int(r["n"]), "n_nonfinite": int(r["n_nonfinite"]),
                                 "mean": float(r["mean"]), "variance": float(r["variance"])}
                   for r in csv.DictReader(fh)}
    again = aggregate(rows)
    for k, s in summary.items():
        a = again.get(k)
        if a is None or a["n"] != s["n"]:
            raise ValueError(f"report summary for {k} does not match its rows")
        for f in ("mean", "variance"):
            if not np.isclose(a[f], s[f], rtol=rtol, atol=1e-300, equal_nan=True):
                raise ValueError(f"report {f} of {k} is {s[f]!r}, rows give {a[f]!r}")
    return rows, summary


@main.command()
@click.argument("metrics_csvs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def report(ctx, metrics_csvs):
    """Histogram and mean/variance tables from metrics CSVs."""
    cfg = _start(ctx)
    rows = []
    for p in metrics_csvs:
        for r in read_metrics_csv(p):
            rows.append({"material": r.get("material") or r.get("pair") or r.get("t"),
                         **{k: r[k] for k in METRICS if k in r}})
    if not rows:
        raise click.UsageError("report needs at least one metrics row")
    rdir = os.path.join(cfg.out, "report")
    os.makedirs(rdir, exist_ok=True)
    write_metrics_csv(os.path.join(rdir, "rows.csv"), rows)
    agg = aggregate(rows)
    with open(os.path.join(rdir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "n", "n_nonfinite", "mean", "variance"])
        for k, a in agg.items():
            w.writerow([k, a["n"], a["n_nonfinite"], _num(a["mean"]), _num(a["variance"])])
    for k in agg:
        counts, edges = histogram([r[k] for r in rows])
        with open(os.path.join(rdir, f"hist_{k}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "lo", "hi", "count"])
            for i, c in enumerate(counts):
                w.writerow([i, _num(edges[i]), _num(edges[i + 1]), int(c)])
    load_report(rdir)
    click.echo(f"report over {len(rows)} rows written to {rdir}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
