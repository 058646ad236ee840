import csv
import os
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from neumat import autoencoder as ae
from neumat import cli, harmonics, synthetic
from neumat.merl import load_merl, log_relative_map, save_merl
from neumat.nbrdf import eval_coords
from neumat.sphere import InterpConfig

TINY = """
# tiny architecture and budgets for fast command tests
z_dim = 4
enc_hidden = 8, 8
dec_hidden = 8, 8
nbrdf_hidden = 4
band_limit = 2
n_slices = 2
set_size = 16
n_loss_samples = 16
steps_per_epoch = 1
epochs = 20
render_res = 24
fit_epochs = 2
fit_batches_per_epoch = 2
fit_batch = 64
edit_pairs = 3
"""


def run(args, env=None, code=0):
    res = CliRunner().invoke(cli.main, [str(a) for a in args], env=env or {}, catch_exceptions=False)
    assert res.exit_code == code, res.output
    return res


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    run(["--seed", 7, "synth", d / "mats", "--n", 10])
    (d / "tiny.cfg").write_text(TINY)
    return d


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    run(["--config", data / "tiny.cfg", "--out", out, "train", data / "mats"])
    return out


# -- configuration ---------------------------------------------------------

def test_config_echo_round_trip(data, tmp_path):
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "--eta", 0.5, "synth", tmp_path / "m", "--n", 1])
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "--eta", 0.5, "report", _metrics_file(tmp_path)])
    text = (tmp_path / "config.txt").read_text()
    cfg = cli.RunConfig.from_text(text)
    assert cfg.eta == 0.5 and cfg.enc_hidden == (8, 8) and cfg.z_dim == 4
    assert cfg.to_text() == text
    assert cfg == cli.RunConfig.resolve(tmp_path / "config.txt")


def _metrics_file(d):
    p = d / "m.csv"
    cli.write_metrics_csv(p, [{"material": "a", "rmse": 0.1, "psnr": 20.0, "ssim": 0.9, "L_fre": 0.01}])
    return p


def test_precedence(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("eta = 0.1\nlr = 0.5\nz_dim = 3\nset_size = 10\n")
    env = {"NEUMAT_ETA": "0.2", "NEUMAT_LR": "0.25", "NEUMAT_SET_SIZE": "20"}
    cfg = cli.RunConfig.resolve(f, env=env, pairs=["lr=0.125", "set_size=30"], flags={"set_size": 40, "eta": None})
    assert cfg.z_dim == 3  # file
    assert cfg.eta == 0.2  # env over file
    assert cfg.lr == 0.125  # --set over env
    assert cfg.set_size == 40  # flag over --set
    assert cli.RunConfig.resolve(env={}).values == cli.DEFAULTS


def test_every_key_has_env_override():
    for key, default in cli.DEFAULTS.items():
        text = cli._format_value(default)
        cfg = cli.RunConfig.resolve(env={"NEUMAT_" + key.upper(): text})
        assert cfg.values[key] == default


def test_env_override_through_cli(data, tmp_path):
    run(["--out", tmp_path, "report", _metrics_file(tmp_path)], env={"NEUMAT_KNN_K": "5"})
    assert "knn_k = 5\n" in (tmp_path / "config.txt").read_text()


def test_config_errors(tmp_path):
    with pytest.raises(cli.ConfigError, match="unknown"):
        cli.RunConfig.from_text("no_such_key = 1\n")
    with pytest.raises(cli.ConfigError, match="bad value"):
        cli.RunConfig.from_text("epochs = many\n")
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.resolve(env={}, pairs=["epochs"])
    res = CliRunner().invoke(cli.main, ["--set", "bogus=1", "report", "x"])
    assert res.exit_code == 2


# -- fit -----------------------------------------------------------------

def test_fit_one_material_and_rerun(data, tmp_path):
    src = sorted((data / "mats").glob("*.binary"))[0]
    for out in ("a", "b"):
        run(["--config", data / "tiny.cfg", "--out", tmp_path / out, "fit", src])
    wa = sorted(os.listdir(tmp_path / "a" / "weights"))
    assert wa == [src.stem + ".bin", src.stem + ".bin.json"]
    for f in wa + ["../fit_log.csv"]:
        assert (tmp_path / "a" / "weights" / f).read_bytes() == (tmp_path / "b" / "weights" / f).read_bytes()
    log = rows(tmp_path / "a" / "fit_log.csv")
    assert len(log) == 2 and all(r["status"] == "ok" for r in log)


def test_fit_empty_and_bad_inputs(data, tmp_path):
    (tmp_path / "empty").mkdir()
    run(["--out", tmp_path / "o", "fit", tmp_path / "empty"], code=2)
    mix = tmp_path / "mix"
    mix.mkdir()
    (mix / "aaa_broken.binary").write_bytes(b"\x00" * 40)
    shutil.copy(sorted((data / "mats").glob("*.binary"))[0], mix)
    run(["--config", data / "tiny.cfg", "--out", tmp_path / "o", "fit", mix], code=1)
    log = rows(tmp_path / "o" / "fit_log.csv")
    assert log[0]["material"] == "aaa_broken" and log[0]["status"].startswith("failed")
    assert log[-1]["status"] == "ok"
    assert len(os.listdir(tmp_path / "o" / "weights")) == 2


# -- train ---------------------------------------------------------------

def test_train_report_rows(trained):
    r = rows(trained / "train.csv")
    assert len(r) == 60
    assert list(r[0]) == ["epoch", "split", "L_rec", "L_fre", "total"]
    assert {x["split"] for x in r} == {"train", "val", "test"}
    import json

    s = json.loads((trained / "split.json").read_text())
    assert [len(s[k]) for k in ("train", "val", "test")] == [7, 1, 2]
    assert (trained / "checkpoints" / "best" / "checkpoint.json").exists()


def test_train_resume_is_seamless(data, trained, tmp_path):
    short = TINY.replace("epochs = 20", "epochs = 12")
    (tmp_path / "short.cfg").write_text(short)
    run(["--config", tmp_path / "short.cfg", "--out", tmp_path, "train", data / "mats"])
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "train", data / "mats", "--resume"])
    assert (tmp_path / "train.csv").read_bytes() == (trained / "train.csv").read_bytes()
    a = ae.load_checkpoint(tmp_path / "checkpoints" / "last")[0]
    b = ae.load_checkpoint(trained / "checkpoints" / "last")[0]
    assert np.array_equal(a.params, b.params)


def test_train_needs_three_materials(data, tmp_path):
    two = tmp_path / "two"
    two.mkdir()
    for p in sorted((data / "mats").glob("*.binary"))[:2]:
        shutil.copy(p, two)
    res = CliRunner().invoke(cli.main, ["--out", str(tmp_path), "train", str(two)])
    assert res.exit_code == 2 and "at least 3" in res.output


# -- reconstruct / edit ------------------------------------------------------

def test_reconstruct_metrics(data, trained, tmp_path):
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "reconstruct", trained / "checkpoints" / "best",
         data / "mats"])
    r = cli.read_metrics_csv(tmp_path / "metrics.csv")
    assert len(r) == 10 and len(os.listdir(tmp_path / "renders")) == 10
    assert list(r[0]) == ["material", "rmse", "psnr", "ssim", "L_fre"]
    # independent L_fre: callable NBRDF sampled per slice, plain numpy mean of squared differences
    cfg = cli.RunConfig.resolve(data / "tiny.cfg", env={})
    tcfg = cfg.train_config()
    model = ae.load_checkpoint(trained / "checkpoints" / "best")[0]
    m = load_merl(sorted((data / "mats").glob("*.binary"))[0])
    w, scale = ae.reconstruct_weights(model, m, tcfg)
    slices = harmonics.SliceConfig(tcfg.n_slices, InterpConfig(tcfg.knn_k, tcfg.knn_sigma))
    grid = harmonics.quadrature_grid(tcfg.band_limit)
    ref = m.median()

    def tf(v):
        return log_relative_map(v, ref, tcfg.eps)

    gt = harmonics.brdf_frequency_coefficients(m, slices, grid, tcfg.band_limit, tf)
    rec = harmonics.brdf_frequency_coefficients(lambda c: eval_coords(w, c, model.arch.nbrdf) * scale, slices, grid,
                                               tcfg.band_limit, tf)
    expect = np.mean(np.abs(np.stack([g.coeffs for g in gt]) - np.stack([x.coeffs for x in rec])) ** 2)
    assert r[0]["material"] == m.name
    assert r[0]["L_fre"] == pytest.approx(expect, rel=1e-9)


def test_ground_truth_against_itself():
    m = synthetic.tabulate(synthetic.lambertian([0.5, 0.4, 0.3]))
    from neumat import experiments as ex
    from neumat.render import render_sphere

    img = render_sphere(ex.table_eval(m), w=32, h=32)
    row = ex.compare(img, img)
    assert row["rmse"] == 0 and abs(row["ssim"] - 1) <= 1e-9


def test_edit_strip_and_endpoints(data, trained, tmp_path):
    mats = sorted((data / "mats").glob("*.binary"))
    ck = trained / "checkpoints" / "best"
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "edit", ck, mats[0], mats[1]])
    strip = sorted(os.listdir(tmp_path / "strip"))
    assert len(strip) == 6 and strip[0].startswith("00_t0.000")
    e = cli.read_metrics_csv(tmp_path / "edit.csv")
    run(["--config", data / "tiny.cfg", "--out", tmp_path / "r", "reconstruct", ck, mats[0], mats[1]])
    rec = cli.read_metrics_csv(tmp_path / "r" / "metrics.csv")
    for k in cli.METRICS:
        assert e[0][k] == rec[0][k]
        assert e[-1][k] == rec[1][k]


def test_edit_batch(data, trained, tmp_path):
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "edit", trained / "checkpoints" / "best",
         data / "mats", "--batch"])
    r = rows(tmp_path / "edit_batch.csv")
    assert len(r) == 3
    assert list(r[0]) == ["pair", "material_a", "material_b", "t", "rmse", "psnr", "ssim", "L_fre"]
    assert all(x["material_a"] != x["material_b"] for x in r)


# -- analyze-freq ------------------------------------------------------------

def test_analyze_freq_constant_linear(tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    save_merl(synthetic.tabulate(synthetic.constant([0.2, 0.3, 0.4]), "flat", mask_below_horizon=False),
              d / "flat.binary")
    for out in ("a", "b"):
        run(["--out", tmp_path / out, "--set", "band_limit=3", "analyze-freq", d, "--space", "linear"])
    bp = rows(tmp_path / "a" / "band_power.csv")
    assert len(bp) == 4 * 3 * 4
    for r in bp:
        if int(r["l"]) > 0:
            assert float(r["power"]) < 1e-20
        else:
            c = [0.2, 0.3, 0.4][int(r["channel"])]
            assert float(r["power"]) == pytest.approx(4 * np.pi * c * c, rel=1e-10)
    for f in ("band_power.csv", "spectra/flat.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_analyze_freq_parseval_and_weights(data, tmp_path):
    src = sorted((data / "mats").glob("*.binary"))[0]
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "fit", src])
    run(["--config", data / "tiny.cfg", "--out", tmp_path, "analyze-freq", src, tmp_path / "weights"])
    spec = harmonics.read_spectra_csv(tmp_path / "spectra" / (src.stem + ".csv"))
    bp = rows(tmp_path / "band_power.csv")
    assert {r["material"] for r in bp} == {src.stem}
    for s in spec:
        total = sum(float(r["power"]) for r in bp if r["material"] == src.stem and int(r["slice"]) == s.slice_id
                    and r["channel"] == "0")
        assert total == pytest.approx(np.sum(np.abs(s.coeffs[:, 0]) ** 2), rel=1e-12)
    # weights spectra are written under the same name into the same directory
    assert len(os.listdir(tmp_path / "spectra")) == 1


# -- report ------------------------------------------------------------------

def test_report_hand_values(tmp_path):
    p = tmp_path / "m.csv"
    vals = [(0.1, 20.0, 0.9, 1.0), (0.2, 14.0, 0.8, 2.0), (0.3, 10.0, 0.7, 6.0)]
    cli.write_metrics_csv(p, [dict(zip(("material",) + cli.METRICS, (f"m{i}",) + v)) for i, v in enumerate(vals)])
    run(["--out", tmp_path, "report", p])
    s = {r["metric"]: r for r in rows(tmp_path / "report" / "summary.csv")}
    assert float(s["L_fre"]["mean"]) == pytest.approx(3.0)
    assert float(s["L_fre"]["variance"]) == pytest.approx(14 / 3)
    assert float(s["rmse"]["variance"]) == pytest.approx(0.02 / 3)
    assert int(s["psnr"]["n"]) == 3
    h = rows(tmp_path / "report" / "hist_L_fre.csv")
    assert len(h) == cli.N_BINS and sum(int(r["count"]) for r in h) == 3


def test_report_single_row_and_nonfinite(tmp_path):
    p = tmp_path / "m.csv"
    cli.write_metrics_csv(p, [{"material": "a", "rmse": 0.0, "psnr": float("inf"), "ssim": 1.0, "L_fre": 0.5}])
    run(["--out", tmp_path, "report", p])
    s = {r["metric"]: r for r in rows(tmp_path / "report" / "summary.csv")}
    assert float(s["L_fre"]["variance"]) == 0.0
    assert s["psnr"]["n"] == "0" and s["psnr"]["n_nonfinite"] == "1"


def test_report_tamper_detected(tmp_path):
    p = _metrics_file(tmp_path)
    run(["--out", tmp_path, "report", p, p])
    summ = tmp_path / "report" / "summary.csv"
    summ.write_text(summ.read_text().replace("0.1,", "0.2,", 1))
    with pytest.raises(ValueError):
        cli.load_report(tmp_path / "report")


def test_report_empty_input(tmp_path):
    p = tmp_path / "m.csv"
    cli.write_metrics_csv(p, [])
    run(["--out", tmp_path, "report", p], code=2)


# -- determinism -----------------------------------------------------------

def test_reruns_are_byte_identical(data, trained, tmp_path):
    ck = trained / "checkpoints" / "best"
    for out in ("a", "b"):
        o = tmp_path / out
        run(["--config", data / "tiny.cfg", "--out", o, "train", data / "mats"])
        run(["--config", data / "tiny.cfg", "--out", o, "reconstruct", ck, "--split", "test", data / "mats"])
        run(["--config", data / "tiny.cfg", "--out", o, "report", o / "metrics.csv"])
    for f in ("train.csv", "metrics.csv", "report/summary.csv", "report/rows.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "train.csv").read_bytes() == (trained / "train.csv").read_bytes()
