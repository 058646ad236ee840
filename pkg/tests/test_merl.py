import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neumat import merl
from neumat.merl import SHAPE, MerlBrdf


def test_save_load_byte_identity(tmp_path, random_table):
    p1, p2 = tmp_path / "a.binary", tmp_path / "b.binary"
    merl.save_merl(random_table, p1)
    back = merl.load_merl(p1)
    merl.save_merl(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(back.raw, random_table.raw)
    assert back.name == "a"


def test_file_layout_is_channel_major(tmp_path):
    raw = np.zeros(SHAPE + (3,))
    raw[0, 0, 1, 2] = 7.0
    merl.save_merl(MerlBrdf(raw), tmp_path / "x.binary")
    data = (tmp_path / "x.binary").read_bytes()
    assert np.frombuffer(data[:12], "<i4").tolist() == [90, 90, 180]
    vals = np.frombuffer(data[12:], "<f8")
    assert vals.size == 3 * 90 * 90 * 180
    # blue block starts after two full channels; element (0,0,1) is offset 1
    assert vals[2 * 90 * 90 * 180 + 1] == 7.0


def test_bad_header_and_truncation(tmp_path):
    p = tmp_path / "bad.binary"
    p.write_bytes(np.array([64, 64, 128], "<i4").tobytes() + b"\0" * 64)
    with pytest.raises(merl.MerlFormatError):
        merl.load_merl(p)
    p.write_bytes(np.array([90, 90, 180], "<i4").tobytes() + b"\0" * 1000)
    with pytest.raises(OSError):
        merl.load_merl(p)
    p.write_bytes(b"\1\2")
    with pytest.raises(OSError):
        merl.load_merl(p)


def test_scaling_and_masking():
    vals = np.zeros(SHAPE + (3,))
    vals[3, 4, 5] = [1.0, 1.0, 1.0]
    mask = np.ones(SHAPE, bool)
    mask[0, 0, 0] = False
    b = MerlBrdf.from_linear(vals, mask)
    assert b.raw[3, 4, 5, 0] == pytest.approx(1500.0)
    assert b.raw[3, 4, 5, 2] == pytest.approx(1500.0 / 1.66)
    assert np.all(b.raw[0, 0, 0] == -1.0)
    assert not b.mask[0, 0, 0]
    assert np.array_equal(b.grid[0, 0, 0], [0, 0, 0])
    zero = MerlBrdf.from_linear(np.zeros(SHAPE + (3,)))
    assert not zero.raw.any()


def test_single_negative_channel_masks_cell():
    raw = np.ones(SHAPE + (3,))
    raw[1, 2, 3, 1] = -1.0
    b = MerlBrdf(raw)
    assert not b.mask[1, 2, 3]
    assert b.n_valid == np.prod(SHAPE) - 1


def test_rejects_bad_grid():
    with pytest.raises(merl.MerlFormatError):
        MerlBrdf(np.zeros((90, 90, 90, 3)))
    raw = np.zeros(SHAPE + (3,))
    raw[0, 0, 0, 0] = np.inf
    with pytest.raises(merl.MerlFormatError):
        MerlBrdf(raw)


def test_lookup_cells():
    i, j, k = np.meshgrid(np.arange(90), np.arange(90), np.arange(180), indexing="ij")
    s = (i + j + k).astype(float)
    b = MerlBrdf.from_linear(np.stack([s, s, s], -1))
    th, td, pd = merl.cell_centers()
    rng = np.random.default_rng(1)
    a, c, e = rng.integers(0, 90, 50), rng.integers(0, 90, 50), rng.integers(0, 180, 50)
    rgb, valid = merl.lookup(b, merl.RusinCoords(th[a], td[c], pd[e]))
    assert valid.all()
    assert np.allclose(rgb[:, 0], a + c + e)
    rgb0, _ = merl.lookup(b, merl.RusinCoords(0.0, 0.0, 0.0))
    assert np.array_equal(rgb0, b.grid[0, 0, 0])
    assert merl.theta_h_index(np.pi / 2 - 1e-12) == 89
    assert merl.theta_h_index(np.pi / 2) == 89


def test_lookup_masked_and_domain(random_table):
    idx = np.argwhere(~random_table.mask)[0]
    th, td, pd = merl.cell_centers()
    rgb, valid = merl.lookup(random_table, merl.RusinCoords(th[idx[0]], td[idx[1]], pd[idx[2]]))
    assert not valid and not rgb.any()
    with pytest.raises(merl.DomainError):
        merl.lookup(random_table, merl.RusinCoords(2.0, 0.1, 0.1))
    with pytest.raises(merl.DomainError):
        merl.lookup(random_table, merl.RusinCoords(0.1, -0.5, 0.1))


def test_theta_h_index_monotone_surjective():
    x = np.linspace(0.0, np.pi / 2, 200001)
    idx = merl.theta_h_index(x)
    assert np.all(np.diff(idx) >= 0)
    assert set(idx.tolist()) == set(range(90))
    th, _, _ = merl.cell_centers()
    assert np.array_equal(merl.theta_h_index(th), np.arange(90))


def test_phi_d_reciprocity():
    assert merl.phi_d_index(0.3) == merl.phi_d_index(0.3 + np.pi)


def _unit(v):
    return v / np.linalg.norm(v)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 1.5), st.floats(0.0, 2 * np.pi - 1e-3),
    st.floats(0.0, 1.5), st.floats(0.0, 2 * np.pi - 1e-3),
)
def test_direction_round_trip(t1, p1, t2, p2):
    wi = np.array([np.sin(t1) * np.cos(p1), np.sin(t1) * np.sin(p1), np.cos(t1)])
    wo = np.array([np.sin(t2) * np.cos(p2), np.sin(t2) * np.sin(p2), np.cos(t2)])
    pair, c = merl.io_to_hd(wi, wo)
    assert abs(np.linalg.norm(pair.h) - 1) < 1e-9 and abs(np.linalg.norm(pair.d) - 1) < 1e-9
    assert 0 <= c.theta_h <= np.pi / 2 + 1e-12 and 0 <= c.theta_d <= np.pi / 2 + 1e-12
    a, b = merl.hd_to_io(c)
    assert np.allclose(a, wi, atol=1e-9) and np.allclose(b, wo, atol=1e-9)


def test_io_to_hd_errors():
    with pytest.raises(merl.DomainError):
        merl.io_to_hd([0, 0, -1.0], [0, 0, 1.0])
    with pytest.raises(merl.DomainError):
        merl.io_to_hd([1.0, 0, 0], [-1.0, 0, 0])


def test_normal_incidence_angles():
    _, c = merl.io_to_hd([0, 0, 1.0], [0, 0, 1.0])
    assert c.theta_h == pytest.approx(0) and c.theta_d == pytest.approx(0)
    assert merl.cos_theta_in(merl.RusinCoords(0.0, 0.0, 0.0)) == pytest.approx(1.0)


def test_log_relative_map():
    assert merl.log_relative_map(0.3, 0.3) == pytest.approx(0.0)
    assert merl.log_relative_map(0.0, 0.0) == pytest.approx(0.0)
    f = np.array([0.0, 0.01, 2.5, 100.0])
    assert np.allclose(merl.inverse_log_relative_map(merl.log_relative_map(f, 0.2), 0.2), f)
    assert merl.inverse_log_relative_map(0.0, 0.7) == pytest.approx(0.7)
    assert merl.inverse_log_relative_map(-50.0, 0.7) == 0.0
    with pytest.raises(merl.DomainError):
        merl.log_relative_map(-0.1, 0.2)
    with pytest.raises(merl.DomainError):
        merl.log_relative_map(0.1, 0.2, eps=0.0)


def test_median_ignores_masked(random_table):
    expect = np.median(random_table.grid[random_table.mask], axis=0)
    assert np.array_equal(random_table.median(), expect)
