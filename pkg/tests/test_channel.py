import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfisac.channel import (
    constellation_points, draw_channels, draw_from, draw_symbols, link_view, sensing_block,
    sensing_blocks, steering_vector,
)
from cfisac.config import SimConfig
from cfisac.errors import ConfigError
from cfisac.scenario import build_scenario

from conftest import small_config


@given(st.floats(-np.pi, np.pi), st.integers(1, 16))
def test_steering_vector_has_unit_modulus_entries(phi, n):
    a = steering_vector(phi, n)
    assert a.shape == (n,)
    assert np.allclose(np.abs(a), 1.0)
    assert a[0] == 1.0


def test_broadside_steering_is_all_ones_and_endfire_alternates():
    assert np.allclose(steering_vector(0.0, 4), 1.0)
    assert np.allclose(steering_vector(np.pi / 2, 4), [1, -1, 1, -1])


def test_sensing_block_is_rank_one_with_expected_energy():
    blk = sensing_block(0.3, -1.1, 4.0, 5)
    assert np.linalg.matrix_rank(blk) == 1
    assert np.linalg.norm(blk) ** 2 == pytest.approx(4.0 * 25)


def test_sensing_blocks_match_pairwise_construction(rng):
    sc = build_scenario(small_config(), rng)
    R = sensing_blocks(sc)
    N = sc.num_antennas
    for m in range(sc.num_aps):
        for j in range(sc.num_aps):
            expected = sensing_block(sc.target_bearing[j], sc.target_bearing[m], sc.sensing_gain[m, j], N)
            assert np.allclose(R[m, j], expected)


def test_channel_statistics_follow_large_scale_gains():
    cfg = small_config(num_aps=2, num_users=2, antennas_per_ap=2)
    sc = build_scenario(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    draws = [draw_channels(sc, rng) for _ in range(4000)]
    power = np.mean([np.abs(d.H) ** 2 for d in draws], axis=0).mean(axis=1)
    assert np.allclose(power / sc.beta, 1.0, atol=0.1)
    gamma_power = np.mean([np.abs(d.gamma) ** 2 for d in draws], axis=0)
    assert np.allclose(gamma_power / sc.sigma_rcs, 1.0, atol=0.1)


def test_deterministic_rcs():
    sc = build_scenario(small_config(rcs_variance_dbsm=20.0), np.random.default_rng(0))
    ch = draw_channels(sc, np.random.default_rng(1), deterministic_rcs=True)
    assert np.allclose(ch.gamma, 10.0)


@pytest.mark.parametrize("name, size", [("qpsk", 4), ("qam16", 16)])
def test_constellations_have_unit_average_energy(name, size):
    pts = constellation_points(name)
    assert pts.size == size
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)


def test_gaussian_codebook_and_unknown_constellation(rng):
    assert constellation_points("gaussian") is None
    s = draw_from("gaussian", 20000, rng)
    assert np.mean(np.abs(s) ** 2) == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ConfigError):
        constellation_points("bpsk")


def test_draw_symbols_shapes_and_alphabet(rng):
    block = draw_symbols(3, 2, 7, "qpsk", rng)
    assert block.s_u.shape == (7, 3) and block.s_d.shape == (7, 2) and block.s_s.shape == (7,)
    pts = constellation_points("qpsk")
    assert np.all(np.isclose(block.s_u[..., None], pts).any(axis=-1))
    assert not np.all(np.isclose(block.s_s[..., None], pts).any(axis=-1))
    with pytest.raises(ValueError):
        draw_symbols(-1, 2, 3, "qpsk", rng)


def test_link_view_slices_split(rng):
    cfg = small_config(num_aps=5, num_users=6)
    sc = build_scenario(cfg, rng)
    ch = draw_channels(sc, rng)
    ul, dl = np.array([3, 0]), np.array([1, 2, 4])
    link = link_view(sc, ch, ul, dl)
    assert link.shape == (2, 3, cfg.antennas_per_ap, 3, 3)
    assert np.array_equal(link.H_ul, ch.H[[3, 0]][:, :, :3])
    assert np.array_equal(link.H_dl, ch.H[[1, 2, 4]][:, :, 3:])
    assert np.array_equal(link.Rdot[1, 2], ch.Rdot[0, 4])
    assert link.kappa.shape == (3, 3)
    stacked = link.stacked_ul_channels()
    assert np.array_equal(stacked[:cfg.antennas_per_ap], ch.H[3][:, :3])


def test_link_view_without_users(rng):
    sc = build_scenario(small_config(), rng)
    ch = draw_channels(sc, rng)
    link = link_view(sc, ch, [0, 1], [2, 3, 4], with_ul_users=False)
    assert link.shape[3] == 0 and link.kappa.shape == (3, 0) and link.ul_power.size == 0
    link = link_view(sc, ch, [0, 1], [2, 3, 4], with_dl_users=False)
    assert link.shape[4] == 0 and link.kappa.shape == (0, 3)


def test_channel_draw_is_reproducible():
    sc = build_scenario(SimConfig(), np.random.default_rng(0))
    a = draw_channels(sc, np.random.default_rng(4))
    b = draw_channels(sc, np.random.default_rng(4))
    assert np.array_equal(a.H, b.H) and np.array_equal(a.gamma, b.gamma)
