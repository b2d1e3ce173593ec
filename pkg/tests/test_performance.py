import dataclasses

import numpy as np
import pytest

from cfisac.channel import draw_channels, draw_symbols, link_view
from cfisac.detection import receive_sensing
from cfisac.performance import (
    EPS_SCALE_GRID, PrecodingSettings, SeSample, calibrate_eps_scale, dl_sinr, evaluate_dtdd,
    evaluate_tdd, make_bank, sensing_interference, sensing_scnr, sum_se, ul_comm_noise_cov, ul_sinr,
)
from cfisac.precoding import PrecoderBank, assemble_dl_signal
from cfisac.scenario import build_scenario

from conftest import random_hpd, random_link, small_config


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_single_user_white_noise_is_matched_filter_gain(rng):
    h = _cn(rng, 6, 1)
    sinr = ul_sinr(h, np.array([2.0]), 0.5 * np.eye(6))
    assert sinr[0] == pytest.approx(2.0 * np.linalg.norm(h) ** 2 / 0.5)


def test_ul_sinr_matches_explicit_inverse(rng):
    H = _cn(rng, 6, 3)
    p = np.array([1.0, 0.5, 2.0])
    C = random_hpd(rng, 6)
    sinr = ul_sinr(H, p, C)
    for k in range(3):
        others = [j for j in range(3) if j != k]
        cov = C + (H[:, others] * p[others]) @ H[:, others].conj().T
        assert sinr[k] == pytest.approx(p[k] * np.real(H[:, k].conj() @ np.linalg.inv(cov) @ H[:, k]))


def test_no_combiner_beats_the_mmse_sinr(rng):
    H = _cn(rng, 4, 2)
    p = np.array([1.0, 3.0])
    C = 0.2 * np.eye(4)
    best = ul_sinr(H, p, C)[0]
    interference = p[1] * np.outer(H[:, 1], H[:, 1].conj()) + C
    for v in _cn(rng, 2000, 4):
        value = p[0] * abs(np.vdot(v, H[:, 0])) ** 2 / np.real(v.conj() @ interference @ v)
        assert value <= best * (1 + 1e-9)
    v = np.linalg.solve(interference, H[:, 0])
    value = p[0] * abs(np.vdot(v, H[:, 0])) ** 2 / np.real(v.conj() @ interference @ v)
    assert value == pytest.approx(best)


def test_extra_interferer_lowers_every_sinr(rng):
    H = _cn(rng, 5, 3)
    p = np.ones(3)
    C = np.eye(5)
    two = ul_sinr(H[:, :2], p[:2], C)
    three = ul_sinr(H, p, C)
    assert np.all(three[:2] < two)


def test_dl_sinr_single_antenna_by_hand():
    bank = PrecoderBank(np.array([[1.0 + 0j, 0.0], [0.0, 1.0]]), np.array([0.6, 0.8]) + 0j,
                        np.array([0.4, 0.4]), 0.2, 0.1)
    H = np.array([[1.0, 0.5], [0.2, 2.0]], dtype=complex)
    kappa = np.array([[0.1], [0.3]])
    sinr = dl_sinr(H, bank, 2.0, np.array([0.5]), kappa, 0.01)
    sig0, mui0 = 2 * 0.4 * 1.0, 2 * 0.4 * 0.2 ** 2
    sens0 = 2 * 0.2 * (0.6 + 0.2 * 0.8) ** 2
    assert sinr[0] == pytest.approx(sig0 / (mui0 + sens0 + 0.05 + 0.01))
    sig1, mui1 = 2 * 0.4 * 4.0, 2 * 0.4 * 0.25
    sens1 = 2 * 0.2 * (0.5 * 0.6 + 2.0 * 0.8) ** 2
    assert sinr[1] == pytest.approx(sig1 / (mui1 + sens1 + 0.15 + 0.01))


def test_dl_sinr_without_ul_users_and_without_dl_users(rng):
    bank = PrecoderBank(np.eye(2, dtype=complex), np.zeros(2, complex), np.array([0.5, 0.5]), 0.0, 0.1)
    sinr = dl_sinr(np.eye(2, dtype=complex), bank, 1.0, np.zeros(0), np.zeros((2, 0)), 0.1)
    assert np.allclose(sinr, 5.0)
    assert dl_sinr(np.zeros((2, 0)), bank, 1.0, np.zeros(0), np.zeros((0, 0)), 0.1).size == 0


def test_user_centric_beam_does_not_reach_dl_users(rng):
    _, _, link = random_link(rng)
    bank = make_bank(link, PrecodingSettings("user_centric"))
    H = link.stacked_dl_channels()
    assert bank.sensing == "user_centric"
    assert not sensing_interference(H, bank, link.dl_power).any()
    assert np.all(np.abs(H.conj().T @ bank.p_s) <= 1e-10 * np.linalg.norm(H, axis=0))
    target = make_bank(link, PrecodingSettings("target_centric"))
    assert np.any(sensing_interference(link.stacked_dl_channels(), target, link.dl_power) > 0)


def test_ul_noise_covariance_is_thermal_without_dl_aps(rng):
    _, _, link = random_link(rng, ul_aps=(0, 1, 2, 3, 4), dl_aps=())
    cov = ul_comm_noise_cov(link, make_bank(link, PrecodingSettings()))
    assert np.allclose(cov, link.noise_power * np.eye(cov.shape[0]))


def test_se_prelogs():
    sample = SeSample(np.array([1.0, 3.0]), np.array([7.0]), 15.0, 0.5, 0.5, 0.5)
    assert sample.ul_se == pytest.approx(1.5)
    assert sample.dl_se == pytest.approx(1.5)
    assert sum_se(sample) == pytest.approx((3.0, 2.0))
    full = SeSample(np.array([1.0]), np.zeros(0), 0.0)
    assert full.sum_se == pytest.approx(1.0) and full.sensing_se == 0.0


def test_tdd_halves_time_and_drops_cross_link_terms(rng):
    scenario, channels, _ = random_link(rng)
    ul, dl = np.array([0, 1]), np.array([2, 3, 4])
    tdd = evaluate_tdd(scenario, channels, ul, dl, PrecodingSettings())
    clean = evaluate_dtdd(scenario.without_cross_link(), channels, ul, dl, PrecodingSettings())
    dtdd = evaluate_dtdd(scenario, channels, ul, dl, PrecodingSettings())
    assert tdd.ul_prelog == 0.5 and tdd.dl_prelog == 0.5
    assert np.all(tdd.sinr_ul >= dtdd.sinr_ul)
    assert np.all(tdd.sinr_dl >= dtdd.sinr_dl * (1 - 1e-9))
    assert np.all(clean.sinr_ul >= dtdd.sinr_ul)
    full = evaluate_tdd(scenario, channels, ul, dl, PrecodingSettings(), full_array=True)
    assert np.all(full.sinr_ul >= tdd.sinr_ul)


def test_sensing_scnr_matches_simulated_powers():
    cfg = small_config(num_aps=3, antennas_per_ap=2, num_users=4, rcs_variance_dbsm=10.0,
                       inai_level_db=10.0)
    rng = np.random.default_rng(7)
    scenario = build_scenario(cfg, rng)
    link = link_view(scenario, draw_channels(scenario, rng), np.array([0]), np.array([1, 2]))
    bank = make_bank(link, PrecodingSettings())
    M_u, M_d, N, K_u, K_d = link.shape
    echo, total = 0.0, 0.0
    trials = 4000
    for _ in range(trials):
        gamma = np.sqrt(link.sigma) * _cn(rng, M_u, M_d)
        trial = dataclasses.replace(link, gamma=gamma)
        symbols = draw_symbols(K_u, K_d, 1, "gaussian", rng)
        x_d = assemble_dl_signal(bank, symbols, link.dl_power, N)
        seed = rng.integers(2**32)
        r1 = receive_sensing(trial, x_d, symbols.s_u, np.random.default_rng(seed), target_present=True)
        r0 = receive_sensing(trial, x_d, symbols.s_u, np.random.default_rng(seed), target_present=False)
        echo += np.sum(np.abs(r1 - r0) ** 2) / trials
        total += np.sum(np.abs(r0) ** 2) / trials
    assert sensing_scnr(link, bank) == pytest.approx(echo / total, rel=0.12)


def test_eps_calibration_returns_grid_value(rng):
    links = [random_link(rng)[2] for _ in range(3)]
    scale = calibrate_eps_scale(links, PrecodingSettings())
    assert scale in EPS_SCALE_GRID
    assert calibrate_eps_scale(links, PrecodingSettings(), grid=(0.5,)) == 0.5
