"""SINR, spectral efficiency and sensing SCNR of a scheduled deployment."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, Link, link_view
from .errors import DegenerateInputError
from .precoding import PrecoderBank, build_precoder_bank
from .scenario import Scenario

log = logging.getLogger(__name__)

EPS_SCALE_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class PrecodingSettings:
    """How DL precoders are built for a link.

    The RZF regularizer is ``eps_scale * K_d * noise / p_d``.
    """

    sensing: str = "user_centric"
    pi_s: float = 0.2
    eps_scale: float = 1.0


def rzf_epsilon(link: Link, eps_scale: float) -> float:
    k_dl = max(link.H_dl.shape[2], 1)
    return eps_scale * k_dl * link.noise_power / link.dl_power


def make_bank(link: Link, settings: PrecodingSettings) -> PrecoderBank:
    """Precoders for a link, falling back to the target-centric beam when no null space exists."""
    eps = rzf_epsilon(link, settings.eps_scale)
    try:
        return build_precoder_bank(link, sensing=settings.sensing, pi_s=settings.pi_s, epsilon=eps)
    except DegenerateInputError:
        if settings.sensing != "user_centric":
            raise
        log.debug("user-centric sensing beam unavailable, using target-centric beam")
        return build_precoder_bank(link, sensing="target_centric", pi_s=settings.pi_s, epsilon=eps)


def _transmit_covariances(bank: PrecoderBank, N: int) -> np.ndarray:
    """Per-DL-AP transmit covariance divided by ``p_d``, shape ``(M_d, N, N)``."""
    P, ps = bank.per_ap(N)
    cov = np.einsum("jak,k,jbk->jab", P, bank.pi_d, P.conj())
    return cov + bank.pi_s * np.einsum("ja,jb->jab", ps, ps.conj())


def ul_comm_noise_cov(link: Link, bank: PrecoderBank) -> np.ndarray:
    """Interference-plus-noise covariance of UL data at the CPU, ``(M_u*N, M_u*N)``.

    Target echoes of the DL signal, residual inter-AP leakage and clutter add to
    the thermal noise; users' own signals are excluded.
    """
    M_u, M_d, N = len(link.ul_aps), len(link.dl_aps), link.N
    cov = link.noise_power * np.eye(M_u * N, dtype=complex)
    if M_u == 0 or M_d == 0:
        return cov
    p_d = link.dl_power
    tx = _transmit_covariances(bank, N)
    echo = p_d * np.einsum("mj,mjab,jbc,mjdc->mad", link.sigma, link.Rdot, tx, link.Rdot.conj())
    b = p_d * np.real(np.einsum("jaa->j", tx))
    leak = (link.zeta + link.nu) @ b
    for m in range(M_u):
        blk = slice(m * N, (m + 1) * N)
        cov[blk, blk] += echo[m] + leak[m] * np.eye(N)
    return 0.5 * (cov + cov.conj().T)


def ul_sinr(H_ul: np.ndarray, ul_power: np.ndarray, sigma_c: np.ndarray) -> np.ndarray:
    """MMSE-combining SINR of every UL user from the ``(M_u*N, K_u)`` channel matrix."""
    K = H_ul.shape[1]
    out = np.zeros(K)
    if K == 0:
        return out
    total = (H_ul * ul_power) @ H_ul.conj().T + sigma_c
    for k in range(K):
        h = H_ul[:, k]
        cov = total - ul_power[k] * np.outer(h, h.conj())
        L = np.linalg.cholesky(0.5 * (cov + cov.conj().T))
        z = np.linalg.solve(L, h)
        out[k] = ul_power[k] * np.real(np.vdot(z, z))
    return out


def dl_sinr(H_dl: np.ndarray, bank: PrecoderBank, p_d: float, ul_power: np.ndarray,
            kappa: np.ndarray, noise: float) -> np.ndarray:
    """SINR of every DL user from the ``(M_d*N, K_d)`` channel matrix."""
    K = H_dl.shape[1]
    if K == 0:
        return np.zeros(0)
    gains = np.abs(H_dl.conj().T @ bank.P_d) ** 2 * bank.pi_d[None, :] * p_d
    signal = np.diag(gains).copy()
    mui = gains.sum(axis=1) - signal
    sensing = sensing_interference(H_dl, bank, p_d)
    inui = kappa @ ul_power if kappa.size else np.zeros(K)
    return signal / (mui + sensing + inui + noise)


def sensing_interference(H_dl: np.ndarray, bank: PrecoderBank, p_d: float) -> np.ndarray:
    """Power the sensing beam leaks into each DL user.

    A user-centric beam lies in the null space of the DL channels, so its
    leakage is zero by construction rather than up to rounding.
    """
    if bank.sensing in ("user_centric", "off"):
        return np.zeros(H_dl.shape[1])
    return p_d * bank.pi_s * np.abs(H_dl.conj().T @ bank.p_s) ** 2


def sensing_scnr(link: Link, bank: PrecoderBank) -> float:
    """Average echo power over average sensing noise power, summed over UL APs."""
    M_u, M_d, N = len(link.ul_aps), len(link.dl_aps), link.N
    if M_u == 0 or M_d == 0:
        return 0.0
    p_d = link.dl_power
    tx = _transmit_covariances(bank, N)
    echo = np.einsum("mjab,jbc,mjac->mj", link.Rdot, tx, link.Rdot.conj()).real
    numerator = p_d * np.sum(link.sigma * echo)
    b = p_d * np.real(np.einsum("jaa->j", tx))
    users = np.sum(np.abs(link.H_ul) ** 2 * link.ul_power)
    denominator = users + link.noise_power * N * M_u + N * np.sum((link.zeta + link.nu) * b[None, :])
    return float(numerator / denominator)


@dataclass(frozen=True)
class SeSample:
    """SINRs of one channel realization and the resulting spectral efficiencies."""

    sinr_ul: np.ndarray
    sinr_dl: np.ndarray
    scnr: float
    ul_prelog: float = 1.0
    dl_prelog: float = 1.0
    sensing_prelog: float = 1.0

    @property
    def ul_se(self) -> float:
        return self.ul_prelog * float(np.sum(np.log2(1.0 + self.sinr_ul)))

    @property
    def dl_se(self) -> float:
        return self.dl_prelog * float(np.sum(np.log2(1.0 + self.sinr_dl)))

    @property
    def sum_se(self) -> float:
        return self.ul_se + self.dl_se

    @property
    def sensing_se(self) -> float:
        return self.sensing_prelog * float(np.log2(1.0 + self.scnr))


def sum_se(sample: SeSample) -> tuple[float, float]:
    """Communication sum SE and sensing SE, both in bit/s/Hz."""
    return sample.sum_se, sample.sensing_se


def evaluate_link(link: Link, settings: PrecodingSettings) -> SeSample:
    """SINRs of a dynamic-TDD split where both link directions share the whole frame."""
    bank = make_bank(link, settings)
    sigma_c = ul_comm_noise_cov(link, bank)
    return SeSample(
        sinr_ul=ul_sinr(link.stacked_ul_channels(), link.ul_power, sigma_c),
        sinr_dl=dl_sinr(link.stacked_dl_channels(), bank, link.dl_power, link.ul_power,
                        link.kappa, link.noise_power),
        scnr=sensing_scnr(link, bank),
    )


def evaluate_dtdd(scenario: Scenario, channels: ChannelSet, ul_aps, dl_aps,
                  settings: PrecodingSettings) -> SeSample:
    return evaluate_link(link_view(scenario, channels, ul_aps, dl_aps), settings)


def evaluate_tdd(scenario: Scenario, channels: ChannelSet, ul_aps, dl_aps,
                 settings: PrecodingSettings, ul_fraction: float = 0.5, *,
                 full_array: bool = False) -> SeSample:
    """Conventional TDD on the same channels.

    The UL subframe carries no DL transmission and the DL subframe, which also
    hosts sensing, has no UL users on the air. By default both subframes keep
    the given AP split; with ``full_array`` every AP receives in the UL
    subframe and transmits in the DL subframe while sensing keeps the split.
    """
    none = np.arange(0)
    if full_array:
        everyone = np.arange(scenario.num_aps)
        ul_link = link_view(scenario, channels, everyone, none, with_dl_users=False)
        dl_link = link_view(scenario, channels, none, everyone, with_ul_users=False)
    else:
        ul_link = link_view(scenario, channels, ul_aps, none, with_dl_users=False)
        dl_link = link_view(scenario, channels, none, dl_aps, with_ul_users=False)
    sigma_c = ul_link.noise_power * np.eye(len(ul_link.ul_aps) * scenario.num_antennas)
    ul = ul_sinr(ul_link.stacked_ul_channels(), ul_link.ul_power, sigma_c)
    dl_bank = make_bank(dl_link, settings)
    dl = dl_sinr(dl_link.stacked_dl_channels(), dl_bank, dl_link.dl_power, dl_link.ul_power,
                 dl_link.kappa, dl_link.noise_power)
    sense_link = link_view(scenario, channels, ul_aps, dl_aps, with_ul_users=False)
    scnr = sensing_scnr(sense_link, make_bank(sense_link, settings))
    return SeSample(ul, dl, scnr, ul_prelog=ul_fraction, dl_prelog=1.0 - ul_fraction,
                    sensing_prelog=1.0 - ul_fraction)


def calibrate_eps_scale(links, settings: PrecodingSettings, grid=EPS_SCALE_GRID) -> float:
    """Grid value of the RZF regularizer scale maximizing mean DL sum SE over ``links``."""
    best, best_se = grid[0], -np.inf
    for scale in grid:
        trial = PrecodingSettings(settings.sensing, settings.pi_s, scale)
        se = 0.0
        for link in links:
            bank = make_bank(link, trial)
            sinr = dl_sinr(link.stacked_dl_channels(), bank, link.dl_power, link.ul_power,
                           link.kappa, link.noise_power)
            se += float(np.sum(np.log2(1.0 + sinr)))
        if se > best_se:
            best, best_se = scale, se
    return best
