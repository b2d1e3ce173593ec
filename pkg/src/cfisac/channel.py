"""Per-trial random quantities and the duplex-specific link view.

Vectors stacked over APs are AP-major: entries ``[m*N:(m+1)*N]`` belong to AP ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scenario import Scenario

_QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])


def steering_vector(phi: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response toward angle ``phi`` measured from broadside."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(phi))


def sensing_block(phi_tx: float, phi_rx: float, beta_s: float, n: int) -> np.ndarray:
    """Rank-one target response from a transmitting AP to a receiving AP."""
    return np.sqrt(beta_s) * np.outer(steering_vector(phi_rx, n), steering_vector(phi_tx, n))


def sensing_blocks(scenario: Scenario) -> np.ndarray:
    """All target responses, shape ``(M_rx, M_tx, N, N)``."""
    n = scenario.num_antennas
    steer = np.stack([steering_vector(phi, n) for phi in scenario.target_bearing])
    amp = np.sqrt(scenario.sensing_gain)
    return amp[:, :, None, None] * steer[:, None, :, None] * steer[None, :, None, :]


def _complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


@dataclass(frozen=True)
class ChannelSet:
    """One realization of the user channels and target reflection coefficients.

    ``H`` has shape ``(M, N, K)``; ``Rdot`` has shape ``(M, M, N, N)`` indexed
    ``[rx AP, tx AP]``; ``gamma`` and ``sigma_gamma`` have shape ``(M, M)``.
    """

    H: np.ndarray
    Rdot: np.ndarray
    gamma: np.ndarray
    sigma_gamma: np.ndarray


def draw_channels(scenario: Scenario, rng: np.random.Generator, *,
                  deterministic_rcs: bool = False) -> ChannelSet:
    """Rayleigh user channels and Swerling-1 reflection coefficients.

    With ``deterministic_rcs`` the reflection coefficient is fixed to the real
    value ``sqrt(sigma)`` instead of being drawn.
    """
    M, K, N = scenario.num_aps, scenario.num_users, scenario.num_antennas
    fading = _complex_normal(rng, (M, N, K))
    H = np.sqrt(scenario.beta)[:, None, :] * fading
    sigma = scenario.sigma_rcs
    if deterministic_rcs:
        gamma = np.sqrt(sigma).astype(complex)
    else:
        gamma = np.sqrt(sigma) * _complex_normal(rng, (M, M))
    return ChannelSet(H=H, Rdot=sensing_blocks(scenario), gamma=gamma, sigma_gamma=sigma.copy())


def constellation_points(name: str) -> np.ndarray | None:
    """Unit-energy alphabet, or ``None`` for a Gaussian codebook."""
    if name == "gaussian":
        return None
    if name == "qpsk":
        return np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    if name == "qam16":
        re, im = np.meshgrid(_QAM16_LEVELS, _QAM16_LEVELS)
        return (re + 1j * im).ravel() / np.sqrt(10.0)
    raise ConfigError(f"unknown constellation {name!r}")


def draw_from(constellation: str, size, rng: np.random.Generator) -> np.ndarray:
    points = constellation_points(constellation)
    if points is None:
        return _complex_normal(rng, size)
    return points[rng.integers(0, points.size, size=size)]


@dataclass(frozen=True)
class SymbolBlock:
    """Data symbols for one observation window, slot-major."""

    s_u: np.ndarray
    s_d: np.ndarray
    s_s: np.ndarray
    constellation: str


def draw_symbols(k_ul: int, k_dl: int, T: int, constellation: str,
                 rng: np.random.Generator) -> SymbolBlock:
    """Independent UL, DL and sensing streams; the sensing stream is always Gaussian."""
    if min(k_ul, k_dl, T) < 0:
        raise ValueError("symbol counts must be non-negative")
    s_u = draw_from(constellation, (T, k_ul), rng)
    s_d = draw_from(constellation, (T, k_dl), rng)
    s_s = _complex_normal(rng, T)
    return SymbolBlock(s_u=s_u, s_d=s_d, s_s=s_s, constellation=constellation)


@dataclass(frozen=True)
class Link:
    """Channels and gains restricted to one UL/DL split of the APs.

    ``H_ul`` is ``(M_u, N, K_u)`` from UL users to UL APs, ``H_dl`` is
    ``(M_d, N, K_d)`` from DL APs to DL users, ``Rdot`` is ``(M_u, M_d, N, N)``.
    """

    ul_aps: np.ndarray
    dl_aps: np.ndarray
    H_ul: np.ndarray
    H_dl: np.ndarray
    beta_ul: np.ndarray
    Rdot: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    zeta: np.ndarray
    nu: np.ndarray
    ul_power: np.ndarray
    kappa: np.ndarray
    noise_power: float
    dl_power: float

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        """``(M_u, M_d, N, K_u, K_d)``."""
        return (len(self.ul_aps), len(self.dl_aps), self.N, self.H_ul.shape[2], self.H_dl.shape[2])

    @property
    def N(self) -> int:
        return self.H_ul.shape[1]

    def stacked_ul_channels(self) -> np.ndarray:
        """``(M_u*N, K_u)`` UL channel matrix."""
        M_u, N, K_u = self.H_ul.shape
        return self.H_ul.reshape(M_u * N, K_u)

    def stacked_dl_channels(self) -> np.ndarray:
        """``(M_d*N, K_d)`` DL channel matrix."""
        M_d, N, K_d = self.H_dl.shape
        return self.H_dl.reshape(M_d * N, K_d)


def link_view(scenario: Scenario, channels: ChannelSet, ul_aps, dl_aps, *,
              with_ul_users: bool = True, with_dl_users: bool = True) -> Link:
    """Slice a channel realization to a given AP split.

    Dropping UL users (``with_ul_users=False``) gives the DL/sensing subframe of
    a conventional TDD frame; dropping DL users gives its UL subframe.
    """
    ul_aps = np.asarray(ul_aps, dtype=int)
    dl_aps = np.asarray(dl_aps, dtype=int)
    ul_users = scenario.ul_users if with_ul_users else scenario.ul_users[:0]
    dl_users = scenario.dl_users if with_dl_users else scenario.dl_users[:0]
    ul_pos = np.searchsorted(scenario.ul_users, ul_users)
    dl_pos = np.searchsorted(scenario.dl_users, dl_users)
    pair = np.ix_(ul_aps, dl_aps)
    return Link(
        ul_aps=ul_aps,
        dl_aps=dl_aps,
        H_ul=channels.H[np.ix_(ul_aps, np.arange(scenario.num_antennas), ul_users)],
        H_dl=channels.H[np.ix_(dl_aps, np.arange(scenario.num_antennas), dl_users)],
        beta_ul=scenario.beta[np.ix_(ul_aps, ul_users)],
        Rdot=channels.Rdot[pair],
        gamma=channels.gamma[pair],
        sigma=channels.sigma_gamma[pair],
        zeta=scenario.zeta[pair],
        nu=scenario.nu[pair],
        ul_power=scenario.ul_power[ul_pos],
        kappa=scenario.kappa[np.ix_(dl_pos, ul_pos)],
        noise_power=scenario.noise_power,
        dl_power=scenario.dl_power,
    )
