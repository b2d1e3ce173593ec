"""Static deployment: placements and every gain that depends only on geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import BOLTZMANN, REFERENCE_TEMPERATURE_K, PathLossModel, SimConfig
from .errors import ConfigError


@dataclass(frozen=True)
class Scenario:
    """Geometry and large-scale gains of one deployment.

    Index conventions: ``m`` and ``j`` run over APs, ``k`` over users. Pairwise
    AP arrays are indexed ``[receiving AP, transmitting AP]``. ``kappa`` is
    indexed ``[DL user, UL user]`` in the order of ``dl_users`` and
    ``ul_users``.
    """

    ap_positions: np.ndarray
    user_positions: np.ndarray
    target_position: np.ndarray
    ul_users: np.ndarray
    dl_users: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    zeta: np.ndarray
    nu: np.ndarray
    sigma_rcs: np.ndarray
    sensing_gain: np.ndarray
    target_bearing: np.ndarray
    noise_power: float
    lambda_c: float
    ul_power: np.ndarray
    dl_power: float
    num_antennas: int

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    def ap_user_distances(self) -> np.ndarray:
        return _pairwise_distances(self.ap_positions, self.user_positions)

    def ap_target_distances(self) -> np.ndarray:
        return np.linalg.norm(self.ap_positions - self.target_position, axis=1)

    def without_cross_link(self) -> "Scenario":
        """Copy with inter-AP leakage, clutter and target reflections removed."""
        return replace(
            self,
            zeta=np.zeros_like(self.zeta),
            nu=np.zeros_like(self.nu),
            sigma_rcs=np.zeros_like(self.sigma_rcs),
        )


def noise_power(bandwidth_hz: float, noise_figure_db: float) -> float:
    """Thermal noise power in watts at the reference temperature."""
    if bandwidth_hz <= 0:
        raise ConfigError("bandwidth must be positive")
    return BOLTZMANN * REFERENCE_TEMPERATURE_K * bandwidth_hz * 10.0 ** (noise_figure_db / 10.0)


def path_loss_sensing(d_tx, d_rx, lambda_c: float):
    """Two-way free-space gain of the transmitter-target-receiver path."""
    d_tx = np.asarray(d_tx, dtype=float)
    d_rx = np.asarray(d_rx, dtype=float)
    if np.any(d_tx <= 0) or np.any(d_rx <= 0):
        raise ValueError("sensing path distances must be positive")
    gain = lambda_c**2 / ((4.0 * math.pi) ** 3 * d_rx**2 * d_tx**2)
    return gain if gain.ndim else float(gain)


def cost_hata_loss_db(distance_m, carrier_freq_hz: float, tx_height_m: float,
                      rx_height_m: float, near_m: float, far_m: float):
    """Three-slope COST-231 Hata path loss in dB (positive number)."""
    f_mhz = carrier_freq_hz / 1e6
    lf = math.log10(f_mhz)
    base = (46.3 + 33.9 * lf - 13.82 * math.log10(tx_height_m)
            - (1.1 * lf - 0.7) * rx_height_m + (1.56 * lf - 0.8))
    d_km = np.asarray(distance_m, dtype=float) / 1000.0
    near_km, far_km = near_m / 1000.0, far_m / 1000.0
    far_slope = base + 35.0 * np.log10(np.maximum(d_km, far_km))
    mid_slope = base + 15.0 * math.log10(far_km) + 20.0 * np.log10(np.clip(d_km, near_km, far_km))
    loss = np.where(d_km > far_km, far_slope, mid_slope)
    return loss if loss.ndim else float(loss)


def comm_gain(distance_m, carrier_freq_hz: float, model: PathLossModel, *,
              between_users: bool = False):
    """Linear large-scale gain for an AP-user link or a user-user link."""
    tx_height = model.user_height_m if between_users else model.ap_height_m
    loss = cost_hata_loss_db(distance_m, carrier_freq_hz, tx_height, model.user_height_m,
                             model.near_breakpoint_m, model.far_breakpoint_m)
    return 10.0 ** (-np.asarray(loss) / 10.0)


def level_to_gain(level_db: float, noise_w: float, dl_power_w: float) -> float:
    """Gain that puts a full-power DL transmitter ``level_db`` above the noise floor."""
    return 10.0 ** (level_db / 10.0) * noise_w / dl_power_w


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def build_scenario(config: SimConfig, rng: np.random.Generator, *,
                   ap_positions: np.ndarray | None = None,
                   user_positions: np.ndarray | None = None) -> Scenario:
    """Place APs and users uniformly in the square and derive all large-scale gains.

    Positions may be supplied explicitly, which skips the corresponding random draw.
    The first ``config.num_ul_users`` users transmit in the uplink.
    """
    M, K, side = config.num_aps, config.num_users, config.area_side_m
    if ap_positions is None:
        ap_positions = rng.uniform(0.0, side, size=(M, 2))
    if user_positions is None:
        user_positions = rng.uniform(0.0, side, size=(K, 2))
    ap_positions = np.asarray(ap_positions, dtype=float)
    user_positions = np.asarray(user_positions, dtype=float)
    if ap_positions.shape != (M, 2) or user_positions.shape != (K, 2):
        raise ConfigError("position arrays do not match num_aps / num_users")

    k_ul = config.num_ul_users
    ul_users = np.arange(k_ul)
    dl_users = np.arange(k_ul, K)
    target = np.asarray(config.target, dtype=float)

    noise = noise_power(config.bandwidth_hz, config.noise_figure_db)
    p_d = config.dl_power_w
    lam = config.wavelength_m

    beta = comm_gain(_pairwise_distances(ap_positions, user_positions),
                     config.carrier_freq_hz, config.path_loss)
    user_dist = _pairwise_distances(user_positions[dl_users], user_positions[ul_users])
    kappa = comm_gain(user_dist, config.carrier_freq_hz, config.path_loss, between_users=True)

    off_diagonal = 1.0 - np.eye(M)
    zeta = level_to_gain(config.inai_level_db, noise, p_d) * off_diagonal
    if config.clutter_level_db == 0.0:
        nu = np.zeros((M, M))
    else:
        nu = level_to_gain(config.clutter_level_db, noise, p_d) * off_diagonal
    sigma = np.full((M, M), config.rcs_variance)

    offsets = target - ap_positions
    d_target = np.maximum(np.linalg.norm(offsets, axis=1), config.min_distance_m)
    sensing = path_loss_sensing(d_target[None, :], d_target[:, None], lam)
    bearing = np.arctan2(offsets[:, 1], offsets[:, 0])

    return Scenario(
        ap_positions=ap_positions,
        user_positions=user_positions,
        target_position=target,
        ul_users=ul_users,
        dl_users=dl_users,
        beta=beta,
        kappa=np.asarray(kappa).reshape(len(dl_users), len(ul_users)),
        zeta=zeta,
        nu=nu,
        sigma_rcs=sigma,
        sensing_gain=np.asarray(sensing),
        target_bearing=bearing,
        noise_power=noise,
        lambda_c=lam,
        ul_power=np.full(k_ul, config.ul_power_w),
        dl_power=p_d,
        num_antennas=config.antennas_per_ap,
    )
