"""UL/DL mode selection for the APs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .channel import ChannelSet
from .errors import ConfigError
from .performance import PrecodingSettings, evaluate_dtdd
from .scenario import Scenario

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE_APS = 12


@dataclass(frozen=True)
class ScheduleResult:
    """AP split plus the loads that produced it.

    ``target_ul`` and ``target_dl`` count UL and DL APs in the target
    neighbourhood after correction.
    """

    ul_aps: np.ndarray
    dl_aps: np.ndarray
    r_o: float
    ul_load: np.ndarray
    dl_load: np.ndarray
    target_ul: int
    target_dl: int

    @property
    def is_ul(self) -> np.ndarray:
        mask = np.zeros(len(self.ul_aps) + len(self.dl_aps), dtype=bool)
        mask[self.ul_aps] = True
        return mask


def snr_distance(gain_fn: Callable[[float], float], tx_power: float, noise: float,
                 snr_floor_db: float, *, start_m: float = 1.0) -> float:
    """Largest distance at which a user still reaches ``snr_floor_db`` at an AP.

    Returns 0 when even the shortest distance misses the floor.
    """
    def margin(d):
        return 10.0 * np.log10(tx_power * gain_fn(d) / noise) - snr_floor_db

    if margin(start_m) < 0:
        return 0.0
    hi = 2.0 * start_m
    while margin(hi) >= 0:
        hi *= 2.0
        if hi > 1e9:
            raise ConfigError("SNR floor is never crossed; check the path-loss model")
    lo = hi / 2.0
    return float(brentq(margin, lo, hi, xtol=1e-9, rtol=1e-12))


def compute_r_o(scenario: Scenario, snr_floor_db: float,
                gain_fn: Callable[[float], float]) -> float:
    """Traffic radius: no smaller than any user's nearest-AP distance or the SNR distance."""
    if scenario.num_users < 1:
        raise ConfigError("at least one user is needed to size the traffic radius")
    nearest = scenario.ap_user_distances().min(axis=0)
    power = float(scenario.ul_power.max()) if scenario.ul_power.size else 0.0
    d_snr = snr_distance(gain_fn, power, scenario.noise_power, snr_floor_db) if power > 0 else 0.0
    return float(max(nearest.max(), d_snr))


def _target_neighbourhood(distances: np.ndarray, r_o: float) -> np.ndarray:
    """APs within ``r_o`` of the target, widened to the two nearest when fewer qualify."""
    inside = distances <= r_o
    if inside.sum() < 2:
        inside = np.zeros_like(inside)
        inside[np.argsort(distances, kind="stable")[:2]] = True
    return inside


def schedule_aps(scenario: Scenario, r_o: float) -> ScheduleResult:
    """Traffic-driven AP split followed by a correction that keeps the target covered.

    An AP goes UL when strictly more UL than DL users lie within ``r_o``,
    otherwise DL. If the target neighbourhood then lacks a UL (DL) AP, the
    nearest DL (UL) AP to the target switches mode; a switch that would leave
    a mode empty moves to the next-nearest candidate instead.
    """
    M = scenario.num_aps
    within = scenario.ap_user_distances() <= r_o
    ul_load = within[:, scenario.ul_users].sum(axis=1)
    dl_load = within[:, scenario.dl_users].sum(axis=1)
    is_ul = ul_load > dl_load

    d_target = scenario.ap_target_distances()
    near = _target_neighbourhood(d_target, r_o)
    order = np.argsort(d_target, kind="stable")
    if M < 2:
        log.warning("a single AP cannot both transmit and receive for sensing")
    else:
        flipped = -1
        if not np.any(is_ul & near):
            flipped = _flip_nearest(is_ul, order, to_ul=True, exclude=flipped)
        if not np.any(~is_ul & near):
            _flip_nearest(is_ul, order, to_ul=False, exclude=flipped)
    return ScheduleResult(
        ul_aps=np.flatnonzero(is_ul),
        dl_aps=np.flatnonzero(~is_ul),
        r_o=float(r_o),
        ul_load=ul_load,
        dl_load=dl_load,
        target_ul=int(np.sum(is_ul & near)),
        target_dl=int(np.sum(~is_ul & near)),
    )


def _flip_nearest(is_ul: np.ndarray, order: np.ndarray, *, to_ul: bool, exclude: int) -> int:
    for ap in order:
        if ap == exclude or is_ul[ap] == to_ul:
            continue
        remaining_source = np.count_nonzero(is_ul != to_ul) - 1
        if remaining_source < 1:
            continue
        is_ul[ap] = to_ul
        return int(ap)
    return -1


def split_from_mask(mask: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Bit ``m`` of ``mask`` set means AP ``m`` is UL."""
    bits = (mask >> np.arange(M)) & 1
    return np.flatnonzero(bits), np.flatnonzero(bits == 0)


def _check_exhaustive_size(M: int) -> None:
    if M > MAX_EXHAUSTIVE_APS:
        raise ConfigError(
            f"exhaustive search over {M} APs needs 2^{M} evaluations; "
            f"use at most {MAX_EXHAUSTIVE_APS} APs or traffic-driven scheduling")


def exhaustive_search(scenario: Scenario, channels: ChannelSet,
                      settings: PrecodingSettings) -> tuple[np.ndarray, np.ndarray]:
    """Communication sum SE and sensing SE of every split, indexed by mask.

    Splits with an empty mode have zero sensing SE.
    """
    M = scenario.num_aps
    _check_exhaustive_size(M)
    comm = np.zeros(2**M)
    sensing = np.zeros(2**M)
    for mask in range(2**M):
        ul, dl = split_from_mask(mask, M)
        sample = evaluate_dtdd(scenario, channels, ul, dl, settings)
        comm[mask] = sample.sum_se
        sensing[mask] = sample.sensing_se if ul.size and dl.size else 0.0
    return comm, sensing


def exhaustive_schedule(scenario: Scenario, channels: ChannelSet, objective: str,
                        settings: PrecodingSettings) -> tuple[ScheduleResult, float]:
    """Best of all ``2^M`` splits for sum communication SE or sensing SE.

    Ties go to the split with the smallest mask. Returns the split and its objective.
    """
    M = scenario.num_aps
    _check_exhaustive_size(M)
    if objective not in ("comm_se", "sensing_se"):
        raise ConfigError(f"unknown scheduling objective {objective!r}")
    comm, sensing = exhaustive_search(scenario, channels, settings)
    values = comm if objective == "comm_se" else sensing
    best_mask = int(np.argmax(values))
    ul, dl = split_from_mask(best_mask, M)
    zeros = np.zeros(M, dtype=int)
    near = _target_neighbourhood(scenario.ap_target_distances(), np.inf)
    is_ul = np.zeros(M, dtype=bool)
    is_ul[ul] = True
    result = ScheduleResult(ul, dl, float("nan"), zeros, zeros,
                            int(np.sum(is_ul & near)), int(np.sum(~is_ul & near)))
    return result, float(values[best_mask])


def random_schedule(M: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly random split with at least one AP in each mode."""
    if M < 2:
        raise ConfigError("a random split needs at least two APs")
    while True:
        is_ul = rng.random(M) < 0.5
        if 0 < is_ul.sum() < M:
            return np.flatnonzero(is_ul), np.flatnonzero(~is_ul)
