"""Monte Carlo experiment definitions and the trial engine.

Each experiment kind pairs a per-trial function, which turns one random
realization into raw samples, with an aggregation step that reduces the
samples of all trials into records. Trial ``t`` at sweep point ``p`` draws
from ``numpy.random.default_rng([seed, p, t])``, so results do not depend on
how trials are spread over worker processes.
"""

from __future__ import annotations

import functools
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .. import __version__
from ..channel import draw_channels, draw_from, draw_symbols, link_view
from ..config import SimConfig, config_digest
from ..detection import (
    distributed_estimates, estimate_rcs_central, fuse_llrs, global_measurement, link_noise_covs,
    llr, measurement_matrices, mle_llr, receive_sensing, stack_observations,
    calibrate_threshold, detection_rate, dist_mse_gap,
)
from ..errors import ConfigError
from ..joint import build_joint_system, detect_symbols, joint_map_estimate
from ..performance import (
    PrecodingSettings, calibrate_eps_scale, evaluate_dtdd, evaluate_tdd, make_bank,
)
from ..precoding import assemble_dl_signal
from ..scenario import Scenario, build_scenario, comm_gain
from ..scheduling import (
    ScheduleResult, compute_r_o, exhaustive_search, random_schedule, schedule_aps, split_from_mask,
)
from .results import ExperimentResult, Record

log = logging.getLogger(__name__)

KINDS = ("roc", "pod_vs_rcs", "pod_vs_T", "nmse_vs_rcs", "se_cdf", "ser_vs_power",
         "se_tradeoff", "scheduling_compare")

GEOMETRY_STREAM = 2**32 - 1
CALIBRATION_STREAM = 2**32 - 2
THREADS_ENV = "CFISAC_THREADS"

# Sweeping any of these redraws the fixed AP split; other sweeps keep the base split.
SCHEDULE_FIELDS = frozenset({
    "num_aps", "num_users", "ul_user_fraction", "area_side_m", "target_position_m",
    "snr_floor_db", "carrier_freq_hz", "path_loss", "min_distance_m",
})

_DEFAULT_GEOMETRY = {
    "roc": "fixed", "pod_vs_rcs": "fixed", "pod_vs_T": "fixed", "nmse_vs_rcs": "fixed",
    "ser_vs_power": "fixed", "se_cdf": "per_trial", "se_tradeoff": "per_trial",
    "scheduling_compare": "per_trial",
}
_DEFAULT_PFA = {
    "roc": [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
    "pod_vs_rcs": [0.1, 0.01],
    "pod_vs_T": [0.1],
}

Scalar = Union[float, int, str, bool]


def _as_list(value):
    return value if isinstance(value, list) else [value]


class ExperimentSpec(BaseModel):
    """What to sweep, how many trials to run and which variants to compare.

    ``sweep`` maps system parameters to the values they take; the grid is the
    Cartesian product in key order. ``duplex``, ``detector`` and ``precoder``
    accept one value or a list of variants evaluated on the same draws.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["roc", "pod_vs_rcs", "pod_vs_T", "nmse_vs_rcs", "se_cdf", "ser_vs_power",
                  "se_tradeoff", "scheduling_compare"]
    sweep: dict[str, list[Scalar]] = Field(default_factory=dict)
    trials: int = Field(200, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    duplex: list[Literal["dtdd", "tdd"]] = ["dtdd"]
    detector: list[Literal["centralized", "distributed", "mle"]] = ["centralized", "distributed"]
    precoder: list[Literal["target_centric", "user_centric"]] = ["user_centric"]
    pfa: Optional[list[float]] = None
    geometry: Optional[Literal["fixed", "per_trial"]] = None
    emit_samples: bool = True

    @field_validator("duplex", "detector", "precoder", mode="before")
    @classmethod
    def _listify(cls, value):
        return _as_list(value)

    @field_validator("sweep")
    @classmethod
    def _non_empty_axes(cls, value):
        for key, values in value.items():
            if not values:
                raise ValueError(f"sweep axis {key!r} has no values")
        return value

    @field_validator("pfa")
    @classmethod
    def _pfa_range(cls, value):
        if value is not None and (not value or any(not 0.0 < p <= 1.0 for p in value)):
            raise ValueError("pfa values must lie in (0, 1]")
        return value

    @property
    def geometry_policy(self) -> str:
        return self.geometry or _DEFAULT_GEOMETRY[self.kind]

    @property
    def pfa_grid(self) -> list[float]:
        return self.pfa if self.pfa is not None else _DEFAULT_PFA.get(self.kind, [0.1])

    def points(self) -> list[dict[str, Scalar]]:
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]


# --------------------------------------------------------------------------- context


@dataclass(frozen=True)
class PointContext:
    """Everything a trial at one sweep point needs; picklable for worker processes."""

    config: SimConfig
    spec: ExperimentSpec
    point_index: int
    scenario: Optional[Scenario]
    schedule: Optional[ScheduleResult]
    eps_scale: float


def gain_function(config: SimConfig):
    return functools.partial(comm_gain, carrier_freq_hz=config.carrier_freq_hz, model=config.path_loss)


def traffic_schedule(scenario: Scenario, config: SimConfig) -> ScheduleResult:
    return schedule_aps(scenario, compute_r_o(scenario, config.snr_floor_db, gain_function(config)))


def _settings(ctx: PointContext, precoder: str | None = None) -> PrecodingSettings:
    return PrecodingSettings(precoder or ctx.spec.precoder[0], ctx.config.sensing_power_fraction,
                             ctx.eps_scale)


def _geometry_rng(spec: ExperimentSpec) -> np.random.Generator:
    return np.random.default_rng([spec.seed, GEOMETRY_STREAM])


def _prepare_point(config: SimConfig, spec: ExperimentSpec, point_index: int,
                   schedule_config: SimConfig | None = None) -> PointContext:
    """Fixed geometry, its AP split and the RZF regularizer scale of one sweep point.

    The AP split is computed under ``schedule_config`` (default ``config``), so
    sweeping a power leaves the fixed split alone.
    """
    scenario = schedule = None
    if spec.geometry_policy == "fixed":
        scenario = build_scenario(config, _geometry_rng(spec))
        schedule_config = schedule_config or config
        schedule = traffic_schedule(build_scenario(schedule_config, _geometry_rng(spec)), schedule_config)
    eps_scale = config.rzf_eps_scale
    if eps_scale is None:
        rng = np.random.default_rng([spec.seed, point_index, CALIBRATION_STREAM])
        calib_scenario = scenario if scenario is not None else build_scenario(config, rng)
        calib_schedule = schedule if schedule is not None else traffic_schedule(calib_scenario, config)
        channels = draw_channels(calib_scenario, rng)
        link = link_view(calib_scenario, channels, calib_schedule.ul_aps, calib_schedule.dl_aps)
        base = PrecodingSettings(spec.precoder[0], config.sensing_power_fraction)
        eps_scale = calibrate_eps_scale([link], base) if link.H_dl.shape[2] else 1.0
    return PointContext(config, spec, point_index, scenario, schedule, float(eps_scale))


def _trial_geometry(ctx: PointContext, rng: np.random.Generator):
    if ctx.scenario is not None:
        return ctx.scenario, ctx.schedule
    scenario = build_scenario(ctx.config, rng)
    return scenario, traffic_schedule(scenario, ctx.config)


# --------------------------------------------------------------------------- trials


def _sensing_inputs(ctx, scenario, channels, schedule, duplex, rng):
    cfg = ctx.config
    link = link_view(scenario, channels, schedule.ul_aps, schedule.dl_aps,
                     with_ul_users=(duplex == "dtdd"))
    bank = make_bank(link, _settings(ctx))
    M_u, M_d, N, K_u, K_d = link.shape
    symbols = draw_symbols(K_u, K_d, cfg.obs_window, cfg.constellation, rng)
    x_d = assemble_dl_signal(bank, symbols, link.dl_power, N)
    return link, symbols, x_d


def _detection_trial(ctx: PointContext, rng: np.random.Generator) -> dict:
    cfg = ctx.config
    scenario, schedule = _trial_geometry(ctx, rng)
    channels = draw_channels(scenario, rng, deterministic_rcs=cfg.deterministic_rcs)
    out = {}
    for duplex in ctx.spec.duplex:
        link, symbols, x_d = _sensing_inputs(ctx, scenario, channels, schedule, duplex, rng)
        r1 = receive_sensing(link, x_d, symbols.s_u, rng, target_present=True)
        s_u0 = draw_from(cfg.constellation, symbols.s_u.shape, rng)
        r0 = receive_sensing(link, x_d, s_u0, rng, target_present=False)
        r = np.stack([r0, r1], axis=-1)
        Sigma_local, Sigma = link_noise_covs(link, x_d, statistical_csi=cfg.statistical_csi)
        local = measurement_matrices(link.Rdot, x_d)
        for det in ctx.spec.detector:
            if det == "centralized":
                est = estimate_rcs_central(global_measurement(local), Sigma, stack_observations(r),
                                           link.sigma)
                stats = llr(est)
            elif det == "distributed":
                stats = fuse_llrs([llr(e) for e in distributed_estimates(local, Sigma_local, r, link.sigma)])
            else:
                stats = mle_llr(global_measurement(local), Sigma, stack_observations(r))
            out[f"{duplex}|{det}"] = np.asarray(stats, dtype=float)
    return out


def _nmse_trial(ctx: PointContext, rng: np.random.Generator) -> dict:
    cfg = ctx.config
    scenario, schedule = _trial_geometry(ctx, rng)
    channels = draw_channels(scenario, rng, deterministic_rcs=cfg.deterministic_rcs)
    out = {}
    for duplex in ctx.spec.duplex:
        link, symbols, x_d = _sensing_inputs(ctx, scenario, channels, schedule, duplex, rng)
        r = receive_sensing(link, x_d, symbols.s_u, rng, target_present=True)
        Sigma_local, Sigma = link_noise_covs(link, x_d, statistical_csi=cfg.statistical_csi)
        local = measurement_matrices(link.Rdot, x_d)
        truth = link.gamma.ravel()
        central = estimate_rcs_central(global_measurement(local), Sigma, stack_observations(r), link.sigma)
        dist = distributed_estimates(local, Sigma_local, r, link.sigma)
        dist_hat = np.concatenate([e.gamma_hat for e in dist])
        out[f"{duplex}|centralized"] = float(np.sum(np.abs(central.gamma_hat - truth) ** 2))
        out[f"{duplex}|distributed"] = float(np.sum(np.abs(dist_hat - truth) ** 2))
        out[f"{duplex}|bcrlb"] = float(np.trace(central.upsilon).real)
        gap = dist_mse_gap(local, Sigma, link.sigma)
        out[f"{duplex}|distributed_mse"] = float(np.trace(gap.mse_dist).real)
        out[f"{duplex}|prior"] = float(np.sum(link.sigma))
    return out


def _ser_trial(ctx: PointContext, rng: np.random.Generator) -> dict:
    cfg = ctx.config
    scenario, schedule = _trial_geometry(ctx, rng)
    channels = draw_channels(scenario, rng, deterministic_rcs=cfg.deterministic_rcs)
    link, symbols, x_d = _sensing_inputs(ctx, scenario, channels, schedule, "dtdd", rng)
    out = {}
    if "dtdd" in ctx.spec.duplex:
        r = receive_sensing(link, x_d, symbols.s_u, rng, target_present=True)
        system = build_joint_system(link, x_d, "central")
        est = joint_map_estimate(system, stack_observations(r))
        out["dtdd"] = detect_symbols(est, cfg.constellation, symbols.s_u)[1]
    if "tdd" in ctx.spec.duplex:
        clean = link_view(scenario.without_cross_link(), channels, schedule.ul_aps, schedule.dl_aps)
        r = receive_sensing(clean, x_d, symbols.s_u, rng, target_present=False)
        system = build_joint_system(clean, x_d, "central")
        est = joint_map_estimate(system, stack_observations(r))
        out["tdd"] = detect_symbols(est, cfg.constellation, symbols.s_u)[1]
    return out


def _se_trial(ctx: PointContext, rng: np.random.Generator) -> dict:
    cfg = ctx.config
    scenario, schedule = _trial_geometry(ctx, rng)
    channels = draw_channels(scenario, rng, deterministic_rcs=cfg.deterministic_rcs)
    out = {}
    for precoder in ctx.spec.precoder:
        settings = _settings(ctx, precoder)
        for duplex in ctx.spec.duplex:
            if duplex == "dtdd":
                sample = evaluate_dtdd(scenario, channels, schedule.ul_aps, schedule.dl_aps, settings)
            else:
                sample = evaluate_tdd(scenario, channels, schedule.ul_aps, schedule.dl_aps, settings,
                                      cfg.tdd_ul_fraction)
            key = f"{duplex}|{precoder}"
            out[f"{key}|sum_se"] = sample.sum_se
            out[f"{key}|ul_se"] = sample.ul_se
            out[f"{key}|dl_se"] = sample.dl_se
            out[f"{key}|sensing_se"] = sample.sensing_se
    return out


def _scheduling_trial(ctx: PointContext, rng: np.random.Generator) -> dict:
    scenario, schedule = _trial_geometry(ctx, rng)
    channels = draw_channels(scenario, rng, deterministic_rcs=ctx.config.deterministic_rcs)
    settings = _settings(ctx)
    comm, sensing = exhaustive_search(scenario, channels, settings)
    M = scenario.num_aps
    traffic = evaluate_dtdd(scenario, channels, schedule.ul_aps, schedule.dl_aps, settings)
    rnd_ul, rnd_dl = random_schedule(M, rng)
    rnd = evaluate_dtdd(scenario, channels, rnd_ul, rnd_dl, settings)
    best_comm = int(np.argmax(comm))
    best_sensing = int(np.argmax(sensing))
    return {
        "traffic|sum_se": traffic.sum_se, "traffic|sensing_se": traffic.sensing_se,
        "random|sum_se": rnd.sum_se, "random|sensing_se": rnd.sensing_se,
        "comm_exhaustive|sum_se": float(comm[best_comm]),
        "comm_exhaustive|sensing_se": float(sensing[best_comm]),
        "target_exhaustive|sum_se": float(comm[best_sensing]),
        "target_exhaustive|sensing_se": float(sensing[best_sensing]),
        "traffic|num_ul_aps": float(len(schedule.ul_aps)),
        "target_exhaustive|num_ul_aps": float(len(split_from_mask(best_sensing, M)[0])),
    }


_TRIALS = {
    "roc": _detection_trial, "pod_vs_rcs": _detection_trial, "pod_vs_T": _detection_trial,
    "nmse_vs_rcs": _nmse_trial, "ser_vs_power": _ser_trial, "se_cdf": _se_trial,
    "se_tradeoff": _se_trial, "scheduling_compare": _scheduling_trial,
}


class TrialError(RuntimeError):
    """A module error raised inside a Monte Carlo trial."""


def _run_trial(ctx: PointContext, trial: int) -> dict:
    rng = np.random.default_rng([ctx.spec.seed, ctx.point_index, trial])
    try:
        return _TRIALS[ctx.spec.kind](ctx, rng)
    except Exception as exc:
        raise TrialError(f"trial {trial} at sweep point {ctx.point_index} "
                         f"({ctx.spec.kind}): {type(exc).__name__}: {exc}") from exc


# --------------------------------------------------------------------------- aggregation


def _mean_se(values) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=float)
    se = float(np.std(arr, ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else None
    return float(np.mean(arr)), se


def _split_key(key: str) -> list[str]:
    return key.split("|")


def _aggregate_detection(point, samples, spec, records):
    for key in samples[0]:
        duplex, det = _split_key(key)
        stats = np.array([s[key] for s in samples])
        h0, h1 = stats[:, 0], stats[:, 1]
        for pfa in spec.pfa_grid:
            threshold = calibrate_threshold(h0, pfa)
            pod, se = detection_rate(h1, threshold)
            labels = dict(point, duplex=duplex, detector=det, pfa=pfa)
            records.append(Record(labels, "pod", pod, se, len(samples)))
            records.append(Record(labels, "threshold", threshold.value, None, len(samples)))
            if threshold.undersampled:
                records.append(Record(labels, "undersampled", 1.0, None, len(samples)))


def _aggregate_nmse(point, samples, spec, records):
    duplexes = sorted({_split_key(k)[0] for k in samples[0]})
    for duplex in duplexes:
        prior = np.mean([s[f"{duplex}|prior"] for s in samples])
        for name in ("centralized", "distributed", "bcrlb", "distributed_mse"):
            mean, se = _mean_se([s[f"{duplex}|{name}"] / prior for s in samples])
            metric = "nmse" if name in ("centralized", "distributed") else name
            records.append(Record(dict(point, duplex=duplex, detector=name), metric, mean, se,
                                  len(samples)))


def _aggregate_ser(point, samples, spec, records):
    for duplex in samples[0]:
        mean, se = _mean_se([s[duplex] for s in samples])
        records.append(Record(dict(point, duplex=duplex), "ser", mean, se, len(samples)))


def _percentile_records(point, labels, values, metric, records, n):
    for q in (10, 50, 90):
        records.append(Record(dict(point, **labels), f"{metric}_p{q}",
                              float(np.percentile(values, q)), None, n))


def _aggregate_se(point, samples, spec, records):
    n = len(samples)
    series = sorted({tuple(_split_key(k)[:2]) for k in samples[0]})
    for duplex, precoder in series:
        labels = {"duplex": duplex, "precoder": precoder}
        for metric in ("sum_se", "ul_se", "dl_se", "sensing_se"):
            values = np.array([s[f"{duplex}|{precoder}|{metric}"] for s in samples])
            mean, se = _mean_se(values)
            records.append(Record(dict(point, **labels), f"{metric}_mean", mean, se, n))
            if metric == "sum_se":
                _percentile_records(point, labels, values, metric, records, n)
                if spec.emit_samples:
                    for i, v in enumerate(values):
                        records.append(Record(dict(point, draw=i, **labels), "sum_se", float(v), None, 1))
    for precoder in spec.precoder:
        if {"dtdd", "tdd"} <= set(spec.duplex):
            dtdd = np.array([s[f"dtdd|{precoder}|sum_se"] for s in samples])
            tdd = np.array([s[f"tdd|{precoder}|sum_se"] for s in samples])
            ratio = float(np.percentile(dtdd, 10) / np.percentile(tdd, 10))
            records.append(Record(dict(point, precoder=precoder), "sum_se_p10_ratio", ratio, None, n))


def _aggregate_scheduling(point, samples, spec, records):
    n = len(samples)
    for scheme in ("traffic", "random", "comm_exhaustive", "target_exhaustive"):
        for metric in ("sum_se", "sensing_se"):
            values = np.array([s[f"{scheme}|{metric}"] for s in samples])
            mean, se = _mean_se(values)
            records.append(Record(dict(point, scheme=scheme), f"{metric}_mean", mean, se, n))
            if metric == "sum_se":
                _percentile_records(point, {"scheme": scheme}, values, metric, records, n)
                if spec.emit_samples:
                    for i, v in enumerate(values):
                        records.append(Record(dict(point, scheme=scheme, draw=i), "sum_se", float(v), None, 1))
    ordered = [s["comm_exhaustive|sum_se"] >= s["traffic|sum_se"] >= s["target_exhaustive|sum_se"]
               for s in samples]
    mean, se = _mean_se(np.asarray(ordered, dtype=float))
    records.append(Record(dict(point), "ordering_fraction", mean, se, n))


_AGGREGATE = {
    "roc": _aggregate_detection, "pod_vs_rcs": _aggregate_detection, "pod_vs_T": _aggregate_detection,
    "nmse_vs_rcs": _aggregate_nmse, "ser_vs_power": _aggregate_ser, "se_cdf": _aggregate_se,
    "se_tradeoff": _aggregate_se, "scheduling_compare": _aggregate_scheduling,
}


# --------------------------------------------------------------------------- driver


def resolve_threads(requested: int | None) -> int:
    """Worker count: environment override first, then the request, then 1."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    else:
        value = requested or 1
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


def _validate_sweep(config: SimConfig, spec: ExperimentSpec) -> None:
    unknown = [k for k in spec.sweep if k not in SimConfig.model_fields]
    if unknown:
        raise ConfigError(f"unknown sweep parameters: {', '.join(unknown)}")
    if spec.kind == "scheduling_compare" and config.num_aps > 12:
        raise ConfigError("scheduling_compare runs an exhaustive search; use at most 12 APs")


def run_experiment(spec: ExperimentSpec, config: SimConfig, *, threads: int | None = 1) -> ExperimentResult:
    """Run every sweep point of ``spec`` and reduce the trials into records."""
    _validate_sweep(config, spec)
    workers = resolve_threads(threads)
    records: list[Record] = []
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for index, point in enumerate(spec.points()):
            point_config = config.with_updates(**point) if point else config
            moves_split = any(key in SCHEDULE_FIELDS for key in point)
            ctx = _prepare_point(point_config, spec, index, point_config if moves_split else config)
            trials = range(spec.trials)
            if executor is None:
                samples = [_run_trial(ctx, t) for t in trials]
            else:
                chunk = max(1, spec.trials // (4 * workers))
                samples = list(executor.map(functools.partial(_run_trial, ctx), trials, chunksize=chunk))
            labels = dict(point, eps_scale=ctx.eps_scale) if "eps_scale" not in point else dict(point)
            _AGGREGATE[spec.kind](labels, samples, spec, records)
    finally:
        if executor is not None:
            executor.shutdown()
    return ExperimentResult(
        records=records,
        config=config.model_dump(mode="json"),
        spec=spec.model_dump(mode="json"),
        config_hash=config_digest({"system": config.model_dump(mode="json"),
                                   "experiment": spec.model_dump(mode="json")}),
        seed=spec.seed,
        version=__version__,
    )


def spec_from_mapping(data: dict[str, Any] | None, **overrides: Any) -> ExperimentSpec:
    """Build a spec from a config-file table plus command-line overrides."""
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentSpec.model_validate(merged)
    except Exception as exc:
        raise ConfigError(f"invalid experiment spec: {exc}") from exc
