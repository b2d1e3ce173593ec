"""Simulation configuration: schema, unit conversion and file loading.

Every physical quantity carries its unit in the key name. Powers are given in
dBm, gains and levels in dB, RCS variance in dBsm. The ``SimConfig`` model
exposes the linear-scale values as properties so the numerical modules never
deal with logarithmic units.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_TEMPERATURE_K = 290.0

Constellation = Literal["gaussian", "qpsk", "qam16"]


class PathLossModel(BaseModel):
    """Three-slope COST-231 Hata model used for AP-user and user-user gains.

    Beyond ``far_breakpoint_m`` the loss grows at 35 dB/decade, between the two
    breakpoints at 15 dB/decade for the AP distance and 20 dB/decade for the
    near breakpoint, and it is flat below ``near_breakpoint_m``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    ap_height_m: float = Field(15.0, gt=0)
    user_height_m: float = Field(1.65, gt=0)
    near_breakpoint_m: float = Field(10.0, gt=0)
    far_breakpoint_m: float = Field(50.0, gt=0)

    @model_validator(mode="after")
    def _ordered_breakpoints(self):
        if self.near_breakpoint_m >= self.far_breakpoint_m:
            raise ValueError("near_breakpoint_m must be below far_breakpoint_m")
        return self


class SimConfig(BaseModel):
    """System-level parameters of one simulated deployment."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    area_side_m: float = Field(500.0, gt=0)
    num_aps: int = Field(8, ge=1)
    antennas_per_ap: int = Field(8, ge=1)
    num_users: int = Field(10, ge=1)
    ul_user_fraction: float = Field(0.5, ge=0.0, le=1.0)
    ul_power_dbm: float = 23.0103
    dl_power_dbm: float = 30.0
    bandwidth_hz: float = Field(20e6, gt=0)
    carrier_freq_hz: float = Field(1.9e9, gt=0)
    noise_figure_db: float = 9.0
    rcs_variance_dbsm: float = 10.0
    inai_level_db: float = 20.0
    clutter_level_db: float = 0.0
    obs_window: int = Field(100, ge=1)
    mc_trials: int = Field(1000, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2**64)

    target_position_m: Optional[tuple[float, float]] = None
    min_distance_m: float = Field(1.0, gt=0)
    path_loss: PathLossModel = PathLossModel()

    sensing_power_fraction: float = Field(0.2, ge=0.0, le=1.0)
    rzf_eps_scale: Optional[float] = Field(None, gt=0)
    snr_floor_db: float = 10.0
    tdd_ul_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    statistical_csi: bool = False
    deterministic_rcs: bool = False
    constellation: Constellation = "qpsk"

    @model_validator(mode="after")
    def _target_inside_area(self):
        if self.target_position_m is not None:
            x, y = self.target_position_m
            if not (0.0 <= x <= self.area_side_m and 0.0 <= y <= self.area_side_m):
                raise ValueError("target_position_m lies outside the deployment area")
        return self

    @property
    def num_ul_users(self) -> int:
        return int(math.floor(self.ul_user_fraction * self.num_users + 0.5))

    @property
    def num_dl_users(self) -> int:
        return self.num_users - self.num_ul_users

    @property
    def ul_power_w(self) -> float:
        return dbm_to_watts(self.ul_power_dbm)

    @property
    def dl_power_w(self) -> float:
        return dbm_to_watts(self.dl_power_dbm)

    @property
    def rcs_variance(self) -> float:
        return 10.0 ** (self.rcs_variance_dbsm / 10.0)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def target(self) -> tuple[float, float]:
        if self.target_position_m is None:
            half = self.area_side_m / 2.0
            return (half, half)
        return tuple(self.target_position_m)

    def with_updates(self, **changes: Any) -> "SimConfig":
        """Return a validated copy with some fields replaced."""
        data = self.model_dump()
        data.update(changes)
        return parse_config(data)

    def config_hash(self) -> str:
        return config_digest(self.model_dump(mode="json"))


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def config_digest(payload: Any) -> str:
    """SHA-256 of the canonical JSON encoding of ``payload``."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_config(data: dict) -> SimConfig:
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from exc


def read_config_file(path: str | Path) -> dict:
    """Load a TOML or JSON file into a plain dictionary.

    Files ending in ``.json`` are parsed as JSON, everything else as TOML.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode("utf-8"))
        else:
            data = tomli.loads(raw.decode("utf-8"))
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a table at top level")
    return data


def load_config(path: str | Path) -> SimConfig:
    """Read a file holding either a bare system table or a ``[system]`` section."""
    data = read_config_file(path)
    return parse_config(data.get("system", data))
