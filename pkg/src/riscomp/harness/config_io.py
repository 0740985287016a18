"""TOML configuration: nested tables, dB-suffixed keys converted at load."""

from __future__ import annotations

import math
from dataclasses import fields, replace
from typing import Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:              # Python < 3.11
    import tomli as tomllib

from ..driver import DriverOptions
from ..model import SystemConfig
from .experiments import EXPERIMENTS, ExperimentSpec, default_spec


class ConfigError(ValueError):
    pass


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


# keys the [system] table accepts in decibel form, mapped to linear fields
_DB_KEYS = {
    "sinr_target_db": ("sinr_target_lin", db_to_linear),
    "noise_ap_dbm": ("noise_ap_w", dbm_to_watt),
    "noise_user_dbm": ("noise_user_w", dbm_to_watt),
    "user_power_dbm": ("user_power_w", dbm_to_watt),
    "ap_max_power_dbm": ("ap_max_power_w", dbm_to_watt),
}

_SYSTEM_FIELDS = {f.name for f in fields(SystemConfig)}


def desk_config() -> SystemConfig:
    """The tuned desk-scale scenario used throughout the test suite."""
    return SystemConfig()


def paper_config() -> SystemConfig:
    """The literature parameter set at full scale (slow; behind a flag)."""
    return SystemConfig(
        n_aps=10, n_users=20, n_antennas=6, n_elements=20,
        bandwidth_hz=10e6, user_power_w=0.5, ap_max_power_w=1.0,
        cycles_per_bit=200.0, kappa_user=1e-25, kappa_ap=1e-25,
        ap_total_freq_hz=1.2e9, slot_s=0.5, latency_cap_s=0.4,
        task_bits=350e3, sinr_target_lin=10.0,
        noise_ap_w=dbm_to_watt(-60.0), noise_user_w=dbm_to_watt(-50.0))


def _system_from_table(table: dict, base: SystemConfig) -> SystemConfig:
    updates = {}
    for key, value in table.items():
        if key in _DB_KEYS:
            field_name, conv = _DB_KEYS[key]
            updates[field_name] = conv(float(value))
        elif key in _SYSTEM_FIELDS:
            current = getattr(base, key)
            if key in ("phase_params", "ris_pos"):
                updates[key] = tuple(value)
            elif isinstance(current, bool):
                updates[key] = bool(value)
            elif isinstance(current, int):
                updates[key] = int(value)
            else:
                updates[key] = float(value)
        else:
            raise ConfigError(f"unknown [system] field: {key}")
    try:
        return replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _spec_from_table(table: dict, config: SystemConfig) -> ExperimentSpec:
    exp = table.get("id")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment id: {exp!r}")
    spec = default_spec(exp, config=config)
    for key, value in table.items():
        if key == "id":
            continue
        elif key == "sweep":
            spec.sweep = str(value)
        elif key == "grid":
            grid = [float(v) for v in value]
            if not grid:
                raise ConfigError("experiment grid must be nonempty")
            for v in grid:
                if spec.sweep == "sinr_target_db" and db_to_linear(v) <= 0:
                    raise ConfigError("sinr grid produced nonpositive target")
                if spec.sweep != "sinr_target_db" and v <= 0:
                    raise ConfigError(f"grid value {v} invalid for {spec.sweep}")
            spec.grid = grid
        elif key == "modes":
            spec.modes = [str(m) for m in value]
        elif key == "trials":
            if int(value) < 1:
                raise ConfigError("trials must be >= 1")
            spec.trials = int(value)
        elif key == "seed":
            spec.seed = int(value)
        else:
            raise ConfigError(f"unknown [experiment] field: {key}")
    return spec


def load_spec(path, experiment: Optional[str] = None,
              paper_scale: bool = False) -> Tuple[SystemConfig, Optional[ExperimentSpec]]:
    """Read a TOML file with [system] and optional [experiment] tables."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc

    for section in data:
        if section not in ("system", "experiment"):
            raise ConfigError(f"unknown config section: [{section}]")
    base = paper_config() if paper_scale else desk_config()
    config = _system_from_table(data.get("system", {}), base)
    if not math.isfinite(config.sinr_target_lin):
        raise ConfigError("sinr_target is not finite")

    spec = None
    if "experiment" in data:
        spec = _spec_from_table(data["experiment"], config)
    elif experiment is not None:
        spec = default_spec(experiment, config=config)
    return config, spec
