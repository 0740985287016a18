"""Monte-Carlo experiment runner with paired seeds and tabular output.

Each trial draws one geometry/channel realization per sweep point and runs
every compared mode on identical channels, so cross-mode differences are
paired. Results land in a long-format table; wall-clock metrics are tagged
volatile and excluded from deterministic file output by default.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .. import model
from ..channelgen import Geometry, generate_channels, place_network
from ..driver import DriverOptions, benchmark_solve, initial_phases, solve, best_ap_mask
from ..initializer import find_feasible
from ..model import SystemConfig
from ..oracle import am_es_solve

EXPERIMENTS = ("feasibility_vs_sinr", "ce_vs_sinr", "convergence_trace",
               "runtime_vs_size", "ce_vs_elements", "partition_vs_distance",
               "aps_per_user")

VOLATILE_METRICS = {"wall_time"}


@dataclass
class ExperimentSpec:
    experiment: str
    config: SystemConfig
    sweep: str
    grid: List[float]
    modes: List[str]
    trials: int = 20
    seed: int = 20240
    options: DriverOptions = field(default_factory=DriverOptions)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.grid:
            raise ValueError("sweep grid must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class Row:
    experiment: str
    mode: str
    sweep: float
    trial: int
    metric: str
    value: float


@dataclass
class ResultTable:
    rows: List[Row] = field(default_factory=list)

    def add(self, experiment, mode, sweep, trial, metric, value):
        self.rows.append(Row(experiment, mode, float(sweep), int(trial),
                             metric, float(value)))

    def raw_rows(self):
        return [r for r in self.rows if r.trial >= 0]

    def with_aggregates(self) -> "ResultTable":
        """Append mean and standard-error rows (trial = -1) per cell."""
        groups = {}
        for r in self.raw_rows():
            groups.setdefault((r.experiment, r.mode, r.sweep, r.metric),
                              []).append(r.value)
        out = ResultTable(rows=list(self.rows))
        for (exp, mode, sweep, metric), vals in sorted(groups.items()):
            arr = np.array([v for v in vals if np.isfinite(v)])
            if arr.size == 0:
                continue
            mean = float(arr.mean())
            se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
            out.rows.append(Row(exp, mode, sweep, -1, metric + "__mean", mean))
            out.rows.append(Row(exp, mode, sweep, -1, metric + "__se", se))
        return out

    def values(self, metric: str, mode: Optional[str] = None,
               sweep: Optional[float] = None) -> np.ndarray:
        picked = [r.value for r in self.raw_rows()
                  if r.metric == metric
                  and (mode is None or r.mode == mode)
                  and (sweep is None or r.sweep == sweep)]
        return np.array(picked)

    def mean(self, metric: str, mode: Optional[str] = None,
             sweep: Optional[float] = None) -> float:
        vals = self.values(metric, mode, sweep)
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else np.nan

    def sweeps(self) -> List[float]:
        return sorted({r.sweep for r in self.raw_rows()})

    def drop_volatile(self) -> "ResultTable":
        keep = [r for r in self.rows
                if not any(r.metric.startswith(v) for v in VOLATILE_METRICS)]
        return ResultTable(rows=keep)


def emit_results(table: ResultTable, path) -> None:
    """Comma-separated text, deterministic ordering and float formatting."""
    rows = sorted(table.rows, key=lambda r: (r.experiment, r.mode, r.sweep,
                                             r.trial, r.metric))
    try:
        with open(path, "w") as fh:
            fh.write("experiment,mode,sweep,trial,metric,value\n")
            for r in rows:
                fh.write(f"{r.experiment},{r.mode},{r.sweep:.10g},{r.trial},"
                         f"{r.metric},{r.value:.12g}\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> ResultTable:
    table = ResultTable()
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("experiment,"):
            raise ValueError(f"{path} is not a results table")
        for line in fh:
            exp, mode, sweep, trial, metric, value = line.rstrip("\n").split(",")
            table.rows.append(Row(exp, mode, float(sweep), int(trial), metric,
                                  float(value)))
    return table


def trial_seeds(root_seed: int, trials: int) -> List[int]:
    seq = np.random.SeedSequence(root_seed)
    return [int(child.generate_state(1)[0]) for child in seq.spawn(trials)]


def _config_with(config: SystemConfig, sweep: str, value: float) -> SystemConfig:
    if sweep.endswith("_db"):
        return replace(config, **{sweep[:-3] + "_lin": 10 ** (value / 10.0)})
    return replace(config, **{sweep: type(getattr(config, sweep))(value)})


def feasibility_probe(config, channels, mode, seed, options) -> bool:
    """Mode-aware feasibility verdict from the initializer alone."""
    run_channels = channels
    assoc_mask = None
    if mode in ("without_ris", "without_ris_ct"):
        run_channels = channels.without_ris()
    if mode in ("without_ct", "without_ris_ct"):
        theta_ul0, _ = initial_phases(config, seed)
        assoc_mask = best_ap_mask(config, run_channels, theta_ul0)
    theta0 = initial_phases(config, seed)
    out = find_feasible(config, run_channels, seed,
                        max_rounds=options.init_rounds, assoc_mask=assoc_mask,
                        preset_phases=theta0, penalty_params=options.penalty)
    return out is not None


def _record_solution(table, spec, mode, sweep_value, trial, result, elapsed):
    table.add(spec.experiment, mode, sweep_value, trial, "feasible",
              1.0 if result.feasible else 0.0)
    table.add(spec.experiment, mode, sweep_value, trial, "wall_time", elapsed)
    if not result.feasible:
        return
    table.add(spec.experiment, mode, sweep_value, trial, "ce", result.ce)
    table.add(spec.experiment, mode, sweep_value, trial, "iterations",
              len(result.trace))
    assoc = model.derive_association(result.state)
    table.add(spec.experiment, mode, sweep_value, trial, "mean_aps_per_user",
              assoc.mean_aps_per_user())
    for k, ak in enumerate(result.state.a):
        table.add(spec.experiment, mode, sweep_value, trial, f"a_user{k}", ak)


def _partition_geometry(config: SystemConfig, distance: float) -> Geometry:
    """Two users on the RIS boresight line, two fixed APs (Fig.-6 style)."""
    ris = np.asarray(config.ris_pos, dtype=float)
    ap_pos = np.array([[60.0, 60.0, config.ap_height_m],
                       [140.0, 60.0, config.ap_height_m]])
    user_pos = np.array([[ris[0], ris[1] + 20.0, config.user_height_m],
                         [ris[0], ris[1] + distance, config.user_height_m]])
    return Geometry(ap_pos=ap_pos, user_pos=user_pos, ris_pos=ris)


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run one experiment sweep; per-trial failures become rows, not aborts."""
    table = ResultTable()
    seeds = trial_seeds(spec.seed, spec.trials)

    if spec.experiment == "partition_vs_distance":
        base = replace(spec.config, n_aps=2, n_users=2)
        for trial, seed in enumerate(seeds):
            for distance in spec.grid:
                geometry = _partition_geometry(base, float(distance))
                channels = generate_channels(base, geometry, seed)
                for mode in spec.modes:
                    power = float(mode.split("=", 1)[1]) if "=" in mode else base.user_power_w
                    config = replace(base, user_power_w=power)
                    t0 = time.perf_counter()
                    result = solve(config, channels, options=spec.options,
                                   seed=seed)
                    elapsed = time.perf_counter() - t0
                    table.add(spec.experiment, mode, distance, trial,
                              "feasible", 1.0 if result.feasible else 0.0)
                    table.add(spec.experiment, mode, distance, trial,
                              "wall_time", elapsed)
                    if result.feasible:
                        table.add(spec.experiment, mode, distance, trial,
                                  "a_swept", float(result.state.a[1]))
                        table.add(spec.experiment, mode, distance, trial,
                                  "a_fixed", float(result.state.a[0]))
                        table.add(spec.experiment, mode, distance, trial,
                                  "ce", result.ce)
        return table.with_aggregates()

    if spec.experiment == "convergence_trace":
        for trial, seed in enumerate(seeds):
            geometry = place_network(spec.config, seed)
            channels = generate_channels(spec.config, geometry, seed)
            for mode in spec.modes:
                result = benchmark_solve(spec.config, channels, mode,
                                         seed=seed, options=spec.options)
                table.add(spec.experiment, mode, 0.0, trial, "feasible",
                          1.0 if result.feasible else 0.0)
                if not result.feasible:
                    continue
                series = list(result.trace.ce_series())
                while len(series) < spec.options.max_outer:
                    series.append(series[-1])
                for i, ce in enumerate(series[:spec.options.max_outer]):
                    table.add(spec.experiment, mode, 0.0, trial,
                              f"ce_iter{i:02d}", ce)
        return table.with_aggregates()

    for trial, seed in enumerate(seeds):
        base_geometry = place_network(spec.config, seed)
        base_channels = None
        for value in spec.grid:
            config = _config_with(spec.config, spec.sweep, float(value))
            if spec.sweep in ("sinr_target_db", "sinr_target_lin",
                              "user_power_w") and base_channels is not None:
                geometry, channels = base_geometry, base_channels
            else:
                geometry = place_network(config, seed)
                channels = generate_channels(config, geometry, seed)
            if spec.sweep in ("sinr_target_db", "sinr_target_lin",
                              "user_power_w") and base_channels is None:
                base_channels = channels

            for mode in spec.modes:
                t0 = time.perf_counter()
                if spec.experiment == "feasibility_vs_sinr":
                    feasible = feasibility_probe(config, channels, mode, seed,
                                                 spec.options)
                    table.add(spec.experiment, mode, value, trial, "feasible",
                              1.0 if feasible else 0.0)
                    table.add(spec.experiment, mode, value, trial, "wall_time",
                              time.perf_counter() - t0)
                elif mode == "am_es":
                    result = am_es_solve(config, channels, seed=seed,
                                         options=spec.options)
                    elapsed = time.perf_counter() - t0
                    table.add(spec.experiment, mode, value, trial, "feasible",
                              1.0 if result.feasible else 0.0)
                    table.add(spec.experiment, mode, value, trial, "wall_time",
                              elapsed)
                    if result.feasible:
                        table.add(spec.experiment, mode, value, trial, "ce",
                                  result.ce)
                        table.add(spec.experiment, mode, value, trial,
                                  "associations_evaluated", result.evaluated)
                else:
                    result = benchmark_solve(config, channels, mode, seed=seed,
                                             options=spec.options)
                    _record_solution(table, spec, mode, value, trial, result,
                                     time.perf_counter() - t0)
    return table.with_aggregates()


def default_spec(experiment: str, config: Optional[SystemConfig] = None,
                 trials: Optional[int] = None, seed: Optional[int] = None,
                 paper_scale: bool = False) -> ExperimentSpec:
    """Desk-scale defaults for each experiment id."""
    from .config_io import desk_config, paper_config
    cfg = config if config is not None else (
        paper_config() if paper_scale else desk_config())
    all_modes = ["full", "am_fp", "without_ris", "without_ct",
                 "without_ris_ct"]
    presets = {
        "feasibility_vs_sinr": dict(sweep="sinr_target_db",
                                    grid=[0, 5, 10, 15, 20], modes=all_modes,
                                    trials=30),
        "ce_vs_sinr": dict(sweep="sinr_target_db", grid=[0, 5, 10, 15],
                           modes=all_modes, trials=20),
        "convergence_trace": dict(sweep="sinr_target_db", grid=[5.0],
                                  modes=["full", "am_fp"], trials=5),
        "runtime_vs_size": dict(sweep="n_aps", grid=[2, 3],
                                modes=["full", "am_es"], trials=3),
        "ce_vs_elements": dict(sweep="n_elements", grid=[4, 8, 12],
                               modes=["full", "am_fp"], trials=10),
        "partition_vs_distance": dict(sweep="user_distance_m",
                                      grid=[20, 30, 40, 50, 60],
                                      modes=["pc=0.1", "pc=0.3", "pc=0.5",
                                             "pc=1.0"], trials=20),
        "aps_per_user": dict(sweep="n_users", grid=[4, 6, 8],
                             modes=["full"], trials=5),
    }
    if experiment not in presets:
        raise ValueError(f"unknown experiment {experiment!r}")
    kw = dict(presets[experiment])
    if experiment == "aps_per_user":
        cfg = replace(cfg, n_aps=10 if paper_scale else 5,
                      n_elements=20 if paper_scale else 10)
    if trials is not None:
        kw["trials"] = trials
    spec = ExperimentSpec(experiment=experiment, config=cfg, **kw)
    if seed is not None:
        spec.seed = seed
    return spec
