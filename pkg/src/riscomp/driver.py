"""Outer alternating-maximization loop with the growing log-barrier weight.

One sweep runs the block updates in their listed order (uplink beamformers,
power partition, uplink phases, downlink beamformers, frequencies,
rates/times, downlink phases), each behind an accept-if-not-worse guard on
the barrier objective (plain objective at the downlink-beamformer step, whose
relaxation drops the barrier term). Benchmark modes reuse the same loop with
channels or associations restricted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import blocks, model
from .blocks import BlockFailure
from .downlink_phase import PenaltyParams, min_soc_slack, solve_downlink_phase
from .initializer import find_feasible
from .model import (UPLINK, ChannelSet, DomainError, SolutionState,
                    SystemConfig, derive_association, effective_channels_all)

MODES = ("full", "without_ris", "without_ct", "without_ris_ct", "am_fp")

# penalty schedule used by default at desk scale; the literature schedule
# (growth 1.003) is available through PenaltyParams() but needs thousands of
# outer rounds to tighten the fit, which desk runs cannot afford
DESK_PENALTY = PenaltyParams(mu0=1e-3, growth=2.5, eps1=0.1, eps2=0.01,
                             max_outer=40, max_inner=6)


@dataclass
class DriverOptions:
    w0: float = 1.0
    w_growth: float = 3.0
    w_max: float = 1e4
    rel_tol: float = 1e-3
    max_outer: int = 24
    min_outer: int = 3
    inner_tol: float = 1e-4
    init_rounds: int = 10
    penalty: PenaltyParams = field(default_factory=lambda: DESK_PENALTY)
    theta_ul_iters: int = 40
    consecutive_failure_cap: int = 3

    def __post_init__(self):
        if self.w0 <= 0 or self.w_growth <= 1.0 or self.w_max < self.w0:
            raise ValueError("barrier weight schedule out of range")


@dataclass
class BlockRecord:
    block: str
    metric: str
    before: float
    after: float
    accepted: bool


@dataclass
class TraceRow:
    iteration: int
    w: float
    barrier: float
    ce: float
    min_residual: float
    serving: np.ndarray
    blocks: List[BlockRecord]
    elapsed_s: float


@dataclass
class SolveTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def ce_series(self) -> np.ndarray:
        return np.array([row.ce for row in self.rows])

    def __len__(self):
        return len(self.rows)


@dataclass
class SolveResult:
    status: str
    mode: str
    seed: int
    config: SystemConfig
    state: Optional[SolutionState]
    trace: SolveTrace
    wall_time_s: float

    @property
    def feasible(self) -> bool:
        return self.status == "solved"

    @property
    def ce(self) -> float:
        return self.trace.rows[-1].ce if self.trace.rows else np.nan


def initial_phases(config: SystemConfig, seed) -> tuple:
    """The random phase profiles the initializer will adopt for this seed."""
    rng = np.random.default_rng(seed)
    theta_ul = rng.uniform(0.0, 2 * np.pi, size=config.n_elements)
    theta_dl = rng.uniform(0.0, 2 * np.pi, size=config.n_elements)
    return theta_ul, theta_dl


def best_ap_mask(config: SystemConfig, channels: ChannelSet,
                 theta_ul: np.ndarray) -> np.ndarray:
    """Single-AP association: each user keeps the AP with the strongest
    effective uplink channel (ties resolved to the lowest AP index)."""
    iota = effective_channels_all(channels, theta_ul, UPLINK,
                                  config.phase_params)
    norms = np.linalg.norm(iota, axis=2)          # (N, K)
    mask = np.zeros_like(norms, dtype=bool)
    mask[np.argmax(norms, axis=0), np.arange(config.n_users)] = True
    return mask


def _tie_uplink_norms(state: SolutionState) -> None:
    """Cap each uplink beamformer norm at its pair's downlink norm so the
    group-sparsity pattern (and the mixed-norm budget) follows v_dl."""
    dl_norms = np.sqrt(np.sum(np.abs(state.v_dl) ** 2, axis=2))
    ul_norms = np.sqrt(np.sum(np.abs(state.v_ul) ** 2, axis=2))
    target = np.minimum(dl_norms, ul_norms)
    scale = np.where(ul_norms > model.DIV_GUARD, target / np.maximum(
        ul_norms, model.DIV_GUARD), 0.0)
    state.v_ul = state.v_ul * scale[:, :, None]


def _safe_barrier(state, config, channels, w) -> float:
    try:
        return model.barrier_objective(state, config, channels, w)
    except DomainError:
        return -np.inf


def _report_clean(state, config, channels, tol=-1e-6) -> bool:
    return model.constraint_report(state, config, channels).min_residual() >= tol


def solve(config: SystemConfig, channels: ChannelSet,
          options: Optional[DriverOptions] = None, seed: int = 0,
          mode: str = "full",
          assoc_mask: Optional[np.ndarray] = None) -> SolveResult:
    """Run the full outer loop; `mode` only controls the downlink-phase step
    here (channel/association restrictions are applied by benchmark_solve)."""
    options = options or DriverOptions()
    t_start = time.perf_counter()
    theta_ul0, theta_dl0 = initial_phases(config, seed)
    init = find_feasible(config, channels, seed, max_rounds=options.init_rounds,
                         assoc_mask=assoc_mask,
                         preset_phases=(theta_ul0, theta_dl0),
                         penalty_params=options.penalty)
    if init is None:
        return SolveResult("infeasible", mode, seed, config, None, SolveTrace(),
                           time.perf_counter() - t_start)
    state, config = init

    trace = SolveTrace()
    w = options.w0
    prev_ce = None
    failures = 0
    for outer in range(options.max_outer):
        t_iter = time.perf_counter()
        records: List[BlockRecord] = []

        def attempt(name, update, metric="barrier"):
            nonlocal state, failures
            if metric == "barrier":
                before = _safe_barrier(state, config, channels, w)
            else:
                before = -model.total_power(state, config,
                                            derive_association(state))
            try:
                candidate = update()
            except (BlockFailure, DomainError):
                failures += 1
                records.append(BlockRecord(name, metric, before, before, False))
                return
            if metric == "barrier":
                after = _safe_barrier(candidate, config, channels, w)
            else:
                after = -model.total_power(candidate, config,
                                           derive_association(candidate))
            ok = (after >= before
                  and np.isfinite(_safe_barrier(candidate, config, channels, w))
                  and _report_clean(candidate, config, channels))
            if ok:
                state = candidate
                failures = 0
            else:
                after = before
                failures += 1
            records.append(BlockRecord(name, metric, before, after, ok))

        attempt("uplink_beamformers",
                lambda: blocks.update_uplink_beamformers(
                    state, config, channels, w, options.inner_tol))
        attempt("power_partition",
                lambda: blocks.update_power_partition(
                    state, config, channels, w, options.inner_tol))
        attempt("uplink_phases",
                lambda: blocks.update_uplink_phases(
                    state, config, channels, max_iters=options.theta_ul_iters))

        def dl_step():
            candidate = blocks.update_downlink_beamformers(state, config,
                                                           channels)
            _tie_uplink_norms(candidate)
            return candidate

        attempt("downlink_beamformers", dl_step, metric="power")
        attempt("frequencies",
                lambda: blocks.update_frequencies(state, config))
        attempt("rate_time",
                lambda: blocks.update_rate_time(
                    state, config, channels, w, options.inner_tol))

        def rescale_step():
            # the frequency and time blocks individually pin each other at
            # the time-budget boundary; probing a joint downscale of both
            # escapes that corner when edge compute power is significant
            best_candidate, best_value = None, -np.inf
            for lam in (0.85, 0.7, 0.55, 0.4, 0.25):
                trial = state.copy()
                trial.t = state.t * lam
                try:
                    trial = blocks.update_frequencies(trial, config)
                    trial = blocks.update_rate_time(trial, config, channels,
                                                    w, options.inner_tol)
                except (BlockFailure, DomainError):
                    continue
                value = _safe_barrier(trial, config, channels, w)
                if value > best_value:
                    best_candidate, best_value = trial, value
            if best_candidate is None:
                raise BlockFailure("no feasible joint rescale")
            return best_candidate

        attempt("frequency_time_rescale", rescale_step)

        def phase_step():
            candidate = state.copy()
            candidate.theta_dl = solve_downlink_phase(
                state, config, channels, penalty_params=options.penalty,
                stop_at_feasible=(mode == "am_fp"))
            return candidate

        attempt("downlink_phases", phase_step)

        if failures >= options.consecutive_failure_cap * 8:
            break

        assoc = derive_association(state)
        try:
            ce = model.computation_efficiency(state, config, channels, assoc)
        except DomainError:
            ce = np.nan
        barrier_val = _safe_barrier(state, config, channels, w)
        report = model.constraint_report(state, config, channels)
        trace.rows.append(TraceRow(
            iteration=outer, w=w, barrier=barrier_val, ce=ce,
            min_residual=report.min_residual(), serving=assoc.serving.copy(),
            blocks=records, elapsed_s=time.perf_counter() - t_iter))

        converged = (prev_ce is not None and np.isfinite(ce)
                     and abs(ce - prev_ce) <= options.rel_tol
                     * max(abs(prev_ce), 1e-12)
                     and w >= options.w_max
                     and outer + 1 >= options.min_outer)
        if converged:
            break
        prev_ce = ce
        w = min(w * options.w_growth, options.w_max)

    return SolveResult("solved", mode, seed, config, state, trace,
                       time.perf_counter() - t_start)


def benchmark_solve(config: SystemConfig, channels: ChannelSet, mode: str,
                    seed: int = 0,
                    options: Optional[DriverOptions] = None) -> SolveResult:
    """Run one benchmark mode on the given (shared) channel realization."""
    if mode not in MODES:
        raise ValueError(f"unknown benchmark mode {mode!r}")
    run_channels = channels
    assoc_mask = None
    if mode in ("without_ris", "without_ris_ct"):
        run_channels = channels.without_ris()
    if mode in ("without_ct", "without_ris_ct"):
        theta_ul0, _ = initial_phases(config, seed)
        assoc_mask = best_ap_mask(config, run_channels, theta_ul0)
    result = solve(config, run_channels, options=options, seed=seed,
                   mode=mode, assoc_mask=assoc_mask)
    return replace(result, mode=mode)
