"""Ground-truth baselines for small instances.

The exhaustive-search baseline enumerates every user-AP association, solves
the alternating maximization restricted to each (with the mixed-norm budget
dropped, since associations are pinned explicitly), and keeps the best
computation efficiency. Also hosts the exhaustive phase-grid oracle used by
phase-design tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from . import model
from .downlink_phase import min_soc_slack
from .driver import DriverOptions, SolveResult, solve
from .model import (UPLINK, Association, ChannelSet, SolutionState,
                    SystemConfig, derive_association)

MAX_ENUM_CELLS = 20     # 2^(N*K) associations beyond this is out of reach

# scan/polish budgets for the per-association solves
ES_SCAN_OPTIONS = DriverOptions(w0=1.0, w_growth=10.0, w_max=100.0,
                                max_outer=2, min_outer=1, init_rounds=4)
ES_POLISH_TOP = 3


def enumerate_associations(n_aps: int, n_users: int,
                           require_nonempty_when_offloading: bool = False
                           ) -> List[Association]:
    """All boolean serving matrices, optionally only those where every user
    keeps at least one AP."""
    if n_aps * n_users > MAX_ENUM_CELLS:
        raise ValueError(
            f"{n_aps}x{n_users} grid has 2^{n_aps * n_users} associations; "
            f"refusing beyond 2^{MAX_ENUM_CELLS}")
    columns = list(itertools.product([False, True], repeat=n_aps))
    if require_nonempty_when_offloading:
        columns = [col for col in columns if any(col)]
    out = []
    for combo in itertools.product(columns, repeat=n_users):
        serving = np.array(combo, dtype=bool).T    # (N, K)
        out.append(Association(serving=serving))
    return out


@dataclass
class ExhaustiveResult:
    status: str
    best: Optional[SolveResult]
    association: Optional[Association]
    evaluated: int
    wall_time_s: float

    @property
    def feasible(self) -> bool:
        return self.status == "solved"

    @property
    def ce(self) -> float:
        return self.best.ce if self.best is not None else np.nan


def _must_offload(config: SystemConfig) -> bool:
    # when the task cannot finish locally even at a=0, empty associations
    # are never feasible and the enumeration can skip them
    return config.task_bits > config.slot_s * model.local_rate(0.0, config)


def am_es_solve(config: SystemConfig, channels: ChannelSet, seed: int = 0,
                options: Optional[DriverOptions] = None,
                scan_options: Optional[DriverOptions] = None,
                polish_top: int = ES_POLISH_TOP) -> ExhaustiveResult:
    """Exhaustive association search with the group budget dropped.

    Every association is scanned with a reduced iteration budget (downlink
    phases kept at the feasibility level), then the leaders are re-solved at
    the full budget and the best computation efficiency wins.
    """
    t0 = time.perf_counter()
    es_config = replace(config, group_budget=np.inf)
    assocs = enumerate_associations(config.n_aps, config.n_users,
                                    require_nonempty_when_offloading=_must_offload(config))
    scan_options = scan_options or ES_SCAN_OPTIONS
    options = options or DriverOptions()

    scanned = []
    for assoc in assocs:
        result = solve(es_config, channels, options=scan_options, seed=seed,
                       mode="am_fp", assoc_mask=assoc.serving)
        if result.feasible and np.isfinite(result.ce):
            scanned.append((result.ce, assoc, result))
    if not scanned:
        return ExhaustiveResult("infeasible", None, None, len(assocs),
                                time.perf_counter() - t0)

    scanned.sort(key=lambda item: -item[0])
    best_ce, best_assoc, best_result = scanned[0]
    for ce, assoc, _ in scanned[:polish_top]:
        polished = solve(es_config, channels, options=options, seed=seed,
                         mode="full", assoc_mask=assoc.serving)
        if polished.feasible and np.isfinite(polished.ce) and polished.ce > best_ce:
            best_ce, best_assoc, best_result = polished.ce, assoc, polished
    return ExhaustiveResult("solved", best_result, best_assoc, len(assocs),
                            time.perf_counter() - t0)


def grid_phase_oracle(state: SolutionState, config: SystemConfig,
                      channels: ChannelSet, resolution_deg: float,
                      direction: str):
    """Exhaustive grid over [0, 2pi)^M maximizing the phase objective.

    Uplink: the barrier rate sum over serving pairs (weight-free, since the
    barrier weight only scales it). Downlink: the minimum SINR-cone slack.
    Returns (best_theta, best_value).
    """
    m = config.n_elements
    if m > 2:
        raise ValueError("grid oracle limited to M <= 2")
    steps = max(int(round(360.0 / resolution_deg)), 1)
    axis = np.linspace(0.0, 2 * np.pi, steps, endpoint=False)
    pairs = derive_association(state).pairs

    def objective(theta):
        if direction == UPLINK:
            st = state.copy()
            st.theta_ul = theta
            rates = model.all_offload_rates(st, config, channels)
            total = 0.0
            for n, k in pairs:
                slack = rates[n, k] - state.r[k]
                if slack <= 0.0:
                    return -np.inf
                total += np.log(slack)
            return total
        return min_soc_slack(theta, state, config, channels)

    best_theta, best_value = None, -np.inf
    for combo in itertools.product(axis, repeat=m):
        theta = np.array(combo)
        value = objective(theta)
        if value > best_value:
            best_theta, best_value = theta, value
    return best_theta, float(best_value)
