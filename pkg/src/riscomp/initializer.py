"""Initial feasible points via the penalized feasibility problem.

Recipe: draw random phases, partitions, and dense downlink beamformers;
derive the remaining variables to satisfy the deterministic constraints
(shrinking partitions when the latency or capacity budgets demand it); then
alternate a slack-lifting downlink beamformer step with the downlink-phase
design until every offloading user's SINR cone holds, or give up. Failure is
the per-seed infeasibility verdict consumed by the feasibility-ratio
experiments.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from . import model
from .blocks import BlockFailure, _im_row, _re_row, _deinterleave, downlink_zero_mask
from .conic import Cone, ConicProgram, INFEASIBLE, solve_conic
from .downlink_phase import PenaltyParams, min_soc_slack, solve_downlink_phase
from .model import (DIV_GUARD, DOWNLINK, UPLINK, ChannelSet, SolutionState,
                    SystemConfig, all_offload_rates, derive_association,
                    effective_channels_all, local_rates, offload_bits,
                    zero_state)

# margins keeping the constructed point strictly interior
POWER_MARGIN = 0.95
RATE_SHRINK = 0.99
FREQ_MARGIN = 1.05
TIME_MARGIN = 0.9


def violation_objective(state: SolutionState, config: SystemConfig,
                        channels: ChannelSet) -> float:
    """Hinge reward sum_k a_k * [SOC slack]^+ of the penalized feasibility
    problem (nonnegative; zero when nobody offloads or every slack <= 0)."""
    total = 0.0
    offl = model.offloading_users(state)
    if offl.size == 0:
        return 0.0
    iota = effective_channels_all(channels, state.theta_dl, DOWNLINK,
                                  config.phase_params)
    for k in offl:
        e = np.einsum("nl,njl->j", iota[:, k, :].conj(), state.v_dl)
        coherent = float(np.real(e[k]))
        interf2 = float(np.sum(np.abs(e) ** 2) - np.abs(e[k]) ** 2)
        slack = (coherent / np.sqrt(config.sinr_targets[k])
                 - np.sqrt(interf2 + config.noise_user_w))
        total += abs(state.a[k]) * max(slack, 0.0)
    return total


def _mmse_directions(state: SolutionState, config: SystemConfig,
                     channels: ChannelSet, mask: np.ndarray) -> np.ndarray:
    """Unit-norm MMSE receive directions for every unmasked pair."""
    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)
    p = state.a * config.user_powers
    v = np.zeros_like(state.v_ul)
    eye = np.eye(config.n_antennas, dtype=complex)
    for n in range(config.n_aps):
        for k in range(config.n_users):
            if not mask[n, k]:
                continue
            m = config.noise_ap_w * eye.copy()
            for l in range(config.n_users):
                if l != k:
                    m += p[l] * np.outer(iota[n, l], iota[n, l].conj())
            try:
                d = np.linalg.solve(m, iota[n, k])
            except np.linalg.LinAlgError:
                d = iota[n, k]
            norm = np.linalg.norm(d)
            v[n, k] = d / norm if norm > DIV_GUARD else 0.0
    return v


def _partition_cap_for_bits(bits_target: float, config: SystemConfig) -> float:
    """Largest a with U - T * R_loc(a) <= bits_target (1.0 if unconstrained)."""
    needed = (config.task_bits - bits_target) / config.slot_s
    if needed <= 0.0:
        return 1.0
    cap = 1.0 - ((config.cycles_per_bit * needed) ** 2
                 * config.kappa_user / config.user_power_w)
    return max(cap, 0.0)


def _lift_slack_step(state: SolutionState, config: SystemConfig,
                     channels: ChannelSet, rates: np.ndarray,
                     assoc_mask: Optional[np.ndarray]) -> np.ndarray:
    """One cone solve lifting the per-user SOC slacks.

    maximize sum_k a_k xi_k with xi_k <= slack_k(v) and xi_k capped at one
    noise-amplitude of headroom, under AP power, zero-forced pairs, and the
    group budget when the config pins one.
    """
    L = config.n_antennas
    mask = downlink_zero_mask(state, config, rates)
    if assoc_mask is not None:
        mask |= ~assoc_mask
    free = [(n, k) for n in range(config.n_aps) for k in range(config.n_users)
            if not mask[n, k]]
    offl = list(model.offloading_users(state))
    if not free or not offl:
        raise BlockFailure("nothing to lift: no free pairs or offloading users")

    n_v = 2 * L * len(free)
    n_vars = n_v + len(offl)
    v_offsets = {pair: 2 * L * i for i, pair in enumerate(free)}
    xi_offset = {k: n_v + j for j, k in enumerate(offl)}
    sscale = np.sqrt(config.noise_user_w)

    c = np.zeros(n_vars)
    for k in offl:
        c[xi_offset[k]] = -max(state.a[k], 1e-3)

    cones = []
    iota = effective_channels_all(channels, state.theta_dl, DOWNLINK,
                                  config.phase_params)
    for k in offl:
        rows, consts = _soc_slack_rows(iota[:, k, :], v_offsets, k, config,
                                       n_vars, sscale)
        rows[0][xi_offset[k]] = -1.0
        cones.append(Cone("soc", np.vstack(rows), np.array(consts)))

    cap_rows = np.zeros((len(offl), n_vars))
    for j, k in enumerate(offl):
        cap_rows[j, xi_offset[k]] = -1.0
    cones.append(Cone("nonneg", cap_rows, np.ones(len(offl))))   # xi <= 1 sigma

    p_cap = np.sqrt(config.ap_max_power_w) * POWER_MARGIN
    for n in range(config.n_aps):
        local = [pair for pair in free if pair[0] == n]
        if not local:
            continue
        F = np.zeros((2 * L * len(local) + 1, n_vars))
        g = np.zeros(F.shape[0])
        g[0] = p_cap
        for j, pair in enumerate(local):
            F[1 + 2 * L * j:1 + 2 * L * (j + 1),
              v_offsets[pair]:v_offsets[pair] + 2 * L] = np.eye(2 * L)
        cones.append(Cone("soc", F, g))

    beta = config.group_budget
    if beta is not None and np.isfinite(beta):
        # append one norm epigraph per free group and cap their sum
        ul_norms = np.sqrt(np.sum(np.abs(state.v_ul) ** 2, axis=2))
        extra = len(free)
        norm_cones = []
        total_row = np.zeros((1, n_vars + extra))
        for i, pair in enumerate(free):
            F = np.zeros((2 * L + 2, n_vars + extra))
            g = np.zeros(2 * L + 2)
            F[0, n_vars + i] = 1.0
            F[1:-1, v_offsets[pair]:v_offsets[pair] + 2 * L] = np.eye(2 * L)
            g[-1] = ul_norms[pair]
            norm_cones.append(Cone("soc", F, g))
            total_row[0, n_vars + i] = -1.0
        fixed = float(np.sqrt(np.sum(np.abs(state.v_ul[mask]) ** 2, axis=-1)).sum()
                      if mask.any() else 0.0)
        cones = [Cone(cn.kind, np.hstack([cn.F, np.zeros((cn.F.shape[0], extra))]),
                      cn.g) for cn in cones]
        cones.extend(norm_cones)
        cones.append(Cone("nonneg", total_row, np.array([beta - fixed])))
        c = np.concatenate([c, np.zeros(extra)])
        n_vars += extra

    report = solve_conic(ConicProgram(n_vars=n_vars, c=c, cones=cones))
    if report.status == INFEASIBLE or report.x is None:
        raise BlockFailure("slack-lifting cone step failed")
    v_new = np.zeros_like(state.v_dl)
    for pair, off in v_offsets.items():
        v_new[pair] = _deinterleave(report.x[off:off + 2 * L])
    return v_new


def _soc_slack_rows(iota_k: np.ndarray, v_offsets, k: int,
                    config: SystemConfig, n_vars: int, sscale: float):
    """SOC rows (z0 first) of user k's slack constraint in noise units."""
    inv = 1.0 / sscale
    L = iota_k.shape[1]
    row0 = np.zeros(n_vars)
    for n in range(iota_k.shape[0]):
        if (n, k) in v_offsets:
            off = v_offsets[(n, k)]
            row0[off:off + 2 * L] += _re_row(iota_k[n])
    rows = [row0 * inv / np.sqrt(config.sinr_targets[k])]
    consts = [0.0]
    for l in range(config.n_users):
        if l == k:
            continue
        row_re, row_im = np.zeros(n_vars), np.zeros(n_vars)
        for n in range(iota_k.shape[0]):
            if (n, l) in v_offsets:
                off = v_offsets[(n, l)]
                row_re[off:off + 2 * L] += _re_row(iota_k[n])
                row_im[off:off + 2 * L] += _im_row(iota_k[n])
        rows.extend([row_re * inv, row_im * inv])
        consts.extend([0.0, 0.0])
    rows.append(np.zeros(n_vars))
    consts.append(1.0)
    return rows, consts


def find_feasible(config: SystemConfig, channels: ChannelSet, seed,
                  max_rounds: int = 50,
                  assoc_mask: Optional[np.ndarray] = None,
                  preset_phases: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  penalty_params: Optional[PenaltyParams] = None,
                  ) -> Optional[Tuple[SolutionState, SystemConfig]]:
    """Construct a strictly feasible point, or None if this seed fails.

    Returns the state together with a config whose group budget is pinned
    (twice the constructed point's mixed norm when the input left it open).
    """
    rng = np.random.default_rng(seed)
    state = zero_state(config)
    n_aps, n_users = config.n_aps, config.n_users

    if preset_phases is not None:
        state.theta_ul = np.asarray(preset_phases[0], dtype=float).copy()
        state.theta_dl = np.asarray(preset_phases[1], dtype=float).copy()
        rng.uniform(0.0, 2 * np.pi, size=2 * config.n_elements)  # keep stream aligned
    else:
        state.theta_ul = rng.uniform(0.0, 2 * np.pi, size=config.n_elements)
        state.theta_dl = rng.uniform(0.0, 2 * np.pi, size=config.n_elements)
    state.a = rng.uniform(0.1, 0.9, size=n_users)

    mask = np.ones((n_aps, n_users), dtype=bool)
    if assoc_mask is not None:
        mask &= assoc_mask

    # dense random downlink beamformers scaled inside the AP power budget
    v = (rng.standard_normal((n_aps, n_users, config.n_antennas))
         + 1j * rng.standard_normal((n_aps, n_users, config.n_antennas)))
    v[~mask] = 0.0
    for n in range(n_aps):
        power = float(np.sum(np.abs(v[n]) ** 2))
        if power > 0:
            v[n] *= POWER_MARGIN * np.sqrt(config.ap_max_power_w / power)
    state.v_dl = v

    # Prune pairs that could never meet the latency cap: a pair only helps if
    # its rate covers the minimum offload bits within ~70% of the cap (the
    # auxiliary rate is the minimum over serving APs, so one weak AP would
    # drag the whole user down). Every user keeps at least its best AP.
    state.v_ul = _mmse_directions(state, config, channels, mask)
    dl_norms = np.sqrt(np.sum(np.abs(state.v_dl) ** 2, axis=2))
    state.v_ul *= dl_norms[:, :, None]
    probe_rates = all_offload_rates(state, config, channels)
    # minimum offload load, taken at the smallest partition we would keep
    bits_min = max(config.task_bits
                   - config.slot_s * model.local_rate(0.02, config), 0.0)
    # per user, keep the largest rate-ordered AP prefix whose worst member
    # still uploads a modest-partition load within 60% of the latency cap;
    # associations only shrink later, so start as cooperative as viable
    bits_typ = max(config.task_bits
                   - config.slot_s * model.local_rate(0.25, config), 0.0)
    for k in range(n_users):
        avail = np.flatnonzero(mask[:, k])
        if avail.size == 0:
            continue
        order = avail[np.argsort(-probe_rates[avail, k])]
        keep = 1
        for s in range(order.size, 0, -1):
            rate_s = RATE_SHRINK * probe_rates[order[s - 1], k]
            if rate_s > 0 and bits_typ / rate_s <= 0.6 * config.latency_cap_s:
                keep = s
                break
        new_col = np.zeros(n_aps, dtype=bool)
        new_col[order[:keep]] = True
        mask[:, k] &= new_col
    # capacity pre-check: drop the weakest pairs at overloaded APs
    if bits_min > 0.0:
        floor_guess = config.cycles_per_bit * bits_min / (0.3 * config.latency_cap_s)
        for n in range(n_aps):
            while mask[n].sum() * floor_guess > 0.9 * config.ap_total_freq_hz:
                droppable = [k for k in np.flatnonzero(mask[n])
                             if mask[:, k].sum() > 1]
                if not droppable:
                    break
                worst = min(droppable, key=lambda k: probe_rates[n, k])
                mask[n, worst] = False
    state.v_dl = np.where(mask[:, :, None], state.v_dl, 0.0)

    def rebuild_uplink_side() -> bool:
        """Derive v_ul, r, f, f_min, t for the current (a, theta, v_dl)."""
        state.v_ul = _mmse_directions(state, config, channels, mask)
        dl_norms = np.sqrt(np.sum(np.abs(state.v_dl) ** 2, axis=2))
        state.v_ul *= dl_norms[:, :, None]
        rates = all_offload_rates(state, config, channels)
        assoc = derive_association(state)
        for k in range(n_users):
            aps = assoc.aps_of(k)
            state.r[k] = RATE_SHRINK * float(rates[aps, k].min()) if aps.size else 0.0
        bits = offload_bits(state, config)
        f = np.zeros((n_aps, n_users))
        floors = np.zeros(n_users)
        for k in range(n_users):
            aps = assoc.aps_of(k)
            if aps.size == 0:
                if bits[k] > 0.0:
                    return False     # task unfinishable without an AP
                continue
            if bits[k] > 0.0:
                if state.r[k] <= DIV_GUARD:
                    return False
                room = config.latency_cap_s - bits[k] / state.r[k]
                if room <= 0.0:
                    return False
                floors[k] = FREQ_MARGIN * config.cycles_per_bit * bits[k] / room
        # start from a fair share of each AP's capacity (never below the
        # latency floor); a starved initial f would pin t near zero because
        # the frequency step keeps the time budget tight ever after
        for n in range(n_aps):
            served = assoc.users_of(n)
            if served.size == 0:
                continue
            share = 0.9 * config.ap_total_freq_hz / served.size
            for k in served:
                f[n, k] = max(share, floors[k])
            load = float(f[n].sum())
            cap = 0.98 * config.ap_total_freq_hz
            if load > cap:
                # shed the headroom above the floors proportionally
                floor_load = float(floors[served].sum())
                if floor_load > cap:
                    return False
                lam = (cap - floor_load) / max(load - floor_load, DIV_GUARD)
                for k in served:
                    f[n, k] = floors[k] + lam * (f[n, k] - floors[k])
        state.f_nk = f
        for k in range(n_users):
            aps = assoc.aps_of(k)
            state.f_min[k] = float(f[aps, k].min()) if aps.size else 0.0
        for k in range(n_users):
            if state.r[k] > 0.0 and state.f_min[k] > DIV_GUARD:
                state.t[k] = TIME_MARGIN * config.slot_s / (
                    1.0 + config.cycles_per_bit * state.r[k] / state.f_min[k])
            else:
                state.t[k] = 0.0
        return True

    def upload_ratio(k: int, a_k: float) -> float:
        """Offload bits over the user's min serving rate at partition a_k."""
        trial = state.copy()
        trial.a = state.a.copy()
        trial.a[k] = a_k
        rates = all_offload_rates(trial, config, channels)
        aps = np.flatnonzero(mask[:, k])
        rmin = RATE_SHRINK * float(rates[aps, k].min()) if aps.size else 0.0
        b = max(config.task_bits
                - config.slot_s * model.local_rate(a_k, config), 0.0)
        if b <= 0.0:
            return 0.0
        if rmin <= 0.0:
            return np.inf
        return b / rmin

    # partition repair: pick each a_k with the most latency headroom; when no
    # partition fits, shed the user's weakest AP and retry
    a_grid = np.linspace(0.05, 0.95, 19)
    for _ in range(2 * n_aps):
        if rebuild_uplink_side():
            break
        progress = False
        for k in range(n_users):
            if not mask[:, k].any():
                continue
            if upload_ratio(k, state.a[k]) <= 0.6 * config.latency_cap_s:
                continue
            ratios = np.array([upload_ratio(k, a) for a in a_grid])
            best = int(np.argmin(ratios))
            if ratios[best] < upload_ratio(k, state.a[k]):
                state.a[k] = float(a_grid[best])
                progress = True
            if ratios[best] > 0.85 * config.latency_cap_s:
                rates = all_offload_rates(state, config, channels)
                if mask[:, k].sum() > 1:
                    weakest = int(np.argmin(np.where(mask[:, k], rates[:, k],
                                                     np.inf)))
                    mask[weakest, k] = False
                    state.v_dl[weakest, k] = 0.0
                    progress = True
                else:
                    # single-AP user still starved: throttle its strongest
                    # uplink interferer at that AP
                    ap = int(np.flatnonzero(mask[:, k])[0])
                    iota = effective_channels_all(channels, state.theta_ul,
                                                  UPLINK, config.phase_params)
                    strength = state.a * config.user_powers * np.sum(
                        np.abs(iota[ap]) ** 2, axis=1)
                    strength[k] = -np.inf
                    j = int(np.argmax(strength))
                    if state.a[j] > 0.06:
                        state.a[j] = max(0.05, 0.5 * state.a[j])
                        progress = True
        if not progress:
            return None
    else:
        return None

    params = penalty_params or PenaltyParams(growth=3.0, max_outer=10,
                                             max_inner=4)

    def clean(st) -> bool:
        report = model.constraint_report(st, config, channels)
        return report.min_residual() >= -1e-6

    for _ in range(max_rounds):
        try:
            slack = min_soc_slack(state.theta_dl, state, config, channels)
        except model.DomainError:
            slack = np.inf   # nobody offloads; SINR gates vacuous
        if slack >= 1e-12 and clean(state):
            break
        rates = all_offload_rates(state, config, channels)
        try:
            v_new = _lift_slack_step(state, config, channels, rates, assoc_mask)
        except BlockFailure:
            return None
        state.v_dl = v_new
        if not rebuild_uplink_side():
            return None
        state.theta_dl = solve_downlink_phase(state, config, channels,
                                              penalty_params=params)
    else:
        return None

    out_config = config
    if config.group_budget is None:
        out_config = config.with_group_budget(2.0 * model.group_norm(state))
    elif not np.isfinite(config.group_budget):
        out_config = config
    if not clean(state):
        return None
    return state, out_config
