"""Per-block subproblem updates for the alternating-maximization sweep.

Each update consumes a SolutionState and returns a new one with its own block
replaced; nothing here mutates shared inputs. Fractional terms are handled by
quadratic/Dinkelbach transforms with closed-form auxiliary updates; cone
programs go through `conic.solve_conic`.

Note on the quadratic-transform auxiliaries: we use the self-consistent form
in which the auxiliary maximizer restores the true SINR, i.e. the linear term
carries the *amplitude* sqrt(p) of the desired signal. With s fixed the
surrogate is concave in the beamformer, and plugging the optimal s back in
gives exactly 1 + SINR, which is what makes the inner alternation an ascent
on the true objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import model
from .conic import (Cone, ConicProgram, INFEASIBLE, OPTIMAL, SolveReport,
                    armijo_descent, solve_conic)
from .model import (DIV_GUARD, OFFLOAD_TOL, UPLINK, DOWNLINK, ChannelSet,
                    DomainError, SolutionState, SystemConfig,
                    all_offload_rates, derive_association, effective_channels_all,
                    local_rates, offload_bits, ris_coefficient_derivative,
                    wrap_phase)

# relative tightening applied inside cone programs so returned iterates pass
# the constraint report at 1e-6 despite solver tolerances
CONE_MARGIN = 1e-7
SINR_MARGIN = 1e-5


class BlockFailure(RuntimeError):
    """A block update could not produce a usable iterate."""


def _interleave(vec: np.ndarray) -> np.ndarray:
    """Complex (L,) -> real (2L,) with (re, im) adjacent per entry."""
    out = np.empty(2 * vec.shape[0])
    out[0::2] = vec.real
    out[1::2] = vec.imag
    return out


def _re_row(w: np.ndarray) -> np.ndarray:
    """Row giving Re(w^H v) against the interleaved lifting of v."""
    out = np.empty(2 * w.shape[0])
    out[0::2] = w.real
    out[1::2] = w.imag
    return out


def _im_row(w: np.ndarray) -> np.ndarray:
    """Row giving Im(w^H v) against the interleaved lifting of v."""
    out = np.empty(2 * w.shape[0])
    out[0::2] = -w.imag
    out[1::2] = w.real
    return out


def _deinterleave(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


# ---------------------------------------------------------------------------
# downlink beamformers, problem "min sum ||v|| (W + ||v||^2)"
# ---------------------------------------------------------------------------

def downlink_zero_mask(state: SolutionState, config: SystemConfig,
                       rates: np.ndarray) -> np.ndarray:
    """(N, K) True where the norm-weighted side constraints force v_nk = 0.

    At fixed (r, f, a) the norm-weighted latency/rate/frequency constraints
    read "v_nk = 0 or <fixed inequality>", so pairs whose fixed inequality
    fails are hard-zeroed in the cone program.
    """
    n_aps, n_users = config.n_aps, config.n_users
    bits = offload_bits(state, config)
    mask = np.zeros((n_aps, n_users), dtype=bool)
    for n in range(n_aps):
        for k in range(n_users):
            if rates[n, k] <= state.r[k]:
                mask[n, k] = True
                continue
            if state.f_nk[n, k] < state.f_min[k] * (1.0 - 1e-12):
                mask[n, k] = True
                continue
            if bits[k] > 0.0:
                if state.r[k] <= DIV_GUARD or state.f_nk[n, k] <= DIV_GUARD:
                    mask[n, k] = True
                    continue
                tau = (bits[k] / state.r[k]
                       + config.cycles_per_bit * bits[k] / state.f_nk[n, k])
                if tau > config.latency_cap_s:
                    mask[n, k] = True
    return mask


def _sinr_soc_rows(iota_k: np.ndarray, v_offsets, free_pairs, k: int,
                   config: SystemConfig, n_vars: int, sigma_scale: float,
                   v_fixed: Optional[np.ndarray] = None):
    """Rows of the downlink SINR second-order cone for user k.

    z0 = (1/sqrt(gamma')) Re(sum_n iota_nk^H v_nk) / sigma_scale,
    z1 = [Re/Im of sum_n iota_nk^H v_nl for l != k, sigma_k] / sigma_scale.
    `v_offsets[(n, l)]` maps a free pair to its slot offset; pairs absent from
    the map contribute через `v_fixed` as constants.
    """
    gamma = config.sinr_target_lin * (1.0 + SINR_MARGIN)
    inv = 1.0 / sigma_scale
    L = iota_k.shape[1]
    rows, consts = [], []
    row0 = np.zeros(n_vars)
    const0 = 0.0
    for n in range(iota_k.shape[0]):
        if (n, k) in v_offsets:
            off = v_offsets[(n, k)]
            row0[off:off + 2 * L] += _re_row(iota_k[n])
        elif v_fixed is not None:
            const0 += float(np.real(iota_k[n].conj() @ v_fixed[n, k]))
    rows.append(row0 * inv / np.sqrt(gamma))
    consts.append(const0 * inv / np.sqrt(gamma))
    for l in range(config.n_users):
        if l == k:
            continue
        row_re, row_im = np.zeros(n_vars), np.zeros(n_vars)
        c_re = c_im = 0.0
        for n in range(iota_k.shape[0]):
            if (n, l) in v_offsets:
                off = v_offsets[(n, l)]
                row_re[off:off + 2 * L] += _re_row(iota_k[n])
                row_im[off:off + 2 * L] += _im_row(iota_k[n])
            elif v_fixed is not None:
                e = complex(iota_k[n].conj() @ v_fixed[n, l])
                c_re += e.real
                c_im += e.imag
        rows.extend([row_re * inv, row_im * inv])
        consts.extend([c_re * inv, c_im * inv])
    rows.append(np.zeros(n_vars))
    consts.append(np.sqrt(config.noise_user_w) * inv)
    return rows, consts


def update_downlink_beamformers(state: SolutionState, config: SystemConfig,
                                channels: ChannelSet,
                                rates: Optional[np.ndarray] = None) -> SolutionState:
    """Group-l1 relaxed downlink beamformer step (cone program).

    Objective sum_nk ||v_nk|| (W_nk + ||v_nk||^2) with
    W_nk = C t r f kappa / T, lifted as: g >= ||v||, s >= g^2 (rotated cone
    ||[2g, s-1]|| <= s+1), q*g >= s^2 (rotated cone ||[2s, q-g]|| <= q+g), so
    that at the optimum q = g^3 and the objective is sum W g + q.
    """
    if rates is None:
        rates = all_offload_rates(state, config, channels)
    n_aps, n_users, L = config.n_aps, config.n_users, config.n_antennas
    mask = downlink_zero_mask(state, config, rates)
    free = [(n, k) for n in range(n_aps) for k in range(n_users) if not mask[n, k]]
    new = state.copy()
    if not free:
        new.v_dl = np.zeros_like(state.v_dl)
        return new

    weights = (config.cycles_per_bit * state.t[None, :] * state.r[None, :]
               * state.f_nk * config.kappa_ap / config.slot_s)
    ul_norms = np.sqrt(np.sum(np.abs(state.v_ul) ** 2, axis=2))

    n_pairs = len(free)
    n_v = 2 * L * n_pairs
    # layout: [v (interleaved per pair) | g | m | s | q]
    off_g = n_v
    off_m = off_g + n_pairs
    off_s = off_m + n_pairs
    off_q = off_s + n_pairs
    n_vars = off_q + n_pairs
    v_offsets = {pair: 2 * L * i for i, pair in enumerate(free)}

    c = np.zeros(n_vars)
    for i, (n, k) in enumerate(free):
        c[off_g + i] = weights[n, k]
        c[off_q + i] = 1.0

    cones = []
    for i, (n, k) in enumerate(free):
        # g_i >= ||v_i||
        F = np.zeros((2 * L + 1, n_vars))
        F[0, off_g + i] = 1.0
        F[1:, v_offsets[(n, k)]:v_offsets[(n, k)] + 2 * L] = np.eye(2 * L)
        cones.append(Cone("soc", F, np.zeros(2 * L + 1)))
        # m_i >= ||[v_i; const uplink part]||
        F = np.zeros((2 * L + 2, n_vars))
        g = np.zeros(2 * L + 2)
        F[0, off_m + i] = 1.0
        F[1:-1, v_offsets[(n, k)]:v_offsets[(n, k)] + 2 * L] = np.eye(2 * L)
        g[-1] = ul_norms[n, k]
        cones.append(Cone("soc", F, g))
        # s_i >= g_i^2
        F = np.zeros((3, n_vars))
        g = np.zeros(3)
        F[0, off_s + i] = 1.0
        g[0] = 1.0
        F[1, off_g + i] = 2.0
        F[2, off_s + i] = 1.0
        g[2] = -1.0
        cones.append(Cone("soc", F, g))
        # q_i * g_i >= s_i^2
        F = np.zeros((3, n_vars))
        F[0, off_q + i] = 1.0
        F[0, off_g + i] = 1.0
        F[1, off_s + i] = 2.0
        F[2, off_q + i] = 1.0
        F[2, off_g + i] = -1.0
        cones.append(Cone("soc", F, np.zeros(3)))

    # per-AP power
    p_cap = np.sqrt(config.ap_max_power_w * (1.0 - CONE_MARGIN))
    for n in range(n_aps):
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

    # group budget: sum_free m + sum_masked ||v_ul|| <= beta
    if config.group_budget is not None:
        row = np.zeros(n_vars)
        row[off_m:off_m + n_pairs] = -1.0
        fixed_part = float(ul_norms[mask].sum())
        cones.append(Cone("nonneg", row[None, :],
                          np.array([config.group_budget * (1.0 - CONE_MARGIN)
                                    - fixed_part])))

    # SINR SOC per offloading user
    iota = effective_channels_all(channels, state.theta_dl, DOWNLINK,
                                  config.phase_params)
    sigma_scale = np.sqrt(config.noise_user_w)
    for k in model.offloading_users(state):
        rows, consts = _sinr_soc_rows(iota[:, k, :], v_offsets, free, k,
                                      config, n_vars, sigma_scale)
        z0_row, z0_c = rows[0], consts[0]
        F = np.vstack([z0_row] + rows[1:])
        g = np.array([z0_c] + consts[1:])
        cones.append(Cone("soc", F, g))

    report = solve_conic(ConicProgram(n_vars=n_vars, c=c, cones=cones))
    if report.status == INFEASIBLE:
        raise BlockFailure("downlink beamformer subproblem infeasible")
    if report.x is None:
        raise BlockFailure("downlink beamformer solve returned no iterate")

    v_new = np.zeros_like(state.v_dl)
    for pair, off in v_offsets.items():
        v_new[pair] = _deinterleave(report.x[off:off + 2 * L])
    new.v_dl = v_new
    return new


# ---------------------------------------------------------------------------
# edge CPU frequencies (linear program)
# ---------------------------------------------------------------------------

def update_frequencies(state: SolutionState, config: SystemConfig) -> SolutionState:
    """Minimize edge computation power over (f_nk, f_min) at the incumbent
    serving set; latency and time-budget constraints pre-linearized."""
    assoc = derive_association(state)
    pairs = assoc.pairs
    new = state.copy()
    if not pairs:
        new.f_nk = np.zeros_like(state.f_nk)
        new.f_min = np.zeros_like(state.f_min)
        return new

    bits = offload_bits(state, config)
    users = sorted({k for _, k in pairs})
    scale = config.ap_total_freq_hz
    idx_f = {pair: i for i, pair in enumerate(pairs)}
    idx_fmin = {k: len(pairs) + j for j, k in enumerate(users)}
    n_vars = len(pairs) + len(users)

    c = np.zeros(n_vars)
    for pair, i in idx_f.items():
        n, k = pair
        c[i] = (state.t[k] * state.r[k] / config.slot_s
                * config.kappa_ap * config.cycles_per_bit) * scale

    rows, consts = [], []

    def add_row(row, const):
        rows.append(row)
        consts.append(const)

    eye = np.eye(n_vars)
    for i in range(n_vars):            # nonnegativity
        add_row(eye[i], 0.0)
    for n in range(config.n_aps):      # capacity
        row = np.zeros(n_vars)
        for pair, i in idx_f.items():
            if pair[0] == n:
                row[i] = -1.0
        add_row(row, config.ap_total_freq_hz * (1.0 - CONE_MARGIN) / scale)
    for pair, i in idx_f.items():      # latency floor and f >= f_min
        n, k = pair
        if bits[k] > 0.0:
            if state.r[k] <= DIV_GUARD:
                raise BlockFailure(f"user {k} has zero rate with bits pending")
            room = config.latency_cap_s - bits[k] / state.r[k]
            if room <= 0.0:
                raise BlockFailure(
                    f"latency cap unreachable for pair {pair} at current rate")
            floor = config.cycles_per_bit * bits[k] / room
            row = np.zeros(n_vars)
            row[i] = 1.0
            add_row(row, -floor / scale)
        row = np.zeros(n_vars)
        row[i] = 1.0
        row[idx_fmin[pair[1]]] = -1.0
        add_row(row, 0.0)
    for k in users:                    # time budget via f_min
        load = config.cycles_per_bit * state.t[k] * state.r[k]
        if load <= 0.0:
            continue
        room = config.slot_s - state.t[k]
        if room <= 0.0:
            raise BlockFailure(f"user {k} transmission time fills the slot")
        row = np.zeros(n_vars)
        row[idx_fmin[k]] = room
        add_row(row, -load / scale)

    program = ConicProgram(n_vars=n_vars, c=c,
                           cones=[Cone("nonneg", np.vstack(rows),
                                       np.array(consts))])
    report = solve_conic(program)
    if report.status == INFEASIBLE:
        raise BlockFailure("frequency subproblem infeasible")
    if report.x is None:
        raise BlockFailure("frequency solve returned no iterate")

    f_new = np.zeros_like(state.f_nk)
    for pair, i in idx_f.items():
        f_new[pair] = max(report.x[i], 0.0) * scale
    f_min_new = np.zeros_like(state.f_min)
    for k in users:
        f_min_new[k] = f_new[assoc.aps_of(k), k].min()
    new.f_nk = f_new
    new.f_min = f_min_new
    return new


# ---------------------------------------------------------------------------
# uplink beamformers via quadratic transform
# ---------------------------------------------------------------------------

def _uplink_terms(state: SolutionState, config: SystemConfig,
                  channels: ChannelSet, n: int, k: int):
    """(u, D): u_l = v_nk^H iota_nl for all l and the interference-plus-noise
    quadratic D = sum_{l != k} p_l |u_l|^2 + sigma^2 ||v||^2."""
    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)[n]
    v = state.v_ul[n, k]
    u = iota.conj() @ v
    p = state.a * config.user_powers
    vnorm2 = float(np.vdot(v, v).real)
    D = float(np.sum(p * np.abs(u) ** 2) - p[k] * np.abs(u[k]) ** 2
              + config.noise_ap_w * vnorm2)
    return u, D


def optimal_s(state: SolutionState, config: SystemConfig,
              channels: ChannelSet) -> np.ndarray:
    """(N, K) closed-form quadratic-transform auxiliaries for the uplink
    beamformer step; zero outside the serving set."""
    assoc = derive_association(state)
    p = state.a * config.user_powers
    s = np.zeros((config.n_aps, config.n_users), dtype=complex)
    for n, k in assoc.pairs:
        u, D = _uplink_terms(state, config, channels, n, k)
        if D <= DIV_GUARD:
            raise DomainError(f"zero interference-plus-noise at pair ({n}, {k})")
        s[n, k] = np.sqrt(p[k]) * np.conj(u[k]) / D
    return s


def uplink_surrogate(state: SolutionState, config: SystemConfig,
                     channels: ChannelSet, s: np.ndarray, n: int, k: int) -> float:
    """Surrogate rate B log2(Q_nk) with the auxiliary s fixed."""
    u, D = _uplink_terms(state, config, channels, n, k)
    p_k = state.a[k] * config.user_power_w
    q = (1.0 + 2.0 * np.real(np.conj(s[n, k]) * np.sqrt(p_k) * np.conj(u[k]))
         - np.abs(s[n, k]) ** 2 * D)
    if q <= 0.0:
        return -np.inf
    return config.bandwidth_hz * np.log2(q)


def update_uplink_beamformers(state: SolutionState, config: SystemConfig,
                              channels: ChannelSet, w: float = 1.0,
                              inner_tol: float = 1e-4,
                              inner_max: int = 50) -> SolutionState:
    """Alternate the closed-form s update with the exact per-pair maximizer
    of the concave surrogate.

    The surrogate is separable across pairs and scale-invariant, so the
    v-step is the MMSE direction of each pair's interference-plus-noise
    matrix; each new vector is rescaled to the incumbent norm, which keeps
    every group norm (and hence the mixed-norm budget) untouched.
    """
    assoc = derive_association(state)
    pairs = assoc.pairs
    if not pairs or not np.isfinite(w):
        return state.copy()

    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)
    p = state.a * config.user_powers
    new = state.copy()

    def barrier_sum(st):
        rates = all_offload_rates(st, config, channels)
        total = 0.0
        for n, k in pairs:
            slack = rates[n, k] - st.r[k]
            if slack <= 0.0:
                return -np.inf
            total += np.log(slack)
        return total

    best = barrier_sum(new)
    if not np.isfinite(best):
        raise DomainError("uplink step started outside the barrier domain")
    for _ in range(inner_max):
        # s-update then exact v-update (the optimal direction does not depend
        # on s, so the alternation settles in very few rounds)
        for n, k in pairs:
            norm_old = float(np.linalg.norm(new.v_ul[n, k]))
            if norm_old <= DIV_GUARD:
                continue
            m = config.noise_ap_w * np.eye(config.n_antennas, dtype=complex)
            for l in range(config.n_users):
                if l == k or p[l] <= 0.0:
                    continue
                m += p[l] * np.outer(iota[n, l], iota[n, l].conj())
            try:
                direction = np.linalg.solve(m, iota[n, k])
            except np.linalg.LinAlgError as exc:
                raise BlockFailure(f"singular MMSE system at pair ({n}, {k})") from exc
            norm_dir = float(np.linalg.norm(direction))
            if norm_dir <= DIV_GUARD:
                continue
            new.v_ul[n, k] = direction * (norm_old / norm_dir)
        value = barrier_sum(new)
        if value < best - 1e-12 * max(1.0, abs(best)):
            raise BlockFailure("uplink surrogate step decreased the objective")
        if abs(value - best) <= inner_tol * max(1.0, abs(best)):
            best = value
            break
        best = value
    return new


# ---------------------------------------------------------------------------
# uplink RIS phases by gradient ascent
# ---------------------------------------------------------------------------

def _uplink_phase_terms(state: SolutionState, config: SystemConfig,
                        channels: ChannelSet, pairs):
    """theta-independent per-pair tables for the phase objective: the direct
    part of v^H iota_nl, and the reflected coefficient table
    kdiag[l, m] = conj([G_n v]_m) [h_r,l]_m so that
    u_l(theta) = direct_l + kdiag[l] @ chi(theta)."""
    terms = []
    for n, k in pairs:
        v = state.v_ul[n, k]
        direct = channels.h_d_ul[n] @ v.conj()          # (K,) v^H h_d,nl
        gv = channels.g_ul[n] @ v                       # (M,)
        kdiag = np.conj(gv)[None, :] * channels.h_r_ul  # (K, M)
        vnorm2 = float(np.vdot(v, v).real)
        terms.append((n, k, direct, kdiag, vnorm2))
    return terms


def _uplink_phase_value_grad(theta: np.ndarray, state: SolutionState,
                             config: SystemConfig, channels: ChannelSet,
                             pairs, terms=None) -> tuple:
    """Objective sum log(R_nk(theta) - r_k) over serving pairs and its
    analytic theta-gradient (the 1/w weight scales both and is omitted)."""
    if terms is None:
        terms = _uplink_phase_terms(state, config, channels, pairs)
    m_count = theta.shape[0]
    chi, psi = model.ris_coefficients_with_derivative(theta, config.phase_params)
    p = state.a * config.user_powers
    b_over_ln2 = config.bandwidth_hz / np.log(2.0)

    value = 0.0
    grad = np.zeros(m_count)
    for n, k, direct, kdiag, vnorm2 in terms:
        u = direct + kdiag @ chi                  # (K,) v^H iota_nl
        gains = np.abs(u) ** 2
        D = float(np.sum(p * gains) - p[k] * gains[k]
                  + config.noise_ap_w * vnorm2)
        if D <= DIV_GUARD:
            raise DomainError(f"degenerate SINR denominator at ({n}, {k})")
        gamma = p[k] * gains[k] / D
        rate = config.bandwidth_hz * np.log2(1.0 + gamma)
        slack = rate - state.r[k]
        if slack <= 0.0:
            return -np.inf, grad
        value += np.log(slack)
        # d u_l / d theta_m = kdiag[l, m] psi_m
        d_gains = 2.0 * np.real(np.conj(u)[:, None] * kdiag * psi[None, :])
        d_num = p[k] * d_gains[k]
        d_den = (p[:, None] * d_gains).sum(axis=0) - p[k] * d_gains[k]
        d_gamma = (d_num - gamma * d_den) / D
        d_rate = b_over_ln2 * d_gamma / (1.0 + gamma)
        grad += d_rate / slack
    return value, grad


def uplink_phase_gradient(state: SolutionState, config: SystemConfig,
                          channels: ChannelSet, m: int) -> float:
    """Analytic derivative of the uplink-phase objective w.r.t. theta_m."""
    pairs = derive_association(state).pairs
    _, grad = _uplink_phase_value_grad(state.theta_ul, state, config,
                                       channels, pairs)
    return float(grad[m])


def update_uplink_phases(state: SolutionState, config: SystemConfig,
                         channels: ChannelSet, max_iters: int = 30,
                         grad_tol: float = 1e-7,
                         multistart: Optional[int] = None) -> SolutionState:
    """Armijo gradient ascent on the uplink-phase barrier objective.

    For M <= 2 a coarse multistart grid seeds the ascent so the result is
    comparable with the exhaustive grid oracle; larger M ascends from the
    incumbent only.
    """
    pairs = derive_association(state).pairs
    new = state.copy()
    if not pairs or not np.any(np.abs(channels.h_r_ul) > 0):
        return new
    terms = _uplink_phase_terms(state, config, channels, pairs)

    def neg_fg(theta):
        value, grad = _uplink_phase_value_grad(theta, state, config,
                                               channels, pairs, terms)
        return -value, -grad

    starts = [state.theta_ul.copy()]
    if multistart is None:
        multistart = 16 if config.n_elements <= 2 else 0
    if multistart > 0 and config.n_elements <= 2:
        axis = np.linspace(0.0, 2 * np.pi, multistart, endpoint=False)
        grids = np.meshgrid(*([axis] * config.n_elements), indexing="ij")
        starts.extend(np.stack([g.ravel() for g in grids], axis=1))

    best_theta, best_value = state.theta_ul.copy(), None
    for theta0 in starts:
        value0, _ = _uplink_phase_value_grad(np.asarray(theta0, dtype=float),
                                             state, config, channels, pairs,
                                             terms)
        if not np.isfinite(value0):
            continue
        result = armijo_descent(neg_fg, np.asarray(theta0, dtype=float),
                                max_iters=max_iters, grad_tol=grad_tol)
        if best_value is None or -result.objective > best_value:
            best_value = -result.objective
            best_theta = result.x
    incumbent, _ = _uplink_phase_value_grad(state.theta_ul, state, config,
                                            channels, pairs, terms)
    if best_value is None or best_value < incumbent:
        return new
    new.theta_ul = wrap_phase(best_theta)
    return new


# ---------------------------------------------------------------------------
# power partition via quadratic transform
# ---------------------------------------------------------------------------

def optimal_o(state: SolutionState, config: SystemConfig,
              channels: ChannelSet) -> np.ndarray:
    """(N, K) closed-form auxiliaries for the power-partition step; zero for
    non-serving pairs and for users with a_k = 0."""
    assoc = derive_association(state)
    o = np.zeros((config.n_aps, config.n_users))
    for n, k in assoc.pairs:
        if state.a[k] <= 0.0:
            continue
        u, D = _uplink_terms(state, config, channels, n, k)
        if D <= DIV_GUARD:
            raise DomainError(f"zero denominator in o-update at ({n}, {k})")
        o[n, k] = (np.sqrt(state.a[k] * config.user_power_w)
                   * np.abs(u[k]) / D)
    return o


def partition_surrogate(a: np.ndarray, o: np.ndarray, state: SolutionState,
                        config: SystemConfig, gains: np.ndarray,
                        vnorm2: np.ndarray, n: int, k: int) -> float:
    """Inner expression E_nk(a, o) of the a-step surrogate rate."""
    p = a * config.user_powers
    interf = float(np.sum(p * gains[n, k]) - p[k] * gains[n, k, k])
    return (1.0 + 2.0 * o[n, k] * np.sqrt(p[k] * gains[n, k, k])
            - o[n, k] ** 2 * (interf + config.noise_ap_w * vnorm2[n, k]))


def _partition_tables(state, config, channels):
    """gains[n, k, l] = |v_nk^H iota_nl|^2 and vnorm2[n, k] = ||v_nk||^2."""
    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)
    gains = np.zeros((config.n_aps, config.n_users, config.n_users))
    vnorm2 = np.zeros((config.n_aps, config.n_users))
    for n in range(config.n_aps):
        u = state.v_ul[n].conj() @ iota[n].T      # (K rx, K tx)
        gains[n] = np.abs(u) ** 2
        vnorm2[n] = np.sum(np.abs(state.v_ul[n]) ** 2, axis=1)
    return gains, vnorm2


def update_power_partition(state: SolutionState, config: SystemConfig,
                           channels: ChannelSet, w: float = 1.0,
                           inner_tol: float = 1e-4,
                           inner_max: int = 8) -> SolutionState:
    """Alternate the closed-form o-update with projected Armijo ascent of the
    concave a-surrogate over the box [0, a_cap]."""
    assoc = derive_association(state)
    pairs = assoc.pairs
    new = state.copy()
    gains, vnorm2 = _partition_tables(state, config, channels)
    p_total_const = model.total_power(state, config, assoc)
    bits_coef = config.user_powers
    sqrt_pk = np.sqrt(config.user_powers)

    # upper bounds: SINR gate (constant in a at fixed v_dl/theta_dl) and
    # norm-weighted latency; a user whose downlink cannot hit the target may
    # not offload at all
    caps = np.ones(config.n_users)
    for k in range(config.n_users):
        sinr = model.downlink_sinr(state, config, channels, k)
        if sinr < config.sinr_target_lin * (1.0 - 1e-9):
            caps[k] = 0.0
    for n, k in pairs:
        if state.r[k] <= DIV_GUARD or state.f_nk[n, k] <= DIV_GUARD:
            continue
        coef = 1.0 / state.r[k] + config.cycles_per_bit / state.f_nk[n, k]
        needed = (config.task_bits - config.latency_cap_s / coef) / config.slot_s
        if needed <= 0.0:
            continue
        # R_loc(a) >= needed  <=>  a <= 1 - (C * needed)^2 kappa / P
        cap = 1.0 - ((config.cycles_per_bit * needed) ** 2
                     * config.kappa_user / config.user_power_w)
        caps[k] = min(caps[k], max(cap, 0.0))

    # pair-indexed tables for the vectorized surrogate
    pair_n = np.array([n for n, _ in pairs], dtype=int)
    pair_k = np.array([k for _, k in pairs], dtype=int)
    pair_gains = gains[pair_n, pair_k, :]            # (P, K) |v^H iota_nl|^2
    pair_self = gains[pair_n, pair_k, pair_k]        # (P,)
    pair_noise = config.noise_ap_w * vnorm2[pair_n, pair_k]
    pair_r = state.r[pair_k]
    eye_mask = np.zeros((len(pairs), config.n_users))
    eye_mask[np.arange(len(pairs)), pair_k] = 1.0

    def objective_grad(a, o):
        loc = np.sqrt(np.maximum(1.0 - a, 0.0) * config.user_powers
                      / config.kappa_user) / config.cycles_per_bit
        num = float(np.sum(state.t * state.r) / config.slot_s + loc.sum())
        value = num / p_total_const
        with np.errstate(divide="ignore"):
            dloc = np.where(a < 1.0,
                            -np.sqrt(config.user_powers / config.kappa_user)
                            / (2.0 * config.cycles_per_bit
                               * np.sqrt(np.maximum(1.0 - a, 1e-300))),
                            0.0)
        grad = dloc / p_total_const
        if np.isfinite(w) and pairs:
            pk = a * bits_coef                                   # (K,)
            op = o[pair_n, pair_k]                               # (P,)
            interf = pair_gains @ pk - pk[pair_k] * pair_self
            e = (1.0 + 2.0 * op * np.sqrt(pk[pair_k] * pair_self)
                 - op ** 2 * (interf + pair_noise))
            if np.any(e <= 0.0):
                return -np.inf, grad
            slack = config.bandwidth_hz * np.log2(e) - pair_r
            if np.any(slack <= 0.0):
                return -np.inf, grad
            value += float(np.sum(np.log(slack))) / w
            factor = config.bandwidth_hz / (e * np.log(2.0) * slack * w)  # (P,)
            with np.errstate(divide="ignore", invalid="ignore"):
                de_self = np.where(a[pair_k] > 0.0,
                                   op * sqrt_pk[pair_k] * np.sqrt(pair_self)
                                   / np.sqrt(np.maximum(a[pair_k], 1e-300)),
                                   0.0)
            # own-partition term plus the interference terms toward every l
            np.add.at(grad, pair_k, factor * de_self)
            cross = (factor * op ** 2)[:, None] * (
                pair_gains * bits_coef[None, :]) * (1.0 - eye_mask)
            grad -= cross.sum(axis=0)
        return value, grad

    lo = np.zeros(config.n_users)
    a = np.clip(new.a, lo, caps)
    best_val = None
    for _ in range(inner_max):
        st = new.copy()
        st.a = a
        o = optimal_o(st, config, channels)
        value, grad = objective_grad(a, o)
        if not np.isfinite(value):
            break
        # projected Armijo ascent
        for _ in range(25):
            step = 1.0
            improved = False
            for _ in range(50):
                trial = np.clip(a + step * grad, lo, caps)
                move = trial - a
                if float(np.abs(move).max(initial=0.0)) <= 1e-14:
                    break
                tval, tgrad = objective_grad(trial, o)
                if np.isfinite(tval) and tval >= value + 1e-4 * float(grad @ move):
                    a, value, grad = trial, tval, tgrad
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        if best_val is not None and abs(value - best_val) <= inner_tol * max(
                1.0, abs(best_val)):
            best_val = value
            break
        best_val = value
    new.a = a
    return new


# ---------------------------------------------------------------------------
# rates and times via Dinkelbach
# ---------------------------------------------------------------------------

def optimal_z(state: SolutionState, config: SystemConfig) -> float:
    """Dinkelbach auxiliary: the current computation-rate-to-power ratio."""
    assoc = derive_association(state)
    denom = model.total_power(state, config, assoc)
    if denom <= DIV_GUARD:
        raise DomainError("zero power denominator in Dinkelbach update")
    num = float(np.sum(state.t * state.r) / config.slot_s
                + local_rates(state, config).sum())
    return num / denom


def _rate_bounds(state, config, rates, assoc):
    bits = offload_bits(state, config)
    lo = np.zeros(config.n_users)
    cap = np.full(config.n_users, np.inf)
    for k in range(config.n_users):
        aps = assoc.aps_of(k)
        if aps.size == 0:
            continue
        rmin = float(rates[aps, k].min())
        cap[k] = rmin - max(1e-9 * rmin, 1e-12)
        if bits[k] > 0.0:
            for n in aps:
                if state.f_nk[n, k] <= DIV_GUARD:
                    raise BlockFailure(f"zero frequency at serving pair ({n}, {k})")
                room = (config.latency_cap_s
                        - config.cycles_per_bit * bits[k] / state.f_nk[n, k])
                if room <= 0.0:
                    raise BlockFailure(
                        f"latency cap unreachable at pair ({n}, {k})")
                lo[k] = max(lo[k], bits[k] / room)
        if state.t[k] > 0.0:
            hi = ((config.slot_s - state.t[k]) * state.f_min[k]
                  / (config.cycles_per_bit * state.t[k]))
            cap[k] = min(cap[k], hi)
        if lo[k] > cap[k]:
            raise BlockFailure(f"empty rate interval for user {k}")
    return lo, cap


def update_rate_time(state: SolutionState, config: SystemConfig,
                     channels: ChannelSet, w: float = 1.0,
                     inner_tol: float = 1e-4,
                     inner_max: int = 12) -> SolutionState:
    """Dinkelbach alternation: z from the current ratio, a concave per-user
    rate step, then the time step as a linear program. Keeps the best iterate
    by the true barrier objective."""
    assoc = derive_association(state)
    pairs = assoc.pairs
    if not pairs:
        return state.copy()
    rates = all_offload_rates(state, config, channels)
    users = sorted({k for _, k in pairs})

    def true_objective(st):
        try:
            return model.barrier_objective(st, config, channels, w,
                                           association=assoc, rates=rates)
        except DomainError:
            return -np.inf

    best = state.copy()
    best_val = true_objective(best)
    current = state.copy()
    z_prev = None
    for _ in range(inner_max):
        z = optimal_z(current, config)
        lo, cap = _rate_bounds(current, config, rates, assoc)

        # rate step: per-user concave 1-D maximization
        r_new = current.r.copy()
        for k in users:
            aps = assoc.aps_of(k)
            fsum = float(np.sum(state.f_nk[aps, k]) * config.kappa_ap
                         * config.cycles_per_bit)
            c_k = (current.t[k] / config.slot_s) * (1.0 - z * fsum)
            if not np.isfinite(w):
                r_new[k] = cap[k] if c_k > 0 else lo[k]
                continue

            def slope(r, k=k, aps=aps, c_k=c_k):
                return c_k - np.sum(1.0 / (rates[aps, k] - r)) / w

            if c_k <= 0.0 or slope(lo[k]) <= 0.0:
                r_new[k] = lo[k]
            elif slope(cap[k]) >= 0.0:
                r_new[k] = cap[k]
            else:
                r_new[k] = brentq(slope, lo[k], cap[k], xtol=1e-12, rtol=1e-12)
        current.r = r_new

        # time step: separable LP solved through the cone core
        t_hi = np.empty(len(users))
        coef = np.empty(len(users))
        for j, k in enumerate(users):
            aps = assoc.aps_of(k)
            fsum = float(np.sum(state.f_nk[aps, k]) * config.kappa_ap
                         * config.cycles_per_bit)
            coef[j] = (current.r[k] / config.slot_s) * (1.0 - z * fsum)
            if current.r[k] > 0.0:
                if state.f_min[k] <= DIV_GUARD:
                    raise BlockFailure(f"zero f_min with positive rate, user {k}")
                t_hi[j] = config.slot_s / (
                    1.0 + config.cycles_per_bit * current.r[k] / state.f_min[k])
            else:
                t_hi[j] = config.slot_s
        n_t = len(users)
        rows = np.vstack([np.eye(n_t), -np.eye(n_t)])
        consts = np.concatenate([np.zeros(n_t), t_hi])
        program = ConicProgram(n_vars=n_t, c=-coef,
                               cones=[Cone("nonneg", rows, consts)])
        report = solve_conic(program)
        if report.status != OPTIMAL or report.x is None:
            raise BlockFailure("time-step linear program failed")
        for j, k in enumerate(users):
            current.t[k] = float(np.clip(report.x[j], 0.0, t_hi[j]))

        val = true_objective(current)
        if val > best_val:
            best, best_val = current.copy(), val
        if z_prev is not None and abs(z - z_prev) <= inner_tol * max(1.0, abs(z)):
            break
        z_prev = z
    return best
