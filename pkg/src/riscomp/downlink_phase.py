"""Downlink RIS phase design: maximize the minimum SINR-cone slack.

The downlink phases never appear in the objective; they only loosen the
downlink SINR constraints. The maximin slack problem is solved with a penalty
method: an unconstrained diagonal matrix chases the slack while a growing
penalty pins it back onto the practical phase-shift manifold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .blocks import BlockFailure, _im_row, _re_row
from .conic import Cone, ConicProgram, INFEASIBLE, armijo_descent, solve_conic
from .model import (DOWNLINK, ChannelSet, DomainError, SolutionState,
                    SystemConfig, ris_coefficients,
                    ris_coefficients_with_derivative, wrap_phase)

# cap on the slack variable so the program stays bounded when every SINR
# constraint is slack (noise-normalized units; physical slacks are O(1..100))
Y_MAX = 1e6
# trust bound on each free diagonal entry; the physical coefficients satisfy
# |rho e^{j theta}| <= 1, so this never binds once the fit residual is small,
# but it keeps the cone program bounded while the penalty is still weak
THETA_MAT_BOUND = 10.0


@dataclass
class PenaltyParams:
    mu0: float = 1e-3
    growth: float = 1.003
    eps1: float = 0.1
    eps2: float = 0.01
    max_outer: int = 2000
    max_inner: int = 50

    def __post_init__(self):
        if self.mu0 <= 0 or self.growth <= 1.0 or self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("penalty parameters out of range")


def _slack_terms(theta_or_diag, state: SolutionState, config: SystemConfig,
                 channels: ChannelSet):
    """Per-user SOC slacks at either a phase vector or a free diagonal."""
    if np.iscomplexobj(theta_or_diag):
        chi = np.asarray(theta_or_diag)
    else:
        chi = ris_coefficients(theta_or_diag, config.phase_params)
    iota = (channels.h_d_dl
            + np.einsum("nml,km->nkl", channels.g_dl.conj(),
                        chi[None, :] * channels.h_r_dl))
    offl = model.offloading_users(state)
    slacks = {}
    for k in offl:
        e = np.einsum("nl,njl->j", iota[:, k, :].conj(), state.v_dl)
        coherent = float(np.real(e[k]))
        interf2 = float(np.sum(np.abs(e) ** 2) - np.abs(e[k]) ** 2)
        slacks[k] = (coherent / np.sqrt(config.sinr_targets[k])
                     - np.sqrt(interf2 + config.noise_user_w))
    return slacks


def min_soc_slack(theta_dl: np.ndarray, state: SolutionState,
                  config: SystemConfig, channels: ChannelSet) -> float:
    """Minimum over offloading users of (RHS - LHS) of the downlink SINR
    second-order-cone constraint, in sqrt-Watt units."""
    slacks = _slack_terms(np.asarray(theta_dl, dtype=float), state, config,
                          channels)
    if not slacks:
        raise DomainError("no offloading user: maximin slack undefined")
    return float(min(slacks.values()))


def fit_theta_step(theta_dl: np.ndarray, target_diag: np.ndarray,
                   config: SystemConfig, max_iters: int = 40) -> np.ndarray:
    """Pull phases toward a free diagonal: minimize |T_m - rho(t)e^{jt}|^2
    per element (the Frobenius norm separates over the diagonal).

    The per-element objective is multimodal over the circle, so a coarse grid
    seeds a joint backtracking descent; the incumbent competes as a seed too.
    """
    target = np.asarray(target_diag, dtype=complex)
    theta = np.asarray(theta_dl, dtype=float).copy()
    grid = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)

    def values(t):
        return np.abs(target - ris_coefficients(t, config.phase_params)) ** 2

    def fg(t):
        chi, dchi = ris_coefficients_with_derivative(t, config.phase_params)
        diff = chi - target
        return float(np.sum(np.abs(diff) ** 2)), 2.0 * np.real(np.conj(diff) * dchi)

    chi_grid = ris_coefficients(grid, config.phase_params)        # (64,)
    grid_fit = np.abs(target[None, :] - chi_grid[:, None]) ** 2   # (64, M)
    seeds = grid[np.argmin(grid_fit, axis=0)]
    incumbent_fit = values(theta)
    seed_fit = np.min(grid_fit, axis=0)
    start = np.where(incumbent_fit <= seed_fit, theta, seeds)
    # a strict sufficient-decrease constant prevents the accepted step from
    # ping-ponging across each element's minimum
    result = armijo_descent(fg, start, c_armijo=0.25, max_iters=max_iters,
                            grad_tol=1e-8)
    # the joint step couples elements; keep whichever per-element value wins
    out = np.where(values(result.x) <= values(start), result.x, start)
    return wrap_phase(out)


def theta_matrix_step(theta_dl: np.ndarray, state: SolutionState,
                      config: SystemConfig, channels: ChannelSet,
                      mu: float):
    """Cone program over the free diagonal and the slack level.

    maximize y - mu * ||Theta - diag(rho e^{j theta})||_F^2 subject to every
    offloading user's SOC slack >= y, |Theta_m| <= THETA_MAT_BOUND, and
    y <= Y_MAX. The program works in noise-normalized slack units (y and the
    penalty wear the same scaling, so the mu schedule is scale-free).
    """
    theta_dl = np.asarray(theta_dl, dtype=float)
    m_count = theta_dl.shape[0]
    chi0 = ris_coefficients(theta_dl, config.phase_params)
    offl = model.offloading_users(state)
    if offl.size == 0:
        raise DomainError("no offloading user in theta-matrix step")
    sscale = np.sqrt(config.noise_user_w)

    # layout: [Theta (interleaved complex, 2M) | y | q]
    off_y = 2 * m_count
    off_q = off_y + 1
    n_vars = off_q + 1
    c = np.zeros(n_vars)
    c[off_y] = -1.0          # maximize y
    c[off_q] = mu            # minus mu * fit

    cones = []
    # q >= ||Theta - chi0||^2 as a rotated cone
    F = np.zeros((2 * m_count + 2, n_vars))
    g = np.zeros(2 * m_count + 2)
    F[0, off_q] = 1.0
    g[0] = 1.0
    F[1:1 + 2 * m_count, :2 * m_count] = 2.0 * np.eye(2 * m_count)
    g[1:1 + 2 * m_count] = -2.0 * np.column_stack([chi0.real, chi0.imag]).ravel()
    F[-1, off_q] = 1.0
    g[-1] = -1.0
    cones.append(Cone("soc", F, g))

    # per user: slack(Theta) - y >= ||interference, sigma|| in noise units
    # e_l(Theta) = sum_n iota_nk(Theta)^H v_nl is affine in (Re Theta, Im Theta)
    for k in offl:
        rows, consts = [], []
        # coefficient tables: e_l = const_l + sum_m conj(Theta_m) * w_l[m]
        # with w_l[m] = conj(h_r_dl[k, m]) * sum_n [G_n v_nl]_m
        gv = np.einsum("nml,njl->njm", channels.g_dl, state.v_dl)   # (N,K,M)
        w = np.conj(channels.h_r_dl[k])[None, :] * gv.sum(axis=0)   # (K,M)
        const = np.einsum("nl,njl->j", channels.h_d_dl[:, k, :].conj(),
                          state.v_dl)                                # (K,)
        inv = 1.0 / sscale
        grow = np.zeros(n_vars)
        # Re(conj(Theta_m) w) = Re(w)*Re(Theta) + Im(w)*Im(Theta)
        grow[:2 * m_count:2] = w[k].real
        grow[1:2 * m_count:2] = w[k].imag
        grow *= inv / np.sqrt(config.sinr_targets[k])
        grow[off_y] = -1.0
        c0 = float(const[k].real) * inv / np.sqrt(config.sinr_targets[k])
        rows.append(grow)
        consts.append(c0)
        for l in range(config.n_users):
            if l == k:
                continue
            row_re = np.zeros(n_vars)
            row_re[:2 * m_count:2] = w[l].real
            row_re[1:2 * m_count:2] = w[l].imag
            row_im = np.zeros(n_vars)
            row_im[:2 * m_count:2] = w[l].imag
            row_im[1:2 * m_count:2] = -w[l].real
            rows.append(row_re * inv)
            consts.append(float(const[l].real) * inv)
            rows.append(row_im * inv)
            consts.append(float(const[l].imag) * inv)
        rows.append(np.zeros(n_vars))
        consts.append(1.0)   # sigma / sscale
        cones.append(Cone("soc", np.vstack(rows), np.array(consts)))

    # y cap (normalized units) and the trust ball on each diagonal entry
    row = np.zeros(n_vars)
    row[off_y] = -1.0
    cones.append(Cone("nonneg", row[None, :], np.array([Y_MAX])))
    for m in range(m_count):
        F = np.zeros((3, n_vars))
        g = np.zeros(3)
        g[0] = THETA_MAT_BOUND
        F[1, 2 * m] = 1.0
        F[2, 2 * m + 1] = 1.0
        cones.append(Cone("soc", F, g))

    report = solve_conic(ConicProgram(n_vars=n_vars, c=c, cones=cones))
    if report.x is None or report.status == INFEASIBLE:
        raise BlockFailure("theta-matrix cone step failed")
    if report.status != "optimal" and report.max_violation > 1e-5:
        raise BlockFailure("theta-matrix cone step did not converge")
    theta_mat = report.x[:2 * m_count:2] + 1j * report.x[1:2 * m_count:2]
    y = float(report.x[off_y]) * sscale
    return theta_mat, y


def _fit_residual(theta_mat: np.ndarray, theta: np.ndarray,
                  config: SystemConfig) -> float:
    chi = ris_coefficients(theta, config.phase_params)
    return float(np.sum(np.abs(theta_mat - chi) ** 2))


def solve_downlink_phase(state: SolutionState, config: SystemConfig,
                         channels: ChannelSet,
                         penalty_params: PenaltyParams = None,
                         stop_at_feasible: bool = False) -> np.ndarray:
    """Penalty loop: alternate the phase fit and the (Theta, y) cone step,
    growing mu until the fit residual is below eps1.

    Returns phases whose minimum slack is never below the incumbent's. With
    `stop_at_feasible` the loop exits at the first nonnegative-slack profile
    (the feasibility-only benchmark behaviour).
    """
    params = penalty_params or PenaltyParams()
    offl = model.offloading_users(state)
    theta0 = state.theta_dl.copy()
    if offl.size == 0:
        return theta0

    best_theta = theta0.copy()
    best_slack = min_soc_slack(theta0, state, config, channels)
    if stop_at_feasible and best_slack >= 0.0:
        return best_theta

    sscale = np.sqrt(config.noise_user_w)
    theta = theta0.copy()
    theta_mat = ris_coefficients(theta, config.phase_params)
    mu = params.mu0
    for _ in range(params.max_outer):
        prev_obj = None
        for _ in range(params.max_inner):
            theta = fit_theta_step(theta, theta_mat, config)
            try:
                theta_mat, y = theta_matrix_step(theta, state, config,
                                                 channels, mu)
            except BlockFailure:
                return best_theta
            obj = y / sscale - mu * _fit_residual(theta_mat, theta, config)
            slack = min_soc_slack(theta, state, config, channels)
            if slack > best_slack:
                best_slack = slack
                best_theta = theta.copy()
                if stop_at_feasible and best_slack >= 0.0:
                    return best_theta
            if prev_obj is not None and abs(obj - prev_obj) <= (
                    params.eps2 * max(1.0, abs(prev_obj))):
                break
            prev_obj = obj
        if _fit_residual(theta_mat, theta, config) <= params.eps1:
            break
        mu *= params.growth
    final_slack = min_soc_slack(theta, state, config, channels)
    if final_slack > best_slack:
        best_theta, best_slack = theta.copy(), final_slack
    return best_theta
