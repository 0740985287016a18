"""System model: domain types and pure evaluation functions.

Everything here is side-effect free and operates on plain numpy arrays in
linear units (W, Hz, bits/s, seconds, linear SINR).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UPLINK = "uplink"
DOWNLINK = "downlink"

# Relative group-norm threshold: pair (n,k) serves iff its stacked beamformer
# norm exceeds this fraction of the largest group norm.
SERVING_THRESHOLD = 1e-4
# a_k below this is treated as "not offloading" for indicator purposes.
OFFLOAD_TOL = 1e-9
# Denominators below this raise instead of returning inf.
DIV_GUARD = 1e-30


class DomainError(ValueError):
    """A quantity left its mathematical domain (zero beamformer, log of
    a non-positive barrier argument, ...)."""


@dataclass(frozen=True)
class SystemConfig:
    """Scenario parameters. All values linear; conversions happen at load time.

    Units: powers W, frequencies Hz (CPU: cycles/s), times s, task sizes bits,
    noise W, SINR targets linear, kappa W*s^3/cycle^3 under the f^2 power law.
    """

    n_aps: int = 3
    n_users: int = 4
    n_antennas: int = 2
    n_elements: int = 8
    bandwidth_hz: float = 10e6
    user_power_w: float = 0.5
    ap_max_power_w: float = 1.0
    cycles_per_bit: float = 50.0
    kappa_user: float = 8e-18
    kappa_ap: float = 1e-18
    ap_total_freq_hz: float = 3e9
    slot_s: float = 0.5
    latency_cap_s: float = 0.4
    task_bits: float = 3e6
    sinr_target_lin: float = 10.0 ** 0.5    # 5 dB
    noise_ap_w: float = 1e-12
    noise_user_w: float = 1e-12
    # practical phase-shift model (beta_min, phi, alpha)
    phase_params: tuple = (0.2, 0.43 * np.pi, 1.6)
    # mixed l1,2-norm budget; None means "derive from the initial point"
    group_budget: Optional[float] = None
    # geometry defaults
    region_side_m: float = 200.0
    ap_height_m: float = 30.0
    user_height_m: float = 1.0
    ris_pos: tuple = (100.0, 0.0, 15.0)
    reciprocal_channels: bool = False

    def __post_init__(self):
        if min(self.n_aps, self.n_users, self.n_antennas, self.n_elements) < 1:
            raise ValueError("all counts must be >= 1")
        if not self.latency_cap_s < self.slot_s:
            raise ValueError("latency cap must be smaller than the slot length")
        for name in ("bandwidth_hz", "user_power_w", "ap_max_power_w",
                     "cycles_per_bit", "kappa_user", "kappa_ap",
                     "ap_total_freq_hz", "noise_ap_w", "noise_user_w",
                     "task_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sinr_target_lin <= 0:
            raise ValueError("sinr_target_lin must be positive")
        beta_min, _, alpha = self.phase_params
        if not 0.0 <= beta_min <= 1.0:
            raise ValueError("beta_min must lie in [0, 1]")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.group_budget is not None and self.group_budget <= 0:
            raise ValueError("group_budget must be positive when given")

    def with_group_budget(self, beta: float) -> "SystemConfig":
        return replace(self, group_budget=float(beta))

    @property
    def user_powers(self) -> np.ndarray:
        return np.full(self.n_users, self.user_power_w)

    @property
    def sinr_targets(self) -> np.ndarray:
        return np.full(self.n_users, self.sinr_target_lin)


@dataclass
class ChannelSet:
    """All complex channel blocks for one realization.

    h_d_*: (N, K, L) direct links, h_r_*: (K, M) RIS-side user links,
    g_*: (N, M, L) RIS-AP links. Uplink and downlink are separate draws.
    """

    h_d_ul: np.ndarray
    h_r_ul: np.ndarray
    g_ul: np.ndarray
    h_d_dl: np.ndarray
    h_r_dl: np.ndarray
    g_dl: np.ndarray

    def validate(self, config: SystemConfig) -> None:
        n, k, l, m = (config.n_aps, config.n_users, config.n_antennas,
                      config.n_elements)
        expect = {
            "h_d_ul": (n, k, l), "h_r_ul": (k, m), "g_ul": (n, m, l),
            "h_d_dl": (n, k, l), "h_r_dl": (k, m), "g_dl": (n, m, l),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, want {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    def without_ris(self) -> "ChannelSet":
        """RIS removed: reflected links zeroed in both directions."""
        return ChannelSet(
            h_d_ul=self.h_d_ul, h_r_ul=np.zeros_like(self.h_r_ul),
            g_ul=self.g_ul, h_d_dl=self.h_d_dl,
            h_r_dl=np.zeros_like(self.h_r_dl), g_dl=self.g_dl)


@dataclass
class RISProfile:
    """Phase-shift vector, entries wrapped to [0, 2*pi)."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = wrap_phase(np.asarray(self.theta, dtype=float))


def wrap_phase(theta: np.ndarray) -> np.ndarray:
    return np.mod(theta, 2.0 * np.pi)


@dataclass
class SolutionState:
    """One full iterate of the optimization variables."""

    v_ul: np.ndarray        # (N, K, L) complex receive beamformers
    v_dl: np.ndarray        # (N, K, L) complex downlink beamformers
    theta_ul: np.ndarray    # (M,) uplink RIS phases
    theta_dl: np.ndarray    # (M,) downlink RIS phases
    a: np.ndarray           # (K,) power partition in [0, 1]
    t: np.ndarray           # (K,) transmission times in [0, T]
    r: np.ndarray           # (K,) auxiliary rates, bits/s
    f_nk: np.ndarray        # (N, K) edge CPU frequencies, cycles/s
    f_min: np.ndarray       # (K,) auxiliary per-user minimum frequency

    def copy(self) -> "SolutionState":
        return SolutionState(
            v_ul=self.v_ul.copy(), v_dl=self.v_dl.copy(),
            theta_ul=self.theta_ul.copy(), theta_dl=self.theta_dl.copy(),
            a=self.a.copy(), t=self.t.copy(), r=self.r.copy(),
            f_nk=self.f_nk.copy(), f_min=self.f_min.copy())


@dataclass
class Association:
    """serving[n, k] is True iff AP n serves user k."""

    serving: np.ndarray

    def aps_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.serving[:, k])

    def users_of(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.serving[n, :])

    @property
    def pairs(self):
        return list(zip(*np.nonzero(self.serving)))

    def mean_aps_per_user(self) -> float:
        return float(self.serving.sum(axis=0).mean())


def group_norms(state: SolutionState) -> np.ndarray:
    """(N, K) l2 norms of the stacked per-pair beamformers [v_dl; v_ul]."""
    return np.sqrt(np.sum(np.abs(state.v_dl) ** 2, axis=2)
                   + np.sum(np.abs(state.v_ul) ** 2, axis=2))


def group_norm(state: SolutionState) -> float:
    """Mixed l1,2 norm: sum of the per-pair stacked beamformer norms."""
    return float(group_norms(state).sum())


def derive_association(state: SolutionState,
                       threshold: float = SERVING_THRESHOLD) -> Association:
    """Serving pairs from the group-sparsity pattern.

    A pair serves iff its stacked norm exceeds `threshold` times the largest
    stacked norm (scale-free, robust to solver tolerance).
    """
    norms = group_norms(state)
    top = norms.max()
    if top <= 0.0:
        return Association(serving=np.zeros(norms.shape, dtype=bool))
    return Association(serving=norms > threshold * top)


def offloading_users(state: SolutionState, tol: float = OFFLOAD_TOL) -> np.ndarray:
    return np.flatnonzero(state.a > tol)


def amplitude(theta, phase_params) -> np.ndarray:
    """Reflection amplitude rho(theta) of the practical phase-shift model."""
    beta_min, phi, alpha = phase_params
    s = (np.sin(np.asarray(theta, dtype=float) - phi) + 1.0) / 2.0
    return (1.0 - beta_min) * s ** alpha + beta_min


def amplitude_derivative(theta, phase_params) -> np.ndarray:
    """d rho / d theta (zero at the support endpoints when alpha < 1)."""
    beta_min, phi, alpha = phase_params
    theta = np.asarray(theta, dtype=float)
    s = (np.sin(theta - phi) + 1.0) / 2.0
    if alpha == 0:
        return np.zeros_like(theta)
    # s^(alpha-1) diverges at s=0 for alpha<1; the product with cos stays finite
    # only for alpha>=1, so clamp s away from zero.
    s = np.maximum(s, 1e-12)
    return (1.0 - beta_min) * alpha * s ** (alpha - 1.0) * 0.5 * np.cos(theta - phi)


def ris_coefficients(theta, phase_params) -> np.ndarray:
    """Diagonal entries rho(theta) * exp(j*theta) of the RIS matrix."""
    theta = np.asarray(theta, dtype=float)
    return amplitude(theta, phase_params) * np.exp(1j * theta)


def ris_coefficient_derivative(theta, phase_params) -> np.ndarray:
    """d/d theta of rho(theta) * exp(j*theta)."""
    theta = np.asarray(theta, dtype=float)
    rho = amplitude(theta, phase_params)
    drho = amplitude_derivative(theta, phase_params)
    return (drho + 1j * rho) * np.exp(1j * theta)


def ris_coefficients_with_derivative(theta, phase_params):
    """(chi, dchi/dtheta) with the trigonometry evaluated once."""
    beta_min, phi, alpha = phase_params
    theta = np.asarray(theta, dtype=float)
    shifted = theta - phi
    s = (np.sin(shifted) + 1.0) / 2.0
    if alpha == 0:
        rho = np.full_like(theta, 1.0)
        drho = np.zeros_like(theta)
    else:
        s_safe = np.maximum(s, 1e-12)
        rho = (1.0 - beta_min) * s_safe ** alpha + beta_min
        drho = ((1.0 - beta_min) * alpha * s_safe ** (alpha - 1.0)
                * 0.5 * np.cos(shifted))
    phase = np.exp(1j * theta)
    return rho * phase, (drho + 1j * rho) * phase


def effective_channel(channels: ChannelSet, profile, direction: str,
                      n: int, k: int, phase_params) -> np.ndarray:
    """Equivalent baseband channel h_d + G^H Theta h_r for one (n, k) pair."""
    theta = profile.theta if isinstance(profile, RISProfile) else np.asarray(profile)
    chi = ris_coefficients(theta, phase_params)
    if direction == UPLINK:
        h_d, h_r, g = channels.h_d_ul[n, k], channels.h_r_ul[k], channels.g_ul[n]
    elif direction == DOWNLINK:
        h_d, h_r, g = channels.h_d_dl[n, k], channels.h_r_dl[k], channels.g_dl[n]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if h_r.shape[0] != g.shape[0]:
        raise ValueError("RIS dimensions of h_r and G disagree")
    return h_d + g.conj().T @ (chi * h_r)


def effective_channels_all(channels: ChannelSet, theta: np.ndarray,
                           direction: str, phase_params) -> np.ndarray:
    """(N, K, L) equivalent channels for every pair at once."""
    chi = ris_coefficients(theta, phase_params)
    if direction == UPLINK:
        h_d, h_r, g = channels.h_d_ul, channels.h_r_ul, channels.g_ul
    else:
        h_d, h_r, g = channels.h_d_dl, channels.h_r_dl, channels.g_dl
    # (N,M,L)^H applied per AP to (K,M) scaled user vectors -> (N,K,L)
    reflected = np.einsum("nml,km->nkl", g.conj(), chi[None, :] * h_r)
    return h_d + reflected


def uplink_sinr(state: SolutionState, config: SystemConfig,
                channels: ChannelSet, n: int, k: int) -> float:
    """Linear uplink SINR at AP n for user k (invariant to scaling of v)."""
    v = state.v_ul[n, k]
    vnorm2 = float(np.vdot(v, v).real)
    if vnorm2 <= DIV_GUARD:
        raise DomainError(f"zero uplink beamformer at pair ({n}, {k})")
    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)[n]
    p = state.a * config.user_powers
    gains = np.abs(iota.conj() @ v) ** 2           # (K,) |v^H iota_nl|^2
    interference = float(np.sum(p * gains) - p[k] * gains[k])
    denom = interference + config.noise_ap_w * vnorm2
    return float(p[k] * gains[k] / denom)


def downlink_sinr(state: SolutionState, config: SystemConfig,
                  channels: ChannelSet, k: int) -> float:
    """Linear downlink SINR at user k (zero beamformers drop out)."""
    iota_k = effective_channels_all(channels, state.theta_dl, DOWNLINK,
                                    config.phase_params)[:, k, :]   # (N, L)
    # e_l = sum_n iota_nk^H v_nl, coherent across APs
    e = np.einsum("nl,njl->j", iota_k.conj(), state.v_dl)           # (K,)
    signal = np.abs(e[k]) ** 2
    interference = float(np.sum(np.abs(e) ** 2) - signal)
    return float(signal / (interference + config.noise_user_w))


def offload_rate(state: SolutionState, config: SystemConfig,
                 channels: ChannelSet, n: int, k: int) -> float:
    """Achievable offloading rate B log2(1 + SINR) in bits/s."""
    return config.bandwidth_hz * np.log2(1.0 + uplink_sinr(state, config,
                                                           channels, n, k))


def all_offload_rates(state: SolutionState, config: SystemConfig,
                      channels: ChannelSet) -> np.ndarray:
    """(N, K) rates; pairs with zero v_ul get rate 0 (they never serve)."""
    iota = effective_channels_all(channels, state.theta_ul, UPLINK,
                                  config.phase_params)
    p = state.a * config.user_powers
    rates = np.zeros((config.n_aps, config.n_users))
    for n in range(config.n_aps):
        # gains[k_rx, l_tx] = |v_nk^H iota_nl|^2
        gains = np.abs(np.einsum("kl,jl->kj", state.v_ul[n].conj(), iota[n])) ** 2
        vnorm2 = np.sum(np.abs(state.v_ul[n]) ** 2, axis=1)
        for k in range(config.n_users):
            if vnorm2[k] <= DIV_GUARD:
                continue
            signal = p[k] * gains[k, k]
            interf = float(np.sum(p * gains[k]) - signal)
            denom = interf + config.noise_ap_w * vnorm2[k]
            rates[n, k] = config.bandwidth_hz * np.log2(1.0 + signal / denom)
    return rates


def local_rate(a_k: float, config: SystemConfig, k: int = 0) -> float:
    """Local computing rate (1/C) sqrt((1-a) P / kappa) in bits/s."""
    a_k = float(a_k)
    if not 0.0 <= a_k <= 1.0 + 1e-12:
        raise ValueError("power partition outside [0, 1]")
    a_k = min(a_k, 1.0)
    return (np.sqrt((1.0 - a_k) * config.user_power_w / config.kappa_user)
            / config.cycles_per_bit)


def local_rates(state: SolutionState, config: SystemConfig) -> np.ndarray:
    a = np.clip(state.a, 0.0, 1.0)
    return (np.sqrt((1.0 - a) * config.user_power_w / config.kappa_user)
            / config.cycles_per_bit)


def total_power(state: SolutionState, config: SystemConfig,
                association: Association) -> float:
    """System power: user budgets + downlink transmit + edge computation (W)."""
    serving = association.serving
    dl_power = np.sum(np.abs(state.v_dl) ** 2, axis=2)
    compute = (config.cycles_per_bit * state.t[None, :] * state.r[None, :]
               * state.f_nk * config.kappa_ap / config.slot_s)
    return float(config.n_users * config.user_power_w
                 + np.sum(serving * (dl_power + compute)))


def latency(state: SolutionState, config: SystemConfig, n: int, k: int) -> float:
    """Offloading plus edge-computation latency for pair (n, k) in seconds.

    The computation term carries the cycles/bit factor so both terms are in
    seconds. Nonpositive remaining bits mean the task finishes locally.
    """
    bits = config.task_bits - config.slot_s * local_rate(state.a[k], config, k)
    if bits <= 0.0:
        return 0.0
    if state.r[k] <= DIV_GUARD or state.f_nk[n, k] <= DIV_GUARD:
        raise DomainError(f"nonpositive rate or frequency for serving pair ({n}, {k})")
    return float(bits / state.r[k]
                 + config.cycles_per_bit * bits / state.f_nk[n, k])


def offload_bits(state: SolutionState, config: SystemConfig) -> np.ndarray:
    """(K,) bits left for offloading, U_k - T * R_loc(a_k), floored at 0."""
    return np.maximum(config.task_bits - config.slot_s * local_rates(state, config),
                      0.0)


def computation_efficiency(state: SolutionState, config: SystemConfig,
                           channels: ChannelSet,
                           association: Optional[Association] = None) -> float:
    """Plain computation efficiency in bits/Joule, using true per-AP rates.

    Numerator uses min-over-serving-APs offload rates so the value is
    comparable across benchmark modes regardless of the auxiliary rates.
    """
    if association is None:
        association = derive_association(state)
    rates = all_offload_rates(state, config, channels)
    num = 0.0
    for k in range(config.n_users):
        aps = association.aps_of(k)
        if aps.size == 0:
            if state.a[k] > OFFLOAD_TOL:
                raise DomainError(f"user {k} offloads but has no serving AP")
            continue
        num += state.t[k] * rates[aps, k].min() / config.slot_s
    num += float(local_rates(state, config).sum())
    denom = total_power(state, config, association)
    if denom <= DIV_GUARD:
        raise DomainError("nonpositive total power")
    return num / denom


def auxiliary_objective(state: SolutionState, config: SystemConfig,
                        association: Optional[Association] = None) -> float:
    """The reformulated objective: auxiliary-rate numerator over total power."""
    if association is None:
        association = derive_association(state)
    num = float(np.sum(state.t * state.r) / config.slot_s
                + local_rates(state, config).sum())
    return num / total_power(state, config, association)


def barrier_objective(state: SolutionState, config: SystemConfig,
                      channels: ChannelSet, w: float,
                      association: Optional[Association] = None,
                      rates: Optional[np.ndarray] = None) -> float:
    """Log-barrier objective: auxiliary CE plus (1/w) sum log(R_nk - r_k)."""
    if association is None:
        association = derive_association(state)
    if rates is None:
        rates = all_offload_rates(state, config, channels)
    value = auxiliary_objective(state, config, association)
    if not np.isfinite(w):
        return value
    for n, k in association.pairs:
        slack = rates[n, k] - state.r[k]
        if slack <= 0.0:
            raise DomainError(
                f"barrier domain violated at pair ({n}, {k}): "
                f"R={rates[n, k]:.6g} <= r={state.r[k]:.6g}")
        value += np.log(slack) / w
    return float(value)


@dataclass
class ConstraintReport:
    """Signed residuals of every constraint family; >= 0 means satisfied.

    Units: partition (dimensionless), latency/time (s), dl_sinr (linear SINR),
    ap_power (W), phase (rad), rate_floor (bits/s), freq_* (cycles/s),
    group_budget (sqrt-W norm units). Vacuous per-pair entries are +inf.
    """

    partition_lo: np.ndarray
    partition_hi: np.ndarray
    latency: np.ndarray
    dl_sinr: np.ndarray
    ap_power: np.ndarray
    phase_wrap: np.ndarray
    time_budget: np.ndarray
    rate_floor: np.ndarray
    freq_floor: np.ndarray
    freq_capacity: np.ndarray
    freq_nonneg: np.ndarray
    group_budget: np.ndarray

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in (
            "partition_lo", "partition_hi", "latency", "dl_sinr", "ap_power",
            "phase_wrap", "time_budget", "rate_floor", "freq_floor",
            "freq_capacity", "freq_nonneg", "group_budget")}

    def min_residual(self) -> float:
        worst = np.inf
        for arr in self.as_dict().values():
            finite = arr[np.isfinite(arr)] if arr.size else arr
            if finite.size:
                worst = min(worst, float(finite.min()))
            if np.any(np.isneginf(arr)):
                return float("-inf")
        return worst

    def worst_name(self) -> str:
        name, val = "", np.inf
        for key, arr in self.as_dict().items():
            if arr.size == 0:
                continue
            m = float(np.min(arr))
            if m < val:
                name, val = key, m
        return name


def constraint_report(state: SolutionState, config: SystemConfig,
                      channels: ChannelSet) -> ConstraintReport:
    """Residuals of every constraint of the sparsity-reformulated problem."""
    n_aps, n_users = config.n_aps, config.n_users
    assoc = derive_association(state)
    serving = assoc.serving
    offl = state.a > OFFLOAD_TOL
    rates = all_offload_rates(state, config, channels)
    bits = config.task_bits - config.slot_s * local_rates(state, config)

    lat = np.full((n_aps, n_users), np.inf)
    rate_fl = np.full((n_aps, n_users), np.inf)
    freq_fl = np.full((n_aps, n_users), np.inf)
    for n, k in assoc.pairs:
        rate_fl[n, k] = rates[n, k] - state.r[k]
        freq_fl[n, k] = state.f_nk[n, k] - state.f_min[k]
        if bits[k] <= 0.0:
            lat[n, k] = config.latency_cap_s
        elif state.r[k] <= DIV_GUARD or state.f_nk[n, k] <= DIV_GUARD:
            lat[n, k] = -np.inf
        else:
            lat[n, k] = config.latency_cap_s - (
                bits[k] / state.r[k]
                + config.cycles_per_bit * bits[k] / state.f_nk[n, k])

    dl = np.zeros(n_users)
    for k in np.flatnonzero(offl):
        dl[k] = downlink_sinr(state, config, channels, k) - config.sinr_targets[k]

    time_budget = np.empty(n_users)
    for k in range(n_users):
        load = config.cycles_per_bit * state.t[k] * state.r[k]
        if load <= 0.0:
            time_budget[k] = config.slot_s - state.t[k]
        elif state.f_min[k] <= DIV_GUARD:
            time_budget[k] = -np.inf
        else:
            time_budget[k] = config.slot_s - state.t[k] - load / state.f_min[k]

    theta = np.concatenate([state.theta_ul, state.theta_dl])
    wrap = np.array([0.0 if np.all((theta >= 0) & (theta < 2 * np.pi))
                     else -float(np.max(np.maximum(theta - 2 * np.pi, -theta)))])

    beta = config.group_budget
    budget = np.array([np.inf if beta is None else beta - group_norm(state)])

    return ConstraintReport(
        partition_lo=state.a.copy(),
        partition_hi=1.0 - state.a,
        latency=lat,
        dl_sinr=dl,
        ap_power=config.ap_max_power_w - np.sum(np.abs(state.v_dl) ** 2,
                                                axis=(1, 2)),
        phase_wrap=wrap,
        time_budget=time_budget,
        rate_floor=rate_fl,
        freq_floor=freq_fl,
        freq_capacity=config.ap_total_freq_hz - state.f_nk.sum(axis=1),
        freq_nonneg=state.f_nk.flatten().copy(),
        group_budget=budget,
    )


def zero_state(config: SystemConfig) -> SolutionState:
    n, k, l, m = (config.n_aps, config.n_users, config.n_antennas,
                  config.n_elements)
    return SolutionState(
        v_ul=np.zeros((n, k, l), dtype=complex),
        v_dl=np.zeros((n, k, l), dtype=complex),
        theta_ul=np.zeros(m), theta_dl=np.zeros(m),
        a=np.zeros(k), t=np.zeros(k), r=np.zeros(k),
        f_nk=np.zeros((n, k)), f_min=np.zeros(k))
