"""Independent brute-force oracles for the derived numerical checks.

Every check re-derives its expected values through a route independent of the
production code path (explicit scalar loops, finite differences, vertex
enumeration, bisection, dense grids) and reports pass/fail with a detail
string. The command-line `oracle-suite` subcommand runs them all.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .. import blocks, model
from ..conic import Cone, ConicProgram, armijo_descent, solve_conic
from ..model import ChannelSet, SystemConfig, zero_state


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def tiny_instance(rng: np.random.Generator, n_max=4, k_max=4, l_max=4, m_max=4):
    """Random small instance with a strictly interior state."""
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(1, k_max + 1))
    l = int(rng.integers(1, l_max + 1))
    m = int(rng.integers(1, m_max + 1))
    config = SystemConfig(n_aps=n, n_users=k, n_antennas=l, n_elements=m,
                          noise_ap_w=0.01, noise_user_w=0.02,
                          user_power_w=0.5, group_budget=1e6)

    def cmat(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    channels = ChannelSet(
        h_d_ul=cmat(n, k, l), h_r_ul=cmat(k, m), g_ul=cmat(n, m, l),
        h_d_dl=cmat(n, k, l), h_r_dl=cmat(k, m), g_dl=cmat(n, m, l))
    state = zero_state(config)
    state.v_ul = cmat(n, k, l)
    state.v_dl = cmat(n, k, l) * 0.3
    state.theta_ul = rng.uniform(0, 2 * np.pi, m)
    state.theta_dl = rng.uniform(0, 2 * np.pi, m)
    state.a = rng.uniform(0.2, 0.9, k)
    state.t = rng.uniform(0.05, 0.4, k)
    state.f_nk = rng.uniform(1e8, 5e8, (n, k))
    state.f_min = state.f_nk.min(axis=0)
    rates = model.all_offload_rates(state, config, channels)
    state.r = 0.5 * rates.min(axis=0)
    return config, channels, state


def _loop_effective_channel(channels, theta, config, direction, n, k):
    m_count = config.n_elements
    l_count = config.n_antennas
    beta_min, phi, alpha = config.phase_params
    if direction == model.UPLINK:
        h_d, h_r, g = channels.h_d_ul[n, k], channels.h_r_ul[k], channels.g_ul[n]
    else:
        h_d, h_r, g = channels.h_d_dl[n, k], channels.h_r_dl[k], channels.g_dl[n]
    out = []
    for li in range(l_count):
        acc = complex(h_d[li])
        for mi in range(m_count):
            rho = (1 - beta_min) * ((np.sin(theta[mi] - phi) + 1) / 2) ** alpha + beta_min
            chi = rho * complex(np.cos(theta[mi]), np.sin(theta[mi]))
            acc += np.conj(g[mi, li]) * chi * h_r[mi]
        out.append(acc)
    return np.array(out)


def _loop_uplink_sinr(state, config, channels, n, k):
    iota = [
        _loop_effective_channel(channels, state.theta_ul, config, model.UPLINK,
                                n, l) for l in range(config.n_users)]
    v = state.v_ul[n, k]
    sig = 0.0 + 0.0j
    for li in range(config.n_antennas):
        sig += np.conj(v[li]) * iota[k][li]
    num = state.a[k] * config.user_power_w * abs(sig) ** 2
    den = 0.0
    for l in range(config.n_users):
        if l == k:
            continue
        cross = 0.0 + 0.0j
        for li in range(config.n_antennas):
            cross += np.conj(v[li]) * iota[l][li]
        den += state.a[l] * config.user_power_w * abs(cross) ** 2
    vnorm2 = sum(abs(v[li]) ** 2 for li in range(config.n_antennas))
    den += config.noise_ap_w * vnorm2
    return num / den


def _loop_downlink_sinr(state, config, channels, k):
    e = [0.0 + 0.0j] * config.n_users
    for l in range(config.n_users):
        for n in range(config.n_aps):
            iota = _loop_effective_channel(channels, state.theta_dl, config,
                                           model.DOWNLINK, n, k)
            for li in range(config.n_antennas):
                e[l] += np.conj(iota[li]) * state.v_dl[n, l, li]
    num = abs(e[k]) ** 2
    den = config.noise_user_w
    for l in range(config.n_users):
        if l != k:
            den += abs(e[l]) ** 2
    return num / den


def _loop_total_power(state, config, assoc):
    total = config.n_users * config.user_power_w
    for n in range(config.n_aps):
        for k in range(config.n_users):
            if not assoc.serving[n, k]:
                continue
            vpow = sum(abs(state.v_dl[n, k, li]) ** 2
                       for li in range(config.n_antennas))
            comp = (config.cycles_per_bit * state.t[k] * state.r[k]
                    * state.f_nk[n, k] * config.kappa_ap / config.slot_s)
            total += vpow + comp
    return total


def _loop_group_norm(state):
    n, k, _ = state.v_dl.shape
    total = 0.0
    for i in range(n):
        for j in range(k):
            sq = 0.0
            for x in state.v_dl[i, j]:
                sq += abs(x) ** 2
            for x in state.v_ul[i, j]:
                sq += abs(x) ** 2
            total += np.sqrt(sq)
    return total


def check_model_loop_oracle(instances: int = 100, seed: int = 11) -> CheckResult:
    """total_power, SINRs, CE, group_norm vs scalar loops, rel 1e-10."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        config, channels, state = tiny_instance(rng)
        assoc = model.derive_association(state)

        def rel(a, b):
            return abs(a - b) / max(abs(b), 1e-300)

        n0 = int(rng.integers(config.n_aps))
        k0 = int(rng.integers(config.n_users))
        worst = max(worst, rel(model.uplink_sinr(state, config, channels, n0, k0),
                               _loop_uplink_sinr(state, config, channels, n0, k0)))
        worst = max(worst, rel(model.downlink_sinr(state, config, channels, k0),
                               _loop_downlink_sinr(state, config, channels, k0)))
        worst = max(worst, rel(model.total_power(state, config, assoc),
                               _loop_total_power(state, config, assoc)))
        worst = max(worst, rel(model.group_norm(state), _loop_group_norm(state)))
        ce_loop_num = 0.0
        rates = model.all_offload_rates(state, config, channels)
        for k in range(config.n_users):
            aps = assoc.aps_of(k)
            if aps.size:
                ce_loop_num += state.t[k] * min(rates[n, k] for n in aps) / config.slot_s
            ce_loop_num += model.local_rate(state.a[k], config, k)
        ce_loop = ce_loop_num / _loop_total_power(state, config, assoc)
        worst = max(worst, rel(model.computation_efficiency(state, config,
                                                            channels, assoc),
                               ce_loop))
        eff = model.effective_channel(channels, state.theta_ul, model.UPLINK,
                                      n0, k0, config.phase_params)
        loop_eff = _loop_effective_channel(channels, state.theta_ul, config,
                                           model.UPLINK, n0, k0)
        worst = max(worst, float(np.max(np.abs(eff - loop_eff))
                                 / max(np.max(np.abs(loop_eff)), 1e-300)))
    return CheckResult("model_loop_oracle", worst <= 1e-10,
                       f"max relative error {worst:.3e} over {instances} instances")


def check_gradient_finite_difference(instances: int = 100,
                                     seed: int = 23) -> CheckResult:
    """Analytic uplink-phase gradient vs central differences, rel 1e-5."""
    rng = np.random.default_rng(seed)
    step = 1e-6
    worst = 0.0
    for _ in range(instances):
        config, channels, state = tiny_instance(rng, m_max=8)
        pairs = model.derive_association(state).pairs
        if not pairs:
            continue

        def value(theta):
            rates_t = model.all_offload_rates(
                _with_theta(state, theta), config, channels)
            total = 0.0
            for n, k in pairs:
                slack = rates_t[n, k] - state.r[k]
                if slack <= 0:
                    return -np.inf
                total += np.log(slack)
            return total

        _, grad = blocks._uplink_phase_value_grad(state.theta_ul, state,
                                                  config, channels, pairs)
        fd = np.zeros_like(grad)
        for m in range(config.n_elements):
            up, dn = state.theta_ul.copy(), state.theta_ul.copy()
            up[m] += step
            dn[m] -= step
            fd[m] = (value(up) - value(dn)) / (2 * step)
        err = float(np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-12))
        worst = max(worst, err)
    return CheckResult("uplink_phase_gradient_fd", worst <= 1e-5,
                       f"max relative error {worst:.3e} over {instances} instances")


def _with_theta(state, theta):
    st = state.copy()
    st.theta_ul = np.asarray(theta, dtype=float)
    return st


def check_auxiliary_stationarity(instances: int = 100,
                                 seed: int = 31) -> CheckResult:
    """+-1% perturbations of s*, o*, z* never increase their surrogates."""
    rng = np.random.default_rng(seed)
    tol = 1e-10
    ok = True
    worst = ""
    for i in range(instances):
        config, channels, state = tiny_instance(rng)
        pairs = model.derive_association(state).pairs
        if not pairs:
            continue
        n0, k0 = pairs[int(rng.integers(len(pairs)))]
        u, d = blocks._uplink_terms(state, config, channels, n0, k0)
        p_k = state.a[k0] * config.user_power_w

        def q_of(s):
            return (1.0 + 2.0 * np.real(np.conj(s) * np.sqrt(p_k)
                                        * np.conj(u[k0]))
                    - abs(s) ** 2 * d)

        s_star = np.sqrt(p_k) * np.conj(u[k0]) / d
        base = q_of(s_star)
        for pert in (1.01, 0.99, 1 + 0.01j, 1 - 0.01j):
            if q_of(s_star * pert) > base + tol * abs(base):
                ok, worst = False, f"s* fails at instance {i}"

        o_star = np.sqrt(p_k) * abs(u[k0]) / d

        def e_of(o):
            return 1.0 + 2.0 * o * np.sqrt(p_k) * abs(u[k0]) - o ** 2 * d

        base = e_of(o_star)
        for pert in (1.01, 0.99):
            if e_of(o_star * pert) > base + tol * abs(base):
                ok, worst = False, f"o* fails at instance {i}"

        assoc = model.derive_association(state)
        z_star = blocks.optimal_z(state, config)
        num = float(np.sum(state.t * state.r) / config.slot_s
                    + model.local_rates(state, config).sum())
        den = model.total_power(state, config, assoc)

        def h_of(z):
            # antiderivative of the Dinkelbach residual num - z*den; its
            # unique maximizer is the ratio num/den
            return 2 * z * num - z ** 2 * den

        base = h_of(z_star)
        for pert in (1.01, 0.99):
            if h_of(z_star * pert) > base + tol * abs(base):
                ok, worst = False, f"z* fails at instance {i}"
    return CheckResult("auxiliary_stationarity", ok,
                       worst or f"all perturbations decreased over {instances} instances")


def _enumerate_lp_minimum(c, rows, consts):
    """Brute-force LP minimum via basic-solution enumeration.

    Constraints rows @ x + consts >= 0; assumes a bounded feasible set.
    """
    d = c.shape[0]
    best = np.inf
    m = rows.shape[0]
    for combo in itertools.combinations(range(m), d):
        a = rows[list(combo)]
        b = -consts[list(combo)]
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if np.all(rows @ x + consts >= -1e-9):
            best = min(best, float(c @ x))
    return best


def check_lp_vertex_oracle(count: int = 50, seed: int = 5) -> CheckResult:
    """solve_conic vs vertex enumeration on random bounded LPs, d <= 5."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        d = int(rng.integers(2, 6))
        c = rng.standard_normal(d)
        a = rng.standard_normal((d + 2, d))
        b = rng.uniform(0.5, 2.0, d + 2)     # x = 0 strictly feasible
        rows = np.vstack([-a, np.eye(d), -np.eye(d)])
        consts = np.concatenate([b, 5.0 * np.ones(d), 5.0 * np.ones(d)])
        program = ConicProgram(n_vars=d, c=c,
                               cones=[Cone("nonneg", rows, consts)])
        report = solve_conic(program)
        if report.status != "optimal":
            return CheckResult("conic_lp_vertex_oracle", False,
                               f"solver status {report.status}")
        brute = _enumerate_lp_minimum(c, rows, consts)
        rel = abs(report.objective - brute) / max(abs(brute), 1.0)
        worst = max(worst, rel)
    return CheckResult("conic_lp_vertex_oracle", worst <= 1e-6,
                       f"max relative gap {worst:.3e} over {count} LPs")


def check_soc_bisection_oracle(count: int = 50, seed: int = 7) -> CheckResult:
    """1-D SOC problems vs interval bisection."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        a1 = rng.uniform(0.5, 2.0) * rng.choice([-1, 1])
        b1 = rng.uniform(-1, 1)
        c1 = rng.uniform(0.1, 1.0)
        a2 = abs(a1) * rng.uniform(0.1, 0.8)   # keeps the feasible set bounded
        b2 = np.hypot(b1, c1) + rng.uniform(0.5, 2.0)
        c_obj = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)

        def feasible(x):
            return a2 * x + b2 - np.hypot(a1 * x + b1, c1) >= 0

        # the feasible set is an interval containing 0; bisect both endpoints
        def endpoint(direction):
            lo, hi = 0.0, direction
            grow = 0
            while feasible(hi) and grow < 80:
                lo, hi = hi, hi * 2.0
                grow += 1
            if grow >= 80:
                return hi
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if feasible(mid):
                    lo = mid
                else:
                    hi = mid
            return lo

        x_lo, x_hi = endpoint(-1.0), endpoint(1.0)
        brute = c_obj * (x_lo if c_obj > 0 else x_hi)

        F = np.array([[a2], [a1], [0.0]])
        g = np.array([b2, b1, c1])
        program = ConicProgram(n_vars=1, c=np.array([c_obj]),
                               cones=[Cone("soc", F, g)])
        report = solve_conic(program)
        if report.status != "optimal":
            return CheckResult("conic_soc_bisection_oracle", False,
                               f"solver status {report.status}")
        rel = abs(report.objective - brute) / max(abs(brute), 1.0)
        worst = max(worst, rel)
    return CheckResult("conic_soc_bisection_oracle", worst <= 1e-6,
                       f"max relative gap {worst:.3e} over {count} problems")


def check_armijo_rosenbrock() -> CheckResult:
    def rosen(x):
        val = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        grad = np.array([
            -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
            200 * (x[1] - x[0] ** 2)])
        return val, grad

    result = armijo_descent(rosen, np.array([-1.2, 1.0]), max_iters=60000,
                            grad_tol=1e-9)
    return CheckResult("armijo_rosenbrock", result.objective <= 1e-6,
                       f"objective {result.objective:.3e} after "
                       f"{result.iterations} iterations")


def check_rician_moments(seed: int = 3) -> CheckResult:
    from ..channelgen import rician_channel
    rng = np.random.default_rng(seed)
    los = np.ones((1, 1), dtype=complex)
    draws = rician_channel(1, 100_000, 0.0, los, 2.0, rng)
    var = float(np.mean(np.abs(draws) ** 2))
    ok = abs(var - 2.0) / 2.0 <= 0.05
    pure = rician_channel(3, 3, 1e12, np.full((3, 3), 1 + 0j), 4.0, rng)
    ok &= bool(np.allclose(pure, 2.0 * np.ones((3, 3)), atol=1e-3))
    return CheckResult("rician_moments", ok,
                       f"Rayleigh mean power {var:.4f} (want 2.0 +- 5%)")


ALL_CHECKS: List[Callable[[], CheckResult]] = [
    check_model_loop_oracle,
    check_gradient_finite_difference,
    check_auxiliary_stationarity,
    check_lp_vertex_oracle,
    check_soc_bisection_oracle,
    check_armijo_rosenbrock,
    check_rician_moments,
]


def run_all() -> List[CheckResult]:
    return [check() for check in ALL_CHECKS]


def write_table(results: List[CheckResult], path) -> None:
    with open(path, "w") as fh:
        fh.write("check,status,detail\n")
        for r in results:
            fh.write(f"{r.name},{'pass' if r.passed else 'FAIL'},\"{r.detail}\"\n")
