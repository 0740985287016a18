import numpy as np
import pytest

from riscomp import blocks, model
from riscomp.blocks import (BlockFailure, optimal_o, optimal_s, optimal_z,
                            update_downlink_beamformers, update_frequencies,
                            update_power_partition, update_rate_time,
                            update_uplink_beamformers, update_uplink_phases,
                            uplink_phase_gradient)
from riscomp.model import derive_association, zero_state
from riscomp.oracle import grid_phase_oracle

from conftest import random_channels, random_state, tiny_config


def interior_instance(seed, **cfg_kw):
    cfg = tiny_config(**cfg_kw)
    rng = np.random.default_rng(seed)
    ch = random_channels(cfg, rng)
    state = random_state(cfg, ch, rng)
    return cfg, ch, state, rng


class TestDownlinkBeamformers:
    def test_scalar_boundary_matches_bisection(self):
        # single user, real scalar channel: the cone is active at the optimum
        cfg = tiny_config(n=1, k=1, l=1, m=1, task_bits=1.0,
                          noise_user_w=0.05, sinr_target_lin=2.0,
                          ap_max_power_w=10.0, group_budget=1e6)
        rng = np.random.default_rng(0)
        ch = random_channels(cfg, rng)
        h = 1.7
        ch.h_d_dl[:] = h
        ch.h_r_dl[:] = 0
        state = zero_state(cfg)
        state.v_ul[0, 0, 0] = 1.0
        state.v_dl[0, 0, 0] = 3.0          # incumbent, feasible
        state.a[:] = 0.5
        state.t[:] = 0.1
        state.r[:] = 1.0
        state.f_nk[:] = 1e8
        state.f_min[:] = 1e8
        new = update_downlink_beamformers(state, cfg, ch)
        v = abs(new.v_dl[0, 0, 0])

        def slack(v_abs):
            return (h * v_abs / np.sqrt(cfg.sinr_target_lin)
                    - np.sqrt(cfg.noise_user_w))

        lo, hi = 0.0, 3.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if slack(mid) >= 0:
                hi = mid
            else:
                lo = mid
        assert v == pytest.approx(hi, rel=1e-4)

    def test_incumbent_remains_feasible_objective_not_worse(self, solved_instance):
        result, channels = solved_instance
        state, cfg = result.state, result.config
        rates = model.all_offload_rates(state, cfg, channels)
        incumbent_norms = np.sqrt(np.sum(np.abs(state.v_dl) ** 2, axis=2))
        weights = (cfg.cycles_per_bit * state.t[None, :] * state.r[None, :]
                   * state.f_nk * cfg.kappa_ap / cfg.slot_s)
        incumbent_obj = float(np.sum(weights * incumbent_norms
                                     + incumbent_norms ** 3))
        new = update_downlink_beamformers(state, cfg, channels, rates=rates)
        new_norms = np.sqrt(np.sum(np.abs(new.v_dl) ** 2, axis=2))
        new_obj = float(np.sum(weights * new_norms + new_norms ** 3))
        assert new_obj <= incumbent_obj * (1 + 1e-6) + 1e-12

    def test_zero_target_allows_zero(self):
        cfg = tiny_config(n=1, k=1, l=1, m=1, task_bits=1.0,
                          sinr_target_lin=1e-12, group_budget=1e6)
        rng = np.random.default_rng(1)
        ch = random_channels(cfg, rng)
        state = zero_state(cfg)
        state.v_ul[0, 0, 0] = 1.0
        state.v_dl[0, 0, 0] = 0.5
        state.a[:] = 0.0        # nobody offloads: no SINR cone at all
        state.r[:] = 0.0
        new = update_downlink_beamformers(state, cfg, ch)
        assert np.linalg.norm(new.v_dl) <= 1e-5


class TestFrequencies:
    def test_no_serving_pairs(self):
        cfg = tiny_config()
        state = zero_state(cfg)
        new = update_frequencies(state, cfg)
        assert np.all(new.f_nk == 0) and np.all(new.f_min == 0)

    def test_latency_floor_hit_exactly(self):
        cfg = tiny_config(n=1, k=1, l=1, m=1, cycles_per_bit=50.0,
                          task_bits=1e6, kappa_user=1e30, slot_s=0.5,
                          latency_cap_s=0.4, ap_total_freq_hz=3e9)
        state = zero_state(cfg)
        state.v_dl[0, 0, 0] = 1.0
        state.v_ul[0, 0, 0] = 1.0
        state.a[:] = 0.5
        state.r[:] = 5e6
        state.t[:] = 0.1
        new = update_frequencies(state, cfg)
        bits = 1e6
        floor = 50.0 * bits / (0.4 - bits / 5e6)
        assert new.f_nk[0, 0] == pytest.approx(floor, rel=1e-6)
        assert new.f_min[0] == pytest.approx(floor, rel=1e-6)

    def test_post_constraints_hold(self, solved_instance):
        result, channels = solved_instance
        state, cfg = result.state, result.config
        new = update_frequencies(state, cfg)
        report = model.constraint_report(new, cfg, channels)
        assert report.min_residual() >= -1e-6


class TestOptimalS:
    def test_scalar_reduction(self):
        cfg, ch, state, _ = interior_instance(2, n=1, k=1, l=1, m=1)
        s = optimal_s(state, cfg, ch)
        iota = model.effective_channel(ch, state.theta_ul, model.UPLINK, 0, 0,
                                       cfg.phase_params)
        v = state.v_ul[0, 0]
        p = state.a[0] * cfg.user_power_w
        expect = (np.sqrt(p) * np.vdot(v, iota)
                  / (cfg.noise_ap_w * np.vdot(v, v).real))
        assert s[0, 0] == pytest.approx(expect, rel=1e-12)

    def test_perturbation_never_improves(self):
        for seed in range(30):
            cfg, ch, state, rng = interior_instance(seed, k=2, n=2)
            s = optimal_s(state, cfg, ch)
            pairs = derive_association(state).pairs
            n0, k0 = pairs[int(rng.integers(len(pairs)))]
            base = blocks.uplink_surrogate(state, cfg, ch, s, n0, k0)
            for factor in (1.01, 0.99, 1 + 0.01j, 1 - 0.01j):
                trial = s.copy()
                trial[n0, k0] = s[n0, k0] * factor
                perturbed = blocks.uplink_surrogate(state, cfg, ch, trial,
                                                    n0, k0)
                assert perturbed <= base + 1e-10 * abs(base)

    def test_homogeneity_under_scaling(self):
        cfg, ch, state, _ = interior_instance(3, k=2)
        s1 = optimal_s(state, cfg, ch)
        state.v_ul[0, 0] *= 2.0
        s2 = optimal_s(state, cfg, ch)
        # numerator scales by 2, denominator by 4
        assert s2[0, 0] == pytest.approx(s1[0, 0] / 2.0, rel=1e-12)


class TestUplinkBeamformers:
    def test_infinite_w_returns_incumbent(self):
        cfg, ch, state, _ = interior_instance(4)
        new = update_uplink_beamformers(state, cfg, ch, w=np.inf)
        assert np.array_equal(new.v_ul, state.v_ul)

    def test_matched_filter_no_interference(self):
        cfg = tiny_config(n=1, k=1, l=3, m=2)
        rng = np.random.default_rng(5)
        ch = random_channels(cfg, rng)
        state = random_state(cfg, ch, rng)
        new = update_uplink_beamformers(state, cfg, ch, w=1.0)
        iota = model.effective_channel(ch, state.theta_ul, model.UPLINK, 0, 0,
                                       cfg.phase_params)
        p = state.a[0] * cfg.user_power_w
        bound = p * np.vdot(iota, iota).real / cfg.noise_ap_w
        achieved = model.uplink_sinr(new, cfg, ch, 0, 0)
        assert achieved >= bound * (1 - 1e-6)

    def test_objective_nondecreasing(self):
        for seed in range(5):
            cfg, ch, state, _ = interior_instance(seed + 10, k=2, n=2)
            pairs = derive_association(state).pairs
            rates0 = model.all_offload_rates(state, cfg, ch)
            before = sum(np.log(rates0[n, k] - state.r[k]) for n, k in pairs)
            new = update_uplink_beamformers(state, cfg, ch, w=1.0)
            rates1 = model.all_offload_rates(new, cfg, ch)
            after = sum(np.log(rates1[n, k] - state.r[k]) for n, k in pairs)
            assert after >= before - 1e-9 * abs(before)

    def test_group_norms_preserved(self):
        cfg, ch, state, _ = interior_instance(6, k=2, n=2)
        before = np.sort(np.sum(np.abs(state.v_ul) ** 2, axis=2).ravel())
        new = update_uplink_beamformers(state, cfg, ch, w=1.0)
        after = np.sort(np.sum(np.abs(new.v_ul) ** 2, axis=2).ravel())
        assert np.allclose(before, after, rtol=1e-9)


class TestPhaseGradient:
    def test_hand_derived_scalar_case(self):
        # rho == 1 (beta_min = 1): only the phase rotates
        cfg = tiny_config(n=1, k=1, l=1, m=1, phase_params=(1.0, 0.0, 1.0))
        rng = np.random.default_rng(7)
        ch = random_channels(cfg, rng)
        state = random_state(cfg, ch, rng)
        theta = state.theta_ul[0]
        v = state.v_ul[0, 0, 0]
        g = ch.g_ul[0][0, 0]
        hr = ch.h_r_ul[0, 0]
        hd = ch.h_d_ul[0, 0, 0]
        p = state.a[0] * cfg.user_power_w
        sigma2 = cfg.noise_ap_w * abs(v) ** 2
        u = np.conj(v) * (hd + np.conj(g) * np.exp(1j * theta) * hr)
        du = np.conj(v) * np.conj(g) * hr * 1j * np.exp(1j * theta)
        dgamma = p * 2 * np.real(np.conj(u) * du) / sigma2
        gamma = p * abs(u) ** 2 / sigma2
        rate = cfg.bandwidth_hz * np.log2(1 + gamma)
        drate = cfg.bandwidth_hz / ((1 + gamma) * np.log(2)) * dgamma
        expect = drate / (rate - state.r[0])
        got = uplink_phase_gradient(state, cfg, ch, 0)
        assert got == pytest.approx(expect, rel=1e-8)

    def test_finite_difference_sample(self):
        from riscomp.harness.oracle_suite import check_gradient_finite_difference
        result = check_gradient_finite_difference(instances=20, seed=77)
        assert result.passed, result.detail

    def test_zero_reflection_zero_gradient(self):
        cfg, ch, state, _ = interior_instance(8)
        ch.h_r_ul[:] = 0
        for m in range(cfg.n_elements):
            assert uplink_phase_gradient(state, cfg, ch, m) == 0.0


class TestUplinkPhases:
    def test_zero_reflection_unchanged(self):
        cfg, ch, state, _ = interior_instance(9)
        ch.h_r_ul[:] = 0
        new = update_uplink_phases(state, cfg, ch)
        assert np.array_equal(new.theta_ul, state.theta_ul)

    def test_grid_oracle_m1(self):
        cfg, ch, state, _ = interior_instance(10, n=2, k=2, m=1)
        new = update_uplink_phases(state, cfg, ch)
        _, best = grid_phase_oracle(state, cfg, ch, resolution_deg=0.5,
                                    direction=model.UPLINK)
        pairs = derive_association(state).pairs
        rates = model.all_offload_rates(new, cfg, ch)
        achieved = sum(np.log(rates[n, k] - state.r[k]) for n, k in pairs)
        assert achieved >= best - 1e-3 * max(1.0, abs(best))

    def test_objective_nondecreasing_m4(self):
        cfg, ch, state, _ = interior_instance(11, m=4)
        pairs = derive_association(state).pairs
        rates0 = model.all_offload_rates(state, cfg, ch)
        before = sum(np.log(rates0[n, k] - state.r[k]) for n, k in pairs)
        new = update_uplink_phases(state, cfg, ch)
        rates1 = model.all_offload_rates(new, cfg, ch)
        after = sum(np.log(rates1[n, k] - state.r[k]) for n, k in pairs)
        assert after >= before - 1e-10 * abs(before)
        assert np.all((new.theta_ul >= 0) & (new.theta_ul < 2 * np.pi))


class TestOptimalO:
    def test_scalar_reduction(self):
        cfg, ch, state, _ = interior_instance(12, n=1, k=1, l=1, m=1)
        o = optimal_o(state, cfg, ch)
        iota = model.effective_channel(ch, state.theta_ul, model.UPLINK, 0, 0,
                                       cfg.phase_params)
        v = state.v_ul[0, 0]
        p = state.a[0] * cfg.user_power_w
        expect = (np.sqrt(p) * abs(np.vdot(v, iota))
                  / (cfg.noise_ap_w * np.vdot(v, v).real))
        assert o[0, 0] == pytest.approx(expect, rel=1e-12)

    def test_zero_partition_gives_zero(self):
        cfg, ch, state, _ = interior_instance(13, k=2)
        state.a[0] = 0.0
        o = optimal_o(state, cfg, ch)
        assert np.all(o[:, 0] == 0.0)

    def test_perturbation_never_improves(self):
        for seed in range(30):
            cfg, ch, state, rng = interior_instance(seed + 40, k=2, n=2)
            o = optimal_o(state, cfg, ch)
            gains, vnorm2 = blocks._partition_tables(state, cfg, ch)
            pairs = derive_association(state).pairs
            n0, k0 = pairs[int(rng.integers(len(pairs)))]
            base = blocks.partition_surrogate(state.a, o, state, cfg, gains,
                                              vnorm2, n0, k0)
            for factor in (1.01, 0.99):
                trial = o.copy()
                trial[n0, k0] *= factor
                perturbed = blocks.partition_surrogate(state.a, trial, state,
                                                       cfg, gains, vnorm2,
                                                       n0, k0)
                assert perturbed <= base + 1e-10 * abs(base)


class TestPowerPartition:
    def test_no_offload_matches_grid_scan(self):
        # empty serving set: objective is local-rate-over-power, per user
        cfg = tiny_config(k=2, n=2, kappa_user=8e-18, cycles_per_bit=50.0)
        rng = np.random.default_rng(14)
        ch = random_channels(cfg, rng)
        state = zero_state(cfg)
        state.a[:] = [0.4, 0.7]
        state.t[:] = 0.1
        new = update_power_partition(state, cfg, ch, w=1.0)
        grid = np.linspace(0, 1, 10001)
        p_total = cfg.n_users * cfg.user_power_w
        for k in range(2):
            values = np.sqrt((1 - grid) * cfg.user_power_w / cfg.kappa_user) \
                / cfg.cycles_per_bit / p_total
            best = grid[np.argmax(values)]
            assert abs(new.a[k] - best) <= 1e-4

    def test_objective_nondecreasing(self, solved_instance):
        result, channels = solved_instance
        state, cfg = result.state, result.config
        w = 100.0
        before = model.barrier_objective(state, cfg, channels, w)
        new = update_power_partition(state, cfg, channels, w=w)
        after = model.barrier_objective(new, cfg, channels, w)
        assert after >= before - 1e-8 * max(1.0, abs(before))

    def test_bounds_respected(self, solved_instance):
        result, channels = solved_instance
        state, cfg = result.state, result.config
        new = update_power_partition(state, cfg, channels, w=100.0)
        assert np.all(new.a >= -1e-12) and np.all(new.a <= 1.0 + 1e-12)


class TestOptimalZ:
    def test_zero_numerator(self):
        cfg = tiny_config(kappa_user=1e-30)
        state = zero_state(cfg)
        state.a[:] = 1.0          # local rate zero, t r zero
        assert optimal_z(state, cfg) == pytest.approx(0.0)

    def test_single_term_ratio(self):
        cfg = tiny_config(n=1, k=1, l=1, user_power_w=2.0, kappa_user=1e30)
        state = zero_state(cfg)
        state.v_dl[0, 0, 0] = 0.0   # no serving pairs: denominator = P^c = 2
        state.t[:] = 0.5
        state.r[:] = 1.0            # t r / T = 1 with T = 0.5
        assert optimal_z(state, cfg) == pytest.approx(0.5, rel=1e-9)

    def test_direct_evaluation(self):
        cfg, ch, state, _ = interior_instance(15, k=2, n=2)
        assoc = derive_association(state)
        num = float(np.sum(state.t * state.r) / cfg.slot_s
                    + model.local_rates(state, cfg).sum())
        expect = num / model.total_power(state, cfg, assoc)
        assert optimal_z(state, cfg) == pytest.approx(expect, rel=1e-12)


class TestRateTime:
    def test_no_serving_pairs_unchanged(self):
        cfg = tiny_config()
        rng = np.random.default_rng(16)
        ch = random_channels(cfg, rng)
        state = zero_state(cfg)
        state.t[:] = 0.2
        new = update_rate_time(state, cfg, ch, w=1.0)
        assert np.array_equal(new.t, state.t)
        assert np.array_equal(new.r, state.r)

    def test_time_at_bound_when_profitable(self, solved_instance):
        # sign analysis: positive Dinkelbach t-coefficient pushes t to its cap
        result, channels = solved_instance
        state, cfg = result.state, result.config
        new = update_rate_time(state, cfg, channels, w=1e4)
        assoc = derive_association(new)
        z = optimal_z(new, cfg)
        for k in range(cfg.n_users):
            aps = assoc.aps_of(k)
            if aps.size == 0 or new.r[k] <= 0:
                continue
            fsum = float(np.sum(new.f_nk[aps, k]) * cfg.kappa_ap
                         * cfg.cycles_per_bit)
            coef = (new.r[k] / cfg.slot_s) * (1.0 - z * fsum)
            t_cap = cfg.slot_s / (1.0 + cfg.cycles_per_bit * new.r[k]
                                  / new.f_min[k])
            if coef > 1e-3 * abs(new.r[k] / cfg.slot_s):
                assert new.t[k] == pytest.approx(t_cap, rel=1e-5)

    def test_barrier_objective_nondecreasing(self, solved_instance):
        result, channels = solved_instance
        state, cfg = result.state, result.config
        w = 1e3
        before = model.barrier_objective(state, cfg, channels, w)
        new = update_rate_time(state, cfg, channels, w=w)
        after = model.barrier_objective(new, cfg, channels, w)
        assert after >= before - 1e-8 * max(1.0, abs(before))
