import numpy as np
import pytest

from riscomp import model
from riscomp.downlink_phase import (PenaltyParams, fit_theta_step,
                                    min_soc_slack, solve_downlink_phase,
                                    theta_matrix_step)
from riscomp.model import DomainError, ris_coefficients, zero_state
from riscomp.oracle import grid_phase_oracle

from conftest import random_channels, random_state, tiny_config


def offloading_instance(seed, **kw):
    cfg = tiny_config(**kw)
    rng = np.random.default_rng(seed)
    ch = random_channels(cfg, rng)
    state = random_state(cfg, ch, rng)
    return cfg, ch, state, rng


class TestMinSlack:
    def test_no_offloader_raises(self):
        cfg, ch, state, _ = offloading_instance(0)
        state.a[:] = 0.0
        with pytest.raises(DomainError):
            min_soc_slack(state.theta_dl, state, cfg, ch)

    def test_scalar_arithmetic(self):
        # coherent term 4, interference-plus-noise norm 1, gamma 1 -> slack 3
        cfg = tiny_config(n=1, k=1, l=1, m=1, sinr_target_lin=1.0,
                          noise_user_w=1.0)
        rng = np.random.default_rng(1)
        ch = random_channels(cfg, rng)
        ch.h_d_dl[:] = 2.0
        ch.h_r_dl[:] = 0
        state = zero_state(cfg)
        state.a[:] = 0.5
        state.v_dl[0, 0, 0] = 2.0
        assert min_soc_slack(state.theta_dl, state, cfg, ch) == pytest.approx(3.0)

    def test_matches_loop_oracle(self):
        cfg, ch, state, _ = offloading_instance(2, k=2, n=2)
        got = min_soc_slack(state.theta_dl, state, cfg, ch)
        slacks = []
        for k in range(cfg.n_users):
            e = np.zeros(cfg.n_users, dtype=complex)
            for l in range(cfg.n_users):
                for n in range(cfg.n_aps):
                    iota = model.effective_channel(ch, state.theta_dl,
                                                   model.DOWNLINK, n, k,
                                                   cfg.phase_params)
                    e[l] += np.vdot(iota, state.v_dl[n, l])
            interf = sum(abs(e[l]) ** 2 for l in range(cfg.n_users) if l != k)
            slacks.append(e[k].real / np.sqrt(cfg.sinr_target_lin)
                          - np.sqrt(interf + cfg.noise_user_w))
        assert got == pytest.approx(min(slacks), rel=1e-10)


class TestFitTheta:
    def test_fixed_point(self):
        cfg = tiny_config(m=4)
        rng = np.random.default_rng(3)
        theta0 = rng.uniform(0, 2 * np.pi, 4)
        target = ris_coefficients(theta0, cfg.phase_params)
        out = fit_theta_step(theta0, target, cfg)
        fit = np.abs(target - ris_coefficients(out, cfg.phase_params)) ** 2
        assert np.all(fit <= 1e-12)
        assert np.allclose(out, theta0, atol=1e-5)

    def test_unit_modulus_phase_match(self):
        cfg = tiny_config(m=1, phase_params=(1.0, 0.0, 1.0))
        target = np.array([np.exp(1j * np.pi / 3)])
        out = fit_theta_step(np.array([2.5]), target, cfg)
        assert out[0] == pytest.approx(np.pi / 3, abs=1e-6)

    def test_grid_oracle_m1(self):
        cfg = tiny_config(m=1)
        rng = np.random.default_rng(4)
        target = np.array([0.7 * np.exp(1j * 2.1)])
        out = fit_theta_step(rng.uniform(0, 2 * np.pi, 1), target, cfg)
        grid = np.linspace(0, 2 * np.pi, 3600, endpoint=False)
        best = np.min(np.abs(target[0]
                             - ris_coefficients(grid, cfg.phase_params)) ** 2)
        got = float(np.abs(target[0]
                           - ris_coefficients(out, cfg.phase_params)[0]) ** 2)
        assert got <= best + 1e-4


class TestThetaMatrixStep:
    def test_huge_penalty_pins_to_manifold(self):
        cfg, ch, state, _ = offloading_instance(5, k=2, n=2, m=3)
        theta = state.theta_dl
        theta_mat, y = theta_matrix_step(theta, state, cfg, ch, mu=1e9)
        chi = ris_coefficients(theta, cfg.phase_params)
        assert np.max(np.abs(theta_mat - chi)) <= 1e-3
        direct = min_soc_slack(theta, state, cfg, ch)
        # with the penalty dominating, y only tracks the slack to the solver
        # gap left after objective normalization
        assert y == pytest.approx(direct, abs=0.05 * max(1.0, abs(direct)))
        from riscomp.downlink_phase import _slack_terms
        pinned = min(_slack_terms(theta_mat, state, cfg, ch).values())
        assert pinned == pytest.approx(direct, abs=1e-4 * max(1.0, abs(direct)))

    def test_returned_y_is_min_slack_at_theta_mat(self):
        from riscomp.downlink_phase import _slack_terms
        cfg, ch, state, _ = offloading_instance(6, k=2, n=2, m=3)
        theta_mat, y = theta_matrix_step(state.theta_dl, state, cfg, ch,
                                         mu=0.05)
        slacks = _slack_terms(theta_mat, state, cfg, ch)
        assert y == pytest.approx(min(slacks.values()),
                                  abs=1e-6 * max(1.0, abs(y)))

    def test_unbounded_guard_with_zero_penalty(self):
        # single user, no interference rows: y is capped, not unbounded
        cfg = tiny_config(n=1, k=1, l=1, m=1, noise_user_w=1.0)
        rng = np.random.default_rng(7)
        ch = random_channels(cfg, rng)
        state = random_state(cfg, ch, rng)
        state.a[:] = 0.5
        theta_mat, y = theta_matrix_step(state.theta_dl, state, cfg, ch,
                                         mu=0.0)
        from riscomp.downlink_phase import THETA_MAT_BOUND
        assert np.all(np.abs(theta_mat) <= THETA_MAT_BOUND * (1 + 1e-6))
        assert np.isfinite(y)


class TestSolveDownlinkPhase:
    def test_no_offloader_returns_unchanged(self):
        cfg, ch, state, _ = offloading_instance(8)
        state.a[:] = 0.0
        out = solve_downlink_phase(state, cfg, ch)
        assert np.array_equal(out, state.theta_dl)

    def test_slack_never_decreases(self):
        for seed in range(4):
            cfg, ch, state, _ = offloading_instance(20 + seed, k=2, n=2, m=4)
            before = min_soc_slack(state.theta_dl, state, cfg, ch)
            params = PenaltyParams(mu0=1e-3, growth=2.5, eps1=0.1, eps2=0.01,
                                   max_outer=20, max_inner=5)
            out = solve_downlink_phase(state, cfg, ch, penalty_params=params)
            after = min_soc_slack(out, state, cfg, ch)
            assert after >= before - 1e-8 * max(1.0, abs(before))

    def test_grid_oracle_toy(self):
        cfg, ch, state, _ = offloading_instance(9, k=2, n=1, m=1)
        params = PenaltyParams(mu0=1e-3, growth=2.5, eps1=0.05, eps2=0.005,
                               max_outer=30, max_inner=6)
        out = solve_downlink_phase(state, cfg, ch, penalty_params=params)
        achieved = min_soc_slack(out, state, cfg, ch)
        _, best = grid_phase_oracle(state, cfg, ch, resolution_deg=0.5,
                                    direction=model.DOWNLINK)
        # the penalty method is a local scheme; on toy instances it lands
        # within a couple percent of the exhaustive grid optimum
        scale = max(abs(best), np.sqrt(cfg.noise_user_w))
        assert achieved >= best - 2.5e-2 * scale

    def test_feasibility_stop_short_circuits(self):
        cfg, ch, state, _ = offloading_instance(10, k=2, n=2,
                                                sinr_target_lin=1e-9)
        # rotate each user's beamformers so the coherent term is positive,
        # making the tiny target trivially met
        from riscomp.downlink_phase import _slack_terms
        iota_free = None
        for k in range(cfg.n_users):
            e = 0.0
            for n in range(cfg.n_aps):
                iota = model.effective_channel(ch, state.theta_dl,
                                               model.DOWNLINK, n, k,
                                               cfg.phase_params)
                e += np.vdot(iota, state.v_dl[n, k])
            state.v_dl[:, k, :] *= np.exp(-1j * np.angle(e))
        before = min_soc_slack(state.theta_dl, state, cfg, ch)
        assert before >= 0
        out = solve_downlink_phase(state, cfg, ch, stop_at_feasible=True)
        assert np.array_equal(out, state.theta_dl)

    def test_penalty_params_validation(self):
        with pytest.raises(ValueError):
            PenaltyParams(growth=0.9)
        defaults = PenaltyParams()
        assert defaults.mu0 == pytest.approx(1e-3)
        assert defaults.growth == pytest.approx(1.003)
        assert defaults.eps1 == pytest.approx(0.1)
        assert defaults.eps2 == pytest.approx(0.01)
