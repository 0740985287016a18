import numpy as np
import pytest

from riscomp import SystemConfig, generate_channels, place_network
from riscomp.model import ChannelSet, zero_state


@pytest.fixture(scope="session")
def desk_config():
    return SystemConfig()


@pytest.fixture(scope="session")
def desk_channels(desk_config):
    geometry = place_network(desk_config, 0)
    return generate_channels(desk_config, geometry, 0)


def random_channels(config, rng):
    def cmat(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    n, k = config.n_aps, config.n_users
    l, m = config.n_antennas, config.n_elements
    return ChannelSet(h_d_ul=cmat(n, k, l), h_r_ul=cmat(k, m),
                      g_ul=cmat(n, m, l), h_d_dl=cmat(n, k, l),
                      h_r_dl=cmat(k, m), g_dl=cmat(n, m, l))


def random_state(config, channels, rng, a_lo=0.2, a_hi=0.9, r_frac=0.5):
    """Interior synthetic state: rates computed, r below the per-user min."""
    from riscomp import model

    state = zero_state(config)
    n, k, l = config.n_aps, config.n_users, config.n_antennas
    state.v_ul = rng.standard_normal((n, k, l)) + 1j * rng.standard_normal((n, k, l))
    state.v_dl = 0.3 * (rng.standard_normal((n, k, l))
                        + 1j * rng.standard_normal((n, k, l)))
    state.theta_ul = rng.uniform(0, 2 * np.pi, config.n_elements)
    state.theta_dl = rng.uniform(0, 2 * np.pi, config.n_elements)
    state.a = rng.uniform(a_lo, a_hi, k)
    state.t = rng.uniform(0.05, 0.4, k)
    state.f_nk = rng.uniform(1e8, 5e8, (n, k))
    state.f_min = state.f_nk.min(axis=0)
    rates = model.all_offload_rates(state, config, channels)
    state.r = r_frac * rates.min(axis=0)
    return state


def tiny_config(n=2, k=2, l=2, m=2, **kw):
    defaults = dict(n_aps=n, n_users=k, n_antennas=l, n_elements=m,
                    noise_ap_w=0.01, noise_user_w=0.02, group_budget=1e6)
    defaults.update(kw)
    return SystemConfig(**defaults)


@pytest.fixture(scope="session")
def solved_instance(desk_config, desk_channels):
    """One converged desk-scale solve, reused across tests."""
    from riscomp.driver import solve

    result = solve(desk_config, desk_channels, seed=0)
    assert result.feasible
    return result, desk_channels
