import numpy as np
import pytest

from riscomp import SystemConfig
from riscomp.channelgen import (AP_RIS_SPEC, AP_USER_SPEC, RIS_USER_SPEC,
                                RIS_ELEMENT_GAIN, FadingSpec, dump_channels,
                                generate_channels, load_channels, path_loss,
                                place_network, rician_channel)


@pytest.fixture(scope="module")
def config():
    return SystemConfig()


class TestPlacement:
    def test_deterministic(self, config):
        g1 = place_network(config, 42)
        g2 = place_network(config, 42)
        assert np.array_equal(g1.ap_pos, g2.ap_pos)
        assert np.array_equal(g1.user_pos, g2.user_pos)

    def test_support_and_heights(self, config):
        g = place_network(config, 7)
        assert np.all((g.ap_pos[:, :2] >= 0) & (g.ap_pos[:, :2] <= 200))
        assert np.all((g.user_pos[:, :2] >= 0) & (g.user_pos[:, :2] <= 200))
        assert np.all(g.ap_pos[:, 2] == 30.0)
        assert np.all(g.user_pos[:, 2] == 1.0)
        assert np.allclose(g.ris_pos, [100.0, 0.0, 15.0])

    def test_uniform_mean(self, config):
        # law of large numbers: mean of 10000 user draws near the centroid
        xs = []
        for seed in range(200):
            g = place_network(config, seed)
            xs.append(g.user_pos[:, :2])
        xs = np.concatenate(xs)
        n = xs.shape[0]
        sigma = 200.0 / np.sqrt(12.0) / np.sqrt(n)
        assert np.all(np.abs(xs.mean(axis=0) - 100.0) < 3 * sigma * 1.5 + 1.0)


class TestPathLoss:
    def test_ris_reference(self):
        spec = FadingSpec(exponent=2.0, rician_kappa=0.0, ref_loss=1e-3,
                          ris_link=True)
        assert path_loss(1.0, spec) == pytest.approx(1.9953e-3, abs=1e-7)

    def test_direct_reference(self):
        spec = FadingSpec(exponent=3.1, rician_kappa=0.0, ref_loss=1e-3,
                          ris_link=False)
        assert path_loss(1.0, spec) == pytest.approx(1e-3)

    def test_inverse_square(self):
        spec = FadingSpec(exponent=2.0, rician_kappa=0.0, ris_link=False)
        assert path_loss(2.0, spec) == pytest.approx(path_loss(1.0, spec) / 4)

    def test_nonpositive_distance(self):
        with pytest.raises(ValueError):
            path_loss(0.0, AP_USER_SPEC)


class TestRician:
    def test_pure_los_limit(self):
        los = np.full((2, 3), np.exp(1j * 0.4))
        h = rician_channel(2, 3, 1e12, los, 4.0, 0)
        assert np.allclose(h, 2.0 * los, atol=1e-4)

    def test_rayleigh_variance(self):
        rng = np.random.default_rng(0)
        h = rician_channel(1, 100_000, 0.0, np.ones((1, 1)), 3.0, rng)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(3.0, rel=0.05)

    def test_determinism(self):
        los = np.ones((2, 2))
        assert np.array_equal(rician_channel(2, 2, 1.0, los, 1.0, 5),
                              rician_channel(2, 2, 1.0, los, 1.0, 5))

    def test_negative_kappa_raises(self):
        with pytest.raises(ValueError):
            rician_channel(1, 1, -0.5, np.ones((1, 1)), 1.0, 0)


class TestGenerate:
    def test_deterministic(self, config):
        geo = place_network(config, 3)
        c1 = generate_channels(config, geo, 3)
        c2 = generate_channels(config, geo, 3)
        assert np.array_equal(c1.h_d_ul, c2.h_d_ul)
        assert np.array_equal(c1.g_dl, c2.g_dl)

    def test_uplink_downlink_independent(self, config):
        geo = place_network(config, 3)
        ch = generate_channels(config, geo, 3)
        assert not np.allclose(ch.h_d_ul, ch.h_d_dl)

    def test_reciprocal_mode(self, config):
        from dataclasses import replace
        cfg = replace(config, reciprocal_channels=True)
        geo = place_network(cfg, 3)
        ch = generate_channels(cfg, geo, 3)
        assert np.array_equal(ch.h_d_dl, ch.h_d_ul.conj())
        assert np.array_equal(ch.g_dl, ch.g_ul.conj())

    def test_rayleigh_direct_has_zero_los(self, config):
        # AP-user links are Rayleigh: ensemble mean entry should vanish
        geo = place_network(config, 1)
        acc = 0.0
        for seed in range(60):
            ch = generate_channels(config, geo, seed)
            acc += ch.h_d_ul.mean()
        scale = np.abs(generate_channels(config, geo, 0).h_d_ul).mean()
        assert abs(acc / 60) < 0.15 * scale

    def test_ensemble_entry_power(self, config):
        # mean squared magnitude of an AP-RIS entry equals path loss x gain
        geo = place_network(config, 2)
        d = float(np.linalg.norm(geo.ap_pos[0] - geo.ris_pos))
        expect = path_loss(d, AP_RIS_SPEC)
        total, count = 0.0, 0
        for seed in range(300):
            ch = generate_channels(config, geo, seed)
            total += float(np.mean(np.abs(ch.g_ul[0]) ** 2))
            count += 1
        assert total / count == pytest.approx(expect, rel=0.05)

    def test_no_nan_close_range(self, config):
        geo = place_network(config, 4)
        geo.user_pos[0, :2] = geo.ris_pos[:2] + 0.05
        ch = generate_channels(config, geo, 4)
        ch.validate(config)

    def test_dump_roundtrip(self, config, tmp_path):
        geo = place_network(config, 5)
        ch = generate_channels(config, geo, 5)
        path = tmp_path / "channels.npz"
        dump_channels(ch, path)
        back = load_channels(path)
        for name in ("h_d_ul", "h_r_ul", "g_ul", "h_d_dl", "h_r_dl", "g_dl"):
            assert np.array_equal(getattr(ch, name), getattr(back, name))

    def test_default_fading_constants(self):
        assert AP_RIS_SPEC.exponent == 2.0
        assert AP_RIS_SPEC.rician_kappa == pytest.approx(1000.0)   # 30 dB
        assert AP_USER_SPEC.exponent == 3.67
        assert AP_USER_SPEC.rician_kappa == 0.0
        assert RIS_USER_SPEC.exponent == 2.5
        assert RIS_USER_SPEC.rician_kappa == 3.0                   # linear
        assert RIS_ELEMENT_GAIN == pytest.approx(10 ** 0.3)
