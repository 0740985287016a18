"""Network geometry and Rician-fading channel generation, fully seeded."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, SystemConfig

RIS_ELEMENT_GAIN = 10 ** 0.3   # 3 dBi per reflecting element, front half-space
REFERENCE_DISTANCE_M = 1.0


@dataclass
class Geometry:
    """3-D positions in meters: APs (N,3), users (K,3), RIS (3,)."""

    ap_pos: np.ndarray
    user_pos: np.ndarray
    ris_pos: np.ndarray


@dataclass(frozen=True)
class FadingSpec:
    """One link family: path-loss exponent, linear Rician factor, reference
    loss at 1 m (linear), and whether the RIS element gain applies."""

    exponent: float
    rician_kappa: float
    ref_loss: float = 1e-3
    ris_link: bool = False

    def __post_init__(self):
        if self.rician_kappa < 0:
            raise ValueError("Rician factor must be nonnegative")


# Defaults: AP-RIS in near-LoS (30 dB Rician), AP-user rich scattering
# (Rayleigh), RIS-user moderately LoS (kappa = 3 read as linear).
AP_RIS_SPEC = FadingSpec(exponent=2.0, rician_kappa=1000.0, ris_link=True)
AP_USER_SPEC = FadingSpec(exponent=3.67, rician_kappa=0.0, ris_link=False)
RIS_USER_SPEC = FadingSpec(exponent=2.5, rician_kappa=3.0, ris_link=True)


def place_network(config: SystemConfig, seed) -> Geometry:
    """APs and users i.i.d. uniform in the square region at fixed heights."""
    rng = np.random.default_rng(seed)
    side = config.region_side_m
    ap_xy = rng.uniform(0.0, side, size=(config.n_aps, 2))
    user_xy = rng.uniform(0.0, side, size=(config.n_users, 2))
    ap_pos = np.column_stack([ap_xy, np.full(config.n_aps, config.ap_height_m)])
    user_pos = np.column_stack([user_xy,
                                np.full(config.n_users, config.user_height_m)])
    return Geometry(ap_pos=ap_pos, user_pos=user_pos,
                    ris_pos=np.asarray(config.ris_pos, dtype=float))


def path_loss(d: float, spec: FadingSpec) -> float:
    """Distance-dependent linear power gain; RIS links carry the element gain."""
    if d <= 0:
        raise ValueError("distance must be positive")
    gain = spec.ref_loss * (d / REFERENCE_DISTANCE_M) ** (-spec.exponent)
    if spec.ris_link:
        gain *= RIS_ELEMENT_GAIN
    return float(gain)


def ula_response(count: int, angle: float) -> np.ndarray:
    """Unit-modulus uniform-linear-array signature, half-wavelength spacing."""
    return np.exp(1j * np.pi * np.arange(count) * np.sin(angle))


def rician_channel(rows: int, cols: int, kappa: float,
                   los_component: np.ndarray, gain: float, seed) -> np.ndarray:
    """sqrt(gain) * (sqrt(k/(1+k)) LoS + sqrt(1/(1+k)) CN(0,1) NLoS)."""
    if kappa < 0 or gain < 0:
        raise ValueError("kappa and gain must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nlos = (rng.standard_normal((rows, cols))
            + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)
    los = np.broadcast_to(np.asarray(los_component, dtype=complex), (rows, cols))
    h = (np.sqrt(kappa / (1.0 + kappa)) * los
         + np.sqrt(1.0 / (1.0 + kappa)) * nlos)
    return np.sqrt(gain) * h


def _azimuth(src: np.ndarray, dst: np.ndarray) -> float:
    d = dst[:2] - src[:2]
    return float(np.arctan2(d[1], d[0]))


def _draw_family(config: SystemConfig, geometry: Geometry,
                 rng: np.random.Generator,
                 ap_ris_spec=AP_RIS_SPEC, ap_user_spec=AP_USER_SPEC,
                 ris_user_spec=RIS_USER_SPEC):
    n, k = config.n_aps, config.n_users
    l, m = config.n_antennas, config.n_elements
    ris = geometry.ris_pos

    h_d = np.zeros((n, k, l), dtype=complex)
    for i in range(n):
        for j in range(k):
            d = float(np.linalg.norm(geometry.ap_pos[i] - geometry.user_pos[j]))
            los = ula_response(l, _azimuth(geometry.user_pos[j],
                                           geometry.ap_pos[i]))[:, None]
            h_d[i, j] = rician_channel(l, 1, ap_user_spec.rician_kappa, los,
                                       path_loss(d, ap_user_spec), rng)[:, 0]

    h_r = np.zeros((k, m), dtype=complex)
    for j in range(k):
        d = float(np.linalg.norm(ris - geometry.user_pos[j]))
        los = ula_response(m, _azimuth(geometry.user_pos[j], ris))[:, None]
        h_r[j] = rician_channel(m, 1, ris_user_spec.rician_kappa, los,
                                path_loss(d, ris_user_spec), rng)[:, 0]

    g = np.zeros((n, m, l), dtype=complex)
    for i in range(n):
        d = float(np.linalg.norm(ris - geometry.ap_pos[i]))
        los = (ula_response(m, _azimuth(geometry.ap_pos[i], ris))[:, None]
               @ ula_response(l, _azimuth(ris, geometry.ap_pos[i]))[None, :].conj())
        g[i] = rician_channel(m, l, ap_ris_spec.rician_kappa, los,
                              path_loss(d, ap_ris_spec), rng)
    return h_d, h_r, g


def generate_channels(config: SystemConfig, geometry: Geometry, seed,
                      ap_ris_spec=AP_RIS_SPEC, ap_user_spec=AP_USER_SPEC,
                      ris_user_spec=RIS_USER_SPEC) -> ChannelSet:
    """All six channel families; uplink and downlink drawn independently
    unless the config requests reciprocal channels."""
    seq = np.random.SeedSequence(seed)
    ul_seed, dl_seed = seq.spawn(2)
    rng_ul = np.random.default_rng(ul_seed)
    h_d_ul, h_r_ul, g_ul = _draw_family(config, geometry, rng_ul,
                                        ap_ris_spec, ap_user_spec, ris_user_spec)
    if config.reciprocal_channels:
        h_d_dl, h_r_dl, g_dl = h_d_ul.conj(), h_r_ul.conj(), g_ul.conj()
    else:
        rng_dl = np.random.default_rng(dl_seed)
        h_d_dl, h_r_dl, g_dl = _draw_family(config, geometry, rng_dl,
                                            ap_ris_spec, ap_user_spec,
                                            ris_user_spec)
    channels = ChannelSet(h_d_ul=h_d_ul, h_r_ul=h_r_ul, g_ul=g_ul,
                          h_d_dl=h_d_dl, h_r_dl=h_r_dl, g_dl=g_dl)
    channels.validate(config)
    return channels


def dump_channels(channels: ChannelSet, path) -> None:
    """Write all channel blocks to a named-array container (.npz)."""
    np.savez(path, h_d_ul=channels.h_d_ul, h_r_ul=channels.h_r_ul,
             g_ul=channels.g_ul, h_d_dl=channels.h_d_dl,
             h_r_dl=channels.h_r_dl, g_dl=channels.g_dl)


def load_channels(path) -> ChannelSet:
    with np.load(path) as data:
        return ChannelSet(h_d_ul=data["h_d_ul"], h_r_ul=data["h_r_ul"],
                          g_ul=data["g_ul"], h_d_dl=data["h_d_dl"],
                          h_r_dl=data["h_r_dl"], g_dl=data["g_dl"])
