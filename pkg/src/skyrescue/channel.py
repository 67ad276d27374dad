"""Probabilistic air-to-ground link: LoS sigmoid, Nakagami-w fading,
log-distance path loss, log-normal shadowing and Shannon rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import PhysConstants


class InvalidShape(ValueError):
    pass


class DistanceBelowReference(ValueError):
    pass


@dataclass(frozen=True)
class LinkSample:
    p_los: float
    gain_los: float
    gain_nlos: float
    gain: float
    rate_bps: float


def link_rng(*key: int) -> np.random.Generator:
    """Independent substream keyed by e.g. (seed, episode, slot, uav, node)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def elevation_deg(uav_pos, ger_pos) -> float:
    """Positions are (x, y, z); elevation of the UAV as seen from the ground node."""
    dz = uav_pos[2] - ger_pos[2]
    horiz = math.hypot(uav_pos[0] - ger_pos[0], uav_pos[1] - ger_pos[1])
    return math.degrees(math.atan2(dz, horiz))


def los_probability(uav_pos, ger_pos, a: float = 9.61, b: float = 0.16) -> float:
    phi = elevation_deg(uav_pos, ger_pos)
    return 1.0 / (1.0 + a * math.exp(-b * (phi - a)))


def sample_fading(shape_w: float, mean_power: float, rng: np.random.Generator, size=None):
    if shape_w < 0.5:
        raise InvalidShape(f"Nakagami shape {shape_w} < 0.5")
    if mean_power <= 0:
        raise ValueError("mean power must be positive")
    return np.sqrt(rng.gamma(shape_w, mean_power / shape_w, size=size))


def path_loss(distance_m: float, los: bool, consts: PhysConstants) -> float:
    d0 = consts.ref_distance_m
    if distance_m < d0:
        raise DistanceBelowReference(f"{distance_m} m < reference {d0} m")
    beta = consts.pathloss_exp_los if los else consts.pathloss_exp_nlos
    return (4.0 * math.pi * d0 * consts.carrier_freq_hz / consts.light_speed_mps) ** 2 * (distance_m / d0) ** beta


def sample_shadowing(sigma_db: float, rng: np.random.Generator, size=None):
    if sigma_db < 0:
        raise ValueError("negative shadowing std")
    return rng.normal(0.0, sigma_db, size=size) if sigma_db > 0 else (0.0 if size is None else np.zeros(size))


def shadow_factor(f_db):
    return 10.0 ** (-np.asarray(f_db) / 10.0)


def transmission_rate(gain: float, consts: PhysConstants) -> float:
    return consts.bandwidth_hz * math.log2(1.0 + consts.tx_power_w * gain / consts.noise_power_w)


def link_sample(uav_pos, ger_pos, consts: PhysConstants, rng: np.random.Generator,
                p_los: float | None = None) -> LinkSample:
    """One block-fading draw. ``p_los`` overrides the sigmoid (airship links use 1)."""
    d = math.dist(uav_pos, ger_pos)
    if p_los is None:
        p_los = los_probability(uav_pos, ger_pos, consts.los_param_a, consts.los_param_b)
    # fixed draw order keeps the stream layout independent of p_los
    h_l = sample_fading(consts.nakagami_shape_los, consts.mean_rx_power, rng)
    h_n = sample_fading(consts.nakagami_shape_nlos, consts.mean_rx_power, rng)
    f_l = sample_shadowing(consts.shadow_std_los_db, rng)
    f_n = sample_shadowing(consts.shadow_std_nlos_db, rng)
    g_l = float(h_l**2 / path_loss(d, True, consts) * shadow_factor(f_l))
    g_n = float(h_n**2 / path_loss(d, False, consts) * shadow_factor(f_n))
    if p_los >= 1.0:
        gain = g_l
    elif p_los <= 0.0:
        gain = g_n
    else:
        gain = p_los * g_l + (1.0 - p_los) * g_n
    return LinkSample(p_los=p_los, gain_los=g_l, gain_nlos=g_n, gain=gain, rate_bps=transmission_rate(gain, consts))
