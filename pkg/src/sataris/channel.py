"""Channel synthesis: satellite feeds, satellite->ARIS, ARIS->ground, and the
composed end-to-end channel.

Conventions: a channel to a single-antenna node is stored as the column vector
``h``; the node receives ``h^H w``.  Effective channels are returned as rows
(already conjugated) so that the received amplitude is ``row @ w``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .scenario import (ScenarioConfig, Topology, aris_user_distance, beam_centers,
                       off_axis_angle, rng_stream)

PATTERN_U_3DB = 2.07123


def bessel_j(order: int, x):
    if order not in (1, 3):
        raise ValueError(f"unsupported Bessel order {order}")
    return special.jv(order, x)


def pattern_gain(u):
    """Normalised feed pattern (J1(u)/2u + 36 J3(u)/u^3)^2; equals 1 at u=0."""
    u = np.abs(np.asarray(u, dtype=float))
    small = u < 1e-3
    us = np.where(small, 1.0, u)
    amp = bessel_j(1, us) / (2 * us) + 36 * bessel_j(3, us) / us ** 3
    u2 = u * u
    series = (0.25 - u2 / 32 + u2 * u2 / 768) + (0.75 - 3 * u2 / 64 + 3 * u2 * u2 / 2560)
    return np.where(small, series, amp) ** 2


def beam_gain_vector(angles, g_max: float, phi_3db: float):
    """Linear gain of every feed towards a node, given its off-axis angle to each beam center."""
    u = PATTERN_U_3DB * np.sin(np.asarray(angles, dtype=float)) / math.sin(phi_3db)
    return g_max * pattern_gain(u)


def feed_angles(cfg: ScenarioConfig, topo: Topology, point3d) -> np.ndarray:
    centers = beam_centers(cfg, topo.group_centers)
    return off_axis_angle(topo.satellite_position, np.asarray(point3d, float)[None, :], centers)


def sample_rain_attenuation(mu: float, sigma: float, rng: np.random.Generator, L: int) -> np.ndarray:
    """Power attenuation vector r = xi^2 * 1 with ln(xi_dB) ~ Normal(mu, sigma^2)."""
    xi_db = math.exp(mu + sigma * rng.standard_normal())
    xi = 10 ** (xi_db / 20)
    return np.full(L, xi * xi)


def free_space(distance, wavelength: float):
    return wavelength / (4 * np.pi * distance) * np.exp(-2j * np.pi * distance / wavelength)


def sat_ground_channel(distance: float, wavelength: float, rain, b) -> np.ndarray:
    return free_space(distance, wavelength) * np.sqrt(b / np.asarray(rain, float))


def sat_aris_channel(distance: float, aoa_cos: float, N: int, spacing_ratio: float,
                     wavelength: float, rain, b, e_sub: int = 1) -> np.ndarray:
    """N x L satellite->ARIS channel of a ULA along x; row n carries phase -2*pi*(d/lambda)*n*phi."""
    steer = np.exp(-2j * np.pi * spacing_ratio * np.arange(N) * aoa_cos)
    row = sat_ground_channel(distance, wavelength, rain, b)
    return math.sqrt(e_sub) * steer[:, None] * row[None, :]


def aris_ground_fading(distance: float, aod_cos: float, N: int, spacing_ratio: float,
                       wavelength: float, reference_loss: float, rician: float,
                       nlos: np.ndarray, e_sub: int = 1) -> np.ndarray:
    """Distance-stripped ARIS->ground channel: sqrt(L0) * (Rician LoS/NLoS mix)."""
    los = np.exp(-2j * np.pi * distance / wavelength) * \
        np.exp(-2j * np.pi * spacing_ratio * np.arange(N) * aod_cos)
    mix = math.sqrt(rician / (rician + 1)) * los + math.sqrt(1 / (rician + 1)) * nlos
    return math.sqrt(e_sub * reference_loss) * mix


def aris_ground_channel(distance: float, aod_cos: float, N: int, spacing_ratio: float,
                        wavelength: float, reference_loss: float, beta: float, rician: float,
                        nlos: np.ndarray, e_sub: int = 1) -> np.ndarray:
    g_hat = aris_ground_fading(distance, aod_cos, N, spacing_ratio, wavelength,
                               reference_loss, rician, nlos, e_sub)
    return distance ** (-beta / 2) * g_hat


def nlos_draw(seed: int, j: int, user: int, N: int) -> np.ndarray:
    rng = rng_stream(seed, "nlos", j, user)
    return (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / math.sqrt(2)


def effective_channel(h, G, g, theta, chi_row) -> np.ndarray:
    """h^H + sum_j chi_j g_j^H diag(e^{i theta_j}) G_j as a length-L row.

    h: (L,), G: (J, N, L), g: (J, N), theta: (J, N), chi_row: (J,) association of
    the node's group with every ARIS.
    """
    h = np.asarray(h)
    G, g = np.asarray(G), np.asarray(g)
    theta = np.asarray(theta, dtype=float)
    chi_row = np.asarray(chi_row, dtype=float).reshape(-1)
    J = len(chi_row)
    if G.shape[:1] != (J,) or g.shape[:1] != (J,) or theta.shape[:1] != (J,):
        raise ValueError("ARIS dimension mismatch")
    if J and (G.shape[2] != h.size or G.shape[1] != g.shape[1] or g.shape[1] != theta.shape[1]):
        raise ValueError("channel dimension mismatch")
    row = np.conj(h).astype(complex)
    for j in range(len(G)):
        if chi_row[j]:
            row = row + chi_row[j] * ((np.conj(g[j]) * np.exp(1j * theta[j])) @ G[j])
    return row


@dataclass(frozen=True)
class ChannelSet:
    h: np.ndarray            # (U, L)
    G: np.ndarray            # (J, N, L)
    g: np.ndarray            # (J, U, N)
    g_hat: np.ndarray        # (J, U, N) distance-stripped, g = d^{-beta/2} g_hat
    distance: np.ndarray     # (J, U) ARIS-user distances
    wavelength: float

    def digest(self) -> str:
        m = hashlib.sha256()
        for a in (self.h, self.G, self.g):
            m.update(np.ascontiguousarray(a).tobytes())
        return m.hexdigest()


def aris_channels(cfg: ScenarioConfig, topo: Topology, j: int, q, seed: int):
    """Channels of ARIS j hovering over q: (G_j, g_j, g_hat_j, distances)."""
    lam = cfg.wavelength
    H = topo.aris_altitude
    q = np.asarray(q, dtype=float)
    pos3 = np.array([q[0], q[1], H])
    sat = topo.satellite_position
    d_s = float(np.linalg.norm(pos3 - sat))
    rain = sample_rain_attenuation(cfg.rain_mu, cfg.rain_sigma, rng_stream(seed, "rain", "aris", j), cfg.L)
    b = beam_gain_vector(feed_angles(cfg, topo, pos3), cfg.g_max, cfg.phi_3db)
    G = sat_aris_channel(d_s, (q[0] - sat[0]) / d_s, cfg.N, cfg.element_spacing_ratio, lam, rain, b, cfg.E_sub)
    U = len(topo.users)
    g_hat = np.empty((U, cfg.N), dtype=complex)
    d = aris_user_distance(q, topo.user_xy, H)
    for u in range(U):
        aod = (q[0] - topo.user_xy[u, 0]) / d[u]
        g_hat[u] = aris_ground_fading(d[u], aod, cfg.N, cfg.element_spacing_ratio, lam,
                                      cfg.reference_loss, cfg.rician_factor,
                                      nlos_draw(seed, j, u, cfg.N), cfg.E_sub)
    g = d[:, None] ** (-cfg.path_loss_exponent / 2) * g_hat
    return G, g, g_hat, d


def build_channels(cfg: ScenarioConfig, topo: Topology, q, seed: int) -> ChannelSet:
    lam = cfg.wavelength
    U = len(topo.users)
    sat = topo.satellite_position
    h = np.empty((U, cfg.L), dtype=complex)
    for u in range(U):
        p3 = np.array([*topo.user_xy[u], 0.0])
        d_s = float(np.linalg.norm(p3 - sat))
        rain = sample_rain_attenuation(cfg.rain_mu, cfg.rain_sigma, rng_stream(seed, "rain", "user", u), cfg.L)
        b = beam_gain_vector(feed_angles(cfg, topo, p3), cfg.g_max, cfg.phi_3db)
        h[u] = sat_ground_channel(d_s, lam, rain, b)
    J = cfg.J
    G = np.zeros((J, cfg.N, cfg.L), dtype=complex)
    g = np.zeros((J, U, cfg.N), dtype=complex)
    g_hat = np.zeros_like(g)
    dist = np.zeros((J, U))
    q = np.asarray(q, dtype=float).reshape(J, 2)
    for j in range(J):
        G[j], g[j], g_hat[j], dist[j] = aris_channels(cfg, topo, j, q[j], seed)
    return ChannelSet(h, G, g, g_hat, dist, lam)


def replace_aris(channels: ChannelSet, j: int, G_j, g_j, g_hat_j, d_j) -> ChannelSet:
    G, g, g_hat, dist = (a.copy() for a in (channels.G, channels.g, channels.g_hat, channels.distance))
    G[j], g[j], g_hat[j], dist[j] = G_j, g_j, g_hat_j, d_j
    return ChannelSet(channels.h, G, g, g_hat, dist, channels.wavelength)


@dataclass(frozen=True)
class ChannelModel:
    """Channel generator bound to one (config, topology, seed) draw.

    Rain and NLoS draws depend only on the seed and node identities, so channels
    regenerated at a new ARIS position keep the same fading realisation.
    """

    cfg: ScenarioConfig
    topo: Topology
    seed: int

    def build(self, q) -> ChannelSet:
        return build_channels(self.cfg, self.topo, q, self.seed)

    def aris(self, j: int, q):
        return aris_channels(self.cfg, self.topo, j, q, self.seed)

    def move(self, channels: ChannelSet, j: int, q) -> ChannelSet:
        return replace_aris(channels, j, *self.aris(j, q))
