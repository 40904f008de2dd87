"""Static scenario configuration, topology sampling and geometric primitives.

All lengths are meters, powers watts, rates bits/s/Hz. Angles are radians.
"""
from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT = 299_792_458.0

INTENDED = "intended"
EAVESDROPPER = "eavesdropper"


class ConfigError(ValueError):
    """Raised when a scenario config cannot be parsed or violates an invariant."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ScenarioConfig:
    # network sizes
    K: int = 5
    J: int = 3
    L: int = 5
    N: int = 25
    E_sub: int = 25
    M: int = 3
    E: int = 1
    # powers and radio
    P_T: float = 100.0
    carrier_freq: float = 6e9
    bandwidth: float = 200e6
    noise_temp: float = 290.0
    g_max: float = 1e5
    phi_3db: float = 0.005
    element_spacing_ratio: float = 0.5
    # geometry
    sat_altitude: float = 220e3
    aris_altitude: float = 100.0
    group_radius: float = 300.0
    group_spacing: float = 2000.0
    layout: str = "ring"
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    # propagation
    path_loss_exponent: float = 2.3
    reference_loss: float = 1e-2
    rician_factor: float = 10 ** 0.3
    rain_mu: float = -3.125
    rain_sigma: float = 1.591
    # security / optimisation
    wiretap_threshold: tuple = (1.0,)
    penalty: float = 10.0
    penalty_escalation: bool = False
    association_start: str = "uniform"
    eps_t: float = 1e-3
    eps_r: float = 1e-3
    eps_a: float = 1e-2
    eps_d: float = 1e-2
    eps_s: float = 1e-3
    eps_l: float = 1e-2
    eps: float = 1e-3
    max_tx_iters: int = 50
    max_ris_iters: int = 50
    max_assoc_iters: int = 30
    max_deploy_iters: int = 30
    max_small_iters: int = 20
    max_large_iters: int = 20
    max_outer_iters: int = 15
    n_rand_tx: int = 200
    n_rand_ris: int = 100

    def __post_init__(self):
        ups = self.wiretap_threshold
        if np.isscalar(ups):
            ups = (float(ups),)
        ups = tuple(float(u) for u in ups)
        if len(ups) == 1:
            ups = ups * self.K
        object.__setattr__(self, "wiretap_threshold", ups)
        self.validate()

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("must be at least 1", "K")
        if self.J < 0:
            raise ConfigError("must be non-negative", "J")
        if self.J > self.K:
            raise ConfigError(f"J exceeds K ({self.J} > {self.K})", "J")
        for name in ("L", "N", "E_sub", "M"):
            if getattr(self, name) < 1:
                raise ConfigError("must be at least 1", name)
        if self.E < 0:
            raise ConfigError("must be non-negative", "E")
        for name in ("P_T", "carrier_freq", "bandwidth", "noise_temp", "g_max",
                     "element_spacing_ratio", "sat_altitude", "aris_altitude",
                     "group_radius", "group_spacing", "path_loss_exponent",
                     "reference_loss", "rician_factor", "penalty", "eps_t",
                     "eps_r", "eps_a", "eps_d", "eps_s", "eps_l", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be strictly positive", name)
        if not 0 < self.phi_3db < math.pi / 2:
            raise ConfigError("must lie in (0, pi/2)", "phi_3db")
        if self.rain_sigma < 0:
            raise ConfigError("must be non-negative", "rain_sigma")
        if len(self.wiretap_threshold) != self.K:
            raise ConfigError(f"expected 1 or K={self.K} values", "wiretap_threshold")
        if any(not u >= 0 for u in self.wiretap_threshold):
            raise ConfigError("thresholds must be >= 0", "wiretap_threshold")
        if self.layout not in ("ring", "line"):
            raise ConfigError("must be 'ring' or 'line'", "layout")
        if self.association_start not in ("uniform", "previous"):
            raise ConfigError("must be 'uniform' or 'previous'", "association_start")
        for name in ("max_tx_iters", "max_ris_iters", "max_assoc_iters", "max_deploy_iters",
                     "max_small_iters", "max_large_iters", "max_outer_iters",
                     "n_rand_tx", "n_rand_ris"):
            if getattr(self, name) < 1:
                raise ConfigError("must be at least 1", name)
        region = self.region
        if not (region[0] < region[1] and region[2] < region[3]):
            raise ConfigError("empty deployment region", "x_min")

    # derived quantities
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def noise_power(self) -> float:
        return BOLTZMANN * self.bandwidth * self.noise_temp

    @property
    def users_per_group(self) -> int:
        return self.M + self.E

    @property
    def upsilon(self) -> np.ndarray:
        return np.asarray(self.wiretap_threshold, dtype=float)

    @property
    def region(self) -> tuple[float, float, float, float]:
        """Deployment box (x_min, x_max, y_min, y_max); defaults to the group
        bounding box grown by one group radius."""
        c = group_centers(self)
        r = self.group_radius
        defaults = (c[:, 0].min() - r, c[:, 0].max() + r, c[:, 1].min() - r, c[:, 1].max() + r)
        given = (self.x_min, self.x_max, self.y_min, self.y_max)
        return tuple(float(d if g is None else g) for g, d in zip(given, defaults))

    def replace(self, **changes) -> "ScenarioConfig":
        if "K" in changes and "wiretap_threshold" not in changes:
            ups = set(self.wiretap_threshold)
            if len(ups) == 1:
                changes["wiretap_threshold"] = (ups.pop(),)
        return dataclasses.replace(self, **changes)


DESK_OVERRIDES = dict(K=3, J=2, L=4, N=8, E_sub=8, M=2, E=1)


def desk_config(**changes) -> ScenarioConfig:
    """Laptop-scale scenario used by the test and acceptance suites."""
    return ScenarioConfig(**{**DESK_OVERRIDES, **changes})


# --- config text --------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_DB_KEYS = {
    "g_max_dbi": "g_max",
    "reference_loss_db": "reference_loss",
    "rician_factor_db": "rician_factor",
}
_INT_FIELDS = {n for n, f in _FIELDS.items() if f.type in ("int", int)}
_BOOL_FIELDS = {"penalty_escalation"}
_STR_FIELDS = {"layout", "association_start"}
_OPTIONAL_FIELDS = {"x_min", "x_max", "y_min", "y_max"}

CONFIG_SCHEMA = {
    "K": "number of multicast groups (= satellite beams)",
    "J": "number of aerial RISs (0 <= J <= K)",
    "L": "satellite antenna feeds",
    "N": "subsurfaces per ARIS",
    "E_sub": "reflecting elements per subsurface",
    "M": "intended users per group",
    "E": "eavesdroppers per group",
    "P_T": "total satellite transmit power [W]",
    "carrier_freq": "carrier frequency [Hz]",
    "bandwidth": "bandwidth [Hz]",
    "noise_temp": "receiver noise temperature [K]",
    "g_max": "peak feed gain [linear]  (or g_max_dbi [dBi])",
    "phi_3db": "3 dB half-beamwidth [rad]",
    "element_spacing_ratio": "element spacing / wavelength",
    "sat_altitude": "satellite altitude [m]",
    "aris_altitude": "ARIS hovering altitude H [m]",
    "group_radius": "group radius [m]",
    "group_spacing": "distance between neighbouring group centers [m]",
    "layout": "group-center layout: ring | line",
    "x_min": "deployment box [m] (x_min, x_max, y_min, y_max; default: group bbox + radius)",
    "x_max": "", "y_min": "", "y_max": "",
    "path_loss_exponent": "air-ground path loss exponent",
    "reference_loss": "path loss at 1 m [linear]  (or reference_loss_db, e.g. 20)",
    "rician_factor": "Rician K-factor [linear]  (or rician_factor_db)",
    "rain_mu": "mean of ln(rain attenuation in dB)",
    "rain_sigma": "std of ln(rain attenuation in dB)",
    "wiretap_threshold": "eavesdropper rate cap [bits/s/Hz]; one value or K comma-separated",
    "penalty": "association penalty factor tau",
    "penalty_escalation": "double tau each outer round (capped at 1e3): true | false",
    "association_start": "association SCA start point: uniform | previous",
    "eps_t": "tx beamforming stop", "eps_r": "reflection stop",
    "eps_a": "association stop", "eps_d": "deployment stop [m]",
    "eps_s": "small-scale stop", "eps_l": "large-scale stop", "eps": "outer stop",
    "max_tx_iters": "iteration caps", "max_ris_iters": "", "max_assoc_iters": "",
    "max_deploy_iters": "", "max_small_iters": "", "max_large_iters": "", "max_outer_iters": "",
    "n_rand_tx": "Gaussian randomisation draws (tx)",
    "n_rand_ris": "Gaussian randomisation draws (reflection)",
}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _BOOL_FIELDS:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if key in _STR_FIELDS:
            return raw
        if key in _OPTIONAL_FIELDS:
            return None if raw.lower() in ("none", "") else float(raw)
        if key == "wiretap_threshold":
            return tuple(float(v) for v in raw.split(","))
        if key in _INT_FIELDS:
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}", key) from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of ScenarioConfig keyword arguments."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _DB_KEYS:
            target = _DB_KEYS[key]
            db = _parse_value(target, raw)
            value = 10 ** (-db / 10) if target == "reference_loss" else 10 ** (db / 10)
            key = target
        elif key in _FIELDS:
            value = _parse_value(key, raw)
        else:
            raise ConfigError(f"unknown key (line {lineno})", key)
        if key in values:
            raise ConfigError(f"duplicate key (line {lineno})", key)
        values[key] = value
    return values


def load_scenario(text: str) -> ScenarioConfig:
    """Build a validated ScenarioConfig from flat config text; missing keys take defaults."""
    return ScenarioConfig(**parse_config_text(text))


def dump_scenario(cfg: ScenarioConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if name == "wiretap_threshold":
            value = ", ".join(repr(v) for v in value)
        elif value is None:
            value = "none"
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


# --- topology -----------------------------------------------------------------

def rng_stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for one purpose; tags are strings or non-negative ints."""
    key = tuple(zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class UserNode:
    position: np.ndarray
    role: str
    group: int
    noise_power: float

    @property
    def is_eavesdropper(self) -> bool:
        return self.role == EAVESDROPPER


@dataclass(frozen=True)
class Topology:
    group_centers: np.ndarray        # (K, 2)
    users: tuple                     # UserNode, grouped: M intended then E eavesdroppers
    aris_initial: np.ndarray         # (J, 2)
    aris_altitude: float
    satellite_position: np.ndarray   # (3,)
    user_xy: np.ndarray = field(init=False, repr=False)
    user_group: np.ndarray = field(init=False, repr=False)
    user_is_eve: np.ndarray = field(init=False, repr=False)
    noise: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        set_ = lambda n, v: object.__setattr__(self, n, v)
        set_("user_xy", np.array([u.position for u in self.users], dtype=float).reshape(-1, 2))
        set_("user_group", np.array([u.group for u in self.users], dtype=int))
        set_("user_is_eve", np.array([u.is_eavesdropper for u in self.users], dtype=bool))
        set_("noise", np.array([u.noise_power for u in self.users], dtype=float))

    @property
    def K(self) -> int:
        return len(self.group_centers)

    def group_users(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.user_group == k)

    def intended_centroid(self, k: int) -> np.ndarray:
        idx = np.flatnonzero((self.user_group == k) & ~self.user_is_eve)
        return self.user_xy[idx].mean(axis=0)


def group_centers(cfg: ScenarioConfig) -> np.ndarray:
    K, s = cfg.K, cfg.group_spacing
    if K == 1:
        return np.zeros((1, 2))
    if cfg.layout == "line":
        x = (np.arange(K) - (K - 1) / 2) * s
        return np.column_stack([x, np.zeros(K)])
    radius = s / (2 * math.sin(math.pi / K))
    ang = 2 * math.pi * np.arange(K) / K
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


def sample_disc(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    a = 2 * math.pi * rng.random(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def clip_to_region(cfg: ScenarioConfig, xy: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1 = cfg.region
    xy = np.array(xy, dtype=float)
    xy[..., 0] = np.clip(xy[..., 0], x0, x1)
    xy[..., 1] = np.clip(xy[..., 1], y0, y1)
    return xy


def sample_topology(cfg: ScenarioConfig, seed: int) -> Topology:
    """Users uniform in each group's disc; ARIS j starts over group j's intended-user centroid."""
    centers = group_centers(cfg)
    noise = cfg.noise_power
    users = []
    for k in range(cfg.K):
        pts = centers[k] + sample_disc(rng_stream(seed, "users", k), cfg.users_per_group,
                                       cfg.group_radius)
        for i, p in enumerate(pts):
            role = INTENDED if i < cfg.M else EAVESDROPPER
            users.append(UserNode(p, role, k, noise))
    sat = np.array([*centers.mean(axis=0), cfg.sat_altitude])
    topo = Topology(centers, tuple(users), np.zeros((cfg.J, 2)), cfg.aris_altitude, sat)
    aris = np.array([topo.intended_centroid(j) for j in range(cfg.J)]).reshape(cfg.J, 2)
    object.__setattr__(topo, "aris_initial", clip_to_region(cfg, aris))
    return topo


# --- geometric primitives -----------------------------------------------------

def aris_user_distance(q, omega, H: float):
    """3-D distance between an ARIS hovering at altitude H over q and a ground point omega."""
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return np.sqrt(np.sum((q - omega) ** 2, axis=-1) + H ** 2)


def off_axis_angle(sat_pos, node_pos, beam_center) -> float:
    """Angle at the satellite between the rays to ``node_pos`` and to ``beam_center``.

    Ground points may be given in 2-D (altitude 0).
    """
    sat = np.asarray(sat_pos, dtype=float)
    a = _as3d(node_pos) - sat
    b = _as3d(beam_center) - sat
    cross = np.linalg.norm(np.cross(a, b, axis=-1), axis=-1)
    return np.arctan2(cross, np.sum(a * b, axis=-1))


def _as3d(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] == 2:
        p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
    return p


def beam_centers(cfg: ScenarioConfig, centers: np.ndarray) -> np.ndarray:
    """Ground aim point of each of the L feeds.

    Feed l < K aims at group l. Extra feeds aim at midpoints between consecutive
    group centers, then cycle.
    """
    K = len(centers)
    extra = [(centers[i] + centers[(i + 1) % K]) / 2 for i in range(K)] if K > 1 else [centers[0]]
    pool = list(centers) + extra
    return np.array([pool[l % len(pool)] for l in range(cfg.L)])
