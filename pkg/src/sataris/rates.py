"""SINR, rate and objective evaluation, plus the equivalent quadratic-form rate
used by the subproblem solvers.

Rates are in bits/s/Hz. Received powers are computed from effective rows
``a_u`` (see :func:`effective_rows`), so the power user ``u`` receives from
beam ``l`` is ``|a_u @ w_l|**2``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import ChannelSet
from .scenario import ScenarioConfig, Topology


@dataclass
class DecisionState:
    """One full BCD iterate."""

    w: np.ndarray                      # (K, L) complex beamformers
    theta: np.ndarray                  # (J, N) phases in [0, 2pi)
    chi: np.ndarray                    # (J, K) association, binary when emitted
    q: np.ndarray                      # (J, 2) ARIS horizontal positions
    Omega: np.ndarray = None           # (K,) group rates of the last solve
    W: Optional[np.ndarray] = None     # (K, L, L) lifted beamformers, if available

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=complex)
        self.theta = np.mod(np.asarray(self.theta, dtype=float), 2 * np.pi)
        self.chi = np.asarray(self.chi, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 2)
        if self.Omega is None:
            self.Omega = np.zeros(len(self.w))

    @property
    def lifted(self) -> np.ndarray:
        if self.W is not None:
            return self.W
        return np.einsum("ki,kj->kij", self.w, self.w.conj())

    def copy(self, **changes) -> "DecisionState":
        base = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        base = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in base.items()}
        base.update(changes)
        return DecisionState(**base)


@dataclass
class RateReport:
    sinr: np.ndarray
    rate: np.ndarray
    group_min: np.ndarray
    group_eve_max: np.ndarray
    objective: float
    sum_rate: float
    residuals: dict = field(default_factory=dict)

    @property
    def max_eve_rate(self) -> float:
        finite = self.group_eve_max[np.isfinite(self.group_eve_max)]
        return float(finite.max()) if finite.size else 0.0


# --- elementary evaluators ----------------------------------------------------

def user_rate(sinr):
    return np.log2(1 + np.asarray(sinr, dtype=float))


def sinr(row, w_set, k: int, noise: float) -> float:
    """SINR of a node with effective row ``row`` for beam ``k``."""
    p = np.abs(np.asarray(w_set) @ np.asarray(row)) ** 2
    return float(p[k] / (p.sum() - p[k] + noise))


def sinr_trace(Xi, W_set, k: int, noise: float) -> float:
    """Same SINR from the lifted form Tr(Xi W_l)."""
    t = np.real(np.einsum("ij,lji->l", Xi, W_set))
    return float(t[k] / (t.sum() - t[k] + noise))


def quadratic_form_rate(A_set, x, k: int, noise: float) -> float:
    """log2((sum_l x A_l x^H + s) / (sum_{l!=k} x A_l x^H + s)) for a row vector x."""
    A_set = np.asarray(A_set)
    x = np.asarray(x)
    if A_set.ndim != 3 or A_set.shape[1:] != (x.size, x.size):
        raise ValueError("dimension mismatch between forms and vector")
    p = np.real(np.einsum("i,lij,j->l", x, A_set, x.conj()))
    return float(np.log2((p.sum() + noise) / (p.sum() - p[k] + noise)))


def objective_from_rates(rate, user_group, is_eve, K: int) -> float:
    return float(group_minima(rate, user_group, is_eve, K).sum())


def group_minima(rate, user_group, is_eve, K: int) -> np.ndarray:
    rate = np.asarray(rate, dtype=float)
    out = np.empty(K)
    for k in range(K):
        sel = (user_group == k) & ~is_eve
        out[k] = rate[sel].min()
    return out


def objective(report: RateReport) -> float:
    return float(np.sum(report.group_min))


# --- vectorised composition ----------------------------------------------------

def reflected_rows(channels: ChannelSet, theta) -> np.ndarray:
    """(J, U, L) rows g_{j,u}^H diag(e^{i theta_j}) G_j."""
    theta = np.asarray(theta, dtype=float)
    if channels.G.shape[0] == 0:
        return np.zeros((0,) + channels.h.shape, dtype=complex)
    return np.einsum("jun,jnl->jul", channels.g.conj() * np.exp(1j * theta)[:, None, :], channels.G)


def effective_rows(channels: ChannelSet, theta, chi, user_group) -> np.ndarray:
    """(U, L) end-to-end rows: each user sees only ARISs associated with its group."""
    rows = channels.h.conj().astype(complex)
    chi = np.asarray(chi, dtype=float)
    if chi.size:
        gate = chi[:, user_group]                      # (J, U)
        rows = rows + np.einsum("ju,jul->ul", gate, reflected_rows(channels, theta))
    return rows


def received_powers(rows, w) -> np.ndarray:
    """(U, K) power each user receives from each beam."""
    return np.abs(np.asarray(rows) @ np.asarray(w).T) ** 2


def rates_from_powers(P, user_group, noise) -> tuple[np.ndarray, np.ndarray]:
    U = P.shape[0]
    sig = P[np.arange(U), user_group]
    s = sig / (P.sum(axis=1) - sig + noise)
    return s, np.log2(1 + s)


def evaluate(state: DecisionState, channels: ChannelSet, topo: Topology,
             cfg: ScenarioConfig) -> RateReport:
    rows = effective_rows(channels, state.theta, state.chi, topo.user_group)
    s, r = rates_from_powers(received_powers(rows, state.w), topo.user_group, topo.noise)
    gmin = group_minima(r, topo.user_group, topo.user_is_eve, cfg.K)
    eve = np.full(cfg.K, -np.inf)
    for k in range(cfg.K):
        sel = (topo.user_group == k) & topo.user_is_eve
        if sel.any():
            eve[k] = r[sel].max()
    report = RateReport(s, r, gmin, eve, float(gmin.sum()), float(gmin.sum()))
    report.residuals = check_feasibility(state, channels, topo, cfg, rates=r)
    return report


def check_feasibility(state: DecisionState, channels: ChannelSet, topo: Topology,
                      cfg: ScenarioConfig, rates=None) -> dict:
    """Signed residuals of every constraint; a constraint holds iff its residual <= 0.

    ``wiretap``: max_e R_e - Upsilon_k (bits/s/Hz); ``power``: (sum ||w_k||^2 - P_T)/P_T;
    ``modulus``: max ||e^{i theta}| - 1|; ``binary``: max chi(1-chi) magnitude;
    ``row_sum`` / ``col_sum``: association equalities and capacities (an all-zero
    association is accepted as "no ARIS in use"); ``box``: distance
    outside the deployment region (m).
    """
    if rates is None:
        rows = effective_rows(channels, state.theta, state.chi, topo.user_group)
        _, rates = rates_from_powers(received_powers(rows, state.w), topo.user_group, topo.noise)
    ups = cfg.upsilon
    wiretap = np.full(cfg.K, -np.inf)
    for k in range(cfg.K):
        sel = (topo.user_group == k) & topo.user_is_eve
        wiretap[k] = (rates[sel].max() if sel.any() else 0.0) - ups[k]
    power = float((np.sum(np.abs(state.w) ** 2) - cfg.P_T) / cfg.P_T)
    modulus = float(np.max(np.abs(np.abs(np.exp(1j * state.theta)) - 1), initial=0.0))
    chi = state.chi
    binary = float(np.max(np.abs(chi * (1 - chi)), initial=0.0))
    # an all-zero association means the ARISs are switched off (direct links only)
    row_sum = float(np.max(np.abs(chi.sum(axis=1) - 1), initial=0.0)) if chi.any() else 0.0
    col_sum = float(np.max(chi.sum(axis=0) - 1, initial=-1.0)) if chi.size else -1.0
    x0, x1, y0, y1 = cfg.region
    q = state.q
    box = float(np.max(np.concatenate([x0 - q[:, 0], q[:, 0] - x1, y0 - q[:, 1], q[:, 1] - y1]),
                       initial=-np.inf)) if q.size else -np.inf
    return dict(wiretap=float(wiretap.max()), wiretap_per_group=wiretap, power=power,
                modulus=modulus, binary=binary, row_sum=row_sum, col_sum=col_sum, box=box)


def is_feasible(residuals: dict, rate_tol: float = 1e-4, tol: float = 1e-8) -> bool:
    return (residuals["wiretap"] <= rate_tol and residuals["power"] <= tol
            and residuals["modulus"] <= tol and residuals["binary"] <= tol
            and residuals["row_sum"] <= tol and residuals["col_sum"] <= tol
            and residuals["box"] <= 1e-6)


def rate_upper_bound(channels: ChannelSet, theta, chi, topo: Topology, cfg: ScenarioConfig) -> float:
    """Interference-free full-power bound sum_k log2(1 + P_T max_i ||a_i||^2 / s)."""
    rows = effective_rows(channels, theta, chi, topo.user_group)
    snr = cfg.P_T * np.sum(np.abs(rows) ** 2, axis=1) / topo.noise
    return float(sum(np.log2(1 + snr[topo.user_group == k].max()) for k in range(cfg.K)))
