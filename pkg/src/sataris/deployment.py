"""ARIS placement by successive convex approximation.

With the small-scale fading held fixed, the power a user receives from beam l is
``|a_l + u b_l|^2`` where ``u = d^{-beta/2}`` is the only position-dependent
factor (``a``: direct term, ``b``: distance-stripped reflected term). Each SCA
step brackets every user's u between two slacks and keeps all rate constraints
valid over the whole bracket, so the true rates at the new position are at least
the surrogate values.

Lengths inside the convex program are in units of the hovering altitude H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .rates import rates_from_powers


# --- distance / power forms ----------------------------------------------------

def build_f_matrices(h, G_j, g_hat_j, theta_j, w) -> np.ndarray:
    """(U, K, 2, 2) matrices F = E w w^H E^H with E = [h^H ; g_hat^H diag(e^{i theta}) G]."""
    a, b = split_amplitudes(h, G_j, g_hat_j, theta_j, w)
    e = np.stack([a, b], axis=-1)
    return np.einsum("uki,ukj->ukij", e, e.conj())


def split_amplitudes(h, G_j, g_hat_j, theta_j, w):
    """(U, K) direct amplitudes a and distance-stripped reflected amplitudes b."""
    a = h.conj() @ w.T
    refl = (g_hat_j.conj() * np.exp(1j * np.asarray(theta_j))) @ G_j      # (U, L)
    return a, refl @ w.T


def d_form_powers(F, d, beta: float) -> np.ndarray:
    """(U, K) received powers D F D^T with D = [1, d^{-beta/2}]."""
    u = np.asarray(d, dtype=float) ** (-beta / 2)
    D = np.stack([np.ones_like(u), u], axis=-1)
    return np.real(np.einsum("ui,ukij,uj->uk", D, F, D))


def expand_distance_constraints(q, omega, H: float, u_lo, u_hi, beta: float) -> dict:
    """Both sides of the bracketing constraints u_lo <= d^{-beta/2} <= u_hi in the
    squared-distance form ``d^2 <= u_lo^{-4/beta}`` and ``d^2 >= u_hi^{-4/beta}``.

    Returns the margins (>= 0 when satisfied).
    """
    d2 = np.sum((np.asarray(q, float) - np.asarray(omega, float)) ** 2, axis=-1) + H ** 2
    p = 4.0 / beta
    return dict(lower=np.asarray(u_lo, float) ** (-p) - d2, upper=d2 - np.asarray(u_hi, float) ** (-p))


# --- surrogates ------------------------------------------------------------------

def power_lb(u, u0, p: float):
    """Tangent lower bound of u^{-p} (convex for u > 0) at u0."""
    return u0 ** (-p) - p * u0 ** (-p - 1) * (np.asarray(u) - u0)


def square_lb(x, x0):
    return x0 ** 2 + 2 * x0 * (np.asarray(x) - x0)


def quadratic_power_lb(u, u0, A, B, C):
    """Tangent lower bound of A + 2 B u + C u^2 (C >= 0) at u0."""
    return A + 2 * B * u0 + C * u0 ** 2 + (2 * B + 2 * C * u0) * (np.asarray(u) - u0)


def log2_ub(s, s0):
    return np.log2(s0) + (np.asarray(s) - s0) / (s0 * math.log(2))


def fts_deployment(point: dict) -> dict:
    """Surrogate callables expanded at ``point`` (keys: u0, x0, y0, s0, A, B, C, p)."""
    return dict(
        power=lambda u: power_lb(u, point["u0"], point["p"]),
        x2=lambda x: square_lb(x, point["x0"]),
        y2=lambda y: square_lb(y, point["y0"]),
        quadratic=lambda u: quadratic_power_lb(u, point["u0"], point["A"], point["B"], point["C"]),
        log2=lambda s: log2_ub(s, point["s0"]),
    )


# --- SCA -------------------------------------------------------------------------

@dataclass
class DeploymentProblem:
    """Normalised data of one ARIS's placement subproblem (lengths in units of H)."""

    a: np.ndarray              # (U, K) direct amplitudes / sigma
    b: np.ndarray              # (U, K) stripped reflected amplitudes * H^{-beta/2} / sigma
    omega: np.ndarray          # (U, 2) user positions / H
    own: np.ndarray            # (U,) beam of each user
    is_eve: np.ndarray
    upsilon_bits: np.ndarray   # (U,)
    beta: float
    box: tuple                 # scaled (x0, x1, y0, y1)
    H: float

    def coefficients(self, exclude_own: bool):
        """Per-user (A, B, C) of sum_l |a_l + u b_l|^2 + 1, optionally without the own beam."""
        a, b = self.a, self.b
        mask = np.ones(a.shape, dtype=bool)
        if exclude_own:
            mask[np.arange(len(a)), self.own] = False
        A = np.sum(np.abs(a) ** 2 * mask, axis=1) + 1.0
        B = np.sum(np.real(a.conj() * b) * mask, axis=1)
        C = np.sum(np.abs(b) ** 2 * mask, axis=1)
        return A, B, C

    def u_of(self, q) -> np.ndarray:
        d2 = np.sum((np.asarray(q) - self.omega) ** 2, axis=1) + 1.0
        return d2 ** (-self.beta / 4)

    def rates(self, q) -> np.ndarray:
        u = self.u_of(q)
        P = np.abs(self.a + u[:, None] * self.b) ** 2
        _, r = rates_from_powers(P, self.own, np.ones(len(u)))
        return r

    def score(self, q) -> tuple[float, float]:
        r = self.rates(q)
        legit = float(r[~self.is_eve].min())
        excess = float(np.max(r[self.is_eve] - self.upsilon_bits[self.is_eve], initial=-np.inf))
        return legit, excess


def make_deployment_problem(h, G_j, g_hat_j, theta_j, w, user_xy, noise, own, is_eve,
                            upsilon_bits, beta: float, H: float, region) -> DeploymentProblem:
    a, b = split_amplitudes(h, G_j, g_hat_j, theta_j, w)
    s = np.sqrt(np.asarray(noise, float))[:, None]
    x0, x1, y0, y1 = region
    return DeploymentProblem(a / s, b * H ** (-beta / 2) / s, np.asarray(user_xy, float) / H,
                             np.asarray(own), np.asarray(is_eve, bool),
                             np.asarray(upsilon_bits, float), beta,
                             (x0 / H, x1 / H, y0 / H, y1 / H), H)


def _quad_le(prob, u, A, B, C, bound):
    """A + 2 B u + C u^2 <= bound (convex in u)."""
    if C <= 1e-14 * max(1.0, abs(A)):
        prob.le(A + 2 * B * u, bound)
        return
    sc = math.sqrt(C)
    prob.rsoc(bound - (A - B * B / C), 1.0, [sc * u + B / sc])


def deployment_sca_step(dp: DeploymentProblem, q0):
    """One convex restriction around q0 (scaled). Returns (q_new, omega_bits, ConicSolution)."""
    q0 = np.asarray(q0, dtype=float)
    U = len(dp.a)
    p = 4.0 / dp.beta
    ln2 = math.log(2)
    u0 = dp.u_of(q0)
    At, Bt, Ct = dp.coefficients(False)
    Ai, Bi, Ci = dp.coefficients(True)
    tot0 = At + 2 * Bt * u0 + Ct * u0 ** 2
    int0 = Ai + 2 * Bi * u0 + Ci * u0 ** 2
    prob = conic.ConicProblem()
    x, y = prob.scalar(), prob.scalar()
    omega = prob.scalar()
    bx = dp.box
    prob.ge(x, bx[0]); prob.le(x, bx[1]); prob.ge(y, bx[2]); prob.le(y, bx[3])
    for n in range(U):
        lo, hi, sig = prob.scalar(), prob.scalar(), prob.scalar()
        ox, oy = dp.omega[n]
        # lo <= d^{-beta/2}:  |q - w|^2 + 1 <= tangent of lo^{-p}
        prob.ge(lo, 1e-9)
        rhs = u0[n] ** (-p) - p * u0[n] ** (-p - 1) * (lo - u0[n])
        prob.rsoc(rhs - 1.0, 1.0, [x - ox, y - oy])
        # hi >= d^{-beta/2}:  hi^{-p} <= tangent of d^2
        dx0, dy0 = q0[0] - ox, q0[1] - oy
        d2_lin = dx0 ** 2 + dy0 ** 2 + 1.0 + 2 * dx0 * (x - q0[0]) + 2 * dy0 * (y - q0[1])
        prob.log_ge(sig, hi)
        prob.exp_le(-p * sig, d2_lin)
        s_bar, s_hat = prob.scalar(), prob.scalar()
        if not dp.is_eve[n]:
            for uu in (lo, hi):
                prob.le(s_bar, At[n] + 2 * Bt[n] * u0[n] + Ct[n] * u0[n] ** 2
                        + (2 * Bt[n] + 2 * Ct[n] * u0[n]) * (uu - u0[n]))
                _quad_le(prob, uu, Ai[n], Bi[n], Ci[n], s_hat)
            t = prob.scalar()
            prob.log_ge(t, s_bar)
            prob.ge(t - math.log(int0[n]) - (s_hat - int0[n]) / int0[n], omega * ln2)
        elif np.isfinite(dp.upsilon_bits[n]):
            for uu in (lo, hi):
                _quad_le(prob, uu, At[n], Bt[n], Ct[n], s_bar)
                prob.le(s_hat, Ai[n] + 2 * Bi[n] * u0[n] + Ci[n] * u0[n] ** 2
                        + (2 * Bi[n] + 2 * Ci[n] * u0[n]) * (uu - u0[n]))
            s = prob.scalar()
            prob.log_ge(s, s_hat)
            prob.le(math.log(tot0[n]) + (s_bar - tot0[n]) / tot0[n] - s, dp.upsilon_bits[n] * ln2)
    prob.maximize(omega)
    sol = conic.solve(prob)
    if not sol.ok:
        return q0, -np.inf, sol
    q = np.array([sol.value(x), sol.value(y)])
    q = np.clip(q, [bx[0], bx[2]], [bx[1], bx[3]])
    return q, float(sol.value(omega)), sol


@dataclass
class DeploymentResult:
    q: np.ndarray               # meters
    objective: float            # group min intended rate under the fixed-fading model
    trajectory: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)
    iterations: int = 0
    status: str = conic.OPTIMAL


def optimize_deployment(dp: DeploymentProblem, q0_m, eps_m: float = 1e-2,
                        max_iters: int = 30) -> DeploymentResult:
    """SCA loop; stops when the position moves by at most ``eps_m`` meters."""
    q = np.asarray(q0_m, dtype=float) / dp.H
    obj, excess = dp.score(q)
    traj, surr, status, it = [obj], [], conic.OPTIMAL, 0
    for it in range(1, max_iters + 1):
        q_new, om, sol = deployment_sca_step(dp, q)
        if not sol.ok:
            status = sol.status
            break
        new_obj, new_excess = dp.score(q_new)
        if new_excess > 1e-9 or new_obj < obj - 1e-9:
            break
        move = np.linalg.norm(q_new - q) * dp.H
        q, obj = q_new, new_obj
        traj.append(obj)
        surr.append(om)
        if move <= eps_m:
            break
    return DeploymentResult(q * dp.H, obj, traj, surr, it, status)
