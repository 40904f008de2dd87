"""Auxiliary-variable (minorize/majorize) bounds on log terms, shared by the
transmit and reflection SDRs.

For x > 0 and any z > 0:
    -ln x >= ln z - z x + 1     (tight at z = 1/x)
     ln x <= -ln z + z x - 1    (tight at z = 1/x)
"""
from __future__ import annotations

import math

import numpy as np

from .conic import Affine, ConicProblem, affine_sum


def neg_log_minorant(x, z):
    return np.log(z) - z * x + 1


def log_majorant(x, z):
    return -np.log(z) + z * x - 1


def closed_form_aux(P, user_group, is_eve, noise) -> np.ndarray:
    """z_u = 1/(interference + noise) for intended users, 1/(total + noise) for eavesdroppers.

    P: (U, K) received powers (same units as noise).
    """
    P = np.asarray(P, dtype=float)
    U = P.shape[0]
    total = P.sum(axis=1)
    interf = total - P[np.arange(U), user_group]
    return 1.0 / (np.where(is_eve, total, interf) + noise)


def add_rate_constraints(prob: ConicProblem, T, own, is_eve, aux, omega, upsilon_bits):
    """Convex restriction of  R_m >= omega_k  and  R_e <= Upsilon_k  in normalised units.

    T[u][l]: Affine received power of user u from beam l (noise normalised to 1).
    own[u]: index of the user's own beam; omega[u]: Affine rate target (bits) of its group.
    aux[u]: normalised auxiliary (noise-scaled z).
    """
    ln2 = math.log(2)
    for u, row in enumerate(T):
        k = own[u]
        total = affine_sum(row) + 1.0
        interf = affine_sum([row[l] for l in range(len(row)) if l != k]) + 1.0
        z = float(aux[u])
        if not is_eve[u]:
            t = prob.scalar()
            prob.log_ge(t, total)
            prob.ge(t + math.log(z) - z * interf + 1.0, omega[u] * ln2)
        elif np.isfinite(upsilon_bits[u]):
            s = prob.scalar()
            prob.log_ge(s, interf)
            prob.le(-math.log(z) + z * total - 1.0 - s, upsilon_bits[u] * ln2)


def wiretap_scale(P, user_group, is_eve, noise, upsilon_bits, safety: float = 1e-9) -> float:
    """Largest c <= 1 such that scaling every beam's power by c meets all wiretap caps."""
    P = np.asarray(P, dtype=float)
    c = 1.0
    for u in np.flatnonzero(is_eve):
        ups = upsilon_bits[u]
        if not np.isfinite(ups):
            continue
        gamma = 2.0 ** ups - 1
        S = P[u, user_group[u]]
        I = P[u].sum() - S
        if S - gamma * I > 0:
            c = min(c, gamma * noise[u] / (S - gamma * I))
    return c * (1 - safety) if c < 1 else 1.0
