"""Closed-form Kasner exponent maps.

The wave amplitude alpha(t, theta) extracted at the singularity fixes the
two roots d1 >= d2 of the indicial quadratic

    d^2 - (alpha - 3/2) d + (alpha^2 - 3/2 alpha) = 0,

which are the r^{-3/2} leading coefficients of K11 and K22.  In proper
time s ~ r^{3/2} the metric is Kasner with exponents
(p_t, p_theta, p_phi) = (-2 d1 / 3, -2 d2 / 3, 2 alpha / 3).
"""

from __future__ import annotations

import numpy as np

__all__ = ["d1", "d2", "discriminant", "kasner_triple", "lipschitz_envelope", "KasnerDomainError"]


class KasnerDomainError(ValueError):
    pass


def discriminant(alpha):
    """(alpha - 3/2)^2 + 6 alpha - 4 alpha^2, in the stable unexpanded form."""
    a = np.asarray(alpha, dtype=float)
    return (a - 1.5) ** 2 + 6.0 * a - 4.0 * a * a


def _sqrt_disc(alpha):
    disc = discriminant(alpha)
    if np.any(disc < 0):
        bad = np.asarray(alpha, dtype=float)[np.asarray(disc) < 0]
        raise KasnerDomainError(f"negative discriminant at alpha={np.atleast_1d(bad)[0]}")
    return np.sqrt(disc)


def d1(alpha):
    a = np.asarray(alpha, dtype=float)
    out = 0.5 * ((a - 1.5) + _sqrt_disc(a))
    return float(out) if np.isscalar(alpha) else out


def d2(alpha):
    a = np.asarray(alpha, dtype=float)
    out = 0.5 * ((a - 1.5) - _sqrt_disc(a))
    return float(out) if np.isscalar(alpha) else out


def kasner_triple(alpha):
    """(p_t, p_theta, p_phi) with Sum p = Sum p^2 = 1."""
    p_t = -2.0 / 3.0 * d1(alpha)
    p_theta = -2.0 / 3.0 * d2(alpha)
    a = np.asarray(alpha, dtype=float)
    p_phi = 2.0 / 3.0 * a
    if np.isscalar(alpha):
        return p_t, p_theta, float(p_phi)
    return p_t, p_theta, p_phi


def lipschitz_envelope(alpha_lo: float, alpha_hi: float, n: int = 4001) -> float:
    """Sampled Lipschitz constant of (d1, d2) over [alpha_lo, alpha_hi].

    Degenerate intervals return 0 by convention.
    """
    if alpha_hi < alpha_lo:
        raise KasnerDomainError("need alpha_lo <= alpha_hi")
    if alpha_hi == alpha_lo:
        return 0.0
    a = np.linspace(alpha_lo, alpha_hi, n)
    _sqrt_disc(a)  # raises if the interval leaves the admissible region
    q1 = np.abs(np.diff(d1(a)) / np.diff(a))
    q2 = np.abs(np.diff(d2(a)) / np.diff(a))
    return float(max(q1.max(), q2.max()))
