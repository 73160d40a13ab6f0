"""Scale weights of super cells and their integer-block approximation."""
from __future__ import annotations

import math
from fractions import Fraction

from ..tess import SchemaParams

__all__ = ["psi_weights", "psi_tilde", "psi_ladder", "check_psi_sandwich"]


def psi_weights(schema: SchemaParams, k: int, nu: float | None = None, cm: float | None = None) -> float:
    """Weight of a scale-``k`` super cell.

    For ``k >= 2`` this is ``eps^2 lambda0 l_{k-1}^d / (k+1)^4``.  For ``k = 1``
    it is ``min(eps^2 lambda0 l^d / C_M, log(1 / (1 - nu)))`` where ``nu`` is
    an estimate of the probability of the single-scale event under the
    thinned, displacement-conditioned Poisson cloud.
    """
    p = schema
    if not 1 <= k <= p.kappa:
        raise ValueError(f"scale {k} outside 1..{p.kappa}")
    eps2 = float(p.eps) ** 2
    if k >= 2:
        return float(Fraction(p.eps) ** 2 * p.ell_k(k - 1) ** p.d / (k + 1) ** 4) * p.lambda0
    if nu is None:
        raise ValueError("the scale-1 weight needs an estimate of nu")
    if not 0 <= nu <= 1:
        raise ValueError("nu must lie in [0, 1]")
    cm = p.cm if cm is None else cm
    first = eps2 * p.lambda0 * float(p.ell) ** p.d / cm
    second = math.inf if nu >= 1 else -math.log1p(-nu)
    return min(first, second)


def psi_tilde(schema: SchemaParams, j: int) -> float:
    """Block weight: ``psi_2`` for ``j = 2`` and ``2 psi_2 m^{(j-2)d} ((j-1)!)^{ad-3} ((j-2)!)^2 (j-3)!`` above."""
    p = schema
    if j < 2:
        raise ValueError("defined for j >= 2")
    psi2 = Fraction(p.eps) ** 2 * p.ell ** p.d / 3 ** 4
    if j == 2:
        return float(psi2) * p.lambda0
    f = math.factorial
    val = 2 * psi2 * Fraction(p.m) ** ((j - 2) * p.d) * Fraction(f(j - 1)) ** (p.a * p.d - 3) \
        * f(j - 2) ** 2 * f(j - 3)
    return float(val) * p.lambda0


def psi_ladder(schema: SchemaParams, nu: float | None = None):
    """Rows ``(k, l_k, beta_k, eps_k, psi_k)`` for ``k = 1..kappa``; ``psi_1`` is None without ``nu``."""
    p = schema
    rows = []
    for k in range(1, p.kappa + 1):
        if k == 1:
            psi = psi_weights(p, 1, nu) if nu is not None else None
        else:
            psi = psi_weights(p, k)
        rows.append((k, p.ell_k(k), p.beta_k(k), p.eps_k(k), psi))
    return rows


def check_psi_sandwich(schema: SchemaParams, kmax: int | None = None) -> dict:
    """Check ``psi~_j <= psi_j <= 41 psi~_j`` for ``2 <= j <= kmax`` with exact arithmetic."""
    p = schema
    kmax = p.kappa if kmax is None else kmax
    out = {"checked": 0, "violations": [], "increasing": True}
    prev = None
    f = math.factorial
    for j in range(2, kmax + 1):
        psi = Fraction(p.eps) ** 2 * p.ell_k(j - 1) ** p.d / Fraction((j + 1) ** 4)
        psi2 = Fraction(p.eps) ** 2 * p.ell ** p.d / 3 ** 4
        til = psi2 if j == 2 else (2 * psi2 * Fraction(p.m) ** ((j - 2) * p.d) * Fraction(f(j - 1)) ** (p.a * p.d - 3)
                                   * f(j - 2) ** 2 * f(j - 3))
        out["checked"] += 1
        if not til <= psi <= 41 * til:
            out["violations"].append((j, float(til), float(psi)))
        if prev is not None and not psi > prev:
            out["increasing"] = False
        prev = psi
    return out
