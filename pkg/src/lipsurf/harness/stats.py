"""Statistical helpers shared by the experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "chernoff_bound",
    "dispersion_test",
    "DispersionResult",
    "LinearFit",
    "weighted_linear_fit",
    "fit_log_survival",
    "mean_ci",
    "survival",
]


def chernoff_bound(lam: float, eps: float, side: str = "lower") -> float:
    """Poisson tail bounds.

    ``lower``: ``P[P < (1 - eps) lam] < exp(-lam eps^2 / 2)``;
    ``upper``: ``P[P > (1 + eps) lam] < exp(-lam eps^2 / 4)``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if side == "lower":
        return math.exp(-lam * eps ** 2 / 2)
    if side == "upper":
        return math.exp(-lam * eps ** 2 / 4)
    raise ValueError("side must be 'lower' or 'upper'")


@dataclass
class DispersionResult:
    statistic: float
    dof: int
    p_value: float
    mean: float
    variance: float
    n: int


def dispersion_test(counts, mean: float | None = None) -> DispersionResult:
    """Two-sided index-of-dispersion test of the Poisson hypothesis.

    With ``mean`` given the statistic is ``sum (x - mean)^2 / mean`` on ``n``
    degrees of freedom; otherwise the sample mean is used and one degree of
    freedom is lost.
    """
    x = np.asarray(counts, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two counts")
    m = float(x.mean()) if mean is None else float(mean)
    if m <= 0:
        return DispersionResult(0.0, n - 1, 1.0 if np.all(x == 0) else 0.0, m, float(x.var(ddof=1)), n)
    dof = n - 1 if mean is None else n
    stat = float(((x - m) ** 2).sum() / m)
    lo = stats.chi2.cdf(stat, dof)
    p = float(min(1.0, 2 * min(lo, 1 - lo)))
    return DispersionResult(stat, dof, p, m, float(x.var(ddof=1)), n)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    slope_se: float = float("nan")

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "n_points": self.n_points,
                "slope_se": self.slope_se}


def weighted_linear_fit(x, y, w=None) -> LinearFit:
    """Weighted least squares ``y ~ a + b x`` with weighted R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & np.isfinite(w) & (w > 0)
    x, y, w = x[ok], y[ok], w[ok]
    n = x.size
    if n < 2 or np.ptp(x) == 0:
        return LinearFit(float("nan"), float("nan"), float("nan"), int(n))
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    b = (w * (x - xm) * (y - ym)).sum() / sxx
    a = ym - b * xm
    res = y - a - b * x
    sst = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - (w * res ** 2).sum() / sst if sst > 0 else float("nan")
    se = math.sqrt((w * res ** 2).sum() / (n - 2) / sxx) if n > 2 else float("nan")
    return LinearFit(float(b), float(a), float(r2), int(n), float(se))


def survival(values, grid) -> np.ndarray:
    """Empirical ``P[X > r]`` for every ``r`` in ``grid``; NaN values count as ``-inf``."""
    v = np.asarray(values, dtype=float)
    v = np.where(np.isnan(v), -np.inf, v)
    return np.array([(v > r).mean() if v.size else 0.0 for r in grid])


def fit_log_survival(r, surv, n: int, transform=None) -> LinearFit:
    """Fit ``log P[X > r]`` against ``r`` (or ``transform(r)``) with binomial weights.

    Points with zero or unit survival are dropped (the logarithm or its
    variance is degenerate there); ``n_points`` tells how many remained.
    The weight is the inverse delta-method variance ``n P / (1 - P)``.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(surv, dtype=float)
    ok = (s > 0) & (s < 1)
    x = r[ok] if transform is None else transform(r[ok])
    return weighted_linear_fit(x, np.log(s[ok]), n * s[ok] / (1 - s[ok]))


def mean_ci(values, level: float = 0.95):
    """Mean, standard error and Student-t confidence interval."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        raise ValueError("no values")
    m = float(v.mean())
    if n == 1:
        return m, float("nan"), (float("nan"), float("nan"))
    se = float(v.std(ddof=1) / math.sqrt(n))
    q = float(stats.t.ppf(0.5 + level / 2, n - 1))
    return m, se, (m - q * se, m + q * se)
