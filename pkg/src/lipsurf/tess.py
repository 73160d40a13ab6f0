"""Space-time tessellation geometry.

Scale-k cubes have side ``l_k = m k^a l_{k-1}`` (``l_1 = l``, ``l_0 = l/m``) and
scale-k time steps are ``beta_k = C_mix l_{k-1}^2 k^(8/Theta) / eps^(4/Theta)``.
All region arithmetic runs on exact integers and fractions: lengths are
integer multiples of ``l_0`` and times rational multiples of ``beta_1``, so
containment and intersection tests never involve rounding.

Boxes are closed, ``S_k(i) = prod [i_j l_k, (i_j + 1) l_k]`` and
``T_k(tau) = [tau beta_k, (tau + 1) beta_k]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field, replace
from fractions import Fraction
from functools import cached_property

import numpy as np

__all__ = [
    "SchemaParams",
    "SchemaError",
    "CellRef",
    "Region",
    "REGION_KINDS",
    "scale_lengths",
    "pi",
    "gamma",
    "region",
    "well_separated",
    "support_adjacent",
    "to_base_height",
    "from_base_height",
    "check_separation",
    "check_lemma2",
    "separation_sweep",
    "containment_sweep",
    "desk_schema",
    "strict_schema",
]

REGION_KINDS = ("cell", "super", "base", "influence", "ext", "sup", "2sup")


class SchemaError(ValueError):
    """Raised when a schema violates one of its defining inequalities."""


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class SchemaParams:
    """Single- and multi-scale tessellation parameters.

    Parameters
    ----------
    d : int
        Spatial dimension.
    ell : number
        Side of the scale-1 cubes.
    eps : number
        Density slack, in (0, 1).
    m, a : int
        Ladder growth parameters.
    eta : int
        Super-cell padding, >= 1.
    w : number
        Displacement box of the single-scale event is ``Q_{w ell}``.
    theta_inv : int
        The integer 1/Theta.
    kappa : int
        Largest scale.
    lambda0 : float
        Particle intensity.
    beta : number, optional
        Scale-1 time step.  Exactly one of ``beta`` and ``c_mix`` is needed;
        the other is derived from ``beta = c_mix (ell/m)^2 / eps^(4/Theta)``.
    c_mix : number, optional
    n : int, optional
        The integer with ``n^d = m / (7 eta)``.  Derived (and checked) when
        ``strict``; must be given otherwise.
    strict : bool
        Enforce all defining inequalities.  Non-strict schemas are meant for
        desk-scale runs where the asymptotic constraints would need cells far
        larger than any simulation window; violations are listed in
        :attr:`relaxed`.
    ratio_bound : float, optional
        Upper bound on ``beta / ell^2``.
    c1, c2 : float
        Constants of the lower bound on ``w``.
    cm : float
        Ellipticity constant, used by the scale-1 weight.
    """

    d: int
    ell: Fraction
    eps: Fraction
    m: int
    a: int
    eta: int = 1
    w: Fraction = Fraction(1)
    theta_inv: int = 1
    kappa: int = 2
    lambda0: float = 1.0
    beta: Fraction | None = None
    c_mix: Fraction | None = None
    n: int | None = None
    strict: bool = True
    ratio_bound: float | None = None
    c1: float = 1.0
    c2: float = 1.0
    cm: float = 2.0
    height_axis: int = 0
    relaxed: tuple = dc_field(default=(), compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("ell", "eps", "w"):
            set_(self, name, _frac(getattr(self, name)))
        for name in ("d", "m", "a", "eta", "theta_inv", "kappa"):
            v = getattr(self, name)
            if int(v) != v:
                raise SchemaError(f"{name} must be an integer, got {v}")
            set_(self, name, int(v))
        if self.d < 1:
            raise SchemaError("d must be >= 1")
        if self.eta < 1:
            raise SchemaError("eta must be >= 1")
        if self.m < 1 or self.a < 0:
            raise SchemaError("need m >= 1 and a >= 0")
        if self.theta_inv < 1:
            raise SchemaError("1/Theta must be a positive integer")
        if self.kappa < 1:
            raise SchemaError("kappa must be >= 1")
        if not 0 < self.eps < 1:
            raise SchemaError("eps must lie in (0, 1)")
        if self.ell <= 0:
            raise SchemaError("ell must be positive")
        if not 0 <= self.height_axis < self.d:
            raise SchemaError("height axis out of range")
        epow = self.eps ** (4 * self.theta_inv)
        if self.beta is None and self.c_mix is None:
            raise SchemaError("give beta or c_mix")
        if self.c_mix is None:
            beta = _frac(self.beta)
            set_(self, "beta", beta)
            set_(self, "c_mix", beta * epow * self.m ** 2 / self.ell ** 2)
        else:
            c_mix = _frac(self.c_mix)
            set_(self, "c_mix", c_mix)
            beta = c_mix * (self.ell / self.m) ** 2 / epow
            if self.beta is not None and _frac(self.beta) != beta:
                raise SchemaError(f"beta={self.beta} inconsistent with c_mix={c_mix} (gives {beta})")
            set_(self, "beta", beta)
        problems = []
        q, r = divmod(self.m, 7 * self.eta)
        n_auto = None
        if r == 0 and q > 0:
            root = round(q ** (1.0 / self.d))
            for cand in (root - 1, root, root + 1):
                if cand > 0 and cand ** self.d == q:
                    n_auto = cand
        if n_auto is None:
            problems.append(f"n^d = m/(7 eta) has no integer solution for m={self.m}, eta={self.eta}, d={self.d}")
        elif n_auto <= 1:
            problems.append(f"n = {n_auto} must exceed 1")
        if self.n is None:
            if n_auto is None:
                if self.strict:
                    raise SchemaError(problems[0])
                raise SchemaError("non-strict schema needs an explicit n")
            set_(self, "n", n_auto)
        else:
            set_(self, "n", int(self.n))
            if n_auto is not None and n_auto != self.n:
                problems.append(f"given n={self.n} differs from the solution n={n_auto} of n^d = m/(7 eta)")
        if self.n < 1:
            raise SchemaError("n must be >= 1")
        if self.n < Fraction(1, 2) + self.w / (2 * self.eta):
            problems.append(f"n={self.n} < 1/2 + w/(2 eta) = {float(Fraction(1, 2) + self.w / (2 * self.eta))}")
        if 2 * self.a - 8 * self.theta_inv <= 1:
            problems.append(f"2a - 8/Theta = {2 * self.a - 8 * self.theta_inv} is not > 1")
        ratio = self.beta / self.ell ** 2
        if self.ratio_bound is not None and not ratio < _frac(self.ratio_bound):
            problems.append(f"beta/ell^2 = {float(ratio)} is not below {self.ratio_bound}")
        wmin = math.sqrt(float(self.eta * self.beta) / (self.c2 * float(self.ell) ** 2)
                         * max(math.log(8 * self.c1 / float(self.eps)), 0.0))
        if float(self.w) < wmin:
            problems.append(f"w={float(self.w)} below sqrt(eta beta/(c2 ell^2) log(8 c1/eps)) = {wmin:.4g}")
        if self.strict and problems:
            raise SchemaError("; ".join(problems))
        set_(self, "relaxed", tuple(problems))

    # ------------------------------------------------------------ ladders

    def L(self, k: int) -> int:
        """``l_k / l_0`` as an integer."""
        if k < 0:
            raise ValueError("scale must be >= 0")
        return self.m ** k * math.factorial(k) ** self.a

    def B(self, k: int) -> Fraction:
        """``beta_k / beta_1``."""
        if k < 1:
            raise ValueError("time scales start at 1")
        out = Fraction(1)
        t = self.theta_inv
        for j in range(1, k):
            out *= self.m ** 2 * Fraction(j) ** (2 * self.a - 8 * t) * (j + 1) ** (8 * t)
        return out

    @cached_property
    def ell0(self) -> Fraction:
        return self.ell / self.m

    def ell_k(self, k: int) -> Fraction:
        return self.ell0 * self.L(k)

    def beta_k(self, k: int) -> Fraction:
        return self.beta * self.B(k)

    def eps_k(self, k: int) -> Fraction:
        e = 2 * self.eps
        for j in range(1, k + 1):
            e -= self.eps / j ** 2
        return e

    def children_per_axis(self, k: int) -> int:
        """Number of scale-(k-1) cubes along one side of a scale-k cube, ``m k^a``."""
        return self.L(k) // self.L(k - 1)

    def base_radius(self, k: int) -> int:
        """``eta m n (k+1)^a``: index radius of the base region at scale k."""
        return self.eta * self.m * self.n * (k + 1) ** self.a

    def with_(self, **kw) -> "SchemaParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "ell": str(self.ell), "eps": str(self.eps), "m": self.m, "a": self.a,
            "eta": self.eta, "w": str(self.w), "theta_inv": self.theta_inv, "kappa": self.kappa,
            "lambda0": self.lambda0, "beta": str(self.beta), "n": self.n, "strict": self.strict,
            "ratio_bound": self.ratio_bound, "c1": self.c1, "c2": self.c2, "cm": self.cm,
            "height_axis": self.height_axis,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaParams":
        d = dict(d)
        for key in ("ell", "eps", "w", "beta", "c_mix"):
            if key in d and d[key] is not None:
                d[key] = _frac(d[key]) if not isinstance(d[key], str) else Fraction(d[key])
        return cls(**d)


def strict_schema(d: int = 2, **kw) -> SchemaParams:
    """A schema meeting every defining inequality (``n = 2``, ``eta = 1``)."""
    base = dict(d=d, ell=10, eps=Fraction(1, 2), m=7 * 2 ** d, a=5, eta=1, w=Fraction(3, 2),
                theta_inv=1, kappa=3, lambda0=1.0, beta=Fraction(1, 10), c1=0.5, c2=8.0)
    base.update(kw)
    return SchemaParams(**base)


def desk_schema(d: int = 2, **kw) -> SchemaParams:
    """Small non-strict schema whose first two scales fit in a desk-size window."""
    base = dict(d=d, ell=4, eps=Fraction(1, 2), m=2, a=1, n=1, eta=1, w=2, theta_inv=1, kappa=2,
                lambda0=1.0, c_mix=Fraction(1, 1024), strict=False)
    base.update(kw)
    return SchemaParams(**base)


# ------------------------------------------------------------------ hierarchy


def _check_scale(p: SchemaParams, k: int, top: int | None = None):
    top = p.kappa if top is None else top
    if not 1 <= k <= top:
        raise ValueError(f"scale {k} outside 1..{top}")


def scale_lengths(p: SchemaParams, k: int):
    """``(l_k, beta_k, eps_k)`` as exact fractions."""
    _check_scale(p, k)
    return p.ell_k(k), p.beta_k(k), p.eps_k(k)


def _pi(p: SchemaParams, k: int, j: int, i):
    r = p.L(k + j) // p.L(k)
    i = np.asarray(i, dtype=object) if not np.isscalar(i) else i
    if np.isscalar(i):
        return i // r
    return np.array([int(v) // r for v in np.ravel(i)], dtype=object).reshape(np.shape(i))


def pi(p: SchemaParams, k: int, j: int, i):
    """Index of the scale-(k+j) cube containing the scale-k cube ``i``."""
    if k < 0 or j < 0:
        raise ValueError("need k, j >= 0")
    if k + j > p.kappa:
        raise ValueError(f"k + j = {k + j} exceeds kappa = {p.kappa}")
    out = _pi(p, k, j, i)
    return tuple(int(v) for v in out) if not np.isscalar(out) else int(out)


def _gamma1(p: SchemaParams, k: int, tau: int) -> int:
    r = p.B(k + 1) / p.B(k)
    return math.floor(Fraction(tau) / r) - 1


def _gamma(p: SchemaParams, k: int, j: int, tau: int) -> int:
    for s in range(j):
        tau = _gamma1(p, k + s, tau)
    return tau


def gamma(p: SchemaParams, k: int, j: int, tau: int) -> int:
    """Time index of the ancestor ``j`` levels above ``(k, tau)``.

    One step is ``floor(tau beta_k / beta_{k+1}) - 1``: the scale-(k+1)
    interval holding ``tau beta_k`` is the one after the returned index.
    """
    if k < 1 or j < 0:
        raise ValueError("need k >= 1, j >= 0")
    if k + j > p.kappa:
        raise ValueError(f"k + j = {k + j} exceeds kappa = {p.kappa}")
    return _gamma(p, k, j, int(tau))


def time_children(p: SchemaParams, k: int, tau: int):
    """Inclusive range of scale-(k-1) time indices whose parent is ``(k, tau)``."""
    r = p.B(k) / p.B(k - 1)
    lo = math.ceil((tau + 1) * r)
    hi = math.ceil((tau + 2) * r) - 1
    return lo, hi


def time_descendants(p: SchemaParams, k: int, tau: int, k2: int):
    """Inclusive range of scale-``k2`` time indices descending from ``(k, tau)``."""
    lo = hi = tau
    for s in range(k, k2, -1):
        lo = time_children(p, s, lo)[0]
        hi = time_children(p, s, hi)[1]
    return lo, hi


def space_descendants(p: SchemaParams, k: int, i: int, k2: int):
    r = p.L(k) // p.L(k2)
    return i * r, (i + 1) * r - 1


# ------------------------------------------------------------------ regions


@dataclass(frozen=True)
class CellRef:
    """Space-time cell ``(k, i, tau)``."""

    k: int
    i: tuple
    tau: int

    def __post_init__(self):
        object.__setattr__(self, "i", tuple(int(v) for v in np.atleast_1d(self.i)))
        object.__setattr__(self, "tau", int(self.tau))
        object.__setattr__(self, "k", int(self.k))


@dataclass(frozen=True)
class Region:
    """Closed axis-aligned box: spatial intervals times a time interval.

    Bounds are stored in exact units of ``l_0`` (space) and ``beta_1``
    (time); :meth:`space_box` and :meth:`time_interval` convert to
    physical values.
    """

    space: tuple   # ((lo, hi), ...) integers, units of l_0
    time: tuple    # (lo, hi) fractions, units of beta_1
    ell0: Fraction = Fraction(1)
    beta1: Fraction = Fraction(1)

    def contains(self, other: "Region") -> bool:
        return (all(a[0] <= b[0] and b[1] <= a[1] for a, b in zip(self.space, other.space))
                and self.time[0] <= other.time[0] and other.time[1] <= self.time[1])

    def intersects(self, other: "Region") -> bool:
        return (all(a[0] <= b[1] and b[0] <= a[1] for a, b in zip(self.space, other.space))
                and self.time[0] <= other.time[1] and other.time[0] <= self.time[1])

    def space_box(self):
        return tuple((lo * self.ell0, hi * self.ell0) for lo, hi in self.space)

    def time_interval(self):
        return (self.time[0] * self.beta1, self.time[1] * self.beta1)

    def side_lengths(self):
        return tuple((hi - lo) * self.ell0 for lo, hi in self.space)


def _space_interval(p: SchemaParams, kind: str, k: int, i: int):
    """One axis of the spatial part of a region, in units of ``l_0``."""
    Lk = p.L(k)
    if kind == "cell":
        return i * Lk, (i + 1) * Lk
    if kind == "super":
        return (i - p.eta) * Lk, (i + p.eta + 1) * Lk
    if kind == "base":
        r = p.base_radius(k)
        return (i - r) * Lk, (i + r + 1) * Lk
    if kind == "influence":
        r = 2 * p.base_radius(k)
        return (i - r) * Lk, (i + r + 1) * Lk
    if kind == "ext":
        M = p.children_per_axis(k)
        r = p.base_radius(k - 1)
        Lc = p.L(k - 1)
        return (i * M - r) * Lc, ((i + 1) * M + r) * Lc
    par = i // (p.L(k + 1) // Lk)
    Lp = p.L(k + 1)
    if kind == "sup":
        return (par - p.m) * Lp, (par + p.m + 1) * Lp
    if kind == "2sup":
        return (par - 3 * p.m - 1) * Lp, (par + 3 * p.m + 2) * Lp
    raise ValueError(f"unknown region kind {kind!r}")


def _time_interval(p: SchemaParams, kind: str, k: int, tau: int):
    Bk = p.B(k)
    if kind in ("cell", "base", "ext"):
        return tau * Bk, (tau + 1) * Bk
    if kind == "super":
        return tau * Bk, (tau + p.eta) * Bk
    g = _gamma1(p, k, tau)
    Bp = p.B(k + 1)
    if kind == "influence":
        if k == 1:
            return g * Bp, (tau + max(p.eta, 2)) * Bk
        return g * Bp, (tau + 2) * Bk
    if kind == "sup":
        return (g - 3) * Bp, (g + 6) * Bp
    if kind == "2sup":
        return (g - 12) * Bp, (g + 15) * Bp
    raise ValueError(f"unknown region kind {kind!r}")


def _region(p: SchemaParams, kind: str, k: int, i, tau: int) -> Region:
    i = tuple(int(v) for v in np.atleast_1d(i))
    if len(i) != p.d:
        raise ValueError(f"spatial index must have {p.d} components")
    sp = tuple(_space_interval(p, kind, k, v) for v in i)
    return Region(sp, _time_interval(p, kind, k, int(tau)), p.ell0, p.beta)


def region(p: SchemaParams, kind: str, k: int, i, tau: int) -> Region:
    """Closed region of the given kind attached to cell ``(k, i, tau)``.

    ``'cell'`` is ``S_k(i) x T_k(tau)``; ``'super'`` (scale 1 only) pads
    by ``eta`` cells in space and extends to ``eta`` steps in time;
    ``'base'`` and ``'ext'`` pair their spatial regions with ``T_k(tau)``;
    ``'influence'``, ``'sup'`` and ``'2sup'`` carry their own time parts.
    """
    if kind not in REGION_KINDS:
        raise ValueError(f"unknown region kind {kind!r}")
    if kind == "super" and k != 1:
        raise ValueError("super cells exist at scale 1 only")
    top = p.kappa - 1 if kind in ("influence", "sup", "2sup") else p.kappa
    if not 1 <= k <= top:
        raise ValueError(f"region kind {kind!r} is undefined at scale {k} (kappa = {p.kappa})")
    return _region(p, kind, k, i, tau)


def well_separated(p: SchemaParams, c1: CellRef, c2: CellRef) -> bool:
    """Neither cell lies inside the support of the other."""
    r1 = _region(p, "cell", c1.k, c1.i, c1.tau)
    r2 = _region(p, "cell", c2.k, c2.i, c2.tau)
    s1 = _region(p, "sup", c1.k, c1.i, c1.tau)
    s2 = _region(p, "sup", c2.k, c2.i, c2.tau)
    return not s2.contains(r1) and not s1.contains(r2)


def support_adjacent(p: SchemaParams, c1: CellRef, c2: CellRef) -> bool:
    """The extended supports of the two cells intersect."""
    return _region(p, "2sup", c1.k, c1.i, c1.tau).intersects(_region(p, "2sup", c2.k, c2.i, c2.tau))


def adjacent(c1: CellRef, c2: CellRef) -> bool:
    """Same scale, sup-distance at most one in space and in time."""
    return (c1.k == c2.k and max(abs(a - b) for a, b in zip(c1.i, c2.i)) <= 1
            and abs(c1.tau - c2.tau) <= 1)


# ------------------------------------------------------------ base-height


def to_base_height(cell, height_axis: int = 0):
    """Scale-1 cell ``(i, tau)`` to ``(b, h)``: the height is spatial axis ``height_axis``.

    ``b`` collects the other spatial coordinates followed by ``tau``.
    """
    i, tau = cell
    i = tuple(int(v) for v in i)
    h = i[height_axis]
    b = i[:height_axis] + i[height_axis + 1:] + (int(tau),)
    return b, h


def from_base_height(bh, height_axis: int = 0):
    b, h = bh
    b = tuple(int(v) for v in b)
    sp = b[:-1]
    i = sp[:height_axis] + (int(h),) + sp[height_axis:]
    return i, b[-1]


# ------------------------------------------------------------ geometry sweeps


@dataclass
class GeometryReport:
    """Outcome of a geometric separation or containment check."""

    name: str
    checked: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_separation(p: SchemaParams, pairs) -> GeometryReport:
    """Check, pair by pair, that an influence region outside the support misses the other influence region.

    ``pairs`` holds ``(c, c2)`` with ``c.k >= c2.k``.
    """
    bad = []
    n = 0
    for c, c2 in pairs:
        if c.k < c2.k:
            raise ValueError("pairs must satisfy k >= k'")
        n += 1
        inf2 = _region(p, "influence", c2.k, c2.i, c2.tau)
        if not _region(p, "sup", c.k, c.i, c.tau).contains(inf2):
            if inf2.intersects(_region(p, "influence", c.k, c.i, c.tau)):
                bad.append((c, c2))
    return GeometryReport("influence/support separation", n, bad)


check_lemma2 = check_separation


def _neighbourhood(anchors, radius):
    vals = set()
    for a in anchors:
        vals.update(range(a - radius, a + radius + 1))
    return sorted(vals)


def _axis_tables(p, k, idx, k2, cand, space: bool):
    # per-axis containment in sup and intersection with influence, for candidates at scale k2
    if space:
        sup = _space_interval(p, "sup", k, idx)
        inf = _space_interval(p, "influence", k, idx)
        boxes = [_space_interval(p, "influence", k2, c) for c in cand]
    else:
        sup = _time_interval(p, "sup", k, idx)
        inf = _time_interval(p, "influence", k, idx)
        boxes = [_time_interval(p, "influence", k2, c) for c in cand]
    inside = np.array([sup[0] <= b[0] and b[1] <= sup[1] for b in boxes])
    meets = np.array([inf[0] <= b[1] and b[0] <= inf[1] for b in boxes])
    return inside, meets


def _anchor_index_space(p, k2, x):
    # scale-k2 index of the cube containing coordinate x (units of l_0)
    return x // p.L(k2)


def _anchor_index_time(p, k2, t):
    return math.floor(Fraction(t) / p.B(k2))


def separation_sweep(p: SchemaParams, kmax: int = 3, radius: int = 5, refs_space=(0, 1),
                     refs_time=None) -> GeometryReport:
    """Exhaustive search for counterexamples to the influence/support separation.

    For each pair of scales ``k >= k'`` (both ``<= kmax``) and each reference
    cell, scale-k' cells are enumerated over the product of per-axis index
    windows of half-width ``radius`` around every boundary of the reference
    cell's support and influence regions.  Containment and intersection of
    boxes factor over axes, so the product set is checked exactly.
    """
    bad = []
    checked = 0
    for k in range(1, kmax + 1):
        rt = refs_time
        if rt is None:
            r = int(p.B(k + 1) / p.B(k))
            rt = (0, 1, r - 1, r, r + 1, 2 * r - 1)
        for k2 in range(1, k + 1):
            for i0 in refs_space:
                s_sup = _space_interval(p, "sup", k, i0)
                s_inf = _space_interval(p, "influence", k, i0)
                anchors = [_anchor_index_space(p, k2, x) for x in (*s_sup, *s_inf)]
                cand_s = _neighbourhood(anchors, radius)
                in_s, meet_s = _axis_tables(p, k, i0, k2, cand_s, True)
                for t0 in rt:
                    t_sup = _time_interval(p, "sup", k, t0)
                    t_inf = _time_interval(p, "influence", k, t0)
                    anchors_t = [_anchor_index_time(p, k2, x) for x in (*t_sup, *t_inf)]
                    cand_t = _neighbourhood(anchors_t, radius)
                    in_t, meet_t = _axis_tables(p, k, t0, k2, cand_t, False)
                    # reference cell index i0 on every axis; candidates range over the product
                    grids_in = [in_s] * p.d + [in_t]
                    grids_meet = [meet_s] * p.d + [meet_t]
                    inside = _outer_all(grids_in)
                    meets = _outer_all(grids_meet)
                    viol = ~inside & meets
                    checked += inside.size
                    if viol.any():
                        for idx in zip(*np.nonzero(viol)):
                            ii = tuple(cand_s[j] for j in idx[:-1])
                            bad.append((CellRef(k, (i0,) * p.d, t0), CellRef(k2, ii, cand_t[idx[-1]])))
    return GeometryReport("influence/support separation (sweep)", checked, bad)


def _outer_all(arrays):
    out = arrays[0]
    for a in arrays[1:]:
        out = np.logical_and.outer(out, a)
    return out


def containment_sweep(p: SchemaParams, kmax: int = 3, radius: int = 5, refs_space=(0, 1, -1),
                      refs_time=None) -> GeometryReport:
    """Check that descendants, and their neighbours, lie inside the support.

    For each reference cell of scale ``k <= kmax`` and each ``k' <= k``, the
    first and last ``radius`` descendant indices along each axis are taken,
    together with the indices one step beyond them (the neighbours of the
    extreme descendants).  Box containment factors over axes, so checking
    the per-axis tables covers the whole product set.
    """
    bad = []
    checked = 0
    for k in range(1, kmax + 1):
        rt = refs_time
        if rt is None:
            r = int(p.B(k + 1) / p.B(k))
            rt = (0, 1, r - 1, r, r + 1, 2 * r - 1)
        for k2 in range(1, k + 1):
            for i0 in refs_space:
                sup_s = _space_interval(p, "sup", k, i0)
                lo, hi = space_descendants(p, k, i0, k2)
                desc = sorted(set(range(lo, min(hi, lo + radius - 1) + 1)) | set(range(max(lo, hi - radius + 1), hi + 1)))
                cand = _neighbourhood(desc, 1)
                ok_s = np.array([sup_s[0] <= b[0] and b[1] <= sup_s[1]
                                 for b in (_space_interval(p, "cell", k2, c) for c in cand)])
                for t0 in rt:
                    sup_t = _time_interval(p, "sup", k, t0)
                    tlo, thi = time_descendants(p, k, t0, k2)
                    tdesc = sorted(set(range(tlo, min(thi, tlo + radius - 1) + 1)) | set(range(max(tlo, thi - radius + 1), thi + 1)))
                    tcand = _neighbourhood(tdesc, 1)
                    ok_t = np.array([sup_t[0] <= b[0] and b[1] <= sup_t[1]
                                     for b in (_time_interval(p, "cell", k2, c) for c in tcand)])
                    inside = _outer_all([ok_s] * p.d + [ok_t])
                    checked += inside.size
                    if not inside.all():
                        for idx in zip(*np.nonzero(~inside)):
                            ii = tuple(cand[j] for j in idx[:-1])
                            bad.append((CellRef(k, (i0,) * p.d, t0), CellRef(k2, ii, tcand[idx[-1]])))
    return GeometryReport("descendants inside support (sweep)", checked, bad)


def default_kappa(p: SchemaParams, window_side: float, cap: int = 3) -> int:
    """Smallest scale whose cube side exceeds the window side, capped at ``cap``."""
    k = 1
    while p.ell_k(k) <= window_side and k < cap:
        k += 1
    return k
