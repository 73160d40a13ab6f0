"""Increasing local events on particle clouds and the multi-scale indicators.

An event is evaluated on a scale-1 cell ``(i, tau)`` through a
:class:`RestrictedView` that holds only the particles found in the super
cube ``i - eta .. i + eta`` at time ``tau beta`` and answers position and
displacement queries only inside the super interval
``[tau beta, (tau + eta) beta]``.

Counting conventions: a site ``x`` belongs to the scale-``k`` cube
``floor(x / l_k)`` (half-open cubes, so cubes partition the lattice), and a
particle "has displacement inside ``Q_z``" when its sup-norm displacement
stays ``<= z / 2``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import _kernels as K
from .lattice import ConductanceField, simulate_paths
from .particles import ParticleCloud, conditioned_paths
from .tess import SchemaParams, _gamma1, _pi

__all__ = [
    "LocalEvent",
    "RestrictedView",
    "CubeGrid",
    "CellMap",
    "IndicatorField",
    "MonotonicityReport",
    "register_event",
    "get_event",
    "event_names",
    "always_true",
    "always_false",
    "threshold_event",
    "k_dense_event",
    "broadcast_event",
    "eval_event",
    "k_dense",
    "indicators",
    "event_map",
    "estimate_nu",
    "monotonicity_harness",
    "super_cell_fits",
]


# ------------------------------------------------------------------ cube geometry


def _floor_div(x, q: Fraction):
    """``floor(x / q)`` for integer arrays and a positive rational ``q``."""
    return np.floor_divide(np.asarray(x, dtype=np.int64) * q.denominator, q.numerator)


def _ceil_frac(q: Fraction) -> int:
    return -((-q.numerator) // q.denominator)


def cube_of(p: SchemaParams, k: int, coords) -> np.ndarray:
    """Scale-``k`` cube index of lattice sites (scale 0 allowed)."""
    return _floor_div(coords, p.ell_k(k))


def cube_site_range(p: SchemaParams, k: int, i: int):
    """Inclusive integer range of the sites of cube ``i`` along one axis."""
    lk = p.ell_k(k)
    return _ceil_frac(i * lk), _ceil_frac((i + 1) * lk) - 1


@dataclass
class CubeGrid:
    """Complete scale-``k`` cubes of a lattice window.

    ``lo`` is the smallest complete cube index along each axis and ``n`` the
    number of complete cubes per axis; ``site_cube`` maps each window site to
    the flat grid index of its cube (-1 if the cube is incomplete) and
    ``mu`` holds the summed site weights of every cube.
    """

    k: int
    lo: int
    n: int
    dim: int
    site_cube: np.ndarray
    mu: np.ndarray

    @classmethod
    def build(cls, field: ConductanceField, p: SchemaParams, k: int) -> "CubeGrid":
        L = field.window.half_extent
        lk = p.ell_k(k)
        lo = _ceil_frac(Fraction(-L) / lk)
        # cube c complete iff ceil((c+1) l_k) - 1 <= L
        hi = lo
        while cube_site_range(p, k, hi)[1] <= L:
            hi += 1
        n = hi - lo
        xs = field.window.all_coords()
        c = cube_of(p, k, xs) - lo
        inside = np.all((c >= 0) & (c < n), axis=1) if n > 0 else np.zeros(len(xs), dtype=bool)
        flat = np.full(len(xs), -1, dtype=np.int64)
        if n > 0:
            flat[inside] = np.ravel_multi_index(tuple(c[inside].T), (n,) * field.dim)
        mu = np.bincount(flat[inside], weights=field.site_weights[inside], minlength=n ** field.dim)
        return cls(k, lo, n, field.dim, flat, mu)

    @property
    def shape(self):
        return (self.n,) * self.dim

    def particle_cubes(self, sites) -> np.ndarray:
        """Flat grid index per particle site (-1 when outside or in an incomplete cube)."""
        sites = np.asarray(sites)
        out = np.full(sites.shape, -1, dtype=np.int64)
        ok = sites >= 0
        out[ok] = self.site_cube[sites[ok]]
        return out

    def counts(self, cubes, mask=None) -> np.ndarray:
        sel = cubes >= 0 if mask is None else (cubes >= 0) & mask
        return np.bincount(cubes[sel], minlength=self.n ** self.dim).reshape(self.shape)


def _box_all(ok: np.ndarray, valid: np.ndarray, step: int, lo: int, hi: int, n_out: int):
    """For ``j`` in ``range(n_out)`` along every axis: all of ``ok`` on ``[j step + lo, j step + hi]``.

    Returns ``(value, defined)``; a result is defined only when the whole box
    lies in the array and every entry is valid.
    """
    d = ok.ndim
    bad = (~ok & valid).astype(np.int64)
    inval = (~valid).astype(np.int64)
    n = ok.shape[0]
    j = np.arange(n_out)
    a = j * step + lo
    b = j * step + hi
    inside = (a >= 0) & (b < n)
    a_c = np.clip(a, 0, n)
    b_c = np.clip(b + 1, 0, n)

    def box_sum(arr):
        S = arr
        for ax in range(d):
            S = np.cumsum(S, axis=ax)
            S = np.concatenate([np.zeros_like(np.take(S, [0], axis=ax)), S], axis=ax)
        tot = np.zeros((n_out,) * d, dtype=np.int64)
        for corner in itertools.product((0, 1), repeat=d):
            idx = np.ix_(*[(b_c if c else a_c) for c in corner])
            sgn = (-1) ** (d - sum(corner))
            tot += sgn * S[idx]
        return tot

    inside_all = np.ones((n_out,) * d, dtype=bool)
    for ax in range(d):
        shp = [1] * d
        shp[ax] = n_out
        inside_all &= inside.reshape(shp)
    defined = inside_all & (box_sum(inval) == 0)
    value = defined & (box_sum(bad) == 0)
    return value, defined


# ------------------------------------------------------------------ restricted view


class RestrictedView:
    """Read-only particle view restricted to one super cell.

    Only particles located in the super cube at the start of the super
    interval are present, and queries must stay inside the super interval.
    """

    def __init__(self, cloud: ParticleCloud, schema: SchemaParams, cell, ids=None):
        i, tau = cell
        self.schema = schema
        self.cell = (tuple(int(v) for v in np.atleast_1d(i)), int(tau))
        beta = float(schema.beta)
        self.t0 = self.cell[1] * beta
        self.t1 = (self.cell[1] + schema.eta) * beta
        if ids is None:
            pos = cloud.positions(self.t0)
            ids = np.flatnonzero(_in_super(cloud.field, schema, self.cell[0], pos))
        self._cloud = cloud.subset(ids)
        self.field = cloud.field

    @property
    def n(self) -> int:
        return self._cloud.n

    def _check(self, t):
        if not self.t0 - 1e-12 <= t <= self.t1 + 1e-12:
            raise PermissionError(f"time {t} outside the super interval [{self.t0}, {self.t1}]")

    def sites(self, t: float) -> np.ndarray:
        self._check(t)
        return self._cloud.positions(min(max(t, self.t0), self.t1))

    def positions(self, t: float) -> np.ndarray:
        """Coordinates at time ``t`` (NaN for particles that left the window)."""
        return self._cloud.coords(self.sites(t))

    def displacement(self, ta: float, tb: float) -> np.ndarray:
        """Sup-norm displacement over ``[ta, tb]`` relative to the place at ``ta``."""
        self._check(ta)
        self._check(tb)
        return self._cloud.max_displacement(ta, tb)

    def cube(self, k: int, t: float) -> np.ndarray:
        """Scale-``k`` cube index (rows of length d) of every particle at ``t``."""
        s = self.sites(t)
        c = cube_of(self.schema, k, self.field.window.coords(np.maximum(s, 0)))
        c[s < 0] = np.iinfo(np.int64).min
        return c


def _in_super(field, p: SchemaParams, i, sites) -> np.ndarray:
    sites = np.asarray(sites)
    ok = sites >= 0
    c = cube_of(p, 1, field.window.coords(np.maximum(sites, 0)))
    return ok & np.all(np.abs(c - np.asarray(i)) <= p.eta, axis=1)


def super_cell_fits(cloud: ParticleCloud, p: SchemaParams, cell) -> bool:
    """Super cube inside the window (complete cubes) and super interval inside the horizon."""
    i, tau = cell
    L = cloud.field.window.half_extent
    for v in np.atleast_1d(i):
        lo = cube_site_range(p, 1, int(v) - p.eta)[0]
        hi = cube_site_range(p, 1, int(v) + p.eta)[1]
        if lo < -L or hi > L:
            return False
    return tau >= 0 and (tau + p.eta) * float(p.beta) <= cloud.horizon + 1e-12


# ------------------------------------------------------------------ events


@dataclass(frozen=True)
class LocalEvent:
    """An increasing event restricted to the super cell of a scale-1 cell.

    ``evaluate(cell, view, schema)`` returns a bool.  ``batch``, when given,
    evaluates every cell of a grid at one time step from the full cloud and
    must agree with ``evaluate``; it is an accelerator only.
    """

    name: str
    evaluate: Callable
    restriction: str = "super"
    batch: Callable | None = None
    description: str = ""

    def declared_restriction(self, schema: SchemaParams, cell):
        from .tess import region
        i, tau = cell
        return region(schema, "super", 1, i, tau)


_REGISTRY: dict = {}


def register_event(name: str, factory: Callable) -> None:
    """Register ``factory(schema) -> LocalEvent`` under ``name``."""
    _REGISTRY[name] = factory


def get_event(name: str, schema: SchemaParams, **kw) -> LocalEvent:
    if name not in _REGISTRY:
        raise KeyError(f"unknown event {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](schema, **kw)


def event_names() -> list:
    return sorted(_REGISTRY)


def always_true(schema: SchemaParams | None = None) -> LocalEvent:
    def ev(cell, view, schema):
        return True

    def batch(cloud, schema, tau, grid, cache):
        return np.ones(grid.shape, dtype=bool)

    return LocalEvent("always_true", ev, batch=batch, description="holds on every cell")


def always_false(schema: SchemaParams | None = None) -> LocalEvent:
    def ev(cell, view, schema):
        return False

    def batch(cloud, schema, tau, grid, cache):
        return np.zeros(grid.shape, dtype=bool)

    return LocalEvent("always_false", ev, batch=batch, description="holds on no cell")


def threshold_event(schema: SchemaParams | None = None, count: int = 1) -> LocalEvent:
    """At least ``count`` particles in the cube itself at the start of the super interval."""

    def ev(cell, view, schema):
        c = view.cube(1, view.t0)
        return int(np.count_nonzero(np.all(c == np.asarray(cell[0]), axis=1))) >= count

    def batch(cloud, schema, tau, grid, cache):
        cubes = cache.cubes(grid, tau * float(schema.beta))
        return grid.counts(cubes) >= count

    return LocalEvent(f"threshold_{count}", ev, batch=batch,
                      description=f">= {count} particles in the cube at the interval start")


def k_dense_event(schema: SchemaParams | None = None) -> LocalEvent:
    """Scale-1 density: every scale-0 subcube of the cube holds ``(1 - eps_1) lambda0 mu`` particles."""

    def ev(cell, view, schema):
        i, _ = cell
        sub = _children_grid(view.field, schema, 1, i)
        s = view.sites(view.t0)
        c = cube_of(schema, 0, view.field.window.coords(np.maximum(s, 0)))
        c = c[s >= 0]
        thr = float(1 - schema.eps_k(1)) * schema.lambda0
        for cid, mu in sub:
            n = int(np.count_nonzero(np.all(c == np.asarray(cid), axis=1)))
            if n < thr * mu:
                return False
        return True

    def batch(cloud, schema, tau, grid, cache):
        sub = cache.grid(0)
        cubes = cache.cubes(sub, tau * float(schema.beta))
        ok = sub.counts(cubes) >= float(1 - schema.eps_k(1)) * schema.lambda0 * sub.mu.reshape(sub.shape)
        M = schema.children_per_axis(1)
        off = grid.lo * M - sub.lo
        val, defined = _box_all(ok, np.ones_like(ok), M, off, off + M - 1, grid.n)
        return val & defined

    return LocalEvent("k_dense", ev, batch=batch, description="scale-1 density event")


def broadcast_event(schema: SchemaParams | None = None) -> LocalEvent:
    """Every cube ``j`` with ``|j - i|_inf <= 1`` receives a particle from cube ``i``.

    True iff for every such ``j`` some particle is in cube ``i`` at
    ``tau beta``, keeps its displacement inside ``Q_{w l}`` during
    ``[tau beta, (tau + eta) beta]`` and is in cube ``j`` at
    ``(tau + eta) beta``.
    """

    def ev(cell, view, schema):
        i = np.asarray(cell[0])
        z = float(schema.w * schema.ell) / 2.0
        c0 = view.cube(1, view.t0)
        c1 = view.cube(1, view.t1)
        disp = view.displacement(view.t0, view.t1)
        good = np.all(c0 == i, axis=1) & (disp <= z)
        targets = {tuple(r) for r in (c1[good] - i) if np.all(np.abs(r) <= 1)}
        return len(targets) == 3 ** len(i)

    def batch(cloud, schema, tau, grid, cache):
        beta = float(schema.beta)
        t0, t1 = tau * beta, (tau + schema.eta) * beta
        s0 = cache.sites(t0)
        s1 = cache.sites(t1)
        disp = cache.disp(t0, t1)
        z = float(schema.w * schema.ell) / 2.0
        ok = (s0 >= 0) & (s1 >= 0) & (disp <= z)
        d = cloud.field.dim
        x0 = cloud.field.window.coords(np.maximum(s0, 0))[ok]
        x1 = cloud.field.window.coords(np.maximum(s1, 0))[ok]
        c0 = cube_of(schema, 1, x0) - grid.lo
        off = cube_of(schema, 1, x1) - grid.lo - c0
        keep = np.all((c0 >= 0) & (c0 < grid.n), axis=1) & np.all(np.abs(off) <= 1, axis=1)
        c0, off = c0[keep], off[keep]
        n_off = 3 ** d
        code = np.ravel_multi_index(tuple((off + 1).T), (3,) * d) if len(off) else np.zeros(0, dtype=np.int64)
        cell = np.ravel_multi_index(tuple(c0.T), grid.shape) if len(c0) else np.zeros(0, dtype=np.int64)
        have = np.zeros((grid.n ** d, n_off), dtype=bool)
        have[cell, code] = True
        return have.all(axis=1).reshape(grid.shape)

    return LocalEvent("broadcast", ev, batch=batch, description="infection broadcast to all neighbour cubes")


register_event("always_true", always_true)
register_event("always_false", always_false)
register_event("threshold", threshold_event)
register_event("k_dense", k_dense_event)
register_event("broadcast", broadcast_event)


def _children_grid(field, p: SchemaParams, k: int, i):
    """``[(child index, mu of child)]`` for the scale-(k-1) cubes of ``S_k(i)``; raises outside the window."""
    M = p.children_per_axis(k)
    L = field.window.half_extent
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    out = []
    ranges = [range(int(v) * M, (int(v) + 1) * M) for v in i]
    for cid in itertools.product(*ranges):
        bounds = [cube_site_range(p, k - 1, c) for c in cid]
        if any(lo < -L or hi > L for lo, hi in bounds):
            raise ValueError(f"cube {tuple(int(v) for v in i)} at scale {k} is not inside the window")
        sl = np.stack(np.meshgrid(*[np.arange(lo, hi + 1) for lo, hi in bounds], indexing="ij"), -1)
        mu = field.site_weights[field.window.index(sl.reshape(-1, field.dim))].sum()
        out.append((cid, float(mu)))
    return out


def eval_event(event: LocalEvent, cloud: ParticleCloud, schema: SchemaParams, cell) -> bool:
    """Evaluate ``event`` on the scale-1 cell ``(i, tau)`` through its restricted view."""
    if not super_cell_fits(cloud, schema, cell):
        raise ValueError(f"super cell of {cell} is outside the simulated window or horizon")
    return bool(event.evaluate((tuple(np.atleast_1d(cell[0])), int(cell[1])),
                               RestrictedView(cloud, schema, cell), schema))


def k_dense(cloud: ParticleCloud, schema: SchemaParams, k: int, i, t: float) -> bool:
    """Every scale-(k-1) subcube of ``S_k(i)`` holds ``(1 - eps_k) lambda0 sum mu`` particles at ``t``."""
    if t < 0 or t > cloud.horizon:
        raise ValueError(f"time {t} outside [0, {cloud.horizon}]")
    sub = _children_grid(cloud.field, schema, k, i)
    s = cloud.positions(t)
    c = cube_of(schema, k - 1, cloud.field.window.coords(np.maximum(s, 0)))[s >= 0]
    thr = float(1 - schema.eps_k(k)) * schema.lambda0
    if not len(c):
        return all(thr * mu <= 0 for _, mu in sub)
    keys, cnt = np.unique(c, axis=0, return_counts=True)
    table = {tuple(int(v) for v in r): int(n) for r, n in zip(keys, cnt)}
    return all(table.get(tuple(cid), 0) >= thr * mu for cid, mu in sub)


# ------------------------------------------------------------------ indicator field


_CHUNK = 128


class _Cache:
    """Memoised positions, cube indices and displacements of one cloud."""

    def __init__(self, cloud: ParticleCloud, schema: SchemaParams):
        self.cloud = cloud
        self.schema = schema
        self._sites = {}
        self._disp = {}
        self._grids = {}

    def grid(self, k: int) -> CubeGrid:
        if k not in self._grids:
            self._grids[k] = CubeGrid.build(self.cloud.field, self.schema, k)
        return self._grids[k]

    def prefetch(self, ts):
        ts = np.unique(np.asarray([t for t in ts if t not in self._sites], dtype=float))
        if ts.size:
            pos = self.cloud.positions_many(ts)
            for t, row in zip(ts, pos):
                self._sites[float(t)] = row

    def prefetch_disp(self, pairs):
        pairs = [p for p in dict.fromkeys(pairs) if p not in self._disp]
        if not pairs:
            return
        c = self.cloud
        args = (c.field.window.half_extent, c.field.dim)
        groups = {}
        for a, b in pairs:
            groups.setdefault(a, []).append(b)
        # intervals sharing a start are scanned once with a running max
        short = [(a, b) for a, bs in groups.items() if len(bs) < 4 for b in bs]
        for a, bs in groups.items():
            if len(bs) >= 4:
                bs = np.sort(np.asarray(bs, dtype=float))
                out = K.max_disp_running(c.offsets, c.times, c.sites, float(a), bs, *args)
                for b, row in zip(bs, out):
                    self._disp[(a, float(b))] = row
        if short:
            t0 = np.asarray([a for a, _ in short], dtype=float)
            t1 = np.asarray([b for _, b in short], dtype=float)
            out = K.max_disp_windows(c.offsets, c.times, c.sites, t0, t1, *args)
            for pr, row in zip(short, out):
                self._disp[pr] = row

    def clear(self):
        self._sites.clear()
        self._disp.clear()

    def sites(self, t: float) -> np.ndarray:
        t = float(t)
        if t not in self._sites:
            self._sites[t] = self.cloud.positions(t)
        return self._sites[t]

    def cubes(self, grid: CubeGrid, t: float) -> np.ndarray:
        return grid.particle_cubes(self.sites(t))

    def disp(self, t0: float, t1: float) -> np.ndarray:
        key = (float(t0), float(t1))
        if key not in self._disp:
            self.prefetch_disp([key])
        return self._disp[key]


@dataclass
class CellMap:
    """Boolean indicator over the cells ``(i, tau)`` of one scale.

    ``values[t - tau_lo][i - i_lo]``; entries with ``defined`` False could
    not be evaluated inside the window or horizon.
    """

    k: int
    tau_lo: int
    i_lo: int
    values: np.ndarray
    defined: np.ndarray

    def _idx(self, i, tau):
        i = np.atleast_1d(np.asarray(i)) - self.i_lo
        t = int(tau) - self.tau_lo
        if t < 0 or t >= self.values.shape[0] or np.any(i < 0) or np.any(i >= self.values.shape[1]):
            return None
        return (t,) + tuple(int(v) for v in i)

    def get(self, i, tau):
        """``True``/``False`` or ``None`` where undefined."""
        idx = self._idx(i, tau)
        if idx is None or not self.defined[idx]:
            return None
        return bool(self.values[idx])

    def taus(self):
        return range(self.tau_lo, self.tau_lo + self.values.shape[0])

    def to_csv(self, name: str) -> str:
        d = self.values.ndim - 1
        rows = [",".join(["k", "tau"] + [f"i{a}" for a in range(d)] + [name])]
        for idx in zip(*np.nonzero(self.defined)):
            i = [str(int(v) + self.i_lo) for v in idx[1:]]
            rows.append(",".join([str(self.k), str(int(idx[0]) + self.tau_lo)] + i + [str(int(self.values[idx]))]))
        return "\n".join(rows) + "\n"


@dataclass
class IndicatorField:
    """Indicators of one realization.

    ``D[k]``, ``Dext[k]`` (k = 1..kappa), ``Dbase[k]`` (k = 1..kappa-1),
    ``Ak[k]`` (k = 1..kappa), the event ``E`` and the product ``A`` (scale 1).
    """

    schema: SchemaParams
    kappa: int
    E: CellMap
    D: dict
    Dext: dict
    Dbase: dict
    Ak: dict
    A: CellMap
    event: str = ""

    def ancestor(self, k: int, i, tau: int):
        i = np.atleast_1d(np.asarray(i))
        if k == 1:
            return tuple(int(v) for v in i), int(tau)
        ii = _pi(self.schema, 1, k - 1, i)
        tt = int(tau)
        for j in range(1, k):
            tt = _gamma1(self.schema, j, tt)
        return tuple(int(v) for v in np.atleast_1d(ii)), tt

    def check(self) -> dict:
        """Violation counts of the three structural guarantees."""
        p = self.schema
        out = {"ext_le_D": 0, "base_ge_parent_ext": 0, "A_le_E": 0, "checked_cells": 0}
        for k, m in self.Dext.items():
            Dk = self.D[k]
            for idx in zip(*np.nonzero(m.defined & m.values)):
                tau = idx[0] + m.tau_lo
                i = np.asarray(idx[1:]) + m.i_lo
                if Dk.get(i, tau) is False:
                    out["ext_le_D"] += 1
        for k, m in self.Dbase.items():
            par = self.Dext.get(k + 1)
            if par is None:
                continue
            for idx in zip(*np.nonzero(m.defined & ~m.values)):
                tau = idx[0] + m.tau_lo
                i = np.asarray(idx[1:]) + m.i_lo
                pi_ = _pi(p, k, 1, i)
                if par.get(np.atleast_1d(pi_), _gamma1(p, k, tau)) is True:
                    out["base_ge_parent_ext"] += 1
        ok = self.A.defined & self.E.defined
        out["A_le_E"] = int(np.count_nonzero(ok & self.A.values & ~self.E.values))
        out["checked_cells"] = int(np.count_nonzero(ok))
        return out

    def to_csv(self) -> str:
        parts = [self.E.to_csv("E"), self.A.to_csv("A")]
        for name, maps in (("D", self.D), ("Dext", self.Dext), ("Dbase", self.Dbase), ("Ak", self.Ak)):
            for k in sorted(maps):
                parts.append(maps[k].to_csv(name))
        return "".join(parts)


def _tau_range(p: SchemaParams, k: int, tau_lo: int, tau_hi: int):
    """Ancestor time range at scale ``k`` of scale-1 times ``tau_lo..tau_hi`` (inclusive)."""
    a, b = tau_lo, tau_hi
    for j in range(1, k):
        a, b = _gamma1(p, j, a), _gamma1(p, j, b)
    return a, b


def event_map(cloud: ParticleCloud, schema: SchemaParams, event: LocalEvent, taus, cache=None) -> CellMap:
    """``event`` on every scale-1 cell whose super cell fits the window and horizon.

    ``taus`` is an inclusive range ``(lo, hi)`` of scale-1 times.
    """
    p = schema
    cache = _Cache(cloud, p) if cache is None else cache
    H = cloud.horizon
    t_lo, t_hi = int(taus[0]), int(taus[1])
    if t_lo < 0 or t_hi < t_lo:
        raise ValueError(f"bad time range {taus}")
    g1 = cache.grid(1)
    nt = t_hi - t_lo + 1
    vE = np.zeros((nt,) + g1.shape, bool)
    fE = np.zeros_like(vE)
    beta = float(p.beta)
    fits_space = np.ones(g1.shape, bool)
    for ax in range(g1.dim):
        idx = np.arange(g1.n)
        okax = (idx - p.eta >= 0) & (idx + p.eta < g1.n)
        shp = [1] * g1.dim
        shp[ax] = g1.n
        fits_space &= okax.reshape(shp)
    for c0 in range(t_lo, t_hi + 1, _CHUNK):
        taus_c = [tau for tau in range(c0, min(t_hi, c0 + _CHUNK - 1) + 1) if (tau + p.eta) * beta <= H + 1e-9]
        cache.prefetch([tau * beta for tau in taus_c] + [(tau + p.eta) * beta for tau in taus_c])
        cache.prefetch_disp([(tau * beta, (tau + p.eta) * beta) for tau in taus_c])
        for tau in taus_c:
            n_ = tau - t_lo
            if event.batch is not None:
                vE[n_] = event.batch(cloud, p, tau, g1, cache)
            else:
                for idx in zip(*np.nonzero(fits_space)):
                    i = tuple(int(v) + g1.lo for v in idx)
                    vE[n_][idx] = bool(event.evaluate((i, tau), RestrictedView(cloud, p, (i, tau)), p))
            fE[n_] = fits_space
        cache.clear()
    return CellMap(1, t_lo, g1.lo, vE & fE, fE)


def indicators(cloud: ParticleCloud, schema: SchemaParams, event: LocalEvent, kappa: int | None = None,
               taus=None) -> IndicatorField:
    """All indicator maps of one realization.

    ``taus`` is an inclusive scale-1 range ``(lo, hi)``; by default every
    scale-1 time whose ancestors start at time >= 0 and whose intervals fit
    the horizon.
    """
    p = schema
    kappa = p.kappa if kappa is None else kappa
    if kappa < 2:
        raise ValueError("kappa must be at least 2")
    H = cloud.horizon
    Bk = {k: float(p.beta_k(k)) for k in range(1, kappa + 1)}
    if 2 * Bk[kappa] > H + 1e-9:
        raise ValueError(f"horizon {H} too short for scale {kappa} (needs {2 * Bk[kappa]})")
    if taus is None:
        # smallest scale-1 time whose ancestors are all >= 0
        lo = 0
        for k in range(kappa - 1, 0, -1):
            R = p.B(k + 1) / p.B(k)
            lo = math.ceil(Fraction(lo + 1) * R)
        hi = int(math.floor(H / float(p.beta))) - max(p.eta, 2)
        taus = (lo, hi)
    t_lo, t_hi = int(taus[0]), int(taus[1])
    if t_hi < t_lo:
        raise ValueError("empty time range for the indicators")
    cache = _Cache(cloud, p)
    eps = {k: float(1 - p.eps_k(k)) * p.lambda0 for k in range(1, kappa + 2)}

    def ok_grid(j, t, thr_scale, disp_pair=None, zhalf=None):
        g = cache.grid(j)
        cubes = cache.cubes(g, t)
        mask = None
        if disp_pair is not None:
            mask = cache.disp(*disp_pair) <= zhalf
        cnt = g.counts(cubes, mask)
        return cnt >= eps[thr_scale] * g.mu.reshape(g.shape)

    D, Dext, Dbase, Ak = {}, {}, {}, {}
    for k in range(1, kappa + 1):
        a, b = _tau_range(p, k, t_lo, t_hi)
        gk = cache.grid(k)
        gc = cache.grid(k - 1)
        M = p.children_per_axis(k)
        nt = b - a + 1
        shape = (nt,) + gk.shape
        vD, fD = np.zeros(shape, bool), np.zeros(shape, bool)
        vX, fX = np.zeros(shape, bool), np.zeros(shape, bool)
        vB, fB = np.zeros(shape, bool), np.zeros(shape, bool)
        r_ext = p.base_radius(k - 1)
        zx = float(r_ext * p.ell_k(k - 1)) / 2.0
        r_b = p.base_radius(k)
        zb = float(r_b * p.ell_k(k)) / 2.0
        off = gk.lo * M - gc.lo
        for c0 in range(a, b + 1, _CHUNK):
            taus_c = range(c0, min(b, c0 + _CHUNK - 1) + 1)
            times = [tau * Bk[k] for tau in taus_c]
            cache.prefetch(times)
            cache.prefetch_disp([(t, t + 2 * Bk[k]) for t in times if t + 2 * Bk[k] <= H + 1e-9])
            if k < kappa:
                pb = [(g * Bk[k + 1], tau * Bk[k]) for tau in taus_c if (g := _gamma1(p, k, tau)) >= 0]
                cache.prefetch([q[0] for q in pb])
                cache.prefetch_disp(pb)
            for tau in taus_c:
                n_ = tau - a
                t = tau * Bk[k]
                ok = ok_grid(k - 1, t, k)
                vD[n_], fD[n_] = _box_all(ok, np.ones_like(ok), M, off, off + M - 1, gk.n)
                if t + 2 * Bk[k] <= H + 1e-9:
                    okx = ok_grid(k - 1, t, k, (t, t + 2 * Bk[k]), zx)
                    vX[n_], fX[n_] = _box_all(okx, np.ones_like(okx), M, off - r_ext, off + M - 1 + r_ext, gk.n)
                if k < kappa:
                    g = _gamma1(p, k, tau)
                    if g >= 0:
                        tb = g * Bk[k + 1]
                        okb = ok_grid(k, tb, k + 1, (tb, t), zb)
                        vB[n_], fB[n_] = _box_all(okb, np.ones_like(okb), 1, -r_b, r_b, gk.n)
            cache.clear()
        D[k] = CellMap(k, a, gk.lo, vD, fD)
        Dext[k] = CellMap(k, a, gk.lo, vX, fX)
        if k < kappa:
            Dbase[k] = CellMap(k, a, gk.lo, vB, fB)
    E = event_map(cloud, p, event, (t_lo, t_hi), cache)
    g1 = cache.grid(1)
    nt = t_hi - t_lo + 1
    vE = E.values
    fE = E.defined
    # A_k
    for k in range(1, kappa + 1):
        if k == kappa:
            Ak[k] = CellMap(k, Dext[k].tau_lo, Dext[k].i_lo, Dext[k].values.copy(), Dext[k].defined.copy())
        elif k == 1:
            Dm = Dbase[1]
            v = E.values | ~Dm.values[: nt]
            f = E.defined & Dm.defined[: nt]
            Ak[k] = CellMap(1, t_lo, g1.lo, v & f, f)
        else:
            v = Dext[k].values | ~Dbase[k].values
            f = Dext[k].defined & Dbase[k].defined
            Ak[k] = CellMap(k, Dext[k].tau_lo, Dext[k].i_lo, v & f, f)
    # A = product over ancestors
    vA = np.ones_like(vE)
    fA = np.ones_like(fE)
    i1 = np.stack(np.meshgrid(*[np.arange(g1.n) + g1.lo] * g1.dim, indexing="ij"), -1)
    for k in range(1, kappa + 1):
        m = Ak[k]
        r = p.L(k) // p.L(1)
        ik = np.floor_divide(i1, r) - m.i_lo
        inside = np.all((ik >= 0) & (ik < m.values.shape[1]), axis=-1)
        ikc = np.clip(ik, 0, m.values.shape[1] - 1)
        for n_, tau in enumerate(range(t_lo, t_hi + 1)):
            tk = tau
            for j in range(1, k):
                tk = _gamma1(p, j, tk)
            row = tk - m.tau_lo
            if row < 0 or row >= m.values.shape[0]:
                fA[n_] = False
                continue
            sel = (row,) + tuple(np.moveaxis(ikc, -1, 0))
            vA[n_] &= m.values[sel] & inside
            fA[n_] &= m.defined[sel] & inside
    A = CellMap(1, t_lo, g1.lo, vA & fA, fA)
    return IndicatorField(p, kappa, E, D, Dext, Dbase, Ak, A, event.name)


# ------------------------------------------------------------------ nu_E estimator


def estimate_nu(event: LocalEvent, zeta, X, Xprime: float, t: float, n_samples: int, seed, field: ConductanceField,
                schema: SchemaParams, cell_i=None, max_rounds: int = 1000):
    """Monte Carlo estimate of the probability that ``event`` holds on the cell ``(cell_i, 0)``.

    Parameters
    ----------
    zeta : float or ndarray
        Intensity; a float ``c`` means ``c mu_x`` per site, an array gives
        the intensity of every window site.
    X : tuple of (lo, hi)
        Inclusive site bounds per axis of the region holding particles at time 0.
    Xprime : float
        Side ``z`` of the displacement box ``Q_z``; walks are conditioned,
        particle by particle, to stay inside ``x + Q_z`` during ``[0, t]``.

    Returns
    -------
    estimate, stderr, acceptance : float
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = field.dim
    cell_i = (0,) * d if cell_i is None else tuple(cell_i)
    if t < schema.eta * float(schema.beta):
        raise ValueError("t shorter than the super interval")
    xs = field.window.all_coords()
    lo = np.asarray([b[0] for b in X])
    hi = np.asarray([b[1] for b in X])
    inX = np.all((xs >= lo) & (xs <= hi), axis=1)
    intensity = (float(zeta) * field.site_weights) if np.isscalar(zeta) else np.asarray(zeta, dtype=float)
    intensity = np.where(inX, intensity, 0.0)
    rng = np.random.default_rng(seed)
    hits = np.zeros(n_samples)
    acc_sim = acc_n = 0.0
    for s in range(n_samples):
        counts = rng.poisson(intensity)
        starts = np.repeat(np.arange(field.window.n_sites), counts)
        off, times, sites, acc = conditioned_paths(field, starts, t, Xprime, rng, max_rounds)
        if starts.size:
            acc_sim += starts.size / acc
            acc_n += starts.size
        cloud = ParticleCloud(field, 0.0, float(t), off, times, sites, None)
        hits[s] = eval_event(event, cloud, schema, (cell_i, 0))
    acceptance = acc_n / acc_sim if acc_sim else 1.0
    if acceptance < 1e-3:
        import warnings
        warnings.warn(f"rejection acceptance {acceptance:.2e} is below 1e-3")
    est = float(hits.mean())
    se = float(hits.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return est, se, acceptance


# ------------------------------------------------------------------ monotonicity harness


@dataclass
class MonotonicityReport:
    event: str
    trials: int
    flips: int
    flipped_cells: list = dc_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.flips == 0


def _with_extra(cloud: ParticleCloud, extra_off, extra_times, extra_sites, t_start: float):
    """Cloud plus extra walks that rest at their start site until ``t_start`` and move afterwards."""
    times = extra_times + t_start
    times[extra_off[:-1]] = 0.0
    return ParticleCloud(cloud.field, cloud.lambda0, cloud.horizon,
                         np.concatenate([cloud.offsets, cloud.offsets[-1] + extra_off[1:]]),
                         np.concatenate([cloud.times, times]), np.concatenate([cloud.sites, extra_sites]),
                         cloud.seed)


def add_particles(cloud: ParticleCloud, schema: SchemaParams, cell, n_new: int, rng) -> ParticleCloud:
    """Insert ``n_new`` walkers at random sites of the super cube, started at the super-interval start."""
    i, tau = cell
    p = schema
    field = cloud.field
    bounds = [(cube_site_range(p, 1, int(v) - p.eta)[0], cube_site_range(p, 1, int(v) + p.eta)[1])
              for v in np.atleast_1d(i)]
    xs = np.column_stack([rng.integers(lo, hi + 1, size=n_new) for lo, hi in bounds])
    starts = field.window.index(xs).reshape(-1)
    t0 = tau * float(p.beta)
    off, times, sites = simulate_paths(field, starts, cloud.horizon - t0, rng)
    return _with_extra(cloud, off, times, sites, t0)


def monotonicity_harness(event: LocalEvent, cloud: ParticleCloud, schema: SchemaParams, n_trials: int,
                         seed=0, max_new: int = 5) -> MonotonicityReport:
    """Re-evaluate ``event`` after adding random particles to random super cells; count true -> false flips."""
    rng = np.random.default_rng(seed)
    p = schema
    g1 = CubeGrid.build(cloud.field, p, 1)
    t_max = int(math.floor(cloud.horizon / float(p.beta))) - p.eta
    if g1.n < 2 * p.eta + 1 or t_max < 0:
        raise ValueError("window or horizon too small for a super cell")
    flips = []
    for _ in range(n_trials):
        i = tuple(int(v) for v in rng.integers(g1.lo + p.eta, g1.lo + g1.n - p.eta, size=cloud.field.dim))
        tau = int(rng.integers(0, t_max + 1))
        before = eval_event(event, cloud, p, (i, tau))
        bigger = add_particles(cloud, p, (i, tau), int(rng.integers(1, max_new + 1)), rng)
        after = eval_event(event, bigger, p, (i, tau))
        if before and not after:
            flips.append((i, tau))
    return MonotonicityReport(event.name, n_trials, len(flips), flips)
