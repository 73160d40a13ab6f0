"""Hills, mountains and the two-sided Lipschitz surface of a site field.

A site field assigns open/closed to the sites ``(b, h)`` of a finite box in
``Z^{d+1}``; ``b`` is the base and ``h`` the height.  Starting from a closed
site at height 0, a d-path may

* move vertically, away from height 0, into a closed site, or
* move diagonally: one unit step in the base together with one unit step
  of the height towards 0, regardless of the state of the target; this is
  not allowed from height 0.

The hill ``H_u`` of an anchor ``u`` contains every ``v = (b, h)`` such that
some site reached from ``u`` lies in column ``b`` on the same side as ``v``
and at least as far from 0 (for ``h = 0``: anywhere in the column).  Per
column a hill is therefore an interval ``[lo, hi]`` containing 0.  The
surface is ``F+(b) = 1 + hi`` and ``F-(b) = lo - 1`` over the union of the
hills touching column ``b`` (``0`` if none does).

Sites outside the window are open by default (``treat-open``); diagonal
excursions outside the window are then followed exactly by padding the base
by the largest height in the window.  Under ``treat-closed`` every path that
leaves the window is unbounded.

Bad-cell clusters use the same base-height layout.  A cell ``x`` is
diagonally connected to ``y`` when a chain of diagonal steps from ``x``
(unconditional, never leaving height 0) ends at ``y`` or at an sup-norm
neighbour of ``y``; clusters close this relation over bad cells.  The
double-diagonal variant links ``x`` and ``y`` whenever a chain from ``y``
ends next to a chain from ``x``.
"""
from __future__ import annotations

import itertools
import json
from functools import lru_cache
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

__all__ = [
    "SiteField",
    "Hill",
    "Mountain",
    "Surface",
    "ClusterResult",
    "InconclusiveError",
    "d_reach",
    "mountain",
    "all_hills",
    "witness_path",
    "build_surface",
    "surrounds",
    "bad_cluster",
    "dd_cluster",
    "cluster_map",
    "cluster_escapes",
    "zero_cluster_report",
    "random_site_field",
]

POLICIES = ("treat-open", "treat-closed")
FORMAT_VERSION = 1


class InconclusiveError(RuntimeError):
    """The window is too small to decide the query."""


@dataclass(frozen=True, eq=False)
class SiteField:
    """Open/closed sites on a box of ``Z^{d+1}``, height on the last axis.

    Parameters
    ----------
    open : bool ndarray, shape ``base_shape + (n_heights,)``
    origin : tuple of int
        Coordinates of array index ``(0, ..., 0)``; the height range
        ``origin[-1] .. origin[-1] + n_heights - 1`` must contain 0.
    policy : {'treat-open', 'treat-closed'}
    """

    open: np.ndarray
    origin: tuple
    policy: str = "treat-open"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.open, dtype=bool)
        object.__setattr__(self, "open", arr)
        if arr.ndim < 2:
            raise ValueError("site field needs at least one base axis and the height axis")
        org = tuple(int(v) for v in self.origin)
        if len(org) != arr.ndim:
            raise ValueError("origin must have one entry per axis")
        object.__setattr__(self, "origin", org)
        if not org[-1] <= 0 <= org[-1] + arr.shape[-1] - 1:
            raise ValueError("height range must contain 0")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")

    @classmethod
    def centered(cls, open_, h_min: int | None = None, policy: str = "treat-open") -> "SiteField":
        """Base centred on 0 (lower corner at ``-(n // 2)``), heights from ``h_min``."""
        open_ = np.asarray(open_, dtype=bool)
        base = tuple(-(s // 2) for s in open_.shape[:-1])
        if h_min is None:
            h_min = -(open_.shape[-1] // 2)
        return cls(open_, base + (h_min,), policy)

    @property
    def base_dim(self) -> int:
        return self.open.ndim - 1

    @property
    def base_shape(self) -> tuple:
        return self.open.shape[:-1]

    @property
    def h_min(self) -> int:
        return self.origin[-1]

    @property
    def h_max(self) -> int:
        return self.origin[-1] + self.open.shape[-1] - 1

    @property
    def closed(self) -> np.ndarray:
        return ~self.open

    def in_window(self, site) -> bool:
        idx = np.asarray(site) - np.asarray(self.origin)
        return bool(np.all(idx >= 0) and np.all(idx < np.asarray(self.open.shape)))

    def is_open(self, site) -> bool:
        if self.in_window(site):
            return bool(self.open[tuple(np.asarray(site) - np.asarray(self.origin))])
        return self.policy == "treat-open"

    def base_coords(self) -> np.ndarray:
        """All base coordinates of the window, C order; shape ``(n_base, d)``."""
        grids = np.indices(self.base_shape).reshape(self.base_dim, -1).T
        return grids + np.asarray(self.origin[:-1])

    def with_site(self, site, is_open: bool) -> "SiteField":
        arr = self.open.copy()
        arr[tuple(np.asarray(site) - np.asarray(self.origin))] = is_open
        return SiteField(arr, self.origin, self.policy)

    def to_dict(self) -> dict:
        return {"format": "lipsurf.sitefield", "version": FORMAT_VERSION, "origin": list(self.origin),
                "shape": list(self.open.shape), "policy": self.policy,
                "closed": np.flatnonzero(~self.open.ravel()).tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "SiteField":
        d = json.loads(s)
        if d.get("format") != "lipsurf.sitefield" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported site field container")
        arr = np.ones(int(np.prod(d["shape"])), dtype=bool)
        arr[np.asarray(d["closed"], dtype=np.int64)] = False
        return cls(arr.reshape(d["shape"]), tuple(d["origin"]), d["policy"])


def random_site_field(base_shape, heights, p_closed: float, rng, policy: str = "treat-open") -> SiteField:
    """I.i.d. field: each site closed with probability ``p_closed``.

    ``heights`` is ``(h_min, h_max)``; the base is centred on 0.
    """
    h_min, h_max = heights
    shape = tuple(base_shape) + (h_max - h_min + 1,)
    open_ = rng.random(shape) >= p_closed
    return SiteField.centered(open_, h_min, policy)


# ------------------------------------------------------------------ padded grid


@dataclass(frozen=True)
class _Grid:
    """Flat padded layout for the reachability kernels."""

    dims: np.ndarray      # padded shape, height last
    strides: np.ndarray
    h0: int               # array index of height 0
    pad: int
    wlo: np.ndarray       # window base bounds in padded coordinates (inclusive)
    whi: np.ndarray
    closed: np.ndarray    # uint8 flat, padded
    treat_closed: bool

    @property
    def n(self) -> int:
        return int(self.closed.size)

    @property
    def H(self) -> int:
        return int(self.dims[-1])


def _grid(field: SiteField) -> _Grid:
    treat_closed = field.policy == "treat-closed"
    pad = 0 if treat_closed else max(abs(field.h_min), abs(field.h_max))
    db = field.base_dim
    closed = np.pad(~field.open, [(pad, pad)] * db + [(0, 0)], constant_values=False)
    dims = np.asarray(closed.shape, dtype=np.int64)
    strides = np.ones(dims.size, dtype=np.int64)
    for a in range(dims.size - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    wlo = np.full(db, pad, dtype=np.int64)
    whi = wlo + np.asarray(field.base_shape, dtype=np.int64) - 1
    return _Grid(dims, strides, -field.h_min, pad, wlo, whi,
                 np.ascontiguousarray(closed.ravel()).astype(np.uint8), treat_closed)


@njit(cache=True)
def _reach(closed, dims, strides, h0, sources, stamp, gen, queue, treat_closed, wlo, whi):
    """Breadth-first closure of the d-path moves from ``sources``.

    Visited sites are marked with ``stamp[site] = gen`` and listed in
    ``queue[:count]``.  Returns ``(count, escaped)``; ``escaped`` is set when a
    move leaves the window under the closed-outside policy.
    """
    nd = dims.size
    H = dims[nd - 1]
    head = 0
    tail = 0
    escaped = False
    for s in sources:
        if stamp[s] != gen:
            stamp[s] = gen
            queue[tail] = s
            tail += 1
    while head < tail:
        f = queue[head]
        head += 1
        hi = f % H
        h = hi - h0
        # vertical moves, away from 0, into closed sites
        if h >= 0:
            if hi + 1 < H:
                t = f + 1
                if closed[t] and stamp[t] != gen:
                    stamp[t] = gen
                    queue[tail] = t
                    tail += 1
            elif treat_closed:
                escaped = True
        if h <= 0:
            if hi - 1 >= 0:
                t = f - 1
                if closed[t] and stamp[t] != gen:
                    stamp[t] = gen
                    queue[tail] = t
                    tail += 1
            elif treat_closed:
                escaped = True
        # diagonal moves, towards 0, unconditional
        if h != 0:
            dh = -1 if h > 0 else 1
            for j in range(nd - 1):
                c = (f // strides[j]) % dims[j]
                for sgn in (-1, 1):
                    cn = c + sgn
                    if cn < wlo[j] or cn > whi[j]:
                        if treat_closed:
                            escaped = True
                            continue
                        if cn < 0 or cn >= dims[j]:
                            continue
                    t = f + sgn * strides[j] + dh
                    if stamp[t] != gen:
                        stamp[t] = gen
                        queue[tail] = t
                        tail += 1
    return tail, escaped


@njit(cache=True)
def _column_extent(sites, count, H, h0, n_cols, hi_out, lo_out):
    """Per-column extremes of a reached set; untouched columns get hi = -1, lo = 1."""
    for c in range(n_cols):
        hi_out[c] = -1
        lo_out[c] = 1
    for q in range(count):
        f = sites[q]
        col = f // H
        h = f % H - h0
        top = h if h > 0 else 0
        bot = h if h < 0 else 0
        if top > hi_out[col]:
            hi_out[col] = top
        if bot < lo_out[col]:
            lo_out[col] = bot


@njit(cache=True)
def _anchor_extents(closed, dims, strides, h0, anchors, treat_closed, wlo, whi):
    """Column extents of the hill of every anchor; arrays of shape (n_anchors, n_cols)."""
    n = closed.size
    H = dims[dims.size - 1]
    n_cols = n // H
    stamp = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    his = np.empty((anchors.size, n_cols), dtype=np.int64)
    los = np.empty((anchors.size, n_cols), dtype=np.int64)
    esc = np.zeros(anchors.size, dtype=np.bool_)
    src = np.empty(1, dtype=np.int64)
    for a in range(anchors.size):
        src[0] = anchors[a]
        cnt, e = _reach(closed, dims, strides, h0, src, stamp, a + 1, queue, treat_closed, wlo, whi)
        esc[a] = e
        _column_extent(queue, cnt, H, h0, n_cols, his[a], los[a])
    return his, los, esc


@njit(cache=True)
def _surface_extent(closed, dims, strides, h0, anchors, treat_closed, wlo, whi):
    """Column extents of the union of all hills, by one multi-source closure."""
    n = closed.size
    H = dims[dims.size - 1]
    n_cols = n // H
    stamp = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    hi = np.empty(n_cols, dtype=np.int64)
    lo = np.empty(n_cols, dtype=np.int64)
    cnt, esc = _reach(closed, dims, strides, h0, anchors, stamp, 1, queue, treat_closed, wlo, whi)
    _column_extent(queue, cnt, H, h0, n_cols, hi, lo)
    return hi, lo, esc


def _anchors(g: _Grid) -> np.ndarray:
    """Flat indices of the closed height-0 sites."""
    idx = np.flatnonzero(g.closed)
    return idx[(idx % g.H) == g.h0].astype(np.int64)


# ------------------------------------------------------------------ results


@dataclass(eq=False)
class _ColumnSet:
    """Per-column interval ``[lo, hi]`` (containing 0) over the padded base."""

    field: SiteField
    hi: np.ndarray      # padded base shape; -1 where untouched
    lo: np.ndarray
    pad: int
    escaped: bool = False

    @property
    def touched(self) -> np.ndarray:
        return self.hi >= 0

    def is_empty(self) -> bool:
        return not self.touched.any()

    def _base_of(self, idx) -> np.ndarray:
        return np.asarray(idx) - self.pad + np.asarray(self.field.origin[:-1])

    def columns(self):
        """Iterate ``(b, lo, hi)`` over touched columns (``b`` in field coordinates)."""
        for idx in zip(*np.nonzero(self.touched)):
            yield tuple(int(v) for v in self._base_of(idx)), int(self.lo[idx]), int(self.hi[idx])

    def members(self) -> set:
        out = set()
        for b, lo, hi in self.columns():
            for h in range(lo, hi + 1):
                out.add(b + (h,))
        return out

    def __contains__(self, site) -> bool:
        site = tuple(int(v) for v in site)
        idx = np.asarray(site[:-1]) - np.asarray(self.field.origin[:-1]) + self.pad
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.hi.shape)):
            return False
        idx = tuple(idx)
        return bool(self.hi[idx] >= 0 and self.lo[idx] <= site[-1] <= self.hi[idx])

    def depth_up(self, b) -> int | None:
        """``sup{k : (b, k) in S}``, or None if the column is untouched."""
        idx = tuple(np.asarray(b) - np.asarray(self.field.origin[:-1]) + self.pad)
        return int(self.hi[idx]) if self.hi[idx] >= 0 else None

    def radius(self, u) -> float:
        """Largest l1 distance from ``u`` to a member; ``-inf`` if empty."""
        if self.escaped:
            return np.inf
        u = np.asarray(u)
        best = -np.inf
        for b, lo, hi in self.columns():
            db = np.abs(np.asarray(b) - u[:-1]).sum()
            best = max(best, db + max(abs(hi - u[-1]), abs(lo - u[-1])))
        return best


@dataclass(eq=False)
class Hill(_ColumnSet):
    """Hill of an anchor ``u``."""

    anchor: tuple = ()

    def radius(self, u=None) -> float:  # noqa: D401
        return super().radius(self.anchor if u is None else u)


@dataclass(eq=False)
class Mountain(_ColumnSet):
    """Union of the hills containing a height-0 site ``v``."""

    anchor: tuple = ()
    hills: tuple = ()


def _check_L(field: SiteField, u):
    u = tuple(int(v) for v in u)
    if len(u) != field.open.ndim or u[-1] != 0:
        raise ValueError(f"{u} is not a height-0 site")
    return u


def _flat(g: _Grid, field: SiteField, site) -> int:
    idx = np.asarray(site) - np.asarray(field.origin)
    idx[:-1] += g.pad
    return int(np.dot(idx, g.strides))


def _unflat_base(g: _Grid, field: SiteField, col: int):
    idx = np.unravel_index(col, tuple(g.dims[:-1]))
    return tuple(int(v) - g.pad + o for v, o in zip(idx, field.origin[:-1]))


def d_reach(field: SiteField, u) -> Hill:
    """Hill of the height-0 site ``u``; empty if ``u`` is open."""
    u = _check_L(field, u)
    g = _grid(field)
    shape = tuple(g.dims[:-1])
    if field.is_open(u) or not field.in_window(u):
        if not field.in_window(u) and field.policy == "treat-closed":
            raise ValueError("anchor outside the window under treat-closed")
        empty = np.full(shape, -1, dtype=np.int64)
        return Hill(field, empty, np.ones(shape, dtype=np.int64), g.pad, False, anchor=u)
    his, los, esc = _anchor_extents(g.closed, g.dims, g.strides, g.h0,
                                    np.array([_flat(g, field, u)], dtype=np.int64),
                                    g.treat_closed, g.wlo, g.whi)
    return Hill(field, his[0].reshape(shape), los[0].reshape(shape), g.pad, bool(esc[0]), anchor=u)


def all_hills(field: SiteField) -> dict:
    """Hills of every closed height-0 site in the window, keyed by anchor."""
    g = _grid(field)
    anchors = _anchors(g)
    shape = tuple(g.dims[:-1])
    his, los, esc = _anchor_extents(g.closed, g.dims, g.strides, g.h0, anchors, g.treat_closed,
                                    g.wlo, g.whi)
    out = {}
    for a, f in enumerate(anchors):
        u = _unflat_base(g, field, int(f // g.H)) + (0,)
        out[u] = Hill(field, his[a].reshape(shape), los[a].reshape(shape), g.pad, bool(esc[a]), anchor=u)
    return out


@njit(cache=True)
def _mountain_extent(his, los, col):
    """Union of the hills (rows of ``his``/``los``) touching column ``col``."""
    n_cols = his.shape[1]
    hi = np.full(n_cols, -1, dtype=np.int64)
    lo = np.ones(n_cols, dtype=np.int64)
    used = np.zeros(his.shape[0], dtype=np.bool_)
    for a in range(his.shape[0]):
        if his[a, col] < 0:
            continue
        used[a] = True
        for c in range(n_cols):
            if his[a, c] >= 0:
                if his[a, c] > hi[c]:
                    hi[c] = his[a, c]
                if los[a, c] < lo[c]:
                    lo[c] = los[a, c]
    return hi, lo, used


def mountain(field: SiteField, v, hills: dict | None = None) -> Mountain:
    """Union of all hills (of anchors in the window) that contain ``v``."""
    v = _check_L(field, v)
    hills = all_hills(field) if hills is None else hills
    g_pad = _grid(field).pad
    shape = tuple(np.asarray(field.base_shape) + 2 * g_pad)
    keys = list(hills)
    if not keys:
        return Mountain(field, np.full(shape, -1, dtype=np.int64), np.ones(shape, dtype=np.int64),
                        g_pad, False, anchor=v, hills=())
    his = np.stack([hills[u].hi.ravel() for u in keys])
    los = np.stack([hills[u].lo.ravel() for u in keys])
    idx = np.asarray(v[:-1]) - np.asarray(field.origin[:-1]) + g_pad
    if np.any(idx < 0) or np.any(idx >= np.asarray(shape)):
        used = np.zeros(len(keys), dtype=bool)
        hi, lo = np.full(his.shape[1], -1, dtype=np.int64), np.ones(his.shape[1], dtype=np.int64)
    else:
        hi, lo, used = _mountain_extent(his, los, int(np.ravel_multi_index(tuple(idx), shape)))
    esc = any(hills[u].escaped for u, f in zip(keys, used) if f)
    return Mountain(field, hi.reshape(shape), lo.reshape(shape), g_pad, esc, anchor=v,
                    hills=tuple(u for u, f in zip(keys, used) if f))


def _dpath_moves(site, field: SiteField):
    b, h = site[:-1], site[-1]
    signs = (1, -1) if h == 0 else ((1,) if h > 0 else (-1,))
    for s in signs:
        t = b + (h + s,)
        if not field.is_open(t):
            yield t
    if h != 0:
        h2 = h - (1 if h > 0 else -1)
        for a in range(len(b)):
            for e in (-1, 1):
                bb = list(b)
                bb[a] += e
                yield tuple(bb) + (h2,)


def witness_path(field: SiteField, u, v):
    """A shortest d-path from ``u`` to a site dominating ``v``, or None when ``v`` is not in the hill of ``u``.

    Plain breadth-first search with parent links; meant for diagnostics on
    single pairs.  Under treat-closed the search is confined to the window.
    """
    u = _check_L(field, u)
    v = tuple(int(x) for x in v)
    if field.is_open(u):
        return None
    bv, hv = v[:-1], v[-1]

    def hits(w):
        if w[:-1] != bv:
            return False
        return hv == 0 or (w[-1] * hv > 0 and abs(w[-1]) >= abs(hv))

    parent = {u: None}
    queue = [u]
    head = 0
    while head < len(queue):
        x = queue[head]
        head += 1
        if hits(x):
            path = [x]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for y in _dpath_moves(x, field):
            if y in parent:
                continue
            if field.policy == "treat-closed" and not field.in_window(y):
                continue
            parent[y] = x
            queue.append(y)
    return None


@dataclass(eq=False)
class Surface:
    """Height maps over the base window.

    ``F_plus`` and ``F_minus`` are integer arrays of the base shape; under the
    closed-outside policy they are float arrays holding ``+-inf``.
    """

    field: SiteField
    F_plus: np.ndarray
    F_minus: np.ndarray
    escaped: bool = False

    def sites(self) -> set:
        out = set()
        org = np.asarray(self.field.origin[:-1])
        for idx in np.ndindex(*self.F_plus.shape):
            b = tuple(int(v) for v in np.asarray(idx) + org)
            out.add(b + (int(self.F_plus[idx]),))
            out.add(b + (int(self.F_minus[idx]),))
        return out

    def at(self, b):
        idx = tuple(np.asarray(b) - np.asarray(self.field.origin[:-1]))
        return self.F_plus[idx], self.F_minus[idx]

    def check(self) -> dict:
        """Count violations of the structural guarantees.

        Keys: ``sign`` (F+ < 0 or F- > 0), ``zero`` (F+ = 0 but F- != 0 or
        vice versa), ``lipschitz`` (an l1-neighbour pair differing by more than
        one, either map) and ``open`` (a surface site that is closed).
        """
        Fp, Fm = self.F_plus, self.F_minus
        out = {"sign": int(np.count_nonzero(Fp < 0) + np.count_nonzero(Fm > 0)),
               "zero": int(np.count_nonzero((Fp == 0) != (Fm == 0)))}
        lip = 0
        with np.errstate(invalid="ignore"):
            # inf - inf is NaN and never counts: an unbounded surface is flat
            for a in range(Fp.ndim):
                lip += int(np.count_nonzero(np.abs(np.diff(Fp, axis=a)) > 1))
                lip += int(np.count_nonzero(np.abs(np.diff(Fm, axis=a)) > 1))
        out["lipschitz"] = lip
        out["open"] = _closed_surface_sites(self)
        return out

    def to_csv(self) -> str:
        d = self.F_plus.ndim
        rows = [",".join([f"b{a}" for a in range(d)] + ["F_plus", "F_minus"])]
        org = np.asarray(self.field.origin[:-1])
        for idx in np.ndindex(*self.F_plus.shape):
            b = np.asarray(idx) + org
            rows.append(",".join([str(int(v)) for v in b] + [_num(self.F_plus[idx]), _num(self.F_minus[idx])]))
        return "\n".join(rows) + "\n"


def _num(x) -> str:
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return str(int(x))


def _closed_surface_sites(s: Surface) -> int:
    f = s.field
    H = f.open.shape[-1]
    bad = 0
    for F in (s.F_plus, s.F_minus):
        if not np.all(np.isfinite(F)):
            continue
        hidx = np.asarray(F, dtype=np.int64) - f.h_min
        inside = (hidx >= 0) & (hidx < H)
        vals = np.take_along_axis(f.open, np.clip(hidx, 0, H - 1)[..., None], axis=-1)[..., 0]
        if f.policy == "treat-open":
            bad += int(np.count_nonzero(inside & ~vals))
        else:
            bad += int(np.count_nonzero(~inside | ~vals))
    return bad


def build_surface(field: SiteField) -> Surface:
    """``F+`` and ``F-`` over the base window from one closure of all anchors."""
    if field.policy == "treat-closed":
        # every site outside the window is a closed anchor whose hill is an
        # unbounded column, and diagonal descents from it reach every column
        shape = field.base_shape
        return Surface(field, np.full(shape, np.inf), np.full(shape, -np.inf), escaped=True)
    g = _grid(field)
    hi, lo, _ = _surface_extent(g.closed, g.dims, g.strides, g.h0, _anchors(g), False, g.wlo, g.whi)
    shape = tuple(g.dims[:-1])
    hi = hi.reshape(shape)
    lo = lo.reshape(shape)
    inner = tuple(slice(g.pad, g.pad + s) for s in field.base_shape)
    hi, lo = hi[inner], lo[inner]
    touched = hi >= 0
    Fp = np.where(touched, hi + 1, 0)
    Fm = np.where(touched, lo - 1, 0)
    return Surface(field, Fp.astype(np.int64), Fm.astype(np.int64))


def surface_padded(field: SiteField):
    """``(F+, F-, pad)`` over the padded base; columns outside the window are exact under treat-open."""
    g = _grid(field)
    hi, lo, _ = _surface_extent(g.closed, g.dims, g.strides, g.h0, _anchors(g), g.treat_closed, g.wlo, g.whi)
    shape = tuple(g.dims[:-1])
    hi = hi.reshape(shape)
    lo = lo.reshape(shape)
    touched = hi >= 0
    return np.where(touched, hi + 1, 0), np.where(touched, lo - 1, 0), g.pad


# ------------------------------------------------------------------ surrounding


def surrounds(surface: Surface, site, D: int) -> bool:
    """Does every nearest-neighbour path from ``site`` of l1-reach beyond ``D`` meet the surface?

    Breadth-first search from ``site`` through sites not on the surface,
    restricted to the l1 ball of radius ``D + 1``.  Heights are unbounded, so
    only the base ball must fit in the window; otherwise
    :class:`InconclusiveError` is raised.
    """
    f = surface.field
    site = np.asarray(site, dtype=np.int64)
    if D < 0:
        raise ValueError("D must be >= 0")
    org = np.asarray(f.origin[:-1])
    lo_b = site[:-1] - (D + 1)
    hi_b = site[:-1] + (D + 1)
    if np.any(lo_b < org) or np.any(hi_b > org + np.asarray(f.base_shape) - 1):
        raise InconclusiveError(f"base ball of radius {D + 1} around {tuple(site)} leaves the window")
    Fp, Fm = surface.F_plus, surface.F_minus
    if not (np.all(np.isfinite(Fp)) and np.all(np.isfinite(Fm))):
        raise InconclusiveError("surface undefined in this window")
    return bool(_surrounds_bfs(np.asarray(Fp, dtype=np.int64).ravel(), np.asarray(Fm, dtype=np.int64).ravel(),
                               np.asarray(f.base_shape, dtype=np.int64), org.astype(np.int64), site, int(D)))


@njit(cache=True)
def _surrounds_bfs(Fp, Fm, bshape, org, site, D):
    nd = site.size
    db = nd - 1
    R = D + 1
    side = 2 * R + 1
    # local box [site - R, site + R]^{nd}
    n = side ** nd
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty((n, nd), dtype=np.int64)
    bstr = np.ones(db, dtype=np.int64)
    for a in range(db - 2, -1, -1):
        bstr[a] = bstr[a + 1] * bshape[a + 1]

    def on_surface(x):
        col = 0
        for a in range(db):
            col += (x[a] - org[a]) * bstr[a]
        return x[db] == Fp[col] or x[db] == Fm[col]

    def key(x):
        k = 0
        for a in range(nd):
            k = k * side + (x[a] - site[a] + R)
        return k

    if on_surface(site):
        return True
    head = 0
    tail = 1
    queue[0] = site
    seen[key(site)] = True
    y = np.empty(nd, dtype=np.int64)
    while head < tail:
        x = queue[head]
        head += 1
        for a in range(nd):
            for s in (-1, 1):
                for c in range(nd):
                    y[c] = x[c]
                y[a] += s
                dist = 0
                for c in range(nd):
                    dist += abs(y[c] - site[c])
                if dist > R:
                    continue
                if on_surface(y):
                    continue
                if dist > D:
                    return False
                k = key(y)
                if not seen[k]:
                    seen[k] = True
                    queue[tail] = y
                    tail += 1
    return True


# ------------------------------------------------------------------ clusters


def _ball_offsets(db: int, jmax: int):
    """CSR table of base offsets with l1 norm <= j and the parity of j, for j = 0..jmax."""
    rows = []
    ptr = [0]
    for j in range(jmax + 1):
        for off in itertools.product(range(-j, j + 1), repeat=db):
            s = sum(abs(v) for v in off)
            if s <= j and (j - s) % 2 == 0:
                rows.append(off)
        ptr.append(len(rows))
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, db)
    return np.asarray(ptr, dtype=np.int64), arr


def _cone(db: int, h: int) -> np.ndarray:
    """Cells ending a diagonal chain from ``(0, h)``: rows ``(base offset, height)``."""
    ptr, off = _ball_offsets(db, abs(h))
    sg = 1 if h > 0 else -1
    parts = []
    for j in range(abs(h) + 1):
        blk = off[ptr[j]:ptr[j + 1]]
        parts.append(np.column_stack([blk, np.full(len(blk), h - sg * j, dtype=np.int64)]))
    return np.concatenate(parts)


def _dilate(cells: np.ndarray) -> np.ndarray:
    nd = cells.shape[1]
    steps = np.asarray(list(itertools.product((-1, 0, 1), repeat=nd)), dtype=np.int64)
    return np.unique((cells[:, None, :] + steps[None, :, :]).reshape(-1, nd), axis=0)


@lru_cache(maxsize=None)
def _step_tables(db: int, h_min: int, h_max: int):
    """Offsets of every cell one D-step or one DD-step away, per height of the source.

    Returns ``(ptr1, off1, ptr2, off2)``; rows of ``off*`` are ``(base offset,
    target height index)`` and ``ptr*`` is indexed by the source height index.
    A D-step reaches ``N[D(x)]``; a DD-step reaches every ``y`` with
    ``D(y)`` meeting ``N[D(x)]``, which covers adjacency, single diagonal
    connection in either direction and double diagonal connection.
    """
    heights = range(h_min, h_max + 1)
    cones = {h: _cone(db, h) for h in heights}
    ptr1, rows1, ptr2, rows2 = [0], [], [0], []
    for hx in heights:
        S_ = _dilate(cones[hx])
        S_ = S_[(S_[:, -1] >= h_min) & (S_[:, -1] <= h_max)]
        t1 = S_.copy()
        t1[:, -1] -= h_min
        rows1.append(t1)
        ptr1.append(ptr1[-1] + len(t1))
        acc = []
        for hy in heights:
            Dy = cones[hy]
            for t in np.unique(Dy[:, -1]):
                sb = S_[S_[:, -1] == t, :-1]
                cb = Dy[Dy[:, -1] == t, :-1]
                if len(sb) == 0:
                    continue
                delta = (sb[:, None, :] - cb[None, :, :]).reshape(-1, db)
                acc.append(np.column_stack([delta, np.full(len(delta), hy - h_min, dtype=np.int64)]))
        t2 = np.unique(np.concatenate(acc), axis=0)
        rows2.append(t2)
        ptr2.append(ptr2[-1] + len(t2))
    return (np.asarray(ptr1, dtype=np.int64), np.concatenate(rows1).astype(np.int64),
            np.asarray(ptr2, dtype=np.int64), np.concatenate(rows2).astype(np.int64))


@njit(cache=True)
def _cluster(bad, dims, strides, start, tab_ptr, tab_off):
    """Closure from ``start`` over bad cells along the step table.

    ``bad`` is the flat window mask (height last); returns the flat indices
    of the cluster (empty if ``start`` is good).
    """
    nd = dims.size
    db = nd - 1
    n = bad.size
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    if not bad[start]:
        return queue[:0]
    seen[start] = True
    queue[0] = start
    head = 0
    tail = 1
    x = np.empty(nd, dtype=np.int64)
    while head < tail:
        f = queue[head]
        head += 1
        rem = f
        for a in range(nd - 1, -1, -1):
            x[a] = rem % dims[a]
            rem //= dims[a]
        hx = x[db]
        for r in range(tab_ptr[hx], tab_ptr[hx + 1]):
            g = tab_off[r, db]
            ok = True
            for a in range(db):
                c = x[a] + tab_off[r, a]
                if c < 0 or c >= dims[a]:
                    ok = False
                    break
                g += c * strides[a]
            if ok and bad[g] and not seen[g]:
                seen[g] = True
                queue[tail] = g
                tail += 1
    return queue[:tail]


def _dense_table(tab_ptr, tab_off, n_heights: int):
    """Boolean lookup ``[h_src, offset box..., h_dst]`` of a step table, flattened.

    Returns ``(mask, R)``; base offsets are shifted by ``R``.
    """
    db = tab_off.shape[1] - 1
    R = int(np.abs(tab_off[:, :db]).max()) if len(tab_off) else 0
    side = 2 * R + 1
    mask = np.zeros((n_heights,) + (side,) * db + (n_heights,), dtype=np.bool_)
    for hx in range(n_heights):
        rows = tab_off[tab_ptr[hx]:tab_ptr[hx + 1]]
        idx = (np.full(len(rows), hx),) + tuple(rows[:, a] + R for a in range(db)) + (rows[:, db],)
        mask[idx] = True
    return mask.ravel(), R


@njit(cache=True)
def _cluster_map(bad, dims, strides, tab_ptr, tab_off, dense, R, mode):
    """Clusters of every bad cell at once.

    The step graph among bad cells is built either by scanning the step
    table from each bad cell (``mode=1``) or by testing every ordered pair
    against the dense lookup (``mode=2``); ``mode=0`` picks the cheaper.
    Returns ``(cells, ptr, members)``: ``cells`` are the flat indices of the
    bad cells and ``members[ptr[i]:ptr[i+1]]`` lists (as positions in
    ``cells``) the cluster started at ``cells[i]``.
    """
    nd = dims.size
    db = nd - 1
    H = dims[db]
    n = bad.size
    pos = np.full(n, -1, dtype=np.int64)
    nb = 0
    for f in range(n):
        if bad[f]:
            pos[f] = nb
            nb += 1
    cells = np.empty(nb, dtype=np.int64)
    coords = np.empty((nb, nd), dtype=np.int64)
    for f in range(n):
        if pos[f] >= 0:
            i = pos[f]
            cells[i] = f
            rem = f
            for a in range(nd - 1, -1, -1):
                coords[i, a] = rem % dims[a]
                rem //= dims[a]
    if mode == 0:
        mode = 2 if nb * H < tab_off.shape[0] else 1
    side = 2 * R + 1
    deg = np.zeros(nb + 1, dtype=np.int64)
    nbr = np.empty(0, dtype=np.int64)
    for pass_ in range(2):
        fill = deg.copy()
        for i in range(nb):
            hx = coords[i, db]
            if mode == 1:
                for r in range(tab_ptr[hx], tab_ptr[hx + 1]):
                    g = tab_off[r, db]
                    ok = True
                    for a in range(db):
                        c = coords[i, a] + tab_off[r, a]
                        if c < 0 or c >= dims[a]:
                            ok = False
                            break
                        g += c * strides[a]
                    if ok and pos[g] >= 0 and pos[g] != i:
                        if pass_ == 0:
                            deg[i + 1] += 1
                        else:
                            nbr[fill[i]] = pos[g]
                            fill[i] += 1
            else:
                for j in range(nb):
                    if j == i:
                        continue
                    k = hx
                    ok = True
                    for a in range(db):
                        dlt = coords[j, a] - coords[i, a]
                        if dlt < -R or dlt > R:
                            ok = False
                            break
                        k = k * side + dlt + R
                    if ok and dense[k * H + coords[j, db]]:
                        if pass_ == 0:
                            deg[i + 1] += 1
                        else:
                            nbr[fill[i]] = j
                            fill[i] += 1
        if pass_ == 0:
            for i in range(nb):
                deg[i + 1] += deg[i]
            nbr = np.empty(deg[nb], dtype=np.int64)
    # closure from each start
    stamp = np.full(nb, -1, dtype=np.int64)
    queue = np.empty(nb, dtype=np.int64)
    ptr = np.zeros(nb + 1, dtype=np.int64)
    members = np.empty(16 * nb + 16, dtype=np.int64)
    for s in range(nb):
        stamp[s] = s
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            i = queue[head]
            head += 1
            for q in range(deg[i], deg[i + 1]):
                j = nbr[q]
                if stamp[j] != s:
                    stamp[j] = s
                    queue[tail] = j
                    tail += 1
        if ptr[s] + tail > members.size:
            grown = np.empty(2 * (ptr[s] + tail), dtype=np.int64)
            grown[:ptr[s]] = members[:ptr[s]]
            members = grown
        members[ptr[s]:ptr[s] + tail] = queue[:tail]
        ptr[s + 1] = ptr[s] + tail
    return cells, ptr, members[:ptr[nb]]


@dataclass(eq=False)
class ClusterResult:
    """A set of cells in base-height coordinates."""

    field: SiteField
    cells: frozenset

    def __len__(self):
        return len(self.cells)

    def __contains__(self, c):
        return tuple(int(v) for v in c) in self.cells

    def __iter__(self):
        return iter(sorted(self.cells))

    def radius(self, u) -> float:
        if not self.cells:
            return -np.inf
        u = np.asarray(u)
        return float(max(np.abs(np.asarray(c) - u).sum() for c in self.cells))


class _ClusterEngine:
    """Step tables and flat layout for repeated cluster queries on one field."""

    def __init__(self, bad_field: SiteField):
        f = bad_field
        self.field = f
        self.bad = np.ascontiguousarray((~f.open).ravel()).astype(np.uint8)
        self.dims = np.asarray(f.open.shape, dtype=np.int64)
        nd = self.dims.size
        self.strides = np.ones(nd, dtype=np.int64)
        for a in range(nd - 2, -1, -1):
            self.strides[a] = self.strides[a + 1] * self.dims[a + 1]
        self.p1, self.o1, self.p2, self.o2 = _step_tables(nd - 1, f.h_min, f.h_max)
        self.dense1 = _dense_table(self.p1, self.o1, int(self.dims[-1]))
        self.dense2 = _dense_table(self.p2, self.o2, int(self.dims[-1]))

    def flat(self, cell) -> int:
        idx = np.asarray(cell) - np.asarray(self.field.origin)
        if np.any(idx < 0) or np.any(idx >= self.dims):
            raise ValueError(f"cell {tuple(cell)} outside the window")
        return int(np.dot(idx, self.strides))

    def run(self, start, double: bool) -> frozenset:
        ptr, off = (self.p2, self.o2) if double else (self.p1, self.o1)
        out = _cluster(self.bad, self.dims, self.strides, self.flat(start), ptr, off)
        org = np.asarray(self.field.origin)
        coords = np.stack(np.unravel_index(out, tuple(self.dims)), axis=-1) + org
        return frozenset(tuple(int(v) for v in row) for row in coords)


def bad_cluster(bad_field: SiteField, start) -> ClusterResult:
    """Bad cells reachable from ``start`` by a path of bad cells, each step adjacent or diagonally connected.

    ``bad_field.open`` marks the good cells; its closed sites are the bad
    ones.  Pass the ancestry field (good where ``A = 1``) to obtain the
    cluster with respect to bad ancestry.
    """
    return ClusterResult(bad_field, _ClusterEngine(bad_field).run(start, False))


def cluster_map(bad_field: SiteField, double: bool = False, mode: str = "auto") -> dict:
    """Cluster of every bad cell, keyed by cell; one step graph shared by all starts.

    ``mode`` selects how the step graph is built: ``'scan'`` walks the step
    table from each bad cell, ``'pairs'`` tests all pairs of bad cells;
    ``'auto'`` takes the cheaper.  Results do not depend on the mode.
    """
    e = _ClusterEngine(bad_field)
    ptr, off = (e.p2, e.o2) if double else (e.p1, e.o1)
    dense, R = e.dense2 if double else e.dense1
    m = {"auto": 0, "scan": 1, "pairs": 2}[mode]
    cells, cptr, mem = _cluster_map(e.bad, e.dims, e.strides, ptr, off, dense, R, m)
    org = np.asarray(bad_field.origin)
    coords = [tuple(int(v) for v in row) for row in
              (np.stack(np.unravel_index(cells, tuple(e.dims)), axis=-1) + org)]
    return {coords[i]: ClusterResult(bad_field, frozenset(coords[j] for j in mem[cptr[i]:cptr[i + 1]]))
            for i in range(len(coords))}


def dd_cluster(bad_field: SiteField, start) -> ClusterResult:
    """Closure over bad cells of adjacency plus single and double diagonal connections."""
    return ClusterResult(bad_field, _ClusterEngine(bad_field).run(start, True))


def cluster_escapes(cluster: ClusterResult, t: int, center=None) -> bool:
    """True if some cell of the cluster lies outside ``center + [-t, t]^{d+1}``."""
    if not cluster.cells:
        return False
    arr = np.asarray(sorted(cluster.cells))
    c = np.zeros(arr.shape[1], dtype=np.int64) if center is None else np.asarray(center)
    return bool(np.any(np.abs(arr - c) > t))


# ------------------------------------------------------------------ zero-height set


@dataclass
class ZeroClusterReport:
    """Connected components of the base columns where the surface is not at height 0."""

    n_components: int
    sizes: list
    largest_fraction: float
    spans: bool
    window_relative: bool = True

    def to_dict(self) -> dict:
        return {"n_components": self.n_components, "sizes": self.sizes,
                "largest_fraction": self.largest_fraction, "spans": self.spans,
                "window_relative": self.window_relative}


def zero_cluster_report(surface: Surface) -> ZeroClusterReport:
    """Components (l1 adjacency) of ``{b : F+(b) != 0}`` inside the window.

    ``spans`` tells whether some component touches two opposite faces of the
    base window; the whole report is relative to the finite window.
    """
    nz = np.asarray(surface.F_plus) != 0
    structure = ndimage.generate_binary_structure(nz.ndim, 1)
    lab, n = ndimage.label(nz, structure=structure)
    sizes = sorted((int(s) for s in np.bincount(lab.ravel())[1:]), reverse=True)
    spans = False
    for a in range(nz.ndim):
        lo = set(np.unique(np.take(lab, 0, axis=a))) - {0}
        hi = set(np.unique(np.take(lab, nz.shape[a] - 1, axis=a))) - {0}
        if lo & hi:
            spans = True
    frac = sizes[0] / nz.size if sizes else 0.0
    return ZeroClusterReport(int(n), sizes, float(frac), bool(spans))
