"""Finite lattice windows with i.i.d. elliptic conductances.

Sites are the points x of Z^d with ``|x|_inf <= L``.  Every nearest-neighbour
edge touching the window carries a weight in ``[1/C_M, C_M]``; edges that
leave the window are drawn as well, so a given seed yields the same interior
weights in both boundary modes.

The walk jumps from x to a neighbour y at rate ``mu_xy / mu_x`` where
``mu_x`` is the sum of the incident weights, so the total jump rate is one
and jump times form a unit-rate Poisson process independent of position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "LatticeWindow",
    "ConductanceField",
    "WalkKernel",
    "Trajectory",
    "ExitEstimate",
    "LAWS",
    "sample_conductances",
    "constant_field",
    "field_from_bonds",
    "step",
    "simulate_walk",
    "simulate_paths",
    "max_displacement",
    "exit_probability",
    "exit_profile",
    "parse_lattice_spec",
]

BOUNDARY_MODES = ("reflecting", "absorbing")
LAWS = ("uniform", "two-point", "constant")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LatticeWindow:
    """Box ``[-L, L]^d`` of integer sites.

    Parameters
    ----------
    dim : int
        Spatial dimension d >= 1.
    half_extent : int
        L >= 1.
    boundary : {'reflecting', 'absorbing'}
        Reflecting renormalises jump probabilities over in-window neighbours;
        absorbing lets the walker leave, after which it is discarded.
    """

    dim: int
    half_extent: int
    boundary: str = "reflecting"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be an integer >= 1, got {self.dim}")
        if int(self.half_extent) != self.half_extent or self.half_extent < 1:
            raise ValueError(f"half_extent must be an integer >= 1, got {self.half_extent}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")

    @property
    def side(self) -> int:
        return 2 * self.half_extent + 1

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.all(np.abs(x) <= self.half_extent, axis=-1)

    def index(self, x) -> np.ndarray:
        """Flat index of site coordinates ``x`` (last axis holds the d coordinates)."""
        x = np.asarray(x, dtype=np.int64)
        if not np.all(self.contains(x)):
            raise ValueError("site outside window")
        return np.ravel_multi_index(tuple(np.moveaxis(x + self.half_extent, -1, 0)), self.shape)

    def coords(self, idx) -> np.ndarray:
        """Inverse of :meth:`index`; coordinates on the last axis."""
        c = np.unravel_index(np.asarray(idx, dtype=np.int64), self.shape)
        return np.stack(c, axis=-1) - self.half_extent

    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.n_sites))


@dataclass(frozen=True, eq=False)
class ConductanceField:
    """Edge weights on a window together with the derived jump tables.

    ``bonds[a]`` has the window shape except along axis ``a`` where it has
    length ``2L + 2``; entry ``j`` along that axis is the edge between array
    indices ``j - 1`` and ``j`` (indices -1 and 2L + 1 lie outside).
    """

    window: LatticeWindow
    cm: float
    law: str
    seed: int | None
    bonds: tuple
    site_weights: np.ndarray = dc_field(repr=False)
    neighbors: np.ndarray = dc_field(repr=False)
    jump_probs: np.ndarray = dc_field(repr=False)

    @property
    def dim(self):
        return self.window.dim

    def edge_weight(self, x, y) -> float:
        """Weight of the edge between neighbouring sites ``x`` and ``y``."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ValueError("x and y are not nearest neighbours")
        a = int(np.flatnonzero(diff)[0])
        lo = np.minimum(x, y) + self.window.half_extent
        idx = lo.copy()
        idx[a] += 1
        if np.any(idx < 0) or np.any(np.delete(idx, a) >= self.window.side) or idx[a] > self.window.side:
            raise ValueError("edge does not touch the window")
        return float(self.bonds[a][tuple(idx)])

    def all_edge_weights(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.bonds])

    def cumprobs(self) -> np.ndarray:
        return np.cumsum(self.jump_probs, axis=1)

    def to_dict(self) -> dict:
        return {
            "format": "lipsurf.conductance",
            "version": FORMAT_VERSION,
            "dim": self.dim,
            "half_extent": self.window.half_extent,
            "boundary": self.window.boundary,
            "cm": self.cm,
            "law": self.law,
            "seed": self.seed,
            "bonds": [b.tolist() for b in self.bonds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ConductanceField":
        if d.get("format") != "lipsurf.conductance" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported conductance container")
        win = LatticeWindow(d["dim"], d["half_extent"], d["boundary"])
        bonds = tuple(np.asarray(b, dtype=np.float64) for b in d["bonds"])
        return field_from_bonds(win, bonds, cm=d["cm"], law=d["law"], seed=d["seed"])

    @classmethod
    def from_json(cls, s: str) -> "ConductanceField":
        return cls.from_dict(json.loads(s))


def _bond_shape(window: LatticeWindow, axis: int) -> tuple:
    shape = list(window.shape)
    shape[axis] += 1
    return tuple(shape)


def field_from_bonds(window: LatticeWindow, bonds, cm: float, law: str = "custom",
                     seed=None) -> ConductanceField:
    """Assemble site weights and jump tables from explicit edge arrays."""
    d, side = window.dim, window.side
    bonds = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in bonds)
    if len(bonds) != d:
        raise ValueError("need one bond array per axis")
    for a, b in enumerate(bonds):
        if b.shape != _bond_shape(window, a):
            raise ValueError(f"bond array {a} has shape {b.shape}, expected {_bond_shape(window, a)}")
        if np.any(b < 1.0 / cm - 1e-12) or np.any(b > cm + 1e-12):
            raise ValueError("edge weights outside [1/C_M, C_M]")
    n = window.n_sites
    neighbors = np.full((n, 2 * d), -1, dtype=np.int64)
    rates = np.zeros((n, 2 * d))
    flat = np.arange(n).reshape(window.shape)
    for a, b in enumerate(bonds):
        lower = np.take(b, np.arange(side), axis=a)      # edge to x - e_a
        upper = np.take(b, np.arange(1, side + 1), axis=a)  # edge to x + e_a
        down = np.full(window.shape, -1, dtype=np.int64)
        up = np.full(window.shape, -1, dtype=np.int64)
        sl_lo = [slice(None)] * d
        sl_hi = [slice(None)] * d
        sl_lo[a] = slice(1, None)
        sl_hi[a] = slice(None, -1)
        down[tuple(sl_lo)] = flat[tuple(sl_hi)]
        up[tuple(sl_hi)] = flat[tuple(sl_lo)]
        neighbors[:, 2 * a] = down.ravel()
        neighbors[:, 2 * a + 1] = up.ravel()
        rates[:, 2 * a] = lower.ravel()
        rates[:, 2 * a + 1] = upper.ravel()
    if window.boundary == "reflecting":
        rates = np.where(neighbors >= 0, rates, 0.0)
    mu = rates.sum(axis=1)
    probs = rates / mu[:, None]
    return ConductanceField(window=window, cm=float(cm), law=law, seed=seed, bonds=bonds,
                            site_weights=mu, neighbors=neighbors, jump_probs=probs)


def sample_conductances(window: LatticeWindow, cm: float, law: str = "uniform", seed: int = 0,
                        support=None, p: float = 0.5) -> ConductanceField:
    """Draw i.i.d. edge weights.

    Parameters
    ----------
    window : LatticeWindow
    cm : float
        Ellipticity constant; weights lie in ``[1/cm, cm]``.  Must exceed 1 for
        the random laws; the ``'constant'`` law (every weight equal to one) also
        accepts ``cm == 1``.
    law : {'uniform', 'two-point', 'constant'}
        ``'uniform'`` draws from ``U[lo, hi]``; ``'two-point'`` takes ``lo`` with
        probability ``p`` and ``hi`` otherwise.
    seed : int
    support : tuple of float, optional
        ``(lo, hi)``; defaults to ``(1/cm, cm)``.  Must lie inside ``[1/cm, cm]``.
    """
    if law not in LAWS:
        raise ValueError(f"unknown law {law!r}; expected one of {LAWS}")
    if law == "constant":
        if cm < 1:
            raise ValueError("C_M must be >= 1")
        lo = hi = 1.0
    else:
        if not cm > 1:
            raise ValueError(f"C_M must be > 1 for random laws, got {cm}")
        lo, hi = support if support is not None else (1.0 / cm, float(cm))
    if lo > hi or lo < 1.0 / cm - 1e-12 or hi > cm + 1e-12:
        raise ValueError(f"law support [{lo}, {hi}] not inside [1/C_M, C_M] = [{1 / cm}, {cm}]")
    rng = np.random.default_rng(seed)
    bonds = []
    for a in range(window.dim):
        shape = _bond_shape(window, a)
        if law == "uniform":
            b = rng.uniform(lo, hi, size=shape)
        elif law == "two-point":
            b = np.where(rng.random(shape) < p, lo, hi)
        else:
            b = np.ones(shape)
        bonds.append(b)
    return field_from_bonds(window, bonds, cm=cm, law=law, seed=seed)


def constant_field(dim: int, half_extent: int, boundary: str = "reflecting") -> ConductanceField:
    """Unit conductances (simple random walk)."""
    return sample_conductances(LatticeWindow(dim, half_extent, boundary), 1.0, "constant", 0)


def parse_lattice_spec(spec: str) -> ConductanceField:
    """Build a field from ``'d=2,L=64,cm=2,law=uniform,seed=7[,boundary=...]'``."""
    kv = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        k, _, v = part.partition("=")
        kv[k.strip()] = v.strip()
    try:
        d = int(kv.pop("d"))
        L = int(kv.pop("L"))
    except KeyError as e:
        raise ValueError(f"lattice spec missing {e.args[0]!r}") from None
    cm = float(kv.pop("cm", 2.0))
    law = kv.pop("law", "uniform")
    seed = int(kv.pop("seed", 0))
    boundary = kv.pop("boundary", "reflecting")
    if kv:
        raise ValueError(f"unknown lattice keys: {sorted(kv)}")
    return sample_conductances(LatticeWindow(d, L, boundary), cm, law, seed)


# --------------------------------------------------------------------------- walks


@dataclass
class WalkKernel:
    """Single-walker kernel: a field plus its own random stream."""

    field: ConductanceField
    rng: np.random.Generator

    @classmethod
    def from_seed(cls, field: ConductanceField, seed) -> "WalkKernel":
        return cls(field, np.random.default_rng(seed))


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant path: ``sites[j]`` is occupied on ``[times[j], times[j+1])``.

    In absorbing mode a walker that leaves the window stops being tracked;
    ``exit_time`` then holds the time of that jump.
    """

    times: np.ndarray
    sites: np.ndarray
    t_end: float
    exit_time: float | None = None

    @property
    def alive(self) -> bool:
        return self.exit_time is None

    def position(self, t: float) -> np.ndarray:
        if t < 0 or t > self.t_end:
            raise ValueError(f"t={t} outside [0, {self.t_end}]")
        if self.exit_time is not None and t >= self.exit_time:
            raise ValueError("walker has left the window")
        j = np.searchsorted(self.times, t, side="right") - 1
        return self.sites[j]

    def __len__(self):
        return len(self.times)


def _safe_cumprobs_row(field, i):
    p = field.jump_probs[i]
    cum = np.cumsum(p)
    last = len(p) - 1 - int(np.argmax(p[::-1] > 0))
    cum[last:] = 2.0
    return cum


def step(kernel: WalkKernel, x):
    """One holding time and jump from site ``x``.

    Returns
    -------
    holding : float
        Exponential with rate one.
    y : ndarray
        Target coordinates.  In absorbing mode this may lie outside the window.
    """
    f = kernel.field
    x = np.asarray(x, dtype=np.int64)
    i = int(f.window.index(x))
    hold = kernel.rng.exponential(1.0)
    k = int((_safe_cumprobs_row(f, i) <= kernel.rng.random()).sum())
    y = x.copy()
    y[k // 2] += 1 if k % 2 else -1
    return hold, y


def _safe_cumprobs(field: ConductanceField) -> np.ndarray:
    # cumulative table whose last positive slot absorbs round-off, so a
    # zero-probability trailing slot can never be selected
    p = field.jump_probs
    cum = np.cumsum(p, axis=1)
    last = p.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    cols = np.arange(p.shape[1])
    cum[cols[None, :] >= last[:, None]] = 2.0
    return cum


def simulate_paths(field: ConductanceField, starts, t_end: float, rng: np.random.Generator):
    """Simulate independent walks in batch.

    Parameters
    ----------
    field : ConductanceField
    starts : array of int
        Flat start indices.
    t_end : float
    rng : numpy Generator

    Returns
    -------
    offsets : ndarray, shape (n + 1,)
        Walk ``p`` occupies ``times[offsets[p]:offsets[p+1]]``.
    times : ndarray
        Jump times, each walk starting with 0.
    sites : ndarray of int64
        Flat site after each jump; -1 once the walker left the window.
    """
    starts = np.asarray(starts, dtype=np.int64)
    n = starts.size
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    if n == 0:
        return np.zeros(1, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64)
    nj = rng.poisson(t_end, size=n) if t_end > 0 else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(nj + 1, out=offsets[1:])
    total = int(offsets[-1])
    # jump times: order statistics of nj uniforms, as normalised partial sums
    # of nj + 1 exponential spacings
    csum = np.cumsum(rng.exponential(1.0, size=total))
    base = np.concatenate(([0.0], csum[offsets[1:-1] - 1]))
    local = csum - np.repeat(base, nj + 1)
    norm = np.repeat(local[offsets[1:] - 1], nj + 1)
    times = np.empty(total)
    times[1:] = local[:-1]
    times[0] = 0.0
    times = t_end * times / norm
    times[offsets[:-1]] = 0.0
    del csum, local, norm
    sites = np.empty(total, dtype=np.int64)
    sites[offsets[:-1]] = starts
    cum = _safe_cumprobs(field)
    nbr = field.neighbors
    cur = starts.copy()
    order = np.argsort(-nj, kind="stable")
    nj_sorted = nj[order]
    for j in range(int(nj.max())):
        n_active = int(np.searchsorted(-nj_sorted, -j, side="left"))
        act = order[:n_active]
        here = cur[act]
        u = rng.random(n_active)
        dead = here < 0
        safe = np.where(dead, 0, here)
        col = (cum[safe] <= u[:, None]).sum(axis=1)
        nxt = nbr[safe, col]
        nxt[dead] = -1
        cur[act] = nxt
        sites[offsets[act] + 1 + j] = nxt
    return offsets, times, sites


def simulate_walk(kernel: WalkKernel, x0, t_end: float) -> Trajectory:
    """Continuous-time walk from ``x0`` on ``[0, t_end]``."""
    f = kernel.field
    start = int(f.window.index(np.asarray(x0)))
    _, times, sites = simulate_paths(f, [start], t_end, kernel.rng)
    exit_time = None
    if np.any(sites < 0):
        first = int(np.argmax(sites < 0))
        exit_time = float(times[first])
        times, sites = times[:first], sites[:first]
    return Trajectory(times=times, sites=f.window.coords(sites), t_end=float(t_end), exit_time=exit_time)


def max_displacement(field: ConductanceField, offsets, times, sites, t0: float, t1: float):
    """Largest sup-norm displacement from the position at ``t0`` over ``[t0, t1]``.

    Walkers that left the window during the interval get ``np.inf``.
    """
    from ._kernels import max_disp_interval

    return max_disp_interval(offsets, times, sites, float(t0), float(t1),
                             field.window.half_extent, field.dim)


@dataclass(frozen=True)
class ExitEstimate:
    """Monte Carlo estimate with its binomial standard error."""

    p: float
    stderr: float
    n: int

    def __iter__(self):
        return iter((self.p, self.stderr))


def _origin_check(field: ConductanceField, z: float):
    if z <= 0:
        raise ValueError("z must be positive")
    reach = int(np.floor(z / 2.0)) + 1
    if field.window.boundary != "absorbing" and reach > field.window.half_extent:
        raise ValueError(f"window L={field.window.half_extent} too small to contain Q_{z} "
                         f"and its outer boundary")


def exit_profile(field: ConductanceField, zs, deltas, n_samples: int, seed) -> np.ndarray:
    """Probabilities of staying inside ``Q_z`` up to time ``Delta``, one sample set.

    All entries share the same walks, so the table is monotone in both
    arguments.  Returns an array of shape ``(len(zs), len(deltas))``.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if np.any(deltas <= 0):
        raise ValueError("Delta must be positive")
    _origin_check(field, float(zs.max()))
    rng = np.random.default_rng(seed)
    origin = int(field.window.index(np.zeros(field.dim, dtype=np.int64)))
    off, times, sites = simulate_paths(field, np.full(n_samples, origin), float(deltas.max()), rng)
    out = np.empty((zs.size, deltas.size))
    for j, dl in enumerate(deltas):
        md = max_displacement(field, off, times, sites, 0.0, dl)
        for i, z in enumerate(zs):
            out[i, j] = np.mean(md <= z / 2.0)
    return out


def exit_probability(kernel: WalkKernel, z: float, delta: float, n_samples: int, seed) -> ExitEstimate:
    """Probability that a walk from the origin keeps its displacement in ``Q_z`` on ``[0, delta]``."""
    if delta <= 0:
        raise ValueError("Delta must be positive")
    p = float(exit_profile(kernel.field, [z], [delta], n_samples, seed)[0, 0])
    return ExitEstimate(p=p, stderr=float(np.sqrt(max(p * (1 - p), 0.0) / n_samples)), n=int(n_samples))
