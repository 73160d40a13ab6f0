"""Infection spreading by site sharing among independent walkers.

A susceptible particle becomes infected at the first instant it shares a
site with an infected one.  With a finite transmission ``rate`` every
co-located (infected, susceptible) pair instead carries an exponential clock
that rings only if the pair is still together.  Jumps of all particles are
processed in chronological order, so propagation is exact for the simulated
trajectories.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..lattice import ConductanceField, simulate_paths
from ..particles import ParticleCloud

__all__ = ["InfectionState", "spread_infection", "front_speed", "inject_origin"]


@dataclass
class InfectionState:
    """Result of one propagation.

    ``front[k]`` is the largest l1 norm reached by an infected particle up to
    ``grid[k]`` (a running maximum, hence nondecreasing).
    """

    infected: np.ndarray
    infection_time: np.ndarray
    grid: np.ndarray
    front: np.ndarray
    n_infected: np.ndarray
    source: int

    def to_csv(self) -> str:
        rows = ["t,front,n_infected"]
        rows += [f"{t!r},{int(f)},{int(n)}" for t, f, n in zip(self.grid.tolist(), self.front, self.n_infected)]
        return "\n".join(rows) + "\n"


@njit(cache=True)
def _unlink(p, s, head, nxt, prv):
    if prv[p] >= 0:
        nxt[prv[p]] = nxt[p]
    else:
        head[s] = nxt[p]
    if nxt[p] >= 0:
        prv[nxt[p]] = prv[p]
    nxt[p] = -1
    prv[p] = -1


@njit(cache=True)
def _link(p, s, head, nxt, prv):
    prv[p] = -1
    nxt[p] = head[s]
    if head[s] >= 0:
        prv[head[s]] = p
    head[s] = p


@njit(cache=True)
def _spread(offsets, sites, ev_t, ev_p, ev_s, n_sites, l1, source, grid, rate, seed, horizon):
    n = offsets.size - 1
    head = np.full(n_sites, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    prv = np.full(n, -1, np.int64)
    where = np.empty(n, np.int64)
    moves = np.zeros(n, np.int64)
    infected = np.zeros(n, np.bool_)
    tinf = np.full(n, np.inf)
    for p in range(n):
        s = sites[offsets[p]]
        where[p] = s
        if s >= 0:
            _link(p, s, head, nxt, prv)
    instant = not np.isfinite(rate)
    if not instant:
        np.random.seed(seed)
    # heap entries: (time, susceptible, infected, moves of susceptible, moves of infected)
    heap = [(np.inf, -1, -1, -1, -1)]
    heap.pop()
    front = 0.0
    n_inf = 0
    out_front = np.zeros(grid.size)
    out_n = np.zeros(grid.size, np.int64)
    gi = 0

    infected[source] = True
    tinf[source] = 0.0
    n_inf = 1
    if where[source] >= 0:
        front = max(front, l1[where[source]])
        q = head[where[source]]
        while q >= 0:
            if not infected[q]:
                if instant:
                    infected[q] = True
                    tinf[q] = 0.0
                    n_inf += 1
                else:
                    heapq.heappush(heap, (np.random.exponential(1.0 / rate), q, source, moves[q], moves[source]))
            q = nxt[q]

    e = 0
    n_ev = ev_t.size
    while True:
        t_jump = ev_t[e] if e < n_ev else np.inf
        t_heap = heap[0][0] if len(heap) > 0 else np.inf
        if t_heap > horizon:
            # transmissions scheduled after the horizon never happen
            t_heap = np.inf
        t_now = min(t_jump, t_heap)
        while gi < grid.size and grid[gi] < t_now:
            out_front[gi] = front
            out_n[gi] = n_inf
            gi += 1
        if t_now == np.inf:
            break
        if t_heap < t_jump:
            t, a, b, ma, mb = heapq.heappop(heap)
            if infected[a] or moves[a] != ma or moves[b] != mb:
                continue
            infected[a] = True
            tinf[a] = t
            n_inf += 1
            s = where[a]
            front = max(front, l1[s])
            q = head[s]
            while q >= 0:
                if not infected[q]:
                    heapq.heappush(heap, (t + np.random.exponential(1.0 / rate), q, a, moves[q], moves[a]))
                q = nxt[q]
            continue
        p = ev_p[e]
        s_new = ev_s[e]
        t = ev_t[e]
        e += 1
        s_old = where[p]
        if s_old >= 0:
            _unlink(p, s_old, head, nxt, prv)
        where[p] = s_new
        moves[p] += 1
        if s_new < 0:
            continue
        _link(p, s_new, head, nxt, prv)
        if infected[p]:
            front = max(front, l1[s_new])
            q = nxt[p]
            while q >= 0:
                if not infected[q]:
                    if instant:
                        infected[q] = True
                        tinf[q] = t
                        n_inf += 1
                    else:
                        heapq.heappush(heap, (t + np.random.exponential(1.0 / rate), q, p, moves[q], moves[p]))
                q = nxt[q]
        else:
            q = nxt[p]
            while q >= 0:
                if infected[q]:
                    if instant:
                        infected[p] = True
                        tinf[p] = t
                        n_inf += 1
                        front = max(front, l1[s_new])
                        break
                    heapq.heappush(heap, (t + np.random.exponential(1.0 / rate), p, q, moves[p], moves[q]))
                q = nxt[q]
    while gi < grid.size:
        out_front[gi] = front
        out_n[gi] = n_inf
        gi += 1
    return infected, tinf, out_front, out_n


def inject_origin(cloud: ParticleCloud, rng) -> tuple:
    """Id of a particle at the origin at time 0, adding a fresh walker there when none is present."""
    field = cloud.field
    o = int(field.window.index(np.zeros((1, field.dim), dtype=np.int64))[0])
    here = np.flatnonzero(cloud.start_sites == o)
    if here.size:
        return cloud, int(here[0])
    off, times, sites = simulate_paths(field, np.array([o]), cloud.horizon, rng)
    new = ParticleCloud(field, cloud.lambda0, cloud.horizon,
                        np.concatenate([cloud.offsets, cloud.offsets[-1] + off[1:]]),
                        np.concatenate([cloud.times, times]), np.concatenate([cloud.sites, sites]), cloud.seed)
    return new, cloud.n


def spread_infection(cloud: ParticleCloud, source: int, grid, rate: float | None = None, seed: int = 0) -> InfectionState:
    """Propagate the infection from particle ``source`` (infected at time 0) over the cloud's horizon."""
    if cloud.n == 0:
        raise ValueError("no particles")
    if not 0 <= source < cloud.n:
        raise ValueError("unknown source particle")
    grid = np.asarray(grid, dtype=float)
    if grid.size and grid.max() > cloud.horizon + 1e-12:
        raise ValueError("time grid beyond the simulated horizon")
    if rate is not None and not rate > 0:
        raise ValueError("rate must be positive")
    off = cloud.offsets
    first = np.zeros(cloud.times.size, dtype=bool)
    first[off[:-1]] = True
    pid = np.repeat(np.arange(cloud.n, dtype=np.int64), np.diff(off))
    ev_t = cloud.times[~first]
    order = np.argsort(ev_t, kind="stable")
    ev_t = ev_t[order]
    ev_p = pid[~first][order]
    ev_s = cloud.sites[~first][order]
    l1 = np.abs(cloud.field.window.all_coords()).sum(axis=1).astype(float)
    infected, tinf, front, n_inf = _spread(off, cloud.sites, ev_t, ev_p, ev_s, cloud.field.window.n_sites, l1,
                                           int(source), grid, np.inf if rate is None else float(rate), int(seed),
                                           float(cloud.horizon))
    return InfectionState(infected, tinf, grid, front.astype(np.int64), n_inf, int(source))


def front_speed(state: InfectionState, limit: float, t_min: float = 0.0):
    """Least-squares slope of the front on grid times in ``[t_min, t_stop)``, ``t_stop`` = first time the front reaches ``limit``."""
    from .stats import weighted_linear_fit
    g, f = state.grid, state.front.astype(float)
    reached = np.flatnonzero(f >= limit)
    stop = reached[0] if reached.size else g.size
    sel = np.arange(g.size) < stop
    sel &= g >= t_min
    return weighted_linear_fit(g[sel], f[sel])
