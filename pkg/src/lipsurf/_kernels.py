"""Compiled loops over jump-list trajectories.

Trajectories are stored as CSR arrays: walk ``p`` occupies entries
``offsets[p]:offsets[p+1]`` of ``times`` (starting at 0) and ``sites`` (flat
indices, -1 after leaving the window).
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _last_le(times, lo, hi, t):
    # last index j in [lo, hi) with times[j] <= t; times[lo] == 0 <= t
    a, b = lo, hi
    while b - a > 1:
        mid = (a + b) // 2
        if times[mid] <= t:
            a = mid
        else:
            b = mid
    return a


@njit(cache=True)
def sup_dist(i, j, side, dim):
    """Sup-norm distance between two flat site indices."""
    best = 0
    for _ in range(dim):
        d = abs(i % side - j % side)
        if d > best:
            best = d
        i //= side
        j //= side
    return best


@njit(cache=True)
def positions_at(offsets, times, sites, t):
    """Flat site of every walk at time ``t`` (-1 if it has left)."""
    n = offsets.size - 1
    out = np.empty(n, dtype=np.int64)
    for p in range(n):
        out[p] = sites[_last_le(times, offsets[p], offsets[p + 1], t)]
    return out


@njit(cache=True)
def positions_at_many(offsets, times, sites, ts):
    """Positions at each of the sorted times ``ts``; shape ``(len(ts), n)``."""
    n = offsets.size - 1
    out = np.empty((ts.size, n), dtype=np.int64)
    for p in range(n):
        lo, hi = offsets[p], offsets[p + 1]
        j = lo
        for k in range(ts.size):
            while j + 1 < hi and times[j + 1] <= ts[k]:
                j += 1
            out[k, p] = sites[j]
    return out


@njit(cache=True)
def max_disp_interval(offsets, times, sites, t0, t1, half_extent, dim):
    """Largest sup-norm displacement from the position at ``t0`` during ``[t0, t1]``."""
    n = offsets.size - 1
    side = 2 * half_extent + 1
    out = np.zeros(n)
    for p in range(n):
        lo, hi = offsets[p], offsets[p + 1]
        j0 = _last_le(times, lo, hi, t0)
        j1 = _last_le(times, lo, hi, t1)
        s0 = sites[j0]
        if s0 < 0:
            out[p] = np.inf
            continue
        best = 0
        for j in range(j0 + 1, j1 + 1):
            s = sites[j]
            if s < 0:
                best = -1
                break
            dd = sup_dist(s0, s, side, dim)
            if dd > best:
                best = dd
        out[p] = np.inf if best < 0 else best
    return out


@njit(cache=True)
def max_disp_windows(offsets, times, sites, t0s, t1s, half_extent, dim):
    """Like :func:`max_disp_interval` for many intervals; shape ``(len(t0s), n)``."""
    n = offsets.size - 1
    side = 2 * half_extent + 1
    out = np.zeros((t0s.size, n))
    for p in range(n):
        lo, hi = offsets[p], offsets[p + 1]
        for k in range(t0s.size):
            j0 = _last_le(times, lo, hi, t0s[k])
            j1 = _last_le(times, lo, hi, t1s[k])
            s0 = sites[j0]
            if s0 < 0:
                out[k, p] = np.inf
                continue
            best = 0
            for j in range(j0 + 1, j1 + 1):
                s = sites[j]
                if s < 0:
                    best = -1
                    break
                dd = sup_dist(s0, s, side, dim)
                if dd > best:
                    best = dd
            out[k, p] = np.inf if best < 0 else best
    return out


@njit(cache=True)
def max_disp_running(offsets, times, sites, t0, t1s, half_extent, dim):
    """:func:`max_disp_interval` on ``[t0, t1]`` for sorted ``t1s`` in one pass; shape ``(len(t1s), n)``."""
    n = offsets.size - 1
    side = 2 * half_extent + 1
    out = np.empty((t1s.size, n))
    for p in range(n):
        lo, hi = offsets[p], offsets[p + 1]
        j = _last_le(times, lo, hi, t0)
        s0 = sites[j]
        best = 0.0 if s0 >= 0 else np.inf
        for k in range(t1s.size):
            while j + 1 < hi and times[j + 1] <= t1s[k] and best < np.inf:
                j += 1
                s = sites[j]
                if s < 0:
                    best = np.inf
                else:
                    dd = sup_dist(s0, s, side, dim)
                    if dd > best:
                        best = dd
            out[k, p] = best
    return out
