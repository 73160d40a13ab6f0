"""Independent brute-force oracles used by the tests.

Nothing here imports the production engines.  The d-path, chain and
cluster oracles work on plain Python sets and evaluate the move rules
literally, one candidate pair at a time.
"""
import itertools
from fractions import Fraction

import numpy as np
from scipy.linalg import expm


def sign_set(h):
    return (1, -1) if h == 0 else ((1,) if h > 0 else (-1,))


def is_open(field, site):
    """Field state with the open-outside convention."""
    idx = tuple(s - o for s, o in zip(site, field.origin))
    if all(0 <= i < n for i, n in zip(idx, field.open.shape)):
        return bool(field.open[idx])
    return True


def d_path_step(field, s, t):
    """Is ``s -> t`` a legal d-path move?"""
    b, h = s[:-1], s[-1]
    b2, h2 = t[:-1], t[-1]
    dist = sum(abs(x - y) for x, y in zip(b, b2))
    if dist == 0 and (h2 - h) in sign_set(h):
        return not is_open(field, t)
    if dist == 1 and (h - h2) in sign_set(h) and h != 0:
        return True
    return False


def successors(field, s):
    b, h = s[:-1], s[-1]
    cands = [b + (h + 1,), b + (h - 1,)]
    for a in range(len(b)):
        for e in (-1, 1):
            bb = list(b)
            bb[a] += e
            for dh in (-1, 1):
                cands.append(tuple(bb) + (h + dh,))
    return [t for t in cands if d_path_step(field, s, t)]


def reach(field, u):
    """Sites reachable from ``u`` by d-paths (level-by-level fixpoint)."""
    if is_open(field, u):
        return set()
    seen = {u}
    frontier = [u]
    while frontier:
        nxt = []
        for s in frontier:
            for t in successors(field, s):
                if t not in seen:
                    seen.add(t)
                    nxt.append(t)
        frontier = nxt
    return seen


def in_hat(w, v):
    """Is ``w`` in the set of sites dominating ``v`` (full column at height 0)?"""
    if w[:-1] != v[:-1]:
        return False
    if v[-1] == 0:
        return True
    return w[-1] * v[-1] > 0 and abs(w[-1]) >= abs(v[-1])


def hill(field, u, box):
    """Members of the hill of ``u`` among the sites of ``box``."""
    by_col = {}
    for w in reach(field, u):
        by_col.setdefault(w[:-1], []).append(w)
    return {v for v in box if any(in_hat(w, v) for w in by_col.get(v[:-1], ()))}


def anchors(field):
    closed = np.argwhere(~field.open)
    org = np.asarray(field.origin)
    return [tuple(int(x) for x in c + org) for c in closed if c[-1] + org[-1] == 0]


def site_box(field, extra=0):
    pad = max(abs(field.h_min), abs(field.h_max)) + extra
    ranges = [range(o - pad, o + n + pad) for o, n in zip(field.origin[:-1], field.open.shape[:-1])]
    ranges.append(range(field.h_min - 1, field.h_max + 2))
    return [tuple(s) for s in itertools.product(*ranges)]


def hills_and_mountains(field):
    box = site_box(field)
    hills = {u: frozenset(hill(field, u, box)) for u in anchors(field)}
    return hills


def mountain(hills, v):
    out = set()
    for H in hills.values():
        if v in H:
            out |= H
    return out


def surface(field, hills):
    base = list(itertools.product(*[range(o, o + n) for o, n in zip(field.origin[:-1], field.open.shape[:-1])]))
    Fp, Fm = {}, {}
    for b in base:
        M = mountain(hills, b + (0,))
        up = [s[-1] for s in M if s[:-1] == b and s[-1] >= 0]
        dn = [-s[-1] for s in M if s[:-1] == b and s[-1] <= 0]
        Fp[b] = 1 + max(up) if up else 0
        Fm[b] = -1 - max(dn) if dn else 0
    return Fp, Fm


# ---------------------------------------------------------------- chains


def chain_cells(x):
    """All cells ending some diagonal chain from ``x`` (including ``x``)."""
    out = {x}
    stack = [x]
    while stack:
        c = stack.pop()
        b, h = c[:-1], c[-1]
        if h == 0:
            continue
        h2 = h - (1 if h > 0 else -1)
        for a in range(len(b)):
            for e in (-1, 1):
                bb = list(b)
                bb[a] += e
                t = tuple(bb) + (h2,)
                if t[-1] * x[-1] >= 0 and t not in out:
                    out.add(t)
                    stack.append(t)
    return out


def _dilated(x, cache):
    """Cells adjacent or equal to some chain cell of ``x``."""
    if x not in cache:
        nd = len(x)
        cache[x] = (chain_cells(x), {tuple(c[a] + e[a] for a in range(nd))
                                     for c in chain_cells(x)
                                     for e in itertools.product((-1, 0, 1), repeat=nd)})
    return cache[x]


def diag_connected(x, y, cache):
    return y in _dilated(x, cache)[1]


def double_connected(x, y, cache):
    Dx, _ = _dilated(x, cache)
    Dy, _ = _dilated(y, cache)
    for c in Dx | Dy:
        if diag_connected(x, c, cache) and diag_connected(y, c, cache):
            return True
    return False


def bad_cells(field):
    org = np.asarray(field.origin)
    return [tuple(int(v) for v in c + org) for c in np.argwhere(~field.open)]


def cluster(field, start, double=False, cache=None):
    bad = set(bad_cells(field))
    if start not in bad:
        return set()
    cache = {} if cache is None else cache
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in bad:
            if y in seen:
                continue
            ok = diag_connected(x, y, cache)
            if double and not ok:
                ok = diag_connected(y, x, cache) or double_connected(x, y, cache)
            if ok:
                seen.add(y)
                stack.append(y)
    return seen


# ---------------------------------------------------------------- walks


def killed_generator(field, z):
    """Generator of the walk killed on leaving the sup-ball of radius ``z`` around 0."""
    W = field.window
    coords = W.all_coords()
    inside = np.flatnonzero(np.abs(coords).max(axis=1) <= z)
    pos = {int(s): k for k, s in enumerate(inside)}
    Q = np.zeros((len(inside), len(inside)))
    for s, k in pos.items():
        Q[k, k] = -1.0
        for slot in range(field.neighbors.shape[1]):
            t = int(field.neighbors[s, slot])
            p = field.jump_probs[s, slot]
            if t >= 0 and int(t) in pos:
                Q[k, pos[int(t)]] += p
            # reflected mass stays; jumps out of the ball kill
    return Q, pos


def exit_probability_exact(field, z, delta, start=0):
    Q, pos = killed_generator(field, z)
    P = expm(Q * delta)
    s = field.window.index(np.zeros(field.window.dim, dtype=int)) if start == 0 else start
    return 1.0 - P[pos[int(s)]].sum()


def frac(x):
    return Fraction(x)
