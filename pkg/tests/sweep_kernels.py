"""Exhaustive comparison of the surface and cluster engines on a 4x4x4 window.

The window has base ``{0..3}^2`` and heights ``{-1, 0, 1, 2}``.  Every set of
at most ``kmax`` closed sites is visited (optionally one per orbit of the
dihedral group of the base square, weighted by orbit size).  For each field
the production kernels are compared against oracles that enumerate simple
d-paths, diagonal chains and D-/DD-paths explicitly.
"""
import numpy as np
from numba import njit

from lipsurf import surface as S

B = 4                  # base side
HMIN, HMAX = -1, 2
H = HMAX - HMIN + 1
NW = B * B * H         # window sites
# production padded layout
PAD = max(-HMIN, HMAX)
PB = B + 2 * PAD
P_DIMS = np.array([PB, PB, H], dtype=np.int64)
P_STR = np.array([PB * H, H, 1], dtype=np.int64)
P_H0 = -HMIN
P_WLO = np.array([PAD, PAD], dtype=np.int64)
P_WHI = P_WLO + B - 1
# oracle box, one column wider than the production padding on each side
OB_LO = -PAD - 1
OB = B + 2 * PAD + 2


@njit(cache=True)
def _w(x, y, h):
    return (x * B + y) * H + (h - HMIN)


@njit(cache=True)
def _closed_at(closed, x, y, h):
    if 0 <= x < B and 0 <= y < B and HMIN <= h <= HMAX:
        return closed[_w(x, y, h)]
    return False


@njit(cache=True)
def _ob(x, y, h):
    return ((x - OB_LO) * OB + (y - OB_LO)) * H + (h - HMIN)


# ------------------------------------------------------------------ d-path oracle


NCOL = OB * OB


@njit(cache=True)
def _col(x, y):
    return (x - OB_LO) * OB + (y - OB_LO)


@njit(cache=True)
def oracle_reach(closed, ux, uy, rcol, on, px, py, ph, nxt):
    """Enumerate simple d-paths from ``(ux, uy, 0)``.

    Sets bit ``h - HMIN`` of ``rcol[column]`` for every site on some path.
    ``on`` (all False on entry and exit) marks the current path.
    """
    rcol[:] = 0
    if not _closed_at(closed, ux, uy, 0):
        return
    depth = 0
    px[0], py[0], ph[0] = ux, uy, 0
    nxt[0] = 0
    on[_ob(ux, uy, 0)] = True
    rcol[_col(ux, uy)] |= 1 << (0 - HMIN)
    while depth >= 0:
        m = nxt[depth]
        if m >= 6:
            on[_ob(px[depth], py[depth], ph[depth])] = False
            depth -= 1
            continue
        nxt[depth] = m + 1
        x, y, h = px[depth], py[depth], ph[depth]
        tx, ty, th = x, y, h
        ok = False
        if m == 0 or m == 1:
            dh = 1 if m == 0 else -1
            # vertical: h' - h in Sign(h), target closed
            if h == 0 or (h > 0 and dh == 1) or (h < 0 and dh == -1):
                th = h + dh
                ok = _closed_at(closed, tx, ty, th)
        else:
            # diagonal: |b' - b|_1 = 1, h - h' in Sign(h), h != 0
            if h != 0:
                th = h - 1 if h > 0 else h + 1
                if m == 2:
                    tx = x - 1
                elif m == 3:
                    tx = x + 1
                elif m == 4:
                    ty = y - 1
                else:
                    ty = y + 1
                ok = True
        if not ok:
            continue
        k = _ob(tx, ty, th)
        if on[k]:
            continue
        depth += 1
        px[depth], py[depth], ph[depth] = tx, ty, th
        nxt[depth] = 0
        on[k] = True
        rcol[_col(tx, ty)] |= 1 << (th - HMIN)


def member_table():
    """Hat-rule membership per column: reached-height mask -> member-height mask."""
    tab = np.zeros(1 << H, dtype=np.uint8)
    for rm in range(1 << H):
        mm = 0
        for hv in range(HMIN, HMAX + 1):
            for hw in range(HMIN, HMAX + 1):
                if (rm >> (hw - HMIN)) & 1 and (hv == 0 or (hw * hv > 0 and abs(hw) >= abs(hv))):
                    mm |= 1 << (hv - HMIN)
                    break
        tab[rm] = mm
    return tab


@njit(cache=True)
def prod_members(hi, lo, pm):
    """Per-column member masks implied by production extents (padded layout)."""
    pm[:] = 0
    for cx in range(PB):
        for cy in range(PB):
            c = cx * PB + cy
            if hi[c] < 0:
                continue
            m = 0
            for h in range(lo[c], hi[c] + 1):
                m |= 1 << (h - HMIN)
            pm[_col(cx - PAD, cy - PAD)] = m


# ------------------------------------------------------------------ chain / cluster oracle


@njit(cache=True)
def chain_cells(x, y, h, out):
    """All cells of diagonal chains from (x, y, h); returns the count, cells in ``out``."""
    n = 0
    out[n, 0], out[n, 1], out[n, 2] = x, y, h
    n += 1
    head = 0
    while head < n:
        cx, cy, ch = out[head, 0], out[head, 1], out[head, 2]
        head += 1
        if ch == 0:
            continue
        nh = ch - 1 if ch > 0 else ch + 1
        if nh * h < 0:
            continue
        for m in range(4):
            tx, ty = cx, cy
            if m == 0:
                tx -= 1
            elif m == 1:
                tx += 1
            elif m == 2:
                ty -= 1
            else:
                ty += 1
            dup = False
            for q in range(n):
                if out[q, 0] == tx and out[q, 1] == ty and out[q, 2] == nh:
                    dup = True
                    break
            if not dup:
                out[n, 0], out[n, 1], out[n, 2] = tx, ty, nh
                n += 1
    return n


@njit(cache=True)
def _dc(ca, na, tx, ty, th):
    """Some chain cell in ``ca[:na]`` equal or adjacent to the target."""
    for q in range(na):
        if abs(ca[q, 0] - tx) <= 1 and abs(ca[q, 1] - ty) <= 1 and abs(ca[q, 2] - th) <= 1:
            return True
    return False


@njit(cache=True)
def oracle_relations(cells, nc, chains, nch):
    """Pairwise D-step and DD-step relations among the bad cells."""
    rel = np.zeros((nc, nc), dtype=np.bool_)
    rel2 = np.zeros((nc, nc), dtype=np.bool_)
    for a in range(nc):
        for b in range(nc):
            if a == b:
                continue
            da = _dc(chains[a], nch[a], cells[b, 0], cells[b, 1], cells[b, 2])
            db = _dc(chains[b], nch[b], cells[a, 0], cells[a, 1], cells[a, 2])
            rel[a, b] = da
            ok = da or db
            if not ok:
                # double: a common target linked to a or b
                for src in range(2):
                    s = a if src == 0 else b
                    for q in range(nch[s]):
                        tx, ty, th = chains[s][q, 0], chains[s][q, 1], chains[s][q, 2]
                        if _dc(chains[a], nch[a], tx, ty, th) and _dc(chains[b], nch[b], tx, ty, th):
                            ok = True
                            break
                    if ok:
                        break
            rel2[a, b] = ok
    return rel, rel2


@njit(cache=True)
def oracle_paths(rel, nc, start):
    """Bitmask (over cell list) of cells reached by simple paths of ``rel`` from ``start``."""
    reached = 1 << start
    path = np.empty(nc, dtype=np.int64)
    nxt = np.zeros(nc, dtype=np.int64)
    used = 1 << start
    full = (1 << nc) - 1
    depth = 0
    path[0] = start
    while depth >= 0 and reached != full:
        c = path[depth]
        j = nxt[depth]
        if j >= nc:
            used &= ~(1 << c)
            depth -= 1
            continue
        nxt[depth] = j + 1
        if (used >> j) & 1 or not rel[c, j]:
            continue
        depth += 1
        path[depth] = j
        nxt[depth] = 0
        used |= 1 << j
        reached |= 1 << j
    return reached


# ------------------------------------------------------------------ per-field check


@njit(cache=True)
def check_field(closed, memb, p1, o1, p2, o2, d1, r1, d2, r2, errs,
                on, px, py, ph, nxt):
    """Compare all engines on one field; increments ``errs`` per quantity.

    Order of ``errs``: hills, mountains, surface, K, K*.
    """
    # production padded grid
    pc = np.zeros(PB * PB * H, dtype=np.uint8)
    anchors = np.empty(B * B, dtype=np.int64)
    na = 0
    ax = np.empty(B * B, dtype=np.int64)
    ay = np.empty(B * B, dtype=np.int64)
    for x in range(B):
        for y in range(B):
            for h in range(HMIN, HMAX + 1):
                if closed[_w(x, y, h)]:
                    f = (x + PAD) * P_STR[0] + (y + PAD) * P_STR[1] + (h - HMIN)
                    pc[f] = 1
                    if h == 0:
                        anchors[na] = f
                        ax[na] = x
                        ay[na] = y
                        na += 1
    his, los, esc = S._anchor_extents(pc, P_DIMS, P_STR, P_H0, anchors[:na], False, P_WLO, P_WHI)
    rcol = np.zeros(NCOL, dtype=np.uint8)
    om = np.zeros((na, NCOL), dtype=np.uint8)
    pm = np.zeros(NCOL, dtype=np.uint8)
    for a in range(na):
        oracle_reach(closed, ax[a], ay[a], rcol, on, px, py, ph, nxt)
        for c in range(NCOL):
            om[a, c] = memb[rcol[c]]
        prod_members(his[a], los[a], pm)
        for c in range(NCOL):
            if om[a, c] != pm[c]:
                errs[0] += 1
                break
    # mountains and the surface, per window column
    Fh, Fl, _ = S._surface_extent(pc, P_DIMS, P_STR, P_H0, anchors[:na], False, P_WLO, P_WHI)
    mo = np.zeros(NCOL, dtype=np.uint8)
    zbit = 1 << (0 - HMIN)
    for x in range(B):
        for y in range(B):
            v0 = _col(x, y)
            mo[:] = 0
            for a in range(na):
                if om[a, v0] & zbit:
                    for c in range(NCOL):
                        mo[c] |= om[a, c]
            col = (x + PAD) * PB + (y + PAD)
            if na > 0:
                mh, ml, _ = S._mountain_extent(his, los, col)
                prod_members(mh, ml, pm)
            else:
                pm[:] = 0
            for c in range(NCOL):
                if mo[c] != pm[c]:
                    errs[1] += 1
                    break
            # literal surface from the oracle mountain
            up = -1
            dn = -1
            for h in range(HMIN, HMAX + 1):
                if (mo[v0] >> (h - HMIN)) & 1:
                    if h >= 0 and h > up:
                        up = h
                    if h <= 0 and -h > dn:
                        dn = -h
            fp = 1 + up if up >= 0 else 0
            fm = -1 - dn if dn >= 0 else 0
            pfp = Fh[col] + 1 if Fh[col] >= 0 else 0
            pfm = Fl[col] - 1 if Fh[col] >= 0 else 0
            if fp != pfp or fm != pfm:
                errs[2] += 1
    # clusters: bad = closed
    cells = np.empty((NW, 3), dtype=np.int64)
    cidx = np.empty(NW, dtype=np.int64)
    nc = 0
    for x in range(B):
        for y in range(B):
            for h in range(HMIN, HMAX + 1):
                if closed[_w(x, y, h)]:
                    cells[nc, 0], cells[nc, 1], cells[nc, 2] = x, y, h
                    cidx[nc] = _w(x, y, h)
                    nc += 1
    if nc == 0:
        return
    chains = np.empty((nc, 64, 3), dtype=np.int64)
    nch = np.empty(nc, dtype=np.int64)
    for c in range(nc):
        nch[c] = chain_cells(cells[c, 0], cells[c, 1], cells[c, 2], chains[c])
    rel, rel2 = oracle_relations(cells, nc, chains, nch)
    wdims = np.array([B, B, H], dtype=np.int64)
    wstr = np.array([B * H, H, 1], dtype=np.int64)
    bad = closed.astype(np.uint8)
    for dbl in range(2):
        r = rel2 if dbl else rel
        if dbl:
            mc, mp, mm = S._cluster_map(bad, wdims, wstr, p2, o2, d2, r2, 0)
        else:
            mc, mp, mm = S._cluster_map(bad, wdims, wstr, p1, o1, d1, r1, 0)
        for c in range(nc):
            om_ = oracle_paths(r, nc, c)
            want = np.uint64(0)
            for q in range(nc):
                if (om_ >> q) & 1:
                    want |= np.uint64(1) << np.uint64(cidx[q])
            # cluster_map lists bad cells in flat order, as does ``cells`` here
            got = np.uint64(0)
            for q in range(mp[c], mp[c + 1]):
                got |= np.uint64(1) << np.uint64(mc[mm[q]])
            if mc[c] != cidx[c] or got != want:
                errs[3 + dbl] += 1
            if c == 0:
                if dbl:
                    got_l = S._cluster(bad, wdims, wstr, cidx[c], p2, o2)
                else:
                    got_l = S._cluster(bad, wdims, wstr, cidx[c], p1, o1)
                got = np.uint64(0)
                for g in got_l:
                    got |= np.uint64(1) << np.uint64(g)
                if got != want:
                    errs[3 + dbl] += 1


@njit(cache=True)
def _scratch():
    n = 64
    return (np.zeros(OB * OB * H, dtype=np.bool_), np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.int64), np.zeros(n, dtype=np.int64))


# ------------------------------------------------------------------ symmetry and enumeration


def d4_tables():
    """Site permutations of the window for the 8 symmetries of the base square."""
    maps = []
    for k in range(8):
        perm = np.empty(NW, dtype=np.int64)
        for x in range(B):
            for y in range(B):
                u, v = x, y
                for _ in range(k % 4):
                    u, v = v, B - 1 - u
                if k >= 4:
                    u, v = v, u
                for h in range(HMIN, HMAX + 1):
                    perm[(x * B + y) * H + (h - HMIN)] = (u * B + v) * H + (h - HMIN)
        maps.append(perm)
    return np.stack(maps)


@njit(cache=True)
def _orbit_weight(idx, k, perms):
    """0 if the set is not the orbit minimum, else the orbit size."""
    m0 = np.uint64(0)
    for i in range(k):
        m0 |= np.uint64(1) << np.uint64(idx[i])
    distinct = np.empty(8, dtype=np.uint64)
    nd = 0
    for g in range(perms.shape[0]):
        mg = np.uint64(0)
        for i in range(k):
            mg |= np.uint64(1) << np.uint64(perms[g, idx[i]])
        if mg < m0:
            return 0
        seen = False
        for q in range(nd):
            if distinct[q] == mg:
                seen = True
                break
        if not seen:
            distinct[nd] = mg
            nd += 1
    return nd


@njit(cache=True)
def sweep(kmax, perms, use_sym, memb, p1, o1, p2, o2, d1, r1, d2, r2, limit):
    """Run :func:`check_field` over all sets of at most ``kmax`` closed sites.

    Returns ``(errs, fields_checked, fields_covered)``; with ``use_sym`` the
    covered count sums orbit sizes.  ``limit`` (> 0) stops early, for timing.
    """
    errs = np.zeros(5, dtype=np.int64)
    on, px, py, ph, nxt = _scratch()
    checked = 0
    covered = 0
    closed = np.zeros(NW, dtype=np.bool_)
    idx = np.empty(max(kmax, 1), dtype=np.int64)
    for k in range(kmax + 1):
        for i in range(k):
            idx[i] = i
        while True:
            w = 1
            if use_sym:
                w = _orbit_weight(idx, k, perms)
            if w > 0:
                closed[:] = False
                for i in range(k):
                    closed[idx[i]] = True
                check_field(closed, memb, p1, o1, p2, o2, d1, r1, d2, r2, errs,
                            on, px, py, ph, nxt)
                checked += 1
                covered += w
                if limit > 0 and checked >= limit:
                    return errs, checked, covered
            # next combination
            j = k - 1
            while j >= 0 and idx[j] == NW - k + j:
                j -= 1
            if j < 0:
                break
            idx[j] += 1
            for q in range(j + 1, k):
                idx[q] = idx[q - 1] + 1
    return errs, checked, covered


def cluster_tables():
    p1, o1, p2, o2 = S._step_tables(2, HMIN, HMAX)
    d1, r1 = S._dense_table(p1, o1, H)
    d2, r2 = S._dense_table(p2, o2, H)
    return p1, o1, p2, o2, d1, r1, d2, r2


def run_sweep(kmax=6, use_sym=True, limit=0):
    return sweep(kmax, d4_tables(), use_sym, member_table(), *cluster_tables(), limit)


@njit(cache=True)
def check_random(n, kmin, kmax, seed, memb, p1, o1, p2, o2, d1, r1, d2, r2):
    """Per-field check on ``n`` random fields with ``kmin..kmax`` closed sites (timing aid)."""
    np.random.seed(seed)
    errs = np.zeros(5, dtype=np.int64)
    on, px, py, ph, nxt = _scratch()
    closed = np.zeros(NW, dtype=np.bool_)
    for _ in range(n):
        closed[:] = False
        k = np.random.randint(kmin, kmax + 1)
        perm = np.random.permutation(NW)
        for i in range(k):
            closed[perm[i]] = True
        check_field(closed, memb, p1, o1, p2, o2, d1, r1, d2, r2, errs,
                    on, px, py, ph, nxt)
    return errs
