"""Poisson clouds of independent walkers.

Initial occupation numbers are independent Poisson variables with mean
``lambda0 * mu_x``; since ``mu`` is reversible for the walk, the system is
stationary and the counts stay Poisson at every later time.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels as K
from .lattice import ConductanceField, simulate_paths

__all__ = [
    "ParticleCloud",
    "MixingReport",
    "sample_cloud",
    "cloud_from_starts",
    "cloud_from_trajectories",
    "conditioned_paths",
    "counts_at",
    "displacement_ok",
    "mixing_domination_check",
]

DUMP_VERSION = 1


@dataclass(eq=False)
class ParticleCloud:
    """Particles with full jump-list trajectories on ``[0, horizon]``.

    Attributes
    ----------
    field : ConductanceField
    lambda0 : float
    horizon : float
    offsets, times, sites : ndarray
        CSR trajectory storage, see :mod:`lipsurf._kernels`.
    """

    field: ConductanceField
    lambda0: float
    horizon: float
    offsets: np.ndarray
    times: np.ndarray
    sites: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.offsets.size - 1

    @property
    def start_sites(self) -> np.ndarray:
        return self.sites[self.offsets[:-1]]

    def _check_t(self, t):
        if t < 0 or t > self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")

    def positions(self, t: float) -> np.ndarray:
        """Flat site of each particle at time ``t`` (-1 if it has left the window)."""
        self._check_t(t)
        return K.positions_at(self.offsets, self.times, self.sites, float(t))

    def positions_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        for t in (ts.min(), ts.max()):
            self._check_t(t)
        order = np.argsort(ts, kind="stable")
        out = K.positions_at_many(self.offsets, self.times, self.sites, ts[order])
        res = np.empty_like(out)
        res[order] = out
        return res

    def coords(self, flat) -> np.ndarray:
        flat = np.asarray(flat)
        c = self.field.window.coords(np.maximum(flat, 0)).astype(float)
        c[flat < 0] = np.nan
        return c

    def max_displacement(self, t0: float, t1: float) -> np.ndarray:
        """Sup-norm displacement of every particle over ``[t0, t1]`` relative to its place at ``t0``."""
        if t1 < t0:
            raise ValueError("empty interval")
        self._check_t(t0)
        self._check_t(t1)
        return K.max_disp_interval(self.offsets, self.times, self.sites, float(t0), float(t1),
                                   self.field.window.half_extent, self.field.dim)

    def site_counts(self, t: float) -> np.ndarray:
        pos = self.positions(t)
        return np.bincount(pos[pos >= 0], minlength=self.field.window.n_sites)

    def trajectory(self, pid: int):
        """``(times, coords)`` of one particle."""
        if not 0 <= pid < self.n:
            raise KeyError(f"unknown particle id {pid}")
        a, b = self.offsets[pid], self.offsets[pid + 1]
        return self.times[a:b].copy(), self.coords(self.sites[a:b])

    def subset(self, ids) -> "ParticleCloud":
        """Cloud holding only the particles ``ids`` (renumbered in the given order)."""
        ids = np.asarray(ids, dtype=np.int64)
        lens = self.offsets[ids + 1] - self.offsets[ids]
        off = np.zeros(ids.size + 1, dtype=np.int64)
        np.cumsum(lens, out=off[1:])
        src = np.repeat(self.offsets[ids] - off[:-1], lens) + np.arange(off[-1])
        return ParticleCloud(self.field, self.lambda0, self.horizon, off,
                             self.times[src], self.sites[src], self.seed)

    # -------------------------------------------------------------- export

    def initial_counts_csv(self) -> str:
        """CSV with one row per site: coordinates, ``mu_x`` and initial count."""
        counts = self.site_counts(0.0)
        xs = self.field.window.all_coords()
        buf = io.StringIO()
        d = self.field.dim
        buf.write(",".join([f"x{a}" for a in range(d)] + ["mu", "count"]) + "\n")
        for x, mu, c in zip(xs, self.field.site_weights, counts):
            buf.write(",".join([str(int(v)) for v in x] + [repr(float(mu)), str(int(c))]) + "\n")
        return buf.getvalue()

    def region_series_csv(self, ts, lo, hi) -> str:
        buf = io.StringIO()
        buf.write("t,count\n")
        for t in ts:
            buf.write(f"{float(t)!r},{counts_at(self, t, lo, hi)}\n")
        return buf.getvalue()

    def dump(self, path) -> None:
        """Write the full trajectory set to a versioned ``.npz`` container."""
        np.savez_compressed(path, version=DUMP_VERSION, lambda0=self.lambda0, horizon=self.horizon,
                            offsets=self.offsets, times=self.times, sites=self.sites,
                            seed=-1 if self.seed is None else self.seed,
                            field=np.frombuffer(self.field.to_json().encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "ParticleCloud":
        with np.load(path) as z:
            if int(z["version"]) != DUMP_VERSION:
                raise ValueError("unsupported cloud container version")
            field = ConductanceField.from_json(bytes(z["field"]).decode())
            seed = int(z["seed"])
            return cls(field, float(z["lambda0"]), float(z["horizon"]), z["offsets"], z["times"],
                       z["sites"], None if seed < 0 else seed)


def cloud_from_starts(field: ConductanceField, starts, t_end: float, rng, lambda0: float = 0.0,
                      seed=None) -> ParticleCloud:
    """Cloud with the given flat start sites and freshly simulated walks."""
    off, times, sites = simulate_paths(field, starts, t_end, rng)
    return ParticleCloud(field, float(lambda0), float(t_end), off, times, sites, seed)


def sample_cloud(field: ConductanceField, lambda0: float, t_end: float, seed) -> ParticleCloud:
    """Poisson(``lambda0 * mu_x``) particles per site with walks up to ``t_end``."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lambda0 * field.site_weights)
    starts = np.repeat(np.arange(field.window.n_sites), counts)
    return cloud_from_starts(field, starts, t_end, rng, lambda0, seed)


def cloud_from_trajectories(field: ConductanceField, paths, horizon: float,
                            lambda0: float = 0.0) -> ParticleCloud:
    """Cloud from explicit ``(times, coords)`` pairs; used to build hand-made witnesses.

    Consecutive sites need not be neighbours, which lets tests place
    particles freely.
    """
    offs = [0]
    ts, ss = [], []
    for times, coords in paths:
        times = np.asarray(times, dtype=float)
        coords = np.asarray(coords, dtype=np.int64).reshape(len(times), field.dim)
        if times[0] != 0 or np.any(np.diff(times) <= 0) or times[-1] > horizon:
            raise ValueError("times must start at 0, increase strictly and stay within the horizon")
        ts.append(times)
        ss.append(field.window.index(coords).reshape(-1))
        offs.append(offs[-1] + len(times))
    times = np.concatenate(ts) if ts else np.zeros(0)
    sites = np.concatenate(ss).astype(np.int64) if ss else np.zeros(0, dtype=np.int64)
    return ParticleCloud(field, float(lambda0), float(horizon), np.asarray(offs, dtype=np.int64),
                         times, sites)


def conditioned_paths(field: ConductanceField, starts, t_end: float, z: float, rng,
                      max_rounds: int = 1000):
    """Walks conditioned, by rejection, to keep their displacement inside ``Q_z`` on ``[0, t_end]``.

    Returns
    -------
    offsets, times, sites : ndarray
        CSR storage in the order of ``starts``.
    acceptance : float
        Accepted walks over simulated walks.
    """
    starts = np.asarray(starts, dtype=np.int64)
    n = starts.size
    pending = np.arange(n)
    chunks = []  # (ids, offsets, times, sites)
    simulated = 0
    rounds = 0
    while pending.size:
        if rounds >= max_rounds:
            raise RuntimeError(f"no acceptance for {pending.size} walks within {max_rounds} rounds")
        off, times, sites = simulate_paths(field, starts[pending], t_end, rng)
        simulated += pending.size
        md = K.max_disp_interval(off, times, sites, 0.0, float(t_end), field.window.half_extent,
                                 field.dim)
        ok = md <= z / 2.0
        if ok.any():
            chunks.append((pending[ok],) + _take_segments(off, times, sites, np.flatnonzero(ok)))
        pending = pending[~ok]
        rounds += 1
    if not chunks:
        return np.zeros(1, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64), 1.0
    ids = np.concatenate([c[0] for c in chunks])
    lens = np.concatenate([np.diff(c[1]) for c in chunks])
    times = np.concatenate([c[2] for c in chunks])
    sites = np.concatenate([c[3] for c in chunks])
    cat_off = np.zeros(ids.size + 1, dtype=np.int64)
    np.cumsum(lens, out=cat_off[1:])
    order = np.argsort(ids, kind="stable")
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lens[order], out=off[1:])
    src = np.repeat(cat_off[order] - off[:-1], lens[order]) + np.arange(off[-1])
    return off, times[src], sites[src], n / simulated if simulated else 1.0


def _take_segments(off, times, sites, keep):
    lens = off[keep + 1] - off[keep]
    new = np.zeros(keep.size + 1, dtype=np.int64)
    np.cumsum(lens, out=new[1:])
    src = np.repeat(off[keep] - new[:-1], lens) + np.arange(new[-1])
    return new, times[src], sites[src]


def counts_at(cloud: ParticleCloud, t: float, lo, hi) -> int:
    """Number of particles at time ``t`` inside the box ``lo <= x < hi`` (real bounds)."""
    pos = cloud.positions(t)
    pos = pos[pos >= 0]
    x = cloud.field.window.coords(pos)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (cloud.field.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (cloud.field.dim,))
    return int(np.count_nonzero(np.all((x >= lo) & (x < hi), axis=1)))


def displacement_ok(cloud: ParticleCloud, pid: int, interval, z: float) -> bool:
    """True iff particle ``pid`` stays in ``x(t0) + Q_z`` during ``interval = (t0, t1)``."""
    if not 0 <= pid < cloud.n:
        raise KeyError(f"unknown particle id {pid}")
    t0, t1 = interval
    if t1 < t0:
        raise ValueError("empty interval")
    cloud._check_t(t0)
    cloud._check_t(t1)
    a, b = cloud.offsets[pid], cloud.offsets[pid + 1]
    md = K.max_disp_interval(np.array([0, b - a]), cloud.times[a:b], cloud.sites[a:b], float(t0),
                             float(t1), cloud.field.window.half_extent, cloud.field.dim)
    return bool(md[0] <= z / 2.0)


# ------------------------------------------------------------------ mixing check


@dataclass
class MixingReport:
    """Per-subcube domination statistics of the mixing check."""

    cube_index: np.ndarray      # (n_cubes, d) subcube indices
    target_mean: np.ndarray     # (1 - eps) lambda0 * sum mu over the subcube
    threshold: np.ndarray       # q-quantile of the target Poisson law
    target_survival: np.ndarray  # P[target >= threshold]
    frequency: np.ndarray       # empirical P[count >= threshold]
    p_value: np.ndarray
    flagged: np.ndarray
    n_seeds: int
    acceptance: float

    @property
    def pass_rate(self) -> float:
        return float(1.0 - self.flagged.mean()) if self.flagged.size else 1.0

    def to_csv(self) -> str:
        d = self.cube_index.shape[1]
        rows = [",".join([f"c{a}" for a in range(d)] + ["target_mean", "threshold", "target_survival",
                                                         "frequency", "p_value", "flagged"])]
        for i in range(len(self.flagged)):
            rows.append(",".join([str(int(v)) for v in self.cube_index[i]] + [
                repr(float(self.target_mean[i])), str(int(self.threshold[i])),
                repr(float(self.target_survival[i])), repr(float(self.frequency[i])),
                repr(float(self.p_value[i])), str(int(self.flagged[i]))]))
        return "\n".join(rows) + "\n"


def mixing_domination_check(field: ConductanceField, lambda0: float, eps: float, K_out: float,
                            K_in: float, l_sub: int, delta: float, n_seeds: int, seed=0,
                            q: float = 0.5, alpha: float = 0.01,
                            initial: str = "poisson") -> MixingReport:
    """Empirical check that walkers started dense in ``Q_K`` dominate a thinned Poisson law.

    Particles start in ``Q_K`` (``K = K_out``) with intensity ``lambda0 * mu``,
    move for time ``delta`` conditioned to keep their displacement inside
    ``Q_{K - K'}``, and are counted in the subcubes of side ``l_sub`` lying in
    ``Q_{K'}``.  Each count is compared with the ``q``-quantile of
    ``Poisson((1 - eps) lambda0 sum mu)``; a subcube is flagged when the
    frequency of reaching that quantile is significantly (one-sided binomial,
    level ``alpha``) below the target's own probability.

    Parameters
    ----------
    initial : {'poisson', 'fixed'}
        ``'fixed'`` places ``round(lambda0 * mu_y)`` particles on each site.
    """
    if not K_out > K_in > 0:
        raise ValueError("need K > K' > 0")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    win = field.window
    half_out = int(np.floor(K_out / 2))
    margin = (K_out - K_in) / 2.0
    if win.boundary == "reflecting" and half_out + int(np.floor(margin)) + 1 > win.half_extent:
        raise ValueError("window too small for Q_K plus the displacement box")
    xs = win.all_coords()
    inside = np.all(np.abs(xs) <= K_out / 2.0, axis=1)
    src_sites = np.flatnonzero(inside)
    # subcube tiling anchored at the corner of Q_K
    corner = -half_out
    cube_of = np.floor_divide(xs - corner, l_sub)
    lo_in, hi_in = -K_in / 2.0, K_in / 2.0
    cube_lo = cube_of * l_sub + corner
    cube_hi = cube_lo + l_sub - 1
    in_inner = np.all((cube_lo >= lo_in) & (cube_hi <= hi_in), axis=1) & inside
    cubes, cube_id = np.unique(cube_of[in_inner], axis=0, return_inverse=True)
    cube_id = cube_id.reshape(-1)
    site_cube = np.full(win.n_sites, -1, dtype=np.int64)
    site_cube[np.flatnonzero(in_inner)] = cube_id
    mu_sum = np.bincount(cube_id, weights=field.site_weights[in_inner], minlength=len(cubes))
    target = (1 - eps) * lambda0 * mu_sum
    thr = stats.poisson.ppf(q, target)
    surv = stats.poisson.sf(thr - 1, target)
    hits = np.zeros(len(cubes))
    rng = np.random.default_rng(seed)
    acc_num = acc_den = 0.0
    for _ in range(n_seeds):
        if initial == "poisson":
            cnt = rng.poisson(lambda0 * field.site_weights[src_sites])
        elif initial == "fixed":
            cnt = np.rint(lambda0 * field.site_weights[src_sites]).astype(np.int64)
        else:
            raise ValueError(f"unknown initial placement {initial!r}")
        starts = np.repeat(src_sites, cnt)
        if delta > 0:
            off, times, sites, acc = conditioned_paths(field, starts, delta, K_out - K_in, rng)
            pos = K.positions_at(off, times, sites, float(delta))
        else:
            pos, acc = starts, 1.0
        acc_num += acc * starts.size
        acc_den += starts.size
        pos = pos[pos >= 0]
        c = site_cube[pos]
        counts = np.bincount(c[c >= 0], minlength=len(cubes))
        hits += counts >= thr
    freq = hits / n_seeds
    pval = stats.binom.cdf(hits, n_seeds, surv)
    return MixingReport(cube_index=cubes, target_mean=target, threshold=thr.astype(np.int64),
                        target_survival=surv, frequency=freq, p_value=pval, flagged=pval < alpha,
                        n_seeds=int(n_seeds), acceptance=acc_num / acc_den if acc_den else 1.0)
