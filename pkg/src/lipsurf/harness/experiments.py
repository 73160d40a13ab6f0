"""Experiments: the surface pipeline, tail and surrounding statistics, infection speed, mixing."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .. import events as ev
from ..particles import mixing_domination_check, sample_cloud
from ..surface import (InconclusiveError, SiteField, bad_cluster, build_surface, d_reach, dd_cluster,
                       random_site_field, surrounds, zero_cluster_report)

from .config import RunConfig
from .infection import front_speed, inject_origin, spread_infection
from .stats import fit_log_survival, mean_ci, survival

__all__ = [
    "ExperimentResult",
    "pipeline_window",
    "simulate",
    "event_site_field",
    "run_pipeline",
    "tail_experiment",
    "surrounding_experiment",
    "infection_experiment",
    "mixing_experiment",
    "write_json",
]


@dataclass
class ExperimentResult:
    """Summary plus the files written; ``ok`` is False when an invariant failed."""

    name: str
    summary: dict
    ok: bool
    files: list = dc_field(default_factory=list)


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")
    return path


def _write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _map(fn, args, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, args))
    return [fn(a) for a in args]


# ------------------------------------------------------------------ pipeline


def pipeline_window(cfg: RunConfig, field):
    """``(t_lo, t_hi, horizon, with_indicators)`` for one realization."""
    p = cfg.schema
    with_ind = bool(cfg.raw["indicators"]) and p.kappa >= 2
    g1 = ev.CubeGrid.build(field, p, 1)
    n_space = g1.n - 2 * p.eta
    if n_space < 1:
        raise ValueError("window holds no complete super cube")
    if cfg.raw["taus"] is not None:
        t_lo, t_hi = (int(v) for v in cfg.raw["taus"])
    else:
        t_lo = 0
        if with_ind:
            for k in range(p.kappa - 1, 0, -1):
                t_lo = math.ceil((t_lo + 1) * (p.B(k + 1) / p.B(k)))
        t_hi = t_lo + n_space - 1
    need = (t_hi + p.eta) * float(p.beta)
    if with_ind:
        for k in range(1, p.kappa + 1):
            a, b = ev._tau_range(p, k, t_lo, t_hi)
            need = max(need, (b + 2) * float(p.beta_k(k)))
    horizon = float(cfg.raw["horizon"]) if cfg.raw["horizon"] is not None else need
    return t_lo, t_hi, horizon, with_ind


def simulate(cfg: RunConfig, s: int, horizon: float):
    field = cfg.conductances(s)
    cloud = sample_cloud(field, cfg.schema.lambda0, horizon, cfg.realization_seed(s, 2))
    return field, cloud


def event_site_field(E: ev.CellMap, height_axis: int, policy: str = "treat-open", center: bool = False) -> SiteField:
    """Base-height site field (open = event holds) from the defined box of a scale-1 event map.

    The base collects the non-height spatial axes followed by time.  With
    ``center`` the base coordinates are shifted so the box is centred on 0.
    """
    dfn = E.defined
    box = []
    for ax in range(dfn.ndim):
        other = tuple(a for a in range(dfn.ndim) if a != ax)
        line = np.flatnonzero(dfn.any(axis=other))
        if line.size == 0:
            raise ValueError("event map has no defined cell")
        box.append(slice(line[0], line[-1] + 1))
    if not dfn[tuple(box)].all():
        raise ValueError("defined cells do not form a box")
    vals = E.values[tuple(box)]
    d = vals.ndim - 1
    h = 1 + height_axis
    others = [1 + a for a in range(d) if a != height_axis]
    arr = np.transpose(vals, others + [0, h])
    org = [E.i_lo + box[a].start for a in others] + [E.tau_lo + box[0].start, E.i_lo + box[h].start]
    if center:
        org[:-1] = [-(arr.shape[a] // 2) for a in range(arr.ndim - 1)]
    return SiteField(arr, tuple(int(v) for v in org), policy)


def _pipeline_one(args):
    cfg, s, out_dir = args
    p = cfg.schema
    field = cfg.conductances(s)
    t_lo, t_hi, horizon, with_ind = pipeline_window(cfg, field)
    cloud = sample_cloud(field, p.lambda0, horizon, cfg.realization_seed(s, 2))
    event = ev.get_event(cfg.raw["event"]["name"], p, **cfg.raw["event"].get("params", {}))
    summary = {"seed_index": s, "n_particles": cloud.n, "horizon": horizon, "taus": [t_lo, t_hi],
               "event": event.name}
    files = []
    if with_ind:
        ind = ev.indicators(cloud, p, event, taus=(t_lo, t_hi))
        E = ind.E
        chk = ind.check()
        summary["indicator_checks"] = chk
        summary["A_fraction"] = float(ind.A.values[ind.A.defined].mean()) if ind.A.defined.any() else None
        ind_ok = chk["ext_le_D"] == 0 and chk["base_ge_parent_ext"] == 0 and chk["A_le_E"] == 0
        if out_dir is not None:
            files.append(_write(out_dir / f"seed_{s:04d}" / "indicators.csv", ind.to_csv()))
    else:
        E = ev.event_map(cloud, p, event, (t_lo, t_hi))
        ind_ok = True
    sf = event_site_field(E, p.height_axis, cfg.raw["policy"])
    surf = build_surface(sf)
    chk = surf.check()
    summary["open_fraction"] = float(sf.open.mean())
    summary["surface_checks"] = chk
    summary["escaped"] = bool(surf.escaped)
    finite = np.isfinite(surf.F_plus).all()
    summary["F_plus_max"] = float(np.max(surf.F_plus)) if finite else "inf"
    summary["F_minus_min"] = float(np.min(surf.F_minus)) if finite else "-inf"
    summary["exists_in_window"] = bool(finite and not surf.escaped)
    if finite:
        summary["zero_cluster"] = zero_cluster_report(surf).to_dict()
    ok = ind_ok and all(v == 0 for v in chk.values())
    summary["invariants_ok"] = ok
    if out_dir is not None:
        d = out_dir / f"seed_{s:04d}"
        files.append(_write(d / "surface.csv", surf.to_csv()))
        files.append(_write(d / "sitefield.json", sf.to_json()))
        files.append(write_json(d / "summary.json", summary))
    return summary, ok, [str(f) for f in files]


def run_pipeline(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    """Conductances, cloud, event on every super cell, site field, surface; one realization per seed."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / "run"
    res = _map(_pipeline_one, [(cfg, s, out) for s in range(cfg.n_seeds)], int(cfg.raw["workers"]))
    per = [r[0] for r in res]
    ok = all(r[1] for r in res)
    files = [f for r in res for f in r[2]]
    summary = {"experiment": "run", "config": cfg.raw, "relaxed_constraints": list(cfg.schema.relaxed),
               "n_seeds": cfg.n_seeds, "realizations": per, "invariants_ok": ok}
    files.append(str(write_json(out / "run_summary.json", summary)))
    return ExperimentResult("run", summary, ok, files)


# ------------------------------------------------------------------ site-field sources


def _source_field(cfg: RunConfig, section: str, s: int, R: int):
    """Site field for a tail or surrounding realization, centred on the origin column."""
    sec = cfg.raw[section]
    if sec["source"] == "bernoulli":
        rng = np.random.default_rng(cfg.realization_seed(s, 3))
        bd = int(sec.get("base_dim", 2))
        return random_site_field((2 * R + 1,) * bd, (-R, R), float(sec["p_bad"]), rng, cfg.raw["policy"])
    if sec["source"] == "event":
        p = cfg.schema
        field = cfg.conductances(s)
        t_lo, t_hi, horizon, _ = pipeline_window(cfg.with_(indicators=False), field)
        cloud = sample_cloud(field, p.lambda0, horizon, cfg.realization_seed(s, 2))
        event = ev.get_event(cfg.raw["event"]["name"], p, **cfg.raw["event"].get("params", {}))
        E = ev.event_map(cloud, p, event, (t_lo, t_hi))
        return event_site_field(E, p.height_axis, cfg.raw["policy"], center=True)
    raise ValueError(f"unknown site-field source {sec['source']!r}")


def _origin(sf: SiteField):
    return (0,) * sf.open.ndim


# ------------------------------------------------------------------ tails


def _tail_one(args):
    cfg, s, R, clusters = args
    sf = _source_field(cfg, "tail", s, R)
    u = _origin(sf)
    H = d_reach(sf, u)
    rad = H.radius(u) if H.touched.any() else -math.inf
    reach = min(min(-o for o in sf.origin[:-1]), min(o + n - 1 for o, n in zip(sf.origin[:-1], sf.base_shape)),
                -sf.h_min, sf.h_max)
    row = {"rad": rad, "truncated": bool(rad >= reach)}
    if clusters:
        if not sf.open[tuple(-np.asarray(sf.origin))]:
            K = bad_cluster(sf, u)
            Ks = dd_cluster(sf, u)
            row["K_rad"], row["Kstar_rad"] = K.radius(u), Ks.radius(u)
        else:
            row["K_rad"] = row["Kstar_rad"] = -math.inf
    return row


def tail_experiment(cfg: RunConfig, r_max: int | None = None, out_dir=None) -> ExperimentResult:
    """Survival of the origin hill radius over seeds with a log-linear fit."""
    t = cfg.raw["tail"]
    r_max = int(t["r_max"]) if r_max is None else int(r_max)
    r_min = int(t["r_min"])
    R = r_max + 2
    clusters = bool(t.get("clusters", False))
    rows = _map(_tail_one, [(cfg, s, R, clusters) for s in range(cfg.n_seeds)], int(cfg.raw["workers"]))
    n = len(rows)
    grid = np.arange(0, r_max + 1)
    rad = np.array([r["rad"] for r in rows], dtype=float)
    surv = survival(rad, grid)
    se = np.sqrt(surv * (1 - surv) / n)
    sel = grid >= r_min
    fit = fit_log_survival(grid[sel], surv[sel], n)
    c = float(t.get("log_c", 1.0))
    fit_log = fit_log_survival(grid[sel], surv[sel], n, transform=lambda r: r / np.log(r) ** c)
    bd = int(t.get("base_dim", 2))
    proxy = float(np.sum(np.maximum(grid, 1) ** bd * surv))
    monotone = bool(np.all(np.diff(surv) <= 0))
    summary = {
        "experiment": "tail", "n_seeds": n, "source": t["source"], "r": grid, "survival": surv, "stderr": se,
        "fit": fit.to_dict(), "fit_r_over_log": {**fit_log.to_dict(), "c": c},
        "weighted_sum_proxy": proxy, "survival_nonincreasing": monotone,
        "n_nonempty": int(np.isfinite(rad).sum()), "n_truncated": int(sum(r["truncated"] for r in rows)),
        "slope_negative": bool(fit.slope < 0) if fit.n_points >= 2 else None,
    }
    if fit.n_points < 2:
        summary["note"] = "too few points with 0 < survival < 1 for a fit"
    if clusters:
        for key in ("K_rad", "Kstar_rad"):
            summary[key + "_survival"] = survival(np.array([r[key] for r in rows], dtype=float), grid)
    ok = monotone and math.isfinite(proxy)
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / "tail"
    lines = ["r,survival,stderr"] + [f"{int(r)},{s!r},{e!r}" for r, s, e in zip(grid, surv.tolist(), se.tolist())]
    files = [str(_write(out / "tail.csv", "\n".join(lines) + "\n")),
             str(write_json(out / "tail_summary.json", summary))]
    return ExperimentResult("tail", summary, ok, files)


# ------------------------------------------------------------------ surrounding


def _surround_one(args):
    cfg, s, radii = args
    R = max(radii) + 2
    sf = _source_field(cfg, "surround", s, R)
    surf = build_surface(sf)
    u = _origin(sf)
    row = []
    for r in radii:
        try:
            row.append(1 if surrounds(surf, u, int(r)) else 0)
        except InconclusiveError:
            row.append(-1)
    return row


def surrounding_experiment(cfg: RunConfig, radii=None, out_dir=None) -> ExperimentResult:
    """Frequency over seeds that the surface fails to surround the origin at distance ``r``."""
    sec = cfg.raw["surround"]
    radii = sorted(int(r) for r in (sec["radii"] if radii is None else radii))
    rows = np.array(_map(_surround_one, [(cfg, s, radii) for s in range(cfg.n_seeds)], int(cfg.raw["workers"])))
    conclusive = rows >= 0
    n_ok = conclusive.sum(axis=0)
    non = ((rows == 0) & conclusive).sum(axis=0)
    freq = np.where(n_ok > 0, non / np.maximum(n_ok, 1), np.nan)
    se = np.sqrt(freq * (1 - freq) / np.maximum(n_ok, 1))
    # nested events per seed: surrounded at r implies surrounded at every larger r
    nested = bool(np.all([(np.diff(r[r >= 0]) >= 0).all() for r in rows]))
    monotone = bool(np.all(np.diff(freq[np.isfinite(freq)]) <= 1e-12))
    fit = fit_log_survival(np.asarray(radii), freq, int(n_ok.min()) if n_ok.size else 0)
    summary = {"experiment": "surround", "n_seeds": cfg.n_seeds, "radii": radii, "nonsurround_frequency": freq,
               "stderr": se, "n_conclusive": n_ok, "n_inconclusive": (~conclusive).sum(axis=0),
               "nonincreasing": monotone, "nested_per_seed": nested, "envelope_fit": fit.to_dict()}
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / "surround"
    lines = ["r,nonsurround_frequency,stderr,n_conclusive,n_inconclusive"]
    for i, r in enumerate(radii):
        lines.append(f"{r},{float(freq[i])!r},{float(se[i])!r},{int(n_ok[i])},{int((~conclusive[:, i]).sum())}")
    files = [str(_write(out / "surround.csv", "\n".join(lines) + "\n")),
             str(write_json(out / "surround_summary.json", summary))]
    return ExperimentResult("surround", summary, monotone and nested, files)


# ------------------------------------------------------------------ infection


def _infect_one(args):
    cfg, s, t_end, grid, rate, lam = args
    field = cfg.conductances(s)
    cloud = sample_cloud(field, lam, t_end, cfg.realization_seed(s, 2))
    rng = np.random.default_rng(cfg.realization_seed(s, 4))
    cloud, src = inject_origin(cloud, rng)
    st = spread_infection(cloud, src, grid, rate, cfg.realization_seed(s, 5) % (2 ** 31))
    return st


def infection_experiment(cfg: RunConfig, t_end: float | None = None, out_dir=None) -> ExperimentResult:
    """Front growth of the infection over seeds and a least-squares speed on the pre-saturation regime."""
    sec = cfg.raw["infect"]
    t_end = float(sec["t_end"]) if t_end is None else float(t_end)
    grid = np.linspace(0.0, t_end, int(sec["n_grid"]))
    lam = float(sec["lambda0"]) if sec.get("lambda0") is not None else cfg.schema.lambda0
    rate = sec.get("rate")
    states = _map(_infect_one, [(cfg, s, t_end, grid, rate, lam) for s in range(cfg.n_seeds)],
                  int(cfg.raw["workers"]))
    L = int(cfg.raw["lattice"]["L"])
    limit = float(sec["fit_until"]) * L
    speeds, fits = [], []
    for st in states:
        f = front_speed(st, limit)
        fits.append(f.to_dict())
        speeds.append(f.slope)
    speeds = np.asarray(speeds, dtype=float)
    good = np.isfinite(speeds)
    mean, se, ci = mean_ci(speeds[good]) if good.any() else (float("nan"), float("nan"), (float("nan"),) * 2)
    monotone = all(bool(np.all(np.diff(st.front) >= 0)) for st in states)
    infected_monotone = all(bool(np.all(np.diff(st.n_infected) >= 0)) for st in states)
    summary = {"experiment": "infect", "n_seeds": len(states), "t_end": t_end, "lambda0": lam,
               "fit_front_limit": limit, "speed_mean": mean, "speed_stderr": se, "speed_ci95": list(ci),
               "n_fitted": int(good.sum()), "per_seed": fits, "front_nondecreasing": monotone,
               "infected_nondecreasing": infected_monotone,
               "ci_excludes_zero": bool(ci[0] > 0 or ci[1] < 0) if good.sum() > 1 else False}
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / "infect"
    lines = ["seed,t,front,n_infected"]
    for s, st in enumerate(states):
        lines += [f"{s},{t!r},{int(f)},{int(n)}" for t, f, n in zip(st.grid.tolist(), st.front, st.n_infected)]
    files = [str(_write(out / "infect_front.csv", "\n".join(lines) + "\n")),
             str(write_json(out / "infect_summary.json", summary))]
    return ExperimentResult("infect", summary, monotone and infected_monotone, files)


# ------------------------------------------------------------------ mixing


def mixing_experiment(cfg: RunConfig, out_dir=None) -> ExperimentResult:
    m = cfg.raw["mixing"]
    field = cfg.conductances(0)
    rep = mixing_domination_check(field, cfg.schema.lambda0, float(m["eps"]), float(m["K"]), float(m["K_in"]),
                                  int(m["l_sub"]), float(m["delta"]), cfg.n_seeds, cfg.realization_seed(0, 6),
                                  q=float(m["q"]), alpha=float(cfg.raw["alpha"]))
    summary = {"experiment": "mixing", "n_seeds": cfg.n_seeds, "pass_rate": rep.pass_rate,
               "n_subcubes": int(rep.flagged.size), "n_flagged": int(rep.flagged.sum()),
               "acceptance": rep.acceptance}
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / "mixing"
    files = [str(_write(out / "mixing.csv", rep.to_csv())), str(write_json(out / "mixing_summary.json", summary))]
    return ExperimentResult("mixing", summary, True, files)
