"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Statistical thresholds are the stated ones; nothing is relaxed.  A
criterion that cannot be met still runs at full size and fails loudly.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import oracles as O
import sweep_kernels as SK
from conftest import ACCEPTANCE
from lipsurf.cli import main as cli_main
from lipsurf.harness import experiments as X
from lipsurf.harness.config import load_config
from lipsurf.harness.stats import dispersion_test, weighted_linear_fit
from lipsurf.harness.weights import check_psi_sandwich
from lipsurf.lattice import LatticeWindow, exit_profile, sample_conductances
from lipsurf.particles import counts_at, sample_cloud
from lipsurf.surface import (all_hills, bad_cluster, build_surface, dd_cluster, mountain, random_site_field)
from lipsurf.tess import containment_sweep, separation_sweep, strict_schema

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_surface_structure():
    rng = np.random.default_rng(101)
    t0 = time.time()
    viol = {"sign": 0, "zero": 0, "lipschitz": 0, "open": 0}
    for _ in range(10 ** 4):
        bd = int(rng.integers(1, 3))
        base = tuple(int(v) for v in rng.integers(3, 22, size=bd))
        nh = int(rng.integers(3, 22))
        hmin = -int(rng.integers(0, nh))
        f = random_site_field(base, (hmin, hmin + nh - 1), rng.uniform(0, 0.6), rng)
        for k, v in build_surface(f).check().items():
            viol[k] += v
    dt = time.time() - t0
    ok = not any(viol.values()) and dt < 300
    record(1, ok, f"10^4 fields, violations {viol}, {dt:.1f} s")


def _random_oracle_comparison(n_fields, seed):
    rng = np.random.default_rng(seed)
    bad = {"hill": 0, "mountain": 0, "F": 0, "K": 0, "Kstar": 0}
    for _ in range(n_fields):
        f = random_site_field((8, 8), (-4, 3), rng.uniform(0.05, 0.45), rng)
        hills = O.hills_and_mountains(f)
        ph = all_hills(f)
        if set(hills) != set(ph):
            bad["hill"] += 1
        for u in hills:
            if u in ph and hills[u] != ph[u].members():
                bad["hill"] += 1
            if O.mountain(hills, u) != mountain(f, u, ph).members():
                bad["mountain"] += 1
        Fp, Fm = O.surface(f, hills)
        s = build_surface(f)
        bad["F"] += sum(tuple(int(x) for x in s.at(b)) != (Fp[b], Fm[b]) for b in Fp)
        bf = random_site_field((8, 8), (-4, 3), rng.uniform(0.05, 0.2), rng)
        cache = {}
        cells = O.bad_cells(bf)
        for j in rng.permutation(len(cells))[:4]:
            x = cells[j]
            bad["K"] += O.cluster(bf, x, False, cache) != set(bad_cluster(bf, x).cells)
            bad["Kstar"] += O.cluster(bf, x, True, cache) != set(dd_cluster(bf, x).cells)
    return bad


def test_criterion_02_oracle_equivalence():
    t0 = time.time()
    errs, checked, covered = SK.run_sweep(6, True)
    t1 = time.time()
    rand = _random_oracle_comparison(1000, 202)
    dt = time.time() - t0
    ok = not any(np.asarray(errs)) and not any(rand.values()) and dt < 600
    record(2, ok, f"sweep of {covered} fields ({checked} orbit representatives) errors {list(map(int, errs))} "
                  f"in {t1 - t0:.0f} s; 10^3 random 8x8x8 fields mismatches {rand}; total {dt:.0f} s")


def test_criterion_03_monotonicity():
    rng = np.random.default_rng(303)
    n_pairs = viol = 0
    while n_pairs < 1000:
        bd = int(rng.integers(1, 3))
        base = tuple(int(v) for v in rng.integers(3, 12, size=bd))
        f = random_site_field(base, (-4, 4), rng.uniform(0.1, 0.7), rng)
        closed = np.argwhere(~f.open)
        if not len(closed):
            continue
        site = tuple(int(v) for v in closed[rng.integers(len(closed))] + np.asarray(f.origin))
        s0, s1 = build_surface(f), build_surface(f.with_site(site, True))
        viol += int(np.any(s1.F_plus > s0.F_plus) or np.any(s1.F_minus < s0.F_minus))
        n_pairs += 1
    record(3, viol == 0, f"{n_pairs} flip pairs, {viol} violations")


def test_criterion_04_indicator_inequalities(tmp_path):
    totals = {"ext_le_D": 0, "base_ge_parent_ext": 0, "A_le_E": 0, "checked_cells": 0}
    n = 0
    for lam in (1.0, 3.0):
        cfg = load_config(None, {"lattice": {"L": 48}, "schema": {"preset": "desk", "n": 2, "lambda0": lam},
                                 "n_seeds": 50, "master_seed": 404 + int(lam), "output_dir": str(tmp_path)})
        res = X.run_pipeline(cfg, tmp_path / f"lam{lam}")
        for r in res.summary["realizations"]:
            for k in totals:
                totals[k] += r["indicator_checks"][k]
            n += 1
    ok = n >= 100 and totals["checked_cells"] > 0 and all(totals[k] == 0 for k in totals if k != "checked_cells")
    record(4, ok, f"{n} realizations (lambda0 in {{1, 3}}), totals {totals}")


def test_criterion_05_geometry():
    p = strict_schema()
    sep = separation_sweep(p, kmax=3, radius=5)
    con = containment_sweep(p, kmax=3, radius=5)
    sand = check_psi_sandwich(p)
    deep = check_psi_sandwich(strict_schema(kappa=12))
    ok = sep.ok and con.ok and not sand["violations"] and not deep["violations"] and sep.checked and con.checked
    record(5, ok, f"separation {sep.checked} checks / {len(sep.violations)} counterexamples, containment "
                  f"{con.checked} / {len(con.violations)}, weight sandwich up to kappa=3: {sand}, up to 12: "
                  f"{len(deep['violations'])} violations")


def test_criterion_06_stationarity():
    field = sample_conductances(LatticeWindow(2, 8), 2.0, "uniform", 606)
    lam = 2.0
    C = field.window.all_coords()
    regions = [((-2, -2), (3, 3)), ((-8, -8), (-4, -3)), ((3, -8), (9, 9))]
    times = (0.0, 10.0, 50.0)
    counts = np.zeros((len(times), len(regions), 200))
    for s in range(200):
        c = sample_cloud(field, lam, 50.0, 60600 + s)
        for a, t in enumerate(times):
            for b, (lo, hi) in enumerate(regions):
                counts[a, b, s] = counts_at(c, t, lo, hi)
    pv = []
    for b, (lo, hi) in enumerate(regions):
        mean = lam * field.site_weights[np.all((C >= lo) & (C < hi), axis=1)].sum()
        for a in range(len(times)):
            pv.append(dispersion_test(counts[a, b], mean).p_value)
    ok = min(pv) > 0.01
    record(6, ok, f"200 seeds, {len(pv)} (region, time) tests, min p-value {min(pv):.3f}")


def test_criterion_07_exit_shape():
    t0 = time.time()
    field = sample_conductances(LatticeWindow(2, 24), 2.0, "uniform", 707)
    zs = [6, 8, 10, 12, 14]
    delta = 32.0
    P = exit_profile(field, zs, [delta], 20000, 7)[:, 0]
    x = np.asarray(zs, float) ** 2 / delta
    mono = bool(np.all(np.diff(P) >= 0))
    fit = weighted_linear_fit(x, -np.log1p(-np.minimum(P, 1 - 1e-12)))
    dt = time.time() - t0
    ok = mono and fit.slope > 0 and fit.r2 > 0.8 and dt < 300
    record(7, ok, f"P = {np.round(P, 4).tolist()}, monotone {mono}, slope {fit.slope:.4f}, R2 {fit.r2:.4f}, "
                  f"{dt:.1f} s")


def _tail_ok(s):
    f = s["fit"]
    return (f["n_points"] >= 3 and isinstance(f["slope"], float) and f["slope"] < 0
            and isinstance(f["r2"], float) and f["r2"] > 0.9)


def test_criterion_08_tail_decay(tmp_path):
    t0 = time.time()
    cfg = load_config(None, {"tail": {"source": "bernoulli", "p_bad": 0.05, "r_min": 2, "r_max": 15,
                                      "base_dim": 2},
                             "n_seeds": 10 ** 4, "master_seed": 808, "output_dir": str(tmp_path)})
    bern = X.tail_experiment(cfg).summary
    # broadcast fields: beta raised so the event holds on most cells
    cfg_b = load_config(None, {"lattice": {"L": 68}, "indicators": False, "event": {"name": "broadcast"},
                               "schema": {"preset": "desk", "n": 1, "lambda0": 3.0, "beta": 4, "c_mix": None},
                               "tail": {"source": "event", "r_min": 2, "r_max": 15},
                               "n_seeds": 100, "master_seed": 809, "output_dir": str(tmp_path / "bc")})
    bc = X.tail_experiment(cfg_b).summary
    dt = time.time() - t0

    def show(s):
        return (f"survival {np.round(np.asarray(s['survival'], float), 5).tolist()}, fit points "
                f"{s['fit']['n_points']}, slope {s['fit']['slope']}, R2 {s['fit']['r2']}")

    ok = _tail_ok(bern) and _tail_ok(bc) and dt < 1800
    record(8, ok, f"bernoulli p=0.05 (10^4 seeds): {show(bern)}; broadcast (100 seeds): {show(bc)}; "
                  f"{dt:.0f} s")


def test_criterion_09_infection_speed(tmp_path):
    t0 = time.time()
    cfg = load_config(None, {"lattice": {"d": 2, "L": 64, "cm": 2.0}, "infect": {"lambda0": 1.0, "t_end": 200.0},
                             "n_seeds": 50, "master_seed": 909, "output_dir": str(tmp_path)})
    s = X.infection_experiment(cfg).summary
    dt = time.time() - t0
    ok = s["speed_mean"] > 0 and s["ci_excludes_zero"] and s["n_fitted"] == 50 and dt < 1200
    record(9, ok, f"speed {s['speed_mean']:.3f}, 95% CI {[round(v, 3) for v in s['speed_ci95']]}, "
                  f"{s['n_fitted']} seeds fitted, {dt:.0f} s")


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_reproducibility(tmp_path, monkeypatch, capsys):
    small = ["--lattice", "d=2,L=16,cm=2,law=uniform", "--set", "indicators=false", "--set", "schema.n=1",
             "--out", "out", "--master-seed", "10"]
    commands = [["run", "--seeds", "2"], ["tail", "--seeds", "30", "--r-max", "6"],
                ["surround", "--seeds", "10", "--radii", "0,1,2,3"],
                ["infect", "--seeds", "2", "--t-end", "20", "--set", "infect.n_grid=41"],
                ["mixing", "--seeds", "5"]]
    snaps, outs = [], []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        monkeypatch.chdir(d)
        for cmd in commands:
            assert cli_main(cmd + small) == 0
        cli_main(["tess", "dump", "--nu", "0.3"])
        outs.append(capsys.readouterr().out)
        snaps.append(_snapshot(d / "out"))
    same = snaps[0] == snaps[1] and outs[0] == outs[1]
    diff = [k for k in snaps[0] if snaps[0].get(k) != snaps[1].get(k)]
    n_csv = sum(k.endswith(".csv") for k in snaps[0])
    n_json = sum(k.endswith(".json") for k in snaps[0])
    record(10, same and n_csv > 0 and n_json > 0,
           f"{len(snaps[0])} files ({n_csv} CSV, {n_json} JSON) from {len(commands) + 1} subcommands, "
           f"differing: {diff}")
