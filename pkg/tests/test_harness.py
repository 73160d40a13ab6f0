import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipsurf.harness import experiments as X
from lipsurf.harness.config import ConfigError, _merge, load_config, seed_for
from lipsurf.harness.infection import front_speed, inject_origin, spread_infection
from lipsurf.harness.report import make_report
from lipsurf.harness.stats import (chernoff_bound, dispersion_test, fit_log_survival, mean_ci, survival,
                                   weighted_linear_fit)
from lipsurf.harness.weights import check_psi_sandwich, psi_ladder, psi_tilde, psi_weights
from lipsurf.lattice import constant_field
from lipsurf.particles import cloud_from_trajectories, sample_cloud
from lipsurf.tess import desk_schema, strict_schema

GOLDEN = Path(__file__).parent / "golden" / "run_summary.json"


# ------------------------------------------------------------------ stats


def test_chernoff_bounds():
    assert math.isclose(chernoff_bound(10, 0.5), math.exp(-1.25))
    assert math.isclose(chernoff_bound(10, 0.5, "upper"), math.exp(-0.625))
    assert chernoff_bound(10, 1e-9) > 1 - 1e-12
    for args in [(0, 0.5), (1, 0), (1, 1), (1, 0.5, "both")]:
        with pytest.raises(ValueError):
            chernoff_bound(*args)


def test_chernoff_bounds_dominate_poisson_tails():
    rng = np.random.default_rng(0)
    for lam, eps in [(10, 0.5), (40, 0.3), (5, 0.8)]:
        x = rng.poisson(lam, 10 ** 6)
        assert np.mean(x < (1 - eps) * lam) <= chernoff_bound(lam, eps)
        assert np.mean(x > (1 + eps) * lam) <= chernoff_bound(lam, eps, "upper")


def test_dispersion_test():
    rng = np.random.default_rng(1)
    assert dispersion_test(rng.poisson(4.0, 500), 4.0).p_value > 0.001
    assert dispersion_test(rng.poisson(4.0, 500)).dof == 499
    assert dispersion_test(rng.negative_binomial(2, 1 / 3, 500), 4.0).p_value < 1e-6
    assert dispersion_test(np.full(50, 4), 4.0).p_value < 1e-6
    assert dispersion_test([0, 0, 0], 0.0).p_value == 1.0
    with pytest.raises(ValueError):
        dispersion_test([1])


def test_weighted_fit():
    x = np.arange(10.0)
    f = weighted_linear_fit(x, 2 - 0.5 * x)
    assert math.isclose(f.slope, -0.5) and math.isclose(f.intercept, 2) and math.isclose(f.r2, 1)
    # a point with zero weight is ignored
    y = 2 - 0.5 * x
    y[3] = 100
    w = np.ones(10)
    w[3] = 0
    assert math.isclose(weighted_linear_fit(x, y, w).slope, -0.5)
    assert math.isnan(weighted_linear_fit([1.0], [1.0]).slope)


def test_survival_and_log_fit():
    v = np.array([0, 1, 2, 3, np.nan, -np.inf, 5])
    assert np.allclose(survival(v, [0, 2, 5]), [4 / 7, 2 / 7, 0])
    r = np.arange(2, 12)
    surv = np.exp(-0.7 * r)
    fit = fit_log_survival(r, surv, 1000)
    assert math.isclose(fit.slope, -0.7) and fit.n_points == 10
    assert fit_log_survival(r, np.r_[np.ones(5), np.zeros(5)], 10).n_points == 0


def test_mean_ci():
    m, se, (lo, hi) = mean_ci([1.0, 2.0, 3.0])
    assert m == 2 and math.isclose(se, 1 / math.sqrt(3)) and lo < 2 < hi
    assert math.isnan(mean_ci([1.0])[1])


# ------------------------------------------------------------------ weights


def test_psi_two_equals_block_weight():
    for p in (strict_schema(), desk_schema(), desk_schema(lambda0=2.5)):
        expect = float(Fraction(p.eps) ** 2 * p.ell ** p.d / 81) * p.lambda0
        assert math.isclose(psi_weights(p, 2), expect)
        assert math.isclose(psi_tilde(p, 2), expect)


def test_psi_ladder_and_sandwich():
    p = strict_schema(kappa=6)
    rows = psi_ladder(p)
    assert rows[0][4] is None and [r[0] for r in rows] == list(range(1, 7))
    psis = [r[4] for r in rows[1:]]
    assert all(a < b for a, b in zip(psis, psis[1:]))
    rep = check_psi_sandwich(p)
    assert rep == {"checked": 5, "violations": [], "increasing": True}
    with pytest.raises(ValueError):
        psi_tilde(p, 1)


def test_psi_one_needs_nu():
    p = strict_schema()
    with pytest.raises(ValueError):
        psi_weights(p, 1)
    with pytest.raises(ValueError):
        psi_weights(p, 1, 1.5)
    assert math.isclose(psi_weights(p, 1, 0.5), math.log(2))
    assert psi_weights(p, 1, 1.0) == float(p.eps) ** 2 * p.lambda0 * 100 / p.cm


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("bad", [
    {"nonsense": 1},
    {"experiment": "fly"},
    {"lattice": {"law": "lognormal"}},
    {"lattice": {"cm": 1.0}},
    {"lattice": {"L": 0}},
    {"schema": {"preset": "strict", "m": 27}},
    {"schema": {"preset": "other"}},
    {"schema": {"preset": "desk", "colour": 3}},
    {"event": {"name": "nope"}},
    {"n_seeds": 0},
    {"alpha": 1.5},
    {"policy": "ignore"},
    {"tail": {"p_bad": 2}},
    {"tail": {"r_min": 5, "r_max": 3}},
])
def test_config_rejections(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n_seeds": 3, "lattice": {"L": 20}}))
    cfg = load_config(path, {"lattice": {"cm": 3.0}})
    assert cfg.n_seeds == 3 and cfg.raw["lattice"]["L"] == 20 and cfg.raw["lattice"]["cm"] == 3.0
    assert cfg.raw["lattice"]["law"] == "uniform"
    assert json.loads(cfg.to_json())["n_seeds"] == 3
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config(path)


@given(st.integers(0, 2 ** 40), st.integers(0, 1000), st.integers(0, 8))
def test_seed_for(master, s, stream):
    a = seed_for(master, s, stream)
    assert a == seed_for(master, s, stream) and 0 <= a < 2 ** 63
    assert a != seed_for(master, s + 1, stream)


# ------------------------------------------------------------------ infection


def _still_cloud(points, horizon=1.0):
    f = constant_field(2, 4)
    return cloud_from_trajectories(f, [([0.0], [x]) for x in points], horizon)


def test_infection_trivial_cases():
    grid = np.linspace(0, 1, 11)
    st1 = spread_infection(_still_cloud([(1, 2)]), 0, grid)
    assert np.all(st1.n_infected == 1) and np.all(st1.front == 3)
    st2 = spread_infection(_still_cloud([(0, 0), (0, 0), (2, 0)]), 0, grid)
    assert list(st2.infected) == [True, True, False] and st2.infection_time[1] == 0
    assert np.all(st2.front == 0)
    with pytest.raises(ValueError):
        spread_infection(_still_cloud([(0, 0)]), 3, grid)
    with pytest.raises(ValueError):
        spread_infection(_still_cloud([(0, 0)]), 0, np.linspace(0, 2, 3))


def test_infection_passes_along_a_meeting():
    f = constant_field(1, 6)
    c = cloud_from_trajectories(f, [([0.0, 0.5], [[0], [1]]), ([0.0, 0.7], [[2], [1]]),
                                    ([0.0, 0.8, 0.9], [[4], [3], [2]])], 1.0)
    st1 = spread_infection(c, 0, [0.0, 0.6, 0.75, 1.0])
    assert list(st1.infected) == [True, True, False]
    assert st1.infection_time[1] == 0.7
    assert list(st1.n_infected) == [1, 1, 2, 2] and list(st1.front) == [0, 1, 1, 1]


def test_finite_rate_infection_probability():
    # two walkers sharing a site for one time unit: infected with probability 1 - exp(-rate)
    c = _still_cloud([(0, 0), (0, 0)])
    n = 4000
    hits = sum(spread_infection(c, 0, [1.0], rate=2.0, seed=s).infected[1] for s in range(n))
    p = 1 - math.exp(-2.0)
    assert abs(hits / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_front_is_monotone_and_speed_positive():
    f = constant_field(2, 24)
    c = sample_cloud(f, 1.0, 60.0, 3)
    c, src = inject_origin(c, np.random.default_rng(0))
    st1 = spread_infection(c, src, np.linspace(0, 60, 301))
    assert np.all(np.diff(st1.front) >= 0) and np.all(np.diff(st1.n_infected) >= 0)
    assert front_speed(st1, 0.8 * 24).slope > 0
    # injection is skipped when a walker already starts at the origin
    c2, src2 = inject_origin(c, np.random.default_rng(1))
    assert c2.n == c.n and src2 == src


# ------------------------------------------------------------------ experiments


def small(tmp_path, **over):
    base = {"lattice": {"L": 16}, "schema": {"preset": "desk", "n": 1, "lambda0": 3.0}, "indicators": False,
            "n_seeds": 2, "output_dir": str(tmp_path)}
    return load_config(None, _merge(base, over))


def test_pipeline_always_true_gives_flat_surface(tmp_path):
    res = X.run_pipeline(small(tmp_path, event={"name": "always_true"}))
    assert res.ok
    for r in res.summary["realizations"]:
        assert r["F_plus_max"] == 0 and r["F_minus_min"] == 0 and r["open_fraction"] == 1
        assert r["exists_in_window"]


def test_pipeline_always_false_treat_closed_escapes(tmp_path):
    res = X.run_pipeline(small(tmp_path, event={"name": "always_false"}, policy="treat-closed"))
    assert res.ok
    for r in res.summary["realizations"]:
        assert r["escaped"] and not r["exists_in_window"] and r["F_plus_max"] == "inf"


def test_pipeline_with_indicators(tmp_path):
    cfg = small(tmp_path, schema={"preset": "desk", "n": 2, "lambda0": 3.0}, lattice={"L": 48},
                indicators=True, n_seeds=1, taus=[1040, 1060])
    res = X.run_pipeline(cfg)
    assert res.ok
    r = res.summary["realizations"][0]
    assert all(v == 0 for k, v in r["indicator_checks"].items() if k != "checked_cells")
    assert (tmp_path / "run" / "seed_0000" / "indicators.csv").exists()


def test_pipeline_matches_golden_summary(tmp_path):
    # sparse enough that both surfaces are non-trivial
    res = X.run_pipeline(small(tmp_path, master_seed=7, schema={"lambda0": 0.5}))
    got = json.loads((tmp_path / "run" / "run_summary.json").read_text())
    got.pop("config")
    if not GOLDEN.exists():
        GOLDEN.parent.mkdir(exist_ok=True)
        GOLDEN.write_text(json.dumps(got, indent=2, sort_keys=True) + "\n")
    assert got == json.loads(GOLDEN.read_text())
    assert res.ok


def test_runs_are_byte_identical(tmp_path):
    a = X.run_pipeline(small(tmp_path / "a", master_seed=3))
    b = X.run_pipeline(small(tmp_path / "b", master_seed=3))
    assert len(a.files) == len(b.files)
    for fa, fb in zip(a.files, b.files):
        ra, rb = Path(fa).read_bytes(), Path(fb).read_bytes()
        if fa.endswith("run_summary.json"):
            ra, rb = ra.replace(str(tmp_path / "a").encode(), b""), rb.replace(str(tmp_path / "b").encode(), b"")
        assert ra == rb


def test_tail_with_no_closed_sites(tmp_path):
    res = X.tail_experiment(small(tmp_path, tail={"p_bad": 0.0}, n_seeds=5), r_max=6)
    s = res.summary
    assert res.ok and s["n_nonempty"] == 0
    assert np.all(np.asarray(s["survival"]) == 0) and s["fit"]["n_points"] == 0 and "note" in s


def test_tail_survival_decreases(tmp_path):
    res = X.tail_experiment(small(tmp_path, tail={"p_bad": 0.3, "clusters": True}, n_seeds=200), r_max=6)
    s = res.summary
    assert res.ok and s["survival_nonincreasing"] and s["survival"][0] > 0
    assert np.all(np.asarray(s["K_rad_survival"]) <= np.asarray(s["Kstar_rad_survival"]) + 1e-12)


def test_surrounding_all_open(tmp_path):
    res = X.surrounding_experiment(small(tmp_path, surround={"p_bad": 0.0}, n_seeds=3), radii=[0, 1, 3])
    s = res.summary
    assert res.ok and np.all(np.asarray(s["nonsurround_frequency"]) == 0) and s["nested_per_seed"]


def test_surrounding_bernoulli(tmp_path):
    res = X.surrounding_experiment(small(tmp_path, surround={"p_bad": 0.3}, n_seeds=100), radii=[0, 1, 2, 4])
    assert res.ok and res.summary["nonincreasing"]


def test_infection_experiment_and_report(tmp_path):
    cfg = small(tmp_path, infect={"t_end": 30.0, "n_grid": 61, "lambda0": 1.0}, n_seeds=2)
    res = X.infection_experiment(cfg)
    assert res.ok and res.summary["front_nondecreasing"]
    X.tail_experiment(small(tmp_path, tail={"p_bad": 0.3}, n_seeds=50), r_max=5)
    X.run_pipeline(small(tmp_path, n_seeds=1))
    rep = make_report(tmp_path)
    text = Path(rep["report"]).read_text()
    assert rep["n_summaries"] >= 3 and "## infect" in text and "## tail" in text
    names = {Path(p).name for p in rep["plots"]}
    assert {"tail.png", "infect_front.png", "surface_seed_0000.png"} <= names
    rep2 = make_report(tmp_path, tmp_path / "noplots", plots=False)
    assert rep2["plots"] == []


def test_mixing_experiment(tmp_path):
    res = X.mixing_experiment(small(tmp_path, lattice={"L": 24}, n_seeds=5))
    assert 0 <= res.summary["pass_rate"] <= 1 and Path(res.files[0]).exists()
