"""Ensemble, density-estimation, slope-fit, and serialization tests.

The additive solver case supplies an exactly known Gaussian law, so the KDE
and ensemble checks compare against closed forms; serialization checks are
byte-level.
"""

import math

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from levyheat import (
    DegenerateSamplesError,
    GridSpec,
    RunConfig,
    additive_variance_exact,
    emit,
    field_from_function,
    fit_slope,
    get_sigma,
    kde,
    kernel_l2_norm_sq,
    load_rows,
    make_power_exponent,
    run_ensemble,
    silverman_bandwidth,
    smoothness_report,
    solve_path,
)

EXP2 = make_power_exponent(1.0, 2.0)


def additive_config(replicas=4000, m=64, k=64, horizon=0.5, seed=21):
    grid = GridSpec(m_space=m, k_time=k, horizon=horizon)
    return RunConfig(grid=grid, exponent=EXP2, sigma=get_sigma("one"),
                     u0=field_from_function(lambda x: 0.0 * x, m), seed=seed,
                     replicas=replicas, observables=[(horizon, 0.0)])


def sample_row(quantity="q", t=0.0, x=0.0, value=1.0, alpha=2.0):
    return {"run_id": "r", "seed": 1, "replica_count": 10, "alpha": alpha,
            "beta": 2.0, "t": t, "x": x, "quantity": quantity, "value": value,
            "stderr": 0.0, "tail_bound": 0.0}


# ---------------------------------------------------------------------------
# ensemble


def test_ensemble_is_union_of_single_runs():
    cfg = additive_config(replicas=2, m=16, k=8, horizon=0.2)
    ss = run_ensemble(cfg)[0]
    singles = [solve_path(cfg, replica=r, times=[0.2])[0].values[0]
               for r in (0, 1)]
    assert np.array_equal(ss.values, np.array(singles))


def test_ensemble_additive_statistics():
    cfg = additive_config()
    ss = run_ensemble(cfg)[0]
    assert ss.count == 4000
    assert abs(ss.mean()) < 3.0 * ss.stderr()
    var = additive_variance_exact(EXP2, cfg.grid)
    assert ss.variance() == pytest.approx(var, rel=0.1)
    assert ss.metadata["sigma"] == "one"
    assert ss.metadata["blowups"] == []


def test_ensemble_stderr_clt_scaling():
    big = run_ensemble(additive_config(replicas=4000))[0]
    small = run_ensemble(additive_config(replicas=2000))[0]
    assert small.stderr() / big.stderr() == pytest.approx(math.sqrt(2.0),
                                                          rel=0.10)


def test_ensemble_deterministic_across_workers():
    cfg = additive_config(replicas=600, m=16, k=8, horizon=0.2)
    a = run_ensemble(cfg, workers=1)[0]
    b = run_ensemble(cfg, workers=4)[0]
    assert np.array_equal(a.values, b.values)
    assert a.mean() == b.mean()


def test_ensemble_blowups_reported_not_silently_dropped():
    grid = GridSpec(m_space=16, k_time=8, horizon=0.2)
    cfg = RunConfig(grid=grid, exponent=EXP2, sigma=get_sigma("shifted_sine"),
                    u0=field_from_function(lambda x: 1e13 * np.sin(x), 16),
                    seed=0, replicas=3, observables=[(0.2, 0.0)])
    ss = run_ensemble(cfg)[0]
    assert ss.count == 0
    assert len(ss.metadata["blowups"]) == 3
    for r, step, mag in ss.metadata["blowups"]:
        assert step == 1 and mag > 1e12


def test_ensemble_validation():
    with pytest.raises(ValueError):
        run_ensemble(additive_config(m=16, k=8, horizon=0.2), replicas=1)


# ---------------------------------------------------------------------------
# density estimation


def test_kde_matches_additive_gaussian_law():
    cfg = additive_config()
    ss = run_ensemble(cfg)[0]
    est = kde(ss.values)
    sd = math.sqrt(additive_variance_exact(EXP2, cfg.grid))
    ks = float(np.max(np.abs(est.cdf() - ndtr(est.points / sd))))
    assert ks < 0.02
    assert est.integral() == pytest.approx(1.0, abs=1e-3)
    assert np.all(est.density >= 0.0)
    assert est.metadata["bandwidth_rule"] == "silverman"


def test_kde_explicit_bandwidth_and_points():
    rng = np.random.default_rng(7)
    s = rng.standard_normal(200)
    pts = np.linspace(-5.0, 5.0, 64)
    est = kde(s, bandwidth=0.4, eval_points=pts)
    assert est.bandwidth == 0.4
    assert est.metadata["bandwidth_rule"] == "explicit"
    assert np.array_equal(est.points, pts)
    assert est.integral() == pytest.approx(1.0, abs=5e-3)


def test_kde_degenerate_point_mass():
    with pytest.raises(DegenerateSamplesError) as err:
        kde(np.full(50, 3.25))
    assert err.value.value == 3.25
    assert err.value.count == 50


def test_kde_validation():
    with pytest.raises(ValueError):
        kde(np.array([1.0]))
    with pytest.raises(ValueError):
        kde(np.array([1.0, np.nan, 2.0]))
    with pytest.raises(ValueError):
        kde(np.array([1.0, 2.0, 3.0]), bandwidth=-1.0)
    with pytest.raises(ValueError):
        kde(np.array([1.0, 2.0, 3.0]), eval_points=np.linspace(0, 1, 4))


def test_silverman_rule_value():
    rng = np.random.default_rng(11)
    s = rng.standard_normal(1000)
    h = silverman_bandwidth(s)
    sd = float(np.std(s, ddof=1))
    iqr = float(np.subtract(*np.percentile(s, [75.0, 25.0])))
    assert h == pytest.approx(0.9 * min(sd, iqr / 1.34) * 1000 ** -0.2)


# ---------------------------------------------------------------------------
# smoothness report


def test_smoothness_matches_calculus_oracle():
    # stratified normal quantiles remove Monte Carlo wiggle, so the reported
    # peak slope matches the normal-density calculus value for the smoothed
    # law (variance inflated by the squared bandwidth)
    n = 4096
    s = ndtri((np.arange(n) + 0.5) / n)
    est = kde(s)
    rep = smoothness_report(est)
    var_eff = float(np.var(s, ddof=1)) + est.bandwidth ** 2
    oracle = 1.0 / (var_eff * math.sqrt(2.0 * math.pi * math.e))
    assert rep.max_d1 == pytest.approx(oracle, rel=0.10)
    assert rep.d2_sign_changes == 2
    assert not rep.under_smoothed
    assert rep.bulk[0] < 0.0 < rep.bulk[1]


def test_smoothness_flags_under_smoothing():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(300)
    rep = smoothness_report(kde(s, bandwidth=0.02))
    assert rep.under_smoothed
    assert rep.d2_sign_changes > 2


def test_smoothness_monotone_in_bandwidth():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(300)
    h = silverman_bandwidth(s)
    tight = smoothness_report(kde(s, bandwidth=h))
    wide = smoothness_report(kde(s, bandwidth=2.0 * h))
    assert wide.max_d1 < tight.max_d1
    assert wide.max_d2 < tight.max_d2


def test_smoothness_rows():
    rng = np.random.default_rng(5)
    rep = smoothness_report(kde(rng.standard_normal(500)))
    rows = rep.to_rows(run_id="r", seed=5, alpha=2.0, beta=2.0,
                       probe=(0.5, 0.0), replicas=500)
    names = [r["quantity"] for r in rows]
    assert names == ["density_max_d1", "density_max_d2",
                     "density_d2_sign_changes", "density_under_smoothed"]


# ---------------------------------------------------------------------------
# slope fitting


def test_fit_slope_exact_power():
    xs = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
    fit = fit_slope(xs, 3.0 * xs ** 2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_slope_constant():
    fit = fit_slope(np.array([1.0, 2.0, 4.0]), np.array([5.0, 5.0, 5.0]))
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.r2 == 1.0


def test_fit_slope_kernel_norm_rate():
    exp15 = make_power_exponent(1.0, 1.5)
    ts = np.geomspace(1e-5, 1e-3, 9)
    fit = fit_slope(ts, [kernel_l2_norm_sq(exp15, t) for t in ts])
    assert fit.slope == pytest.approx(-2.0 / 3.0, rel=0.03)
    assert fit.r2 > 0.999


def test_fit_slope_validation():
    with pytest.raises(ValueError):
        fit_slope([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_slope([1.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_slope([1.0, 2.0, 3.0], [1.0, -2.0, 3.0])
    with pytest.raises(ValueError):
        fit_slope([0.0, 2.0, 3.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------------------
# serialization


def test_emit_csv_layout_and_order(tmp_path):
    rows = [sample_row("b", t=0.5), sample_row("a", t=1.0),
            sample_row("a", t=0.5, x=1.0), sample_row("a", t=0.5, x=0.5)]
    path = tmp_path / "out.csv"
    emit(rows, "csv", str(path))
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    assert lines[0] == "# levyheat csv schema v1"
    assert lines[1] == ("run_id,seed,replica_count,alpha,beta,t,x,quantity,"
                        "value,stderr,tail_bound")
    got = load_rows(str(path))
    keys = [(r["quantity"], r["t"], r["x"]) for r in got]
    assert keys == sorted(keys)
    assert "\r" not in text


def test_emit_rerun_byte_identical(tmp_path):
    rows = [sample_row("a", value=1.0 / 3.0), sample_row("b", value=math.pi)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit(rows, "csv", str(p1))
    emit(list(reversed(rows)), "csv", str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    j1, j2 = tmp_path / "a.json", tmp_path / "b.json"
    emit(rows, "json", str(j1))
    emit(list(reversed(rows)), "json", str(j2))
    assert j1.read_bytes() == j2.read_bytes()


def test_emit_roundtrip_and_format_equivalence(tmp_path):
    rows = [sample_row("a", value=1.0 / 3.0, alpha=None),
            sample_row("b", value=-2.5e-17)]
    pc, pj = tmp_path / "r.csv", tmp_path / "r.json"
    emit(rows, "csv", str(pc))
    emit(rows, "json", str(pj))
    from_csv = load_rows(str(pc))
    from_json = load_rows(str(pj))
    assert from_csv == from_json
    assert from_csv[0]["alpha"] is None
    assert from_csv[0]["value"] == 1.0 / 3.0
    assert from_csv[1]["value"] == -2.5e-17
    assert isinstance(from_csv[0]["seed"], int)


def test_emit_empty_rows_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    emit([], "csv", str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert load_rows(str(path)) == []


def test_emit_field_validation(tmp_path):
    bad = sample_row()
    bad["extra"] = 1.0
    with pytest.raises(ValueError):
        emit([bad], "csv", str(tmp_path / "x.csv"))
    short = sample_row()
    del short["stderr"]
    with pytest.raises(ValueError):
        emit([short], "csv", str(tmp_path / "x.csv"))
    with pytest.raises(ValueError):
        emit([sample_row()], "yaml", str(tmp_path / "x.yaml"))


def test_emit_unwritable_path():
    with pytest.raises(OSError) as err:
        emit([sample_row()], "csv", "/nonexistent-dir/out.csv")
    assert "/nonexistent-dir/out.csv" in str(err.value)
