"""Acceptance criteria 1-11 at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py``; the Monte Carlo
criteria (1, 7, 9) take a few minutes on one core.
"""

import filecmp

import numpy as np
import pytest
import statsmodels.api as sm

from smallarea import forest, harness, horseshoe, linear, metrics
from smallarea.forest import ForestHyper
from smallarea.horseshoe import HsConfig

pytestmark = pytest.mark.slow


def _pick(report, **match):
    return [r for r in report if all(r[k] == v for k, v in match.items())]


# 1 ------------------------------------------------------------------------

def test_c01_scaled_sc_validity(tmp_path, criterion):
    cfg = harness.load_config(None, "sc-compare", replicates=200, scenarios=[4],
                              methods=["linear_correct"])
    rep = harness.cmd_sc_compare(cfg, tmp_path)["report"]
    fails, cov = [], {}
    for sc in ("scaled", "original"):
        rows = _pick(rep, sc=sc)
        pairs = sum(r["pairs"] for r in rows)
        for t in (50, 80, 95):
            cov[sc, t] = sum(r[f"cov{t}"] * r["pairs"] for r in rows) / pairs
    for t in (50, 80, 95):
        if abs(cov["scaled", t] - t / 100) > 0.03:
            fails.append(f"scaled SC {t}% coverage {cov['scaled', t]:.4f} not within 0.03")
        for r in _pick(rep, sc="scaled"):
            if abs(r[f"cov{t}"] - t / 100) > 0.03:
                fails.append(f"scaled SC {t}% {r['group']} coverage {r[f'cov{t}']:.4f}")
    if not cov["original", 95] < 0.92:
        fails.append(f"original SC 95% coverage {cov['original', 95]:.4f} is not below 0.92")
    criterion(1, fails, "scaled SC coverage " + ", ".join(
        f"{cov['scaled', t]:.3f}" for t in (50, 80, 95))
        + f"; original 95% {cov['original', 95]:.3f}")


# 2 ------------------------------------------------------------------------

def test_c02_iid_degeneracy(criterion):
    # Every area has N_c = 100, so scenario 1 samples n_c = 50 = N_c - n_c.
    cfg = harness.load_config(None, "sc-compare", N_min=100, N_max=100,
                              methods=list(harness.SC_PREDICTORS))
    worst = 0.0
    for r in range(5):
        ests, _, _ = harness.sc_replicate(cfg, 1, r)
        by = {e.method: e for e in ests}
        for name in cfg.methods:
            a, b = by[f"{name}|original"], by[f"{name}|scaled"]
            for lev in cfg.levels:
                for k in (0, 1):
                    worst = max(worst, float(np.max(np.abs(a.intervals[lev][k]
                                                           - b.intervals[lev][k]))))
    fails = [] if worst <= 1e-12 else [f"max interval difference {worst:.3g}"]
    criterion(2, fails, f"max |original - scaled| limit {worst:.1e} over 5 samples, 4 predictors")


# 3 ------------------------------------------------------------------------

def _orthonormal(m, p, g):
    A = g.normal(size=(m, p))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(np.column_stack([np.ones(m), A]))
    return Q[:, 1:] * np.sqrt(m)


def test_c03_lasso_oracle(criterion):
    g = np.random.default_rng(3)
    worst_st = worst_ls = 0.0
    for _ in range(100):
        m, p = int(g.integers(20, 60)), int(g.integers(1, 8))
        Z = _orthonormal(m, p, g)
        b = g.normal(scale=2, size=p)
        y = 1.5 + Z @ b + 0.1 * g.normal(size=m)
        ols = np.linalg.lstsq(np.column_stack([np.ones(m), Z]), y, rcond=None)[0]
        lam = float(g.uniform(0, 2))
        _, beta = linear.lasso_solve(Z, y, lam)
        soft = np.sign(ols[1:]) * np.maximum(np.abs(ols[1:]) - lam, 0)
        worst_st = max(worst_st, float(np.max(np.abs(beta - soft))))
        X = g.normal(size=(m, p)) * g.uniform(0.5, 3, size=p)
        yx = X @ b + g.normal(size=m)
        b0, beta0 = linear.lasso_solve(X, yx, 0.0)
        ls = np.linalg.lstsq(np.column_stack([np.ones(m), X]), yx, rcond=None)[0]
        worst_ls = max(worst_ls, float(np.max(np.abs(np.r_[b0, beta0] - ls))))
    fails = []
    if worst_st > 1e-6:
        fails.append(f"soft-threshold deviation {worst_st:.2e}")
    if worst_ls > 1e-6:
        fails.append(f"least-squares deviation {worst_ls:.2e}")
    criterion(3, fails, f"soft-threshold max dev {worst_st:.1e}, lambda=0 max dev {worst_ls:.1e}")


# 4 ------------------------------------------------------------------------

def test_c04_forward_exhaustive(criterion):
    g = np.random.default_rng(4)
    mismatches, steps = 0, 0
    for _ in range(100):
        m, p = int(g.integers(12, 40)), int(g.integers(2, 9))
        X = g.normal(size=(m, p))
        y = X @ (g.normal(size=p) * (g.random(p) < 0.5)) + g.normal(size=m)
        w = g.integers(1, 30, size=m).astype(float)
        model = linear.forward_fit(X, y, w)
        sel: list[int] = []
        for j in model.selected:
            best, arg = np.inf, None
            for k in range(p):
                if k in sel:
                    continue
                Z = sm.add_constant(X[:, sel + [k]], has_constant="add")
                aic = sm.WLS(y, Z, weights=w).fit().aic
                if aic < best:
                    best, arg = aic, k
            steps += 1
            mismatches += arg != j
            sel.append(j)
    fails = [f"{mismatches} of {steps} steps differ"] if mismatches else []
    criterion(4, fails, f"{steps} forward steps on 100 datasets match the exhaustive AIC oracle")


# 5 ------------------------------------------------------------------------

def test_c05_forest_sanity(criterion):
    x = np.concatenate([np.linspace(-2, -0.01, 50), np.linspace(0, 2, 50)])[:, None]
    y = np.where(x[:, 0] < 0, 0.0, 10.0)
    f = forest.fit(x, y, ForestHyper(B=500, mtry=1, nodesize=1, seed=5))
    lo, hi = float(f.predict([[-1.0]])[0]), float(f.predict([[1.0]])[0])
    g = np.random.default_rng(5)
    X = g.normal(size=(150, 4))
    yy = np.sin(X[:, 0]) + X[:, 1] ** 2 + 0.3 * g.normal(size=150)
    f2 = forest.fit(X, yy, ForestHyper(B=100, mtry=2, nodesize=5, seed=6))
    Q = g.normal(scale=3, size=(10_000, 4))
    pred = f2.predict(Q)
    W = f2.weights(Q)
    wsum = float(np.max(np.abs(W.sum(axis=1) - 1)))
    fails = []
    if abs(lo) > 0.5 or abs(hi - 10) > 0.5:
        fails.append(f"plateau means {lo:.3f}, {hi:.3f}")
    if pred.min() < yy.min() or pred.max() > yy.max():
        fails.append("prediction outside training range")
    if wsum > 1e-12:
        fails.append(f"weights sum deviation {wsum:.2e}")
    criterion(5, fails, f"plateaus {lo:.3f}/{hi:.3f}, 1e4 queries in range, "
                        f"weight-sum dev {wsum:.1e}")


# 6 ------------------------------------------------------------------------

def test_c06_horseshoe_calibration(criterion):
    g = np.random.default_rng(6)
    m = 200
    n = np.full(m, 25.0)
    X = g.normal(size=(m, 1))
    y = 1.0 + 5 * X[:, 0] + 0.1 * g.normal(size=m) / np.sqrt(n)
    s = horseshoe.hs_fit(X, y, n, HsConfig(2, 3000, 1500, seed=1))
    Z = np.column_stack([np.ones(m), X])
    coef = linear.wls(Z, y, n)[0]
    strong_dev = abs(float(s.beta[:, 0].mean()) - coef[1])
    rhat = s.max_rhat()

    m2, p2 = 80, 3
    n2 = g.integers(5, 30, size=m2).astype(float)
    X2 = g.normal(size=(m2, p2))
    y2 = 2 + X2 @ [1.0, -0.5, 0.2] + g.normal(size=m2) / np.sqrt(n2)
    s2 = horseshoe.hs_fit(X2, y2, n2, HsConfig(2, 6000, 1000, seed=3, fixed_scales=1e6))
    coef2 = linear.wls(np.column_stack([np.ones(m2), X2]), y2, n2)[0][1:]
    mcse = s2.beta.std(axis=0) / np.sqrt(np.minimum(s2.ess["beta"], s2.L))
    z = np.abs(s2.beta.mean(axis=0) - coef2) / mcse
    fails = []
    if strong_dev > 0.2:
        fails.append(f"strong signal off WLS by {strong_dev:.3f}")
    if not rhat < 1.05:
        fails.append(f"R-hat {rhat:.3f}")
    if np.any(z > 3):
        fails.append(f"wide prior off WLS by {z.max():.2f} MC s.e.")
    criterion(6, fails, f"strong-signal dev {strong_dev:.4f}, R-hat {rhat:.3f}, "
                        f"wide-prior max {z.max():.2f} MC s.e.")


# 7, 9 ---------------------------------------------------------------------

BASE = dict(M=200, replicates=20, forest_importance_perms=0)


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    out = {}
    for pop in "AB":
        cfg = harness.load_config(None, "simulate", population=pop, design="Stratified",
                                  within_fixed=15, anonymised=False, **BASE)
        out[pop] = harness.cmd_simulate(cfg, tmp_path_factory.mktemp(pop))["report"]
    cfg = harness.load_config(None, "simulate", population="C", design="TwoStage",
                              area_fraction=0.5, within_fixed=15, forest_mtry=70,
                              forest_nodesize=9, **BASE)
    out["C"] = harness.cmd_simulate(cfg, tmp_path_factory.mktemp("C"))["report"]
    return out


def _pooled(rows, key):
    return sum(r[key] * r["pairs"] for r in rows) / sum(r["pairs"] for r in rows)


def test_c07_method_comparison(comparison, criterion):
    fails, notes = [], []
    for pop in "AB":
        for r in _pick(comparison[pop], anonymised=0):
            b = 100 * r["abs_bias"]
            if b > 0.8:
                fails.append(f"{pop} {r['method']} |bias|x100 {b:.2f}")
            if abs(r["cov95"] - 0.95) > 0.05:
                fails.append(f"{pop} {r['method']} cov95 {r['cov95']:.3f}")
    known = _pick(comparison["C"], anonymised=0)
    mse = {m: _pooled(_pick(known, method=m), "mse") for m in harness.METHODS}
    cov = {m: _pooled(_pick(known, method=m), "cov95") for m in harness.METHODS}
    for m in ("lasso", "forward", "horseshoe"):
        if not mse["forest"] < mse[m]:
            fails.append(f"C forest MSE {mse['forest']:.4f} not below {m} {mse[m]:.4f}")
    for m, c in cov.items():
        if not c < 0.90:
            fails.append(f"C {m} cov95 {c:.3f}")
    notes.append("C MSE " + ", ".join(f"{m} {v:.3f}" for m, v in mse.items()))
    notes.append("C cov95 " + ", ".join(f"{m} {v:.3f}" for m, v in cov.items()))
    criterion(7, fails, "; ".join(notes))


def test_c09_anonymised_parity(comparison, criterion):
    rep = comparison["C"]
    fails, notes = [], []
    for m in harness.METHODS:
        anon = _pick(rep, method=m, anonymised=1, group="sampled")[0]["mse"]
        ns = _pick(rep, method=m, anonymised=0, group="nonsampled")[0]["mse"]
        notes.append(f"{m} {anon:.3f}/{ns:.3f}")
        if anon > 1.5 * ns:
            fails.append(f"{m} anonymised sampled MSE {anon:.4f} > 1.5 x {ns:.4f}")
    criterion(9, fails, "anonymised sampled / non-sampled MSE: " + ", ".join(notes))


# 8 ------------------------------------------------------------------------

def test_c08_proper_scores(criterion):
    fails = []
    for args, want in (((0, 1, 0.05, 0.5), 1.0), ((0, 1, 0.2, 1.5), 6.0), ((-1, 1, 0.5, -2), 6.0)):
        got = float(metrics.interval_score(*args))
        if abs(got - want) > 1e-12:
            fails.append(f"interval_score{args} = {got}")
    g = np.random.default_rng(8)
    n = 10_000
    lo = g.normal(size=n) * 10
    hi = lo + g.exponential(size=n)
    alpha = g.uniform(0.01, 0.99, size=n)
    truth = g.normal(size=n) * 10
    k = g.normal(size=n) * 100
    dev = float(np.max(np.abs(metrics.interval_score(lo, hi, alpha, truth)
                              - metrics.interval_score(lo + k, hi + k, alpha, truth + k))))
    if dev > 1e-9:
        fails.append(f"translation deviation {dev:.2e}")
    criterion(8, fails, f"examples exact; translation max dev {dev:.1e} over 1e4 cases")


# 10 -----------------------------------------------------------------------

def _same(a, b, names):
    return [n for n in names if not filecmp.cmp(a / n, b / n, shallow=False)]


def test_c10_determinism(tmp_path, criterion):
    small = dict(M=80, N_min=50, N_max=100, replicates=3, forest_B=100,
                 forest_importance_perms=20, hs_iterations=600, hs_burn_in=300, seed=10)
    fails = []
    runs = {}
    for w in (1, 2):
        d = tmp_path / f"w{w}"
        harness.cmd_simulate(harness.load_config(None, "simulate", population="B",
                                                 workers=w, **small), d / "sim")
        harness.cmd_sc_compare(harness.load_config(None, "sc-compare", M=80, N_max=100,
                                                   replicates=4, workers=w, seed=10),
                               d / "sc")
        harness.cmd_gen_pop(harness.load_config(None, "gen-pop", population="A", M=160,
                                                N_max=100, seed=10), d / "gen")
        files = dict(survey=str(d / "gen" / "survey.csv"), census=str(d / "gen" / "census.csv"),
                     seed=10, workers=w, hs_iterations=3000, hs_burn_in=1500, forest_B=100,
                     forest_importance_perms=20)
        harness.cmd_fit(harness.load_config(None, "fit", **files), d / "fit")
        harness.cmd_cv(harness.load_config(None, "cv", folds=4, **files), d / "cv")
        runs[w] = d
    a, b = runs[1], runs[2]
    fails += _same(a / "sim", b / "sim", ["metrics.csv", "selection.csv", "diagnostics.csv"])
    fails += _same(a / "sc", b / "sc", ["sc_compare.csv"])
    fails += _same(a / "gen", b / "gen", ["survey.csv", "census.csv", "truth.csv"])
    fails += _same(a / "fit", b / "fit", ["estimates.csv", "selected.csv", "lasso_cv.csv"])
    fails += _same(a / "cv", b / "cv", ["cv_report.csv", "cv_predictions.csv", "cv_ecdf.csv"])
    criterion(10, [f"{n} differs between 1 and 2 workers" for n in fails],
              "all CSVs of simulate, sc-compare, gen-pop, fit and cv byte-identical "
              "for 1 and 2 workers")


# 11 -----------------------------------------------------------------------

def test_c11_standin_shape_and_cv_layout(tmp_path, criterion):
    harness.cmd_gen_pop(harness.load_config(None, "gen-pop", population="survey"),
                        tmp_path / "data")
    files = dict(survey=str(tmp_path / "data" / "survey.csv"),
                 census=str(tmp_path / "data" / "census.csv"),
                 design_variable="urban", forest_importance_perms=0)
    res = harness.cmd_fit(harness.load_config(None, "fit", **files), tmp_path / "fit")
    fails = []
    ds = res["estimates"][0]
    for est in res["estimates"]:
        if len(est) != 5019:
            fails.append(f"{est.method} gave {len(est)} rows")
    lines = (tmp_path / "fit" / "estimates.csv").read_text().splitlines()
    if len(lines) != 1 + 4 * 5019:
        fails.append(f"estimates.csv has {len(lines) - 1} rows")
    sampled = int(np.sum(ds.f > 0))
    if sampled != 136:
        fails.append(f"{sampled} sampled areas")
    cv = harness.cmd_cv(harness.load_config(None, "cv", **files), tmp_path / "cv")
    header = (tmp_path / "cv" / "cv_report.csv").read_text().splitlines()[0].split(",")
    if tuple(header) != harness.CV_HEADER:
        fails.append(f"cv header {header}")
    if [r["method"] for r in cv["report"]] != list(harness.METHODS):
        fails.append("cv report rows")
    with pytest.raises(ValueError):
        harness.cmd_cv(harness.load_config(None, "cv", folds=137, **files), tmp_path / "bad")
    criterion(11, fails, "stand-in: 5019 rows x 4 methods, 136 sampled; "
                         "cv report method x (bias, MSE, 3 coverages, 3 scores); k=137 rejected")
