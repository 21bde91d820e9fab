"""Scenario runner behind the command-line interface.

Each command reads a :class:`ScenarioConfig`, runs its replicates on a
bounded worker pool and writes CSV reports plus ``manifest.json`` into the
output directory.

Seeding
-------
Replicate ``r`` uses ``seed_r = rng.derive_seed(seed, REPLICATE, r)``
(``SeedSequence`` hashing of the master seed and the key). The population is
drawn from ``rng.derive_seed(seed, POPULATION)`` unless ``population_seed``
is set. Replicates only depend on their own seed and results are reduced in
replicate order, so reports are byte-identical for any worker count.

Config file
-----------
A flat TOML file whose keys are the fields of :class:`ScenarioConfig`, e.g.::

    population = "A"
    M = 200
    design = "Stratified"
    within_fixed = 15
    replicates = 20
    methods = ["forest", "lasso"]
    forest_mtry = 10

Command-line flags override file values.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import platform
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import areal, conformal, designs, estimation, forest, horseshoe, metrics, popgen, rng
from .estimation import METHODS, MethodConfig

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

COMMANDS = ("sc-compare", "simulate", "fit", "cv", "gen-pop")
SC_PREDICTORS = ("linear_correct", "linear_omit", "forest", "lasso")
SC_COLUMNS = {"linear_correct": (0, 1, 2, 3, 4, 5), "linear_omit": (0, 1, 2)}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a command needs; see the module docstring for the file form."""

    # population
    population: str = "S31"
    M: int = 200
    N_min: int = 50
    N_max: int = 500
    population_seed: int | None = None
    # design (simulate, gen-pop)
    design: str = "TwoStage"
    area_fraction: float = 0.5
    within_fraction: float | None = None
    within_fixed: int | None = 15
    scenarios: tuple = (1, 2, 3, 4, 5)          # sc-compare designs
    # run
    replicates: int = 20
    methods: tuple = METHODS
    levels: tuple = estimation.DEFAULT_LEVELS
    anonymised: bool = True
    seed: int = 0
    workers: int = 1
    # method hyperparameters
    forest_B: int = 500
    forest_mtry: int = 10
    forest_nodesize: int = 5
    forest_importance_perms: int = 100
    lasso_grid: int = 100
    lasso_folds: int = 10
    hs_chains: int = 2
    hs_iterations: int = 5000
    hs_burn_in: int = 2500
    hs_thin: int = 1
    rhat_max: float = 1.1
    forced: int | None = None
    # survey data (fit, cv)
    survey: str | None = None
    census: str | None = None
    design_variable: str | None = None
    folds: int = 8

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.levels or any(not 0.0 < l < 1.0 for l in self.levels):
            raise ValueError("levels must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not set(self.scenarios) <= set(designs.SC_SCENARIOS):
            raise ValueError(f"scenarios must be among {sorted(designs.SC_SCENARIOS)}")
        if not self.methods:
            raise ValueError("no methods given")

    # -- builders -----------------------------------------------------------

    def population_spec(self) -> popgen.PopulationSpec:
        ps = (self.population_seed if self.population_seed is not None
              else rng.derive_seed(self.seed, rng.POPULATION))
        return popgen.PopulationSpec(self.population, self.M, self.N_min, self.N_max, ps)

    def sampling_design(self) -> designs.Design:
        af = 1.0 if self.design == "Stratified" else self.area_fraction
        return designs.Design(self.design, af, self.within_fraction, self.within_fixed)

    def method_config(self, **over) -> MethodConfig:
        keys = {f.name for f in fields(MethodConfig)}
        base = {k: getattr(self, k) for k in keys if hasattr(self, k)}
        base.update(over)
        return MethodConfig(**base)

    def replicate_seed(self, r: int, *extra: int) -> int:
        return rng.derive_seed(self.seed, rng.REPLICATE, r, *extra)

    def echo(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


# Desk-scale defaults that differ between commands.
COMMAND_DEFAULTS = {
    "sc-compare": dict(population="S31", M=200, N_max=200, replicates=100,
                       methods=SC_PREDICTORS, forest_mtry=2, forest_nodesize=5),
    "simulate": dict(population="A", replicates=20),
    "fit": dict(anonymised=False),
    "cv": dict(),
    "gen-pop": dict(replicates=1),
}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(name: str, value):
    """Bring a TOML or CLI value to the field's type (lists become tuples)."""
    if isinstance(value, list):
        value = tuple(value)
    if name == "levels":
        value = tuple(sorted(float(v) for v in value))
    elif name == "scenarios":
        value = tuple(int(v) for v in value)
    elif name == "methods":
        value = tuple(str(v) for v in value)
    return value


def load_config(path=None, command: str = "simulate", **overrides) -> ScenarioConfig:
    """Command defaults, then the TOML file at ``path``, then ``overrides``
    (``None`` overrides are ignored)."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    values = dict(COMMAND_DEFAULTS[command])
    known = {f.name for f in fields(ScenarioConfig)}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    bad = sorted(set(values) - known)
    if bad:
        raise ValueError(f"unknown config keys {bad}")
    cfg = ScenarioConfig(**{k: _coerce(k, v) for k, v in values.items()})
    allowed = SC_PREDICTORS if command == "sc-compare" else METHODS
    extra = [m for m in cfg.methods if m not in allowed]
    if extra:
        raise ValueError(f"methods {extra} not available for {command}; choose from {allowed}")
    return cfg


# --------------------------------------------------------------------------
# execution helpers


def run_pool(func, tasks, workers: int) -> list:
    """``[func(*t) for t in tasks]`` on up to ``workers`` processes, in order."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=min(workers, len(tasks)), backend="loky")(
        delayed(func)(*t) for t in tasks)


@functools.lru_cache(maxsize=4)
def _population(spec: popgen.PopulationSpec) -> popgen.FinitePopulation:
    return popgen.generate(spec)


def _light(est: estimation.AreaEstimates, **info) -> estimation.AreaEstimates:
    """Drop fitted models so results pickle cheaply between processes."""
    return dataclasses.replace(est, info=info)


def _versions() -> dict:
    import numba
    import scipy
    from importlib import metadata
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "artifact": own}


def write_manifest(out_dir: Path, command: str, cfg: ScenarioConfig,
                   outputs: list[str], started: float, extra: dict | None = None) -> Path:
    manifest = {"command": command, "seed": cfg.seed, "config": cfg.echo(),
                "versions": _versions(), "argv": sys.argv,
                "wall_time_seconds": round(time.time() - started, 3),
                "outputs": sorted(outputs)}
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# --------------------------------------------------------------------------
# sc-compare


def _sc_factory(name: str, cfg: ScenarioConfig, seed: int):
    if name in SC_COLUMNS:
        return estimation.fixed_linear_factory(SC_COLUMNS[name])
    if name == "forest":
        return estimation.forest_factory(forest.ForestHyper(
            cfg.forest_B, cfg.forest_mtry, cfg.forest_nodesize,
            rng.derive_seed(seed, rng.FOREST)))
    return estimation.lasso_factory(cfg.lasso_grid, cfg.lasso_folds,
                                    rng.derive_seed(seed, rng.LASSO_CV))


def sc_replicate(cfg: ScenarioConfig, scenario: int, r: int):
    """One sample under SC design ``scenario``: every predictor with the
    original and the scaled split-conformal intervals."""
    pop = _population(cfg.population_spec())
    seed = cfg.replicate_seed(r, scenario)
    ds = designs.draw(pop, designs.SC_SCENARIOS[scenario], seed)
    _, Xs, ys, ns = ds.fitting_data()
    out = []
    for k, name in enumerate(cfg.methods):
        mseed = rng.derive_seed(seed, k)
        cal = conformal.calibrate(Xs, ys, ns, _sc_factory(name, cfg, mseed), cfg.levels,
                                  True, rng.derive_seed(mseed, rng.SPLIT),
                                  area_ids=ds.fitting_ids())
        for scaled in (False, True):
            c = cal if scaled else conformal.recalibrate(cal, False)
            yhat, iv = estimation.conformal_predictions(c, ds, cfg.levels)
            point, intervals = estimation.assemble(ds.f, ds.ybar_s, yhat, iv)
            label = f"{name}|{'scaled' if scaled else 'original'}"
            out.append(estimation.AreaEstimates(ds.area_id, label, False, ds.f, point,
                                                intervals, yhat, seed))
    return out, ds.n > 0, ds.n == ds.N


def cmd_sc_compare(cfg: ScenarioConfig, out_dir) -> dict:
    """Coverage and width of original vs scaled split-conformal intervals.

    Writes ``sc_compare.csv`` with one row per (scenario, predictor, SC
    variant, sampled/non-sampled group). Fully enumerated areas are left out.
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.population != "S31":
        raise ValueError("sc-compare uses the six-covariate population S31")
    tasks = [(cfg, s, r) for s in cfg.scenarios for r in range(cfg.replicates)]
    results = run_pool(sc_replicate, tasks, cfg.workers)
    pop = _population(cfg.population_spec())
    acc = metrics.MetricsAccumulator(cfg.levels)
    for (_, s, r), (ests, mask, full) in zip(tasks, results):
        for est in ests:
            acc.add(str(s), est, pop.true_area_means, mask, r, skip=full)
    rows = []
    for row in acc.report():
        pred, variant = row["method"].split("|")
        s = int(row["scenario"])
        front = {"scenario": s, "design": designs.SC_SCENARIOS[s].label(),
                 "predictor": pred, "sc": variant, "group": row["group"]}
        rest = {k: v for k, v in row.items()
                if k not in ("scenario", "method", "group", "anonymised")}
        rows.append({**front, **rest})
    order = {p: i for i, p in enumerate(cfg.methods)}
    rows.sort(key=lambda d: (d["scenario"], order[d["predictor"]], d["sc"], d["group"]))
    path = out_dir / "sc_compare.csv"
    metrics.write_report_csv(path, rows)
    write_manifest(out_dir, "sc-compare", cfg, [path.name], started)
    return {"report": rows, "paths": [path]}


# --------------------------------------------------------------------------
# simulate


def simulate_replicate(cfg: ScenarioConfig, r: int):
    """All configured methods on one sample; known and (optionally)
    anonymised estimates share each fit."""
    pop = _population(cfg.population_spec())
    seed = cfg.replicate_seed(r)
    ds = designs.draw(pop, cfg.sampling_design(), seed)
    mc = cfg.method_config()
    ests, diag = [], []
    for method in cfg.methods:
        fm = estimation.FittedMethod(ds, method, mc, cfg.levels, seed)
        rhat = fm.info.get("max_rhat", float("nan"))
        diag.append((r, method, len(fm.selected) if fm.selected is not None else -1, rhat))
        ests.append(_light(fm.estimate(False)))
        if cfg.anonymised:
            ests.append(_light(fm.estimate(True)))
    return ests, ds.n > 0, diag


def cmd_simulate(cfg: ScenarioConfig, out_dir) -> dict:
    """Method comparison on a synthetic population.

    Writes ``metrics.csv`` (bias, MSE, coverage, interval score and width
    per method, sampled/non-sampled group and anonymisation),
    ``selection.csv`` (covariate selection frequencies) and
    ``diagnostics.csv`` (per replicate and method: selection size and the
    horseshoe's largest split-R-hat).
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pop = _population(cfg.population_spec())
    label = f"{cfg.population}/{cfg.sampling_design().label()}"
    tasks = [(cfg, r) for r in range(cfg.replicates)]
    results = run_pool(simulate_replicate, tasks, cfg.workers)
    acc = metrics.MetricsAccumulator(cfg.levels)
    chosen: dict[str, list] = {m: [] for m in cfg.methods}
    diag_rows = []
    for r, (ests, mask, diag) in enumerate(results):
        for est in ests:
            acc.add(label, est, pop.true_area_means, mask, r)
            if not est.anonymised and est.selected is not None:
                chosen[est.method].append(est.selected)
        diag_rows.extend(diag)
    report = acc.report()
    paths = [out_dir / "metrics.csv", out_dir / "selection.csv", out_dir / "diagnostics.csv"]
    metrics.write_report_csv(paths[0], report)
    sel_rows = []
    for m in cfg.methods:
        if chosen[m]:
            freq = metrics.selection_frequency(chosen[m], pop.p)
            sel_rows += [(label, m, pop.covariate_names[j], float(freq[j]))
                         for j in range(pop.p)]
    _write_rows(paths[1], ("scenario", "method", "covariate", "frequency"), sel_rows)
    _write_rows(paths[2], ("replicate", "method", "n_selected", "max_rhat"), diag_rows)
    rh = [d[3] for d in diag_rows if d[1] == "horseshoe"]
    bad = int(sum(v > cfg.rhat_max for v in rh))
    write_manifest(out_dir, "simulate", cfg, [p.name for p in paths], started,
                   {"horseshoe_rhat_exceeded": bad})
    return {"report": report, "paths": paths, "selection": sel_rows,
            "rhat_exceeded": bad}


# --------------------------------------------------------------------------
# fit / cv on survey files


def _load_survey(cfg: ScenarioConfig) -> areal.ArealDataset:
    if not cfg.survey or not cfg.census:
        raise ValueError("fit and cv need both survey and census CSV paths")
    return areal.load_dataset(cfg.survey, cfg.census, cfg.design_variable)


def _check_rhat(fm: estimation.FittedMethod, cfg: ScenarioConfig) -> None:
    rh = fm.info.get("max_rhat")
    if rh is not None and not rh <= cfg.rhat_max:
        raise horseshoe.SamplerError(
            f"horseshoe did not converge: max split-R-hat {rh:.3f} > {cfg.rhat_max}; "
            "increase hs_iterations or raise rhat_max")


def cmd_fit(cfg: ScenarioConfig, out_dir) -> dict:
    """Estimates for every census area from each method.

    Writes ``estimates.csv`` and ``selected.csv``; with the LASSO also
    ``lasso_cv.csv``. With ``anonymised`` the estimates treat every area as
    non-sampled.
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = _load_survey(cfg)
    mc = cfg.method_config()
    results, sel_rows, cv_rows = [], [], []
    for k, method in enumerate(cfg.methods):
        fm = estimation.FittedMethod(ds, method, mc, cfg.levels, cfg.seed)
        _check_rhat(fm, cfg)
        results.append(fm.estimate(cfg.anonymised))
        for j in fm.selected or ():
            sel_rows.append((method, j, ds.covariate_names[j]))
        if method == "lasso":
            model = fm.info["calibration"].trained
            cv_rows += [(float(l), float(e)) for l, e in model.cv_curve]
    paths = [out_dir / "estimates.csv", out_dir / "selected.csv"]
    estimation.write_estimates_csv(paths[0], results, cfg.levels)
    _write_rows(paths[1], ("method", "index", "covariate"), sel_rows)
    if cv_rows:
        paths.append(out_dir / "lasso_cv.csv")
        _write_rows(paths[-1], ("lambda", "cv_mse"), cv_rows)
    write_manifest(out_dir, "fit", cfg, [p.name for p in paths], started)
    return {"estimates": results, "paths": paths}


def cv_fold(cfg: ScenarioConfig, ds: areal.ArealDataset, fold: np.ndarray, f: int):
    train_idx = np.setdiff1d(np.flatnonzero(ds.n > 0), fold)
    train = ds.subset(train_idx)
    target = areal.held_out_view(ds, fold)
    mc = cfg.method_config()
    out = []
    for method in cfg.methods:
        fm = estimation.FittedMethod(train, method, mc, cfg.levels,
                                     rng.derive_seed(cfg.seed, rng.FOLDS, f))
        _check_rhat(fm, cfg)
        yhat, iv = fm.predict(target)
        out.append(estimation.AreaEstimates(target.area_id, method, False,
                                            np.zeros(target.M), yhat, iv, yhat,
                                            cfg.seed, fm.selected))
    return out, ds.ybar_s[fold]


CV_HEADER = ("method", "abs_bias", "mse", "cov50", "cov80", "cov95",
             "score50", "score80", "score95")


def cmd_cv(cfg: ScenarioConfig, out_dir) -> dict:
    """Stratum-balanced k-fold cross-validation over the sampled areas.

    Each fold's areas are predicted from a fit on the others and compared
    with their observed sampled means. Writes ``cv_report.csv`` (one row per
    method: absolute bias, MSE, coverages and interval scores per level),
    ``cv_predictions.csv`` and ``cv_ecdf.csv`` (ECDFs of the held-out point
    predictions and of the observed means).
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = _load_survey(cfg)
    folds = designs.kfold_split(ds, cfg.folds, stratum_balance=True,
                                seed=rng.derive_seed(cfg.seed, rng.FOLDS))
    tasks = [(cfg, ds, fold, f) for f, fold in enumerate(folds)]
    results = run_pool(cv_fold, tasks, cfg.workers)
    acc = metrics.MetricsAccumulator(cfg.levels)
    pred_rows = []
    preds: dict[str, list] = {m: [] for m in cfg.methods}
    observed = []
    for f, (ests, truth) in enumerate(results):
        observed.append(truth)
        for est in ests:
            acc.add("cv", est, truth, np.zeros(len(truth), dtype=bool), f)
            preds[est.method].append(est.point)
            for i in range(len(est)):
                row = [f, est.area_id[i], est.method, float(truth[i]), float(est.point[i])]
                for lev in cfg.levels:
                    lo, hi = est.intervals[lev]
                    row += [float(lo[i]), float(hi[i])]
                pred_rows.append(row)
    tags = [round(l * 100) for l in cfg.levels]
    report = []
    for m in cfg.methods:
        row = metrics.find(acc.report(), method=m)
        out = {"method": m, "abs_bias": row["abs_bias"], "mse": row["mse"]}
        out.update({f"cov{t}": row[f"cov{t}"] for t in tags})
        out.update({f"score{t}": row[f"score{t}"] for t in tags})
        report.append(out)
    paths = [out_dir / "cv_report.csv", out_dir / "cv_predictions.csv",
             out_dir / "cv_ecdf.csv"]
    metrics.write_report_csv(paths[0], report)
    _write_rows(paths[1], ("fold", "area_id", "method", "observed", "point",
                           *[f"{s}{t}" for t in tags for s in ("lo", "hi")]), pred_rows)
    series = {"observed": np.concatenate(observed)}
    series.update({m: np.concatenate(v) for m, v in preds.items()})
    metrics.write_ecdf_csv(paths[2], series)
    write_manifest(out_dir, "cv", cfg, [p.name for p in paths], started)
    return {"report": report, "paths": paths}


# --------------------------------------------------------------------------
# gen-pop


def cmd_gen_pop(cfg: ScenarioConfig, out_dir) -> dict:
    """Write a sample and census as CSV files ready for ``fit`` and ``cv``.

    ``population = "survey"`` writes the survey/census stand-in (5019 areas,
    136 sampled, 174 covariates). Otherwise the configured population is
    sampled once under the configured design and ``truth.csv`` holds the
    true area means.
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    survey, census = out_dir / "survey.csv", out_dir / "census.csv"
    if cfg.population == "survey":
        popgen.survey_standin(rng.derive_seed(cfg.seed, rng.POPULATION)).to_csv(survey, census)
        names = [survey.name, census.name]
    else:
        pop = _population(cfg.population_spec())
        units = designs.draw_units(pop, cfg.sampling_design(), cfg.replicate_seed(0))
        unit_area = np.repeat(np.arange(pop.M), pop.sizes)[units]
        areal.write_survey_csv(survey, pop.area_id[unit_area], pop.stratum[unit_area],
                               pop.y[units], pop.X[units], pop.covariate_names)
        areal.write_census_csv(census, pop.census())
        truth = out_dir / "truth.csv"
        _write_rows(truth, ("area_id", "true_mean"),
                    [(a, float(t)) for a, t in zip(pop.area_id, pop.true_area_means)])
        names = [survey.name, census.name, truth.name]
    write_manifest(out_dir, "gen-pop", cfg, names, started)
    return {"paths": [out_dir / n for n in names]}


RUNNERS = {"sc-compare": cmd_sc_compare, "simulate": cmd_simulate, "fit": cmd_fit,
           "cv": cmd_cv, "gen-pop": cmd_gen_pop}
