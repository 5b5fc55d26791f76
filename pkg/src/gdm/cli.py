"""Command-line front end: ``gdm <protocol> [options]``.

Every run writes its artifacts into one output directory (``--out``, else
``$GDM_OUTPUT_DIR``, else ``./gdm_out``) and embeds the resolved
:class:`RunConfig` in its JSON report.  Per-feature CSV tables carry no
timestamps, so identical configs give byte-identical tables; JSON reports
differ only in the ``generated_at`` key.

Exit codes: 0 success, 1 computation error, 2 invalid input or configuration.
Failures print one JSON line ``{"error": ..., "message": ..., "exit_code": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from gdm import __version__
from gdm.baselines import fit_ridge, haufe_operator, haufe_transform, ridge_operator
from gdm.core import (
    Cohort,
    apply_residualizer,
    build_covariate_basis,
    fit_feature_scaler,
    fit_residualizer,
    standardize_labels,
)
from gdm.errors import GdmError, ValidationError
from gdm.harness import (
    LAMBDA_GRID,
    METHODS,
    ScenarioSpec,
    cross_validate,
    multi_site_protocol,
    repeated_holdout,
)
from gdm.inference import (
    analytic_pvalues,
    bh_fdr,
    build_q_matrix,
    linear_permutation_pvalues,
    null_from_operator,
    permutation_pvalues,
    pvalue_agreement,
)
from gdm.io import load_cohort, load_split, read_json, save_cohort, write_json, write_table
from gdm.solver import GdmHyperParams, fit
from gdm.synth import STANDARD_CONFOUNDED, STANDARD_MULTISITE, GeneratorSpec, generate

PROTOCOLS = ("fit", "cv", "scenario", "multisite", "simulate", "permcheck", "report")
DATA_PROTOCOLS = ("fit", "cv", "scenario", "multisite", "permcheck")
OUTPUT_ENV = "GDM_OUTPUT_DIR"
PRESETS = {"confounded": STANDARD_CONFOUNDED, "multisite": STANDARD_MULTISITE, "default": GeneratorSpec()}
TIMESTAMP_KEY = "generated_at"


@dataclass(frozen=True)
class RunConfig:
    protocol: str
    out_dir: str
    data: Optional[str] = None
    features: Optional[str] = None
    labels: Optional[str] = None
    method: str = "gdm"
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    grid: tuple = LAMBDA_GRID
    folds: int = 5
    inference: str = "analytic"
    n_perm: int = 1000
    perm_mode: str = "full_refit"
    fdr_q: float = 0.05
    seed: int = 0
    threads: int = 1
    route: str = "auto"
    zscore: bool = False
    allow_pinv: bool = False
    decision_space: str = "standardized"
    case: int = 4
    repeats: int = 100
    resamples: int = 100
    train_fraction: Optional[float] = None
    budgets: tuple = (10, 100, 1000, 10000)
    methods: tuple = METHODS
    generator: dict = field(default_factory=dict)
    reports: tuple = ()

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"unknown protocol {self.protocol!r}")
        if not 0.0 < self.fdr_q < 1.0:
            raise ValidationError(f"fdr_q out of range: {self.fdr_q} (must lie in (0, 1))")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValidationError(f"unknown method {bad[0]!r}" if bad else "no methods given")
        if self.inference not in ("analytic", "permutation"):
            raise ValidationError(f"unknown inference mode {self.inference!r}")
        if self.perm_mode not in ("full_refit", "fixed_Q"):
            raise ValidationError(f"unknown permutation mode {self.perm_mode!r}")
        if self.route not in ("auto", "primal", "dual"):
            raise ValidationError(f"unknown solver route {self.route!r}")
        if self.decision_space not in ("standardized", "code"):
            raise ValidationError(f"unknown decision space {self.decision_space!r}")
        for name in ("n_perm", "threads", "repeats", "resamples"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.folds < 2:
            raise ValidationError("folds must be >= 2")
        if not self.grid or min(self.grid) <= 0:
            raise ValidationError("lambda grid must be non-empty and positive")
        if not self.budgets or min(self.budgets) < 1:
            raise ValidationError("permutation budgets must be >= 1")
        if self.train_fraction is not None and not 0 < self.train_fraction < 1:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.lambda2 is not None and self.lambda1 is None:
            raise ValidationError("lambda2 given without lambda1")
        if self.protocol in DATA_PROTOCOLS:
            split = self.features is not None or self.labels is not None
            if split and (self.features is None or self.labels is None):
                raise ValidationError("--features and --labels must be given together")
            if split == (self.data is not None):
                raise ValidationError("give exactly one of --data or --features/--labels")
            for p in (self.data, self.features, self.labels):
                if p is not None and not Path(p).is_file():
                    raise ValidationError(f"no such file: {p}")
        if self.zscore and self.protocol in ("scenario", "multisite"):
            raise ValidationError("--zscore is only supported for fit, cv and permcheck")
        if self.protocol == "report":
            if not self.reports:
                raise ValidationError("report needs at least one JSON report path")
            for p in self.reports:
                if not Path(p).is_file():
                    raise ValidationError(f"no such file: {p}")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# shared helpers


def _now() -> str:
    return _dt.datetime.now(tz=_dt.timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


def _envelope(cfg: RunConfig, results: dict) -> dict:
    return {
        "tool": "gdm",
        "version": __version__,
        "protocol": cfg.protocol,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        TIMESTAMP_KEY: _now(),
        "results": results,
    }


def _load(cfg: RunConfig) -> Cohort:
    if cfg.data is not None:
        cohort = load_cohort(cfg.data)
    else:
        cohort = load_split(cfg.features, cfg.labels)
    if cfg.zscore:
        scaler = fit_feature_scaler(cohort.features)
        cohort = Cohort(features=scaler.apply(cohort.features), labels_raw=cohort.labels_raw,
                        covariates_raw=cohort.covariates_raw, covariate_names=cohort.covariate_names,
                        feature_names=cohort.feature_names, subject_ids=cohort.subject_ids,
                        site=cohort.site)
    return cohort


def _grids(cfg: RunConfig) -> dict:
    g = sorted(cfg.grid)
    return {
        "gdm": [GdmHyperParams(l1, l2) for l2 in g for l1 in g],
        "ridge": [GdmHyperParams(l1, 0.0) for l1 in g],
    }


def _hyper(cfg: RunConfig, cohort: Cohort, method: str):
    """Fixed hyperparameters from the config, else inner CV on the full cohort."""
    if cfg.lambda1 is not None:
        l2 = 0.0 if method != "gdm" else cfg.lambda2
        if l2 is None:
            raise ValidationError("gdm needs --lambda2 together with --lambda1")
        return GdmHyperParams(cfg.lambda1, l2), None
    key = "gdm" if method == "gdm" else "ridge"
    cv = cross_validate(cohort, key, grid=_grids(cfg)[key], folds=cfg.folds, seed=cfg.seed,
                        decision_space=cfg.decision_space)
    return cv.best, cv


def _design(cohort: Cohort, cfg: RunConfig):
    Y, lt = standardize_labels(cohort.labels_raw)
    C = build_covariate_basis(cohort.covariates_raw, names=cohort.covariate_names, n=cohort.n,
                              allow_pinv=cfg.allow_pinv)
    return Y, lt, C


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# protocols


def _statistic(cfg: RunConfig, cohort: Cohort, hyper: GdmHyperParams):
    """Fitted parameters, the tested statistic and its null sigma / p-values.

    Returns a dict with ``params`` (columns for params.csv), ``stat_name``,
    ``stat``, ``sigma``, ``p`` and sidecar tables.
    """
    X = cohort.features
    Y, lt, C = _design(cohort, cfg)
    out = {"label_transform": {"class_codes": lt.class_codes, "mean": lt.mean, "scale": lt.scale}}
    if cfg.method == "gdm":
        model = fit(X, Y, C, hyper, route=cfg.route, label_transform=lt)
        Q = build_q_matrix(X, Y, C, hyper).Q
        stat = model.J
        out.update(stat_name="J", params={"J": model.J}, route=model.solver_route,
                   W0=model.W0, A0=model.A0, covariate_columns=C.column_names)
        if cfg.inference == "permutation":
            p, _ = permutation_pvalues(X, Y, C, hyper, cfg.n_perm, seed=cfg.seed, mode=cfg.perm_mode,
                                       route=cfg.route, n_jobs=cfg.threads)
    else:
        res = fit_residualizer(X, C)
        Xr = apply_residualizer(res, X, C.matrix)
        rm = fit_ridge(Xr, Y, hyper.lambda1, residualizer=res, label_transform=lt)
        out.update(route=rm.route, covariate_columns=C.column_names, residualizer=res.coefficients)
        if cfg.method == "ridge":
            Q = ridge_operator(Xr, hyper.lambda1)
            stat = rm.w
            out.update(stat_name="w", params={"w": rm.w})
        else:
            pattern = haufe_transform(rm, Xr)
            Q = haufe_operator(Xr, hyper.lambda1)
            stat = Q @ Y
            out.update(stat_name="cov_w", params={"a": pattern.a, "a_unit": pattern.unit})
        if cfg.inference == "permutation":
            p, _ = linear_permutation_pvalues(Q, Y, cfg.n_perm, seed=cfg.seed)
    sigma = null_from_operator(Q).sigma
    if cfg.inference == "analytic":
        p = analytic_pvalues(stat, sigma)
    out.update(stat=stat, sigma=sigma, p=p)
    return out


def run_fit(cfg: RunConfig) -> dict:
    cohort = _load(cfg)
    hyper, cv = _hyper(cfg, cohort, cfg.method)
    st = _statistic(cfg, cohort, hyper)
    rejected = bh_fdr(st["p"], cfg.fdr_q)
    out = _out(cfg)
    names = cohort.feature_names
    pcols = list(st["params"])
    write_table(out / "params.csv", ["feature_name"] + pcols,
                [[f] + [st["params"][c][i] for c in pcols] for i, f in enumerate(names)])
    if cfg.method == "gdm":
        write_table(out / "params_W0.csv", ["column_name", "W0"],
                    list(zip(st["covariate_columns"], st["W0"])))
        write_table(out / "params_A0.csv", ["feature_name"] + [f"A0_{c}" for c in st["covariate_columns"]],
                    [[f] + list(st["A0"][i]) for i, f in enumerate(names)])
    else:
        write_table(out / "params_residualizer.csv", ["column_name"] + list(names),
                    [[c] + list(row) for c, row in zip(st["covariate_columns"], st["residualizer"])])
    write_table(out / "inference.csv", ["feature_name", st["stat_name"], "sigma", "p", "q_rejected"],
                [[f, st["stat"][i], st["sigma"][i], st["p"][i], bool(rejected[i])] for i, f in enumerate(names)])
    results = {
        "method": cfg.method,
        "hyperparams": asdict(hyper),
        "selected_by_cv": cv is not None,
        "cv_mean_accuracy": None if cv is None else _cv_table(cv),
        "solver_route": st["route"],
        "n": cohort.n,
        "d": cohort.d,
        "covariate_columns": list(st["covariate_columns"]),
        "label_transform": st["label_transform"],
        "inference": {"mode": cfg.inference, "statistic": st["stat_name"],
                      "n_permutations": cfg.n_perm if cfg.inference == "permutation" else None,
                      "fdr_q": cfg.fdr_q, "n_rejected": int(rejected.sum())},
        "feature_zscore": cfg.zscore,
        "files": ["params.csv", "inference.csv"],
    }
    write_json(out / "fit.json", _envelope(cfg, results))
    return results


def _cv_table(cv) -> list:
    return [{"lambda1": l1, "lambda2": l2, "mean_accuracy": a} for (l1, l2), a in sorted(cv.mean_accuracy.items())]


def run_cv(cfg: RunConfig) -> dict:
    cohort = _load(cfg)
    key = "gdm" if cfg.method == "gdm" else "ridge"
    cv = cross_validate(cohort, key, grid=_grids(cfg)[key], folds=cfg.folds, seed=cfg.seed,
                        decision_space=cfg.decision_space)
    out = _out(cfg)
    table = _cv_table(cv)
    write_table(out / "cv.csv", ["lambda1", "lambda2", "mean_accuracy"],
                [[r["lambda1"], r["lambda2"], r["mean_accuracy"]] for r in table])
    results = {"method": cfg.method, "best": asdict(cv.best), "folds": cv.folds, "grid": table,
               "selection_criterion": "mean validation accuracy"}
    write_json(out / "cv.json", _envelope(cfg, results))
    return results


def _summary_rows(reports: dict, prefix=()) -> list:
    return [list(prefix) + [m, r.mean_accuracy, float(np.std(r.per_repeat_accuracy)), r.mean_reproducibility]
            for m, r in reports.items()]


def run_scenario(cfg: RunConfig) -> dict:
    cohort = _load(cfg)
    spec = ScenarioSpec(case_id=cfg.case, seed=cfg.seed,
                        **({} if cfg.train_fraction is None else {"train_fraction": cfg.train_fraction}))
    reports = repeated_holdout(cohort, spec, methods=cfg.methods, repeats=cfg.repeats, seed=cfg.seed,
                               grids=_grids(cfg), folds=cfg.folds, n_jobs=cfg.threads,
                               decision_space=cfg.decision_space)
    out = _out(cfg)
    write_table(out / f"scenario_case{cfg.case}.csv",
                ["method", "mean_accuracy", "std_accuracy", "mean_reproducibility"], _summary_rows(reports))
    results = {m: r.to_dict() for m, r in reports.items()}
    write_json(out / f"scenario_case{cfg.case}.json", _envelope(cfg, results))
    return results


def run_multisite(cfg: RunConfig) -> dict:
    cohort = _load(cfg)
    tf = 0.9 if cfg.train_fraction is None else cfg.train_fraction
    grid = multi_site_protocol(cohort, methods=cfg.methods, resamples=cfg.resamples, train_fraction=tf,
                               seed=cfg.seed, grids=_grids(cfg), folds=cfg.folds, n_jobs=cfg.threads,
                               decision_space=cfg.decision_space)
    out = _out(cfg)
    rows = []
    for (s, t), reports in sorted(grid.items()):
        rows += _summary_rows(reports, (s, t))
    write_table(out / "multisite.csv",
                ["train_site", "test_site", "method", "mean_accuracy", "std_accuracy", "mean_reproducibility"], rows)
    results = {f"{s}->{t}": {m: r.to_dict() for m, r in reports.items()} for (s, t), reports in sorted(grid.items())}
    write_json(out / "multisite.json", _envelope(cfg, results))
    return results


def run_simulate(cfg: RunConfig) -> dict:
    spec = _generator_spec(cfg.generator, cfg.seed)
    cohort, truth = generate(spec)
    out = _out(cfg)
    save_cohort(cohort, out / "cohort.csv")
    write_table(out / "truth.csv", ["feature_name", "beta_true", "beta_age", "truly_associated"],
                [[f, truth.beta_true[i], truth.beta_age[i], bool(truth.truly_associated[i])]
                 for i, f in enumerate(cohort.feature_names)])
    results = {"generator": spec.to_dict(), "n": cohort.n, "d": cohort.d,
               "n_truly_associated": int(truth.truly_associated.sum()), "files": ["cohort.csv", "truth.csv"]}
    write_json(out / "simulate.json", _envelope(cfg, results))
    return results


def _generator_spec(gen: dict, seed: int) -> GeneratorSpec:
    gen = dict(gen)
    preset = gen.pop("preset", "default")
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset].to_dict()
    known = {f.name for f in fields(GeneratorSpec)}
    unknown = set(gen) - known
    if unknown:
        raise ValidationError(f"unknown generator field {sorted(unknown)[0]!r}")
    base.update({k: v for k, v in gen.items() if v is not None})
    if preset == "default":
        base["seed"] = seed  # named presets keep their own seed
    return GeneratorSpec(**base)


def run_permcheck(cfg: RunConfig) -> dict:
    if cfg.method != "gdm":
        raise ValidationError("permcheck compares the GDM analytic null; use --method gdm")
    cohort = _load(cfg)
    hyper, _ = _hyper(cfg, cohort, "gdm")
    X = cohort.features
    Y, _, C = _design(cohort, cfg)
    model = fit(X, Y, C, hyper, route=cfg.route)
    p_an = analytic_pvalues(model.J, null_from_operator(build_q_matrix(X, Y, C, hyper).Q))
    budgets = sorted(set(int(b) for b in cfg.budgets))
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(budgets))
    by_budget = {}
    for b, ss in zip(budgets, seeds):
        by_budget[b], _ = permutation_pvalues(X, Y, C, hyper, b, seed=ss, mode=cfg.perm_mode,
                                              route=cfg.route, n_jobs=cfg.threads)
    curve = pvalue_agreement(p_an, by_budget)
    out = _out(cfg)
    write_table(out / "agreement.csv", ["n_perm", "mean_abs_error"],
                list(zip(curve.budgets, curve.mean_abs_error)))
    write_table(out / "permcheck_pvalues.csv",
                ["feature_name", "J", "p_analytic"] + [f"p_perm_{b}" for b in budgets],
                [[f, model.J[i], p_an[i]] + [by_budget[b][i] for b in budgets]
                 for i, f in enumerate(cohort.feature_names)])
    results = {"hyperparams": asdict(hyper), "mode": cfg.perm_mode, "budgets": list(curve.budgets),
               "mean_abs_error": list(curve.mean_abs_error), "loglog_slope": curve.slope}
    write_json(out / "permcheck.json", _envelope(cfg, results))
    return results


def run_report(cfg: RunConfig) -> dict:
    """Print a plain-text summary of previously written JSON reports."""
    lines = []
    for path in cfg.reports:
        rep = read_json(path)
        proto = rep.get("protocol", "?")
        res = rep.get("results", {})
        lines.append(f"{path}: protocol={proto} version={rep.get('version', '?')} seed={rep.get('seed', '?')}")
        if proto == "scenario":
            for m, r in sorted(res.items()):
                s = r["summary"]
                lines.append(f"  {m:6s} accuracy {s['mean_accuracy']:.4f}  reproducibility {s['mean_reproducibility']:.4f}")
        elif proto == "multisite":
            for pair, by_m in sorted(res.items()):
                acc = "  ".join(f"{m}={r['summary']['mean_accuracy']:.4f}" for m, r in sorted(by_m.items()))
                lines.append(f"  {pair:16s} {acc}")
        elif proto == "permcheck":
            for b, e in zip(res["budgets"], res["mean_abs_error"]):
                lines.append(f"  n_perm={b:<6d} mean|dp|={e:.5f}")
            slope = res.get("loglog_slope")
            lines.append(f"  log-log slope {slope:.3f}" if slope is not None else "  log-log slope n/a")
        elif proto == "fit":
            inf = res["inference"]
            lines.append(f"  method={res['method']} lambda1={res['hyperparams']['lambda1']:g} "
                         f"lambda2={res['hyperparams']['lambda2']:g} rejected={inf['n_rejected']}/{res['d']} "
                         f"at q={inf['fdr_q']}")
        elif proto == "cv":
            lines.append(f"  best lambda1={res['best']['lambda1']:g} lambda2={res['best']['lambda2']:g}")
        elif proto == "simulate":
            lines.append(f"  n={res['n']} d={res['d']} truly associated={res['n_truly_associated']}")
    text = "\n".join(lines)
    print(text)
    return {"text": text}


RUNNERS = {"fit": run_fit, "cv": run_cv, "scenario": run_scenario, "multisite": run_multisite,
           "simulate": run_simulate, "permcheck": run_permcheck, "report": run_report}


def run(cfg: RunConfig) -> dict:
    return RUNNERS[cfg.protocol](cfg)


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _common(p: argparse.ArgumentParser, data=True):
    p.add_argument("--out", dest="out_dir", help=f"output directory (default ${OUTPUT_ENV} or ./gdm_out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker threads for repeats and permutations")
    if data:
        p.add_argument("--data", help="single CSV table with subject_id, label, [site], cov_*, features")
        p.add_argument("--features", help="features CSV (subject_id + feature columns)")
        p.add_argument("--labels", help="labels CSV (subject_id, label, [site], cov_*)")
        p.add_argument("--method", choices=METHODS, default="gdm")
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--grid", type=_floats, default=LAMBDA_GRID, help="comma-separated lambda grid")
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--route", choices=("auto", "primal", "dual"), default="auto")
        p.add_argument("--zscore", action="store_true", help="z-score features before fitting")
        p.add_argument("--allow-pinv", action="store_true", help="pseudo-inverse for rank-deficient covariates")
        p.add_argument("--decision-space", choices=("standardized", "code"), default="standardized")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdm", description="Generative-discriminative machine: fit, infer, evaluate.")
    parser.add_argument("--version", action="version", version=f"gdm {__version__}")
    sub = parser.add_subparsers(dest="protocol", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one model and write parameters and p-values")
    _common(p)
    p.add_argument("--inference", choices=("analytic", "permutation"), default="analytic")
    p.add_argument("--n-perm", type=int, default=1000)
    p.add_argument("--perm-mode", choices=("full_refit", "fixed_Q"), default="full_refit")
    p.add_argument("--fdr-q", type=float, default=0.05)

    p = sub.add_parser("cv", help="grid-search hyperparameters by stratified k-fold CV")
    _common(p)

    p = sub.add_parser("scenario", help="repeated hold-out under a confounding case (1-4)")
    _common(p)
    p.add_argument("--case", type=int, choices=(1, 2, 3, 4), default=4)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--methods", type=_names, default=METHODS)

    p = sub.add_parser("multisite", help="train on one site, test on the others")
    _common(p)
    p.add_argument("--resamples", type=int, default=100)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--methods", type=_names, default=METHODS)

    p = sub.add_parser("simulate", help="write a synthetic cohort and its ground truth")
    _common(p, data=False)
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    for f in fields(GeneratorSpec):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "n_per_site":
            p.add_argument(flag, type=_ints)
        elif f.name == "effect_pattern":
            p.add_argument(flag, choices=("sparse", "smooth"))
        elif isinstance(f.default, int) and not isinstance(f.default, bool):
            p.add_argument(flag, type=int)
        else:
            p.add_argument(flag, type=float)

    p = sub.add_parser("permcheck", help="analytic vs permutation p-value agreement")
    _common(p)
    p.add_argument("--budgets", type=_ints, default=(10, 100, 1000, 10000))
    p.add_argument("--perm-mode", choices=("full_refit", "fixed_Q"), default="full_refit")

    p = sub.add_parser("report", help="summarize JSON reports")
    p.add_argument("reports", nargs="+")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    args = vars(ns).copy()
    protocol = args.pop("protocol")
    out_dir = args.pop("out_dir", None) or os.environ.get(OUTPUT_ENV) or "gdm_out"
    known = {f.name for f in fields(RunConfig)}
    kw = {"protocol": protocol, "out_dir": out_dir}
    if protocol == "simulate":
        gen = {"preset": args.pop("preset")}
        for f in fields(GeneratorSpec):
            if f.name in args and f.name != "seed":
                gen[f.name] = args.pop(f.name)
        kw["generator"] = gen
    if protocol == "report":
        kw["reports"] = tuple(args.pop("reports"))
    for k, v in args.items():
        if k in known and v is not None:
            kw[k] = tuple(v) if isinstance(v, list) else v
    return RunConfig(**kw)


def _error_record(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sort_keys=True)


def main(argv=None) -> int:
    try:
        cfg = config_from_args(build_parser().parse_args(argv))
        run(cfg)
    except GdmError as exc:
        print(_error_record(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (OSError, argparse.ArgumentTypeError) as exc:
        print(_error_record(exc, 2), file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(_error_record(exc, 1), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
