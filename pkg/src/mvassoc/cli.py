"""Command-line interface: ``mvassoc analyze|importance|baselines|simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .association import estimate_association, estimate_weights
from .baselines import STATISTICS, pca_f_test, permutation_tests
from .data import Dataset, read_csv, standardize_outcomes
from .errors import (
    ConfigError, ConstantOutcome, DataError, DegenerateNull, InvalidHyperparameter, LearnerError,
    MvAssocError, OptimizerFailure, ReplicateFailures, SingularError, SingularFit,
)
from .importance import importance_from_estimates
from .kernels import BACKEND
from .learners import LearnerSpec
from .simulation import DESK_N, FULL_N, FULL_REPS, SCENARIOS, STUDIES, McSettings, run_monte_carlo
from .superlearner import plan_fits
from .weights import OmegaOptions

# exit codes per error class (argparse itself exits with 2 on usage errors)
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_REPLICATES = 6

BASELINE_CHOICES = STATISTICS + ("pca-f",)
DEFAULT_LIBRARY = ("intercept-only", "ols-main-terms", "forward-stepwise")


@dataclass
class AnalysisConfig:
    data: str = ""
    outcomes: list = field(default_factory=list)
    covariates: list | None = None
    library: list = field(default_factory=lambda: list(DEFAULT_LIBRARY))
    K: int = 10
    K_circ: int | None = None
    K_star: int | None = None
    reuse: bool = False
    alpha: float = 0.05
    seed: int = 0
    groups: dict = field(default_factory=dict)
    baselines: list = field(default_factory=list)
    permutations: int = 1000
    omega: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = p.read_text()
    if p.suffix.lower() in (".yml", ".yaml"):
        import yaml

        try:
            obj = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    else:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    # a report's embedded config can be fed back directly
    if "config" in obj and isinstance(obj["config"], dict) and "data" in obj["config"]:
        obj = obj["config"]
    return obj


def _parse_folds(text: str) -> tuple[int, int | None, int | None]:
    try:
        parts = [int(p) for p in str(text).split(",")]
    except ValueError:
        raise ConfigError(f"--folds expects K[,K_circ[,K_star]] integers, got {text!r}") from None
    if not 1 <= len(parts) <= 3:
        raise ConfigError(f"--folds expects one to three integers, got {text!r}")
    parts += [None] * (3 - len(parts))
    return parts[0], parts[1], parts[2]


def _split_names(text: str | None) -> list | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def build_config(args) -> AnalysisConfig:
    """Config file (if any) overlaid with explicit command-line flags."""
    raw = _load_config_file(args.config) if args.config else {}
    known = {f.name for f in fields(AnalysisConfig)} | {"folds"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys: {sorted(known)}")
    if "folds" in raw:
        f = raw.pop("folds")
        raw["K"], raw["K_circ"], raw["K_star"] = _parse_folds(",".join(map(str, f)) if isinstance(f, list) else f)
    cfg = AnalysisConfig(**raw)
    if args.data is not None:
        cfg.data = args.data
    if args.outcomes is not None:
        cfg.outcomes = _split_names(args.outcomes)
    if args.covariates is not None:
        cfg.covariates = _split_names(args.covariates)
    if args.folds is not None:
        cfg.K, cfg.K_circ, cfg.K_star = _parse_folds(args.folds)
    if args.reuse:
        cfg.reuse = True
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.seed is not None:
        cfg.seed = args.seed
    if args.permutations is not None:
        cfg.permutations = args.permutations
    if getattr(args, "baselines", None) is not None:
        cfg.baselines = _split_names(args.baselines)
    if getattr(args, "groups", None):
        cfg.groups = _parse_groups(args.groups)
    validate_config(cfg)
    return cfg


def _parse_groups(items) -> dict:
    """``label=col1,col2`` items to a label -> column list mapping."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--groups entries look like label=col1,col2 (got {item!r})")
        label, cols = item.split("=", 1)
        out[label.strip()] = _split_names(cols)
    return out


def validate_config(cfg: AnalysisConfig) -> None:
    if not cfg.data:
        raise ConfigError("no data file given (use --data or the 'data' config key)")
    if not cfg.outcomes:
        raise ConfigError("no outcome columns given (use --outcomes or the 'outcomes' config key)")
    if len(set(cfg.outcomes)) != len(cfg.outcomes):
        raise ConfigError("outcome columns listed more than once")
    if cfg.covariates is not None:
        both = sorted(set(cfg.outcomes) & set(cfg.covariates))
        if both:
            raise ConfigError(f"columns listed as both outcome and covariate: {both}")
        if not cfg.covariates:
            raise ConfigError("covariate list is empty")
    if not isinstance(cfg.library, list) or not cfg.library:
        raise ConfigError("'library' must be a nonempty list of learner entries")
    for i, entry in enumerate(cfg.library):
        try:
            LearnerSpec.coerce(entry)
        except InvalidHyperparameter as exc:
            raise ConfigError(f"library entry #{i + 1} ({entry!r}): {exc}") from None
    if not 0 < cfg.alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    bad = [b for b in cfg.baselines if b not in BASELINE_CHOICES]
    if bad:
        raise ConfigError(f"unknown baselines {bad}; valid: {', '.join(BASELINE_CHOICES)}")
    if cfg.baselines and any(b in STATISTICS for b in cfg.baselines) and cfg.permutations < 19:
        raise ConfigError("--permutations must be at least 19")
    if not isinstance(cfg.groups, dict):
        raise ConfigError("'groups' must map labels to lists of covariate names")
    unknown_opts = set(cfg.omega) - {"tol", "max_iter", "extra_starts"}
    if unknown_opts:
        raise ConfigError(f"unknown omega options {sorted(unknown_opts)}")


def load_data(cfg: AnalysisConfig) -> Dataset:
    if not Path(cfg.data).exists():
        raise DataError(f"data file {cfg.data} does not exist")
    return standardize_outcomes(read_csv(cfg.data, cfg.outcomes, cfg.covariates))


def resolve_group(data: Dataset, label: str, columns) -> list[int]:
    """Column indices for a group; missingness indicators travel with their column."""
    idx = []
    names = list(data.covariate_names)
    for c in columns:
        if c not in names:
            raise ConfigError(f"group {label!r}: covariate {c!r} not found; available: {names}")
        idx.append(names.index(c))
        ind = f"{c}_missing"
        if ind in names:
            idx.append(names.index(ind))
    return sorted(set(idx))


def _omega_opts(cfg: AnalysisConfig) -> OmegaOptions:
    return OmegaOptions(seed=cfg.seed, **cfg.omega)


def run_baselines(cfg: AnalysisConfig, data: Dataset, which=None) -> dict:
    which = list(which if which is not None else cfg.baselines)
    out = {}
    stats_ = [b for b in which if b in STATISTICS]
    if stats_:
        res = permutation_tests(data.covariates, data.outcomes, cfg.permutations,
                                np.random.SeedSequence([cfg.seed, 17]), tuple(stats_))
        for name, r in res.items():
            out[name] = {"statistic": r.observed, "p_value": r.p_value, "B": r.B,
                         "reject": r.p_value < cfg.alpha, "extreme": r.direction,
                         "discarded_draws": r.discarded}
    if "pca-f" in which:
        r = pca_f_test(data.covariates, data.outcomes, cfg.alpha)
        out["pca-f"] = {"F": r.F, "df": list(r.df), "p_value": r.p_value, "reject": r.reject,
                        "loadings": r.loadings.tolist(), "explained_variance": r.explained}
    return out


def _standardization(data: Dataset) -> dict:
    return {name: {"mean": m, "sd": s} for name, (m, s) in zip(data.outcome_names, data.standardization)}


def _fit_plan(cfg: AnalysisConfig, data: Dataset) -> dict:
    M = len(cfg.library) * data.J
    return {
        "predicted_total": plan_fits(cfg.K, M, cfg.reuse, cfg.K_circ, cfg.K_star),
        "predicted_innermost": plan_fits(cfg.K, M, cfg.reuse, cfg.K_circ, cfg.K_star, innermost_only=True),
    }


def run_analyze(cfg: AnalysisConfig, out_dir: Path, threads: int = 1, groups_only: bool = False,
                log=print) -> dict:
    """Full analysis; writes ``report.json`` and ``per_fold.csv`` to ``out_dir``."""
    data = load_data(cfg)
    group_idx = {label: resolve_group(data, label, cols) for label, cols in cfg.groups.items()}
    if groups_only and not group_idx:
        raise ConfigError("the importance command needs at least one group (--groups label=col1,col2)")
    specs = [LearnerSpec.coerce(e) for e in cfg.library]
    opts = _omega_opts(cfg)
    log(f"association: n={data.n} D={data.D} J={data.J} learners={len(specs)} K={cfg.K} reuse={cfg.reuse}")
    est = estimate_association(specs, data, cfg.K, cfg.K_circ, cfg.K_star, cfg.seed, cfg.reuse,
                               alpha=cfg.alpha, omega_opts=opts, threads=threads)
    log(f"  r2={est.r2:.4f} CI=({est.ci_lower:.4f}, {est.ci_upper:.4f}) p={est.p_value:.3g} fits={est.fits}")
    report = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "kernel_backend": BACKEND,
        "data": {"n": data.n, "covariates": list(data.covariate_names), "outcomes": list(data.outcome_names),
                 "outcome_standardization": _standardization(data)},
        "scale": "R2 and its CI refer to the composite of standardized outcomes",
        "association": est.to_dict(),
        "fit_counts": {"instrumented": est.fits, "by_role": dict(sorted(est.fits_by_role.items())),
                       **_fit_plan(cfg, data)},
    }
    if not groups_only:
        K_c = cfg.K_circ or (cfg.K - 1 if cfg.reuse else cfg.K)
        K_s = cfg.K_star or (cfg.K - 2 if cfg.reuse else cfg.K)
        w = estimate_weights(specs, data, K_c, K_s, cfg.seed, opts)
        report["full_data_weights"] = {"omega": dict(zip(data.outcome_names, w.omega.tolist())),
                                       "cv_r2_at_omega": w.r2_at_omega,
                                       "no_meaningful_association": w.no_association}
    if group_idx:
        imps = {}
        for label, idx in group_idx.items():
            if len(idx) == data.D:
                from .errors import EmptyComplement
                raise EmptyComplement(f"group {label!r} contains every covariate")
            red = estimate_association(specs, data.drop_covariates(idx), cfg.K, cfg.K_circ, cfg.K_star,
                                       cfg.seed, cfg.reuse, alpha=cfg.alpha, omega_opts=opts, threads=threads)
            imp = importance_from_estimates(est, red, idx, cfg.alpha, label=label)
            imps[label] = imp.to_dict()
            imps[label]["columns"] = [data.covariate_names[i] for i in idx]
            log(f"  importance {label}: delta={imp.delta:.4f} CI=({imp.ci_lower:.4f}, {imp.ci_upper:.4f})")
        report["importance"] = imps
    if cfg.baselines and not groups_only:
        report["baselines"] = run_baselines(cfg, data)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report)
    write_per_fold(out_dir / "per_fold.csv", est, data)
    return report


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_per_fold(path: Path, est, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "size", "mse_model", "mse_null", "r2_fold", "omega_cv_r2"]
                   + [f"omega_{nm}" for nm in data.outcome_names])
        for d in est.per_fold:
            w.writerow([d["fold"], d["size"], repr(d["mse_model"]), repr(d["mse_null"]),
                        repr(1.0 - d["mse_model"] / d["mse_null"]), repr(d["omega_cv_r2"])]
                       + [repr(x) for x in d["omega"]])


# --- simulate -----------------------------------------------------------------------

def run_simulate(args, log=print) -> list[dict]:
    if args.study not in STUDIES:
        raise ConfigError(f"unknown study {args.study!r}; valid studies: {', '.join(STUDIES)}")
    reps = args.reps if args.reps is not None else (FULL_REPS if args.full else 200)
    if args.n:
        try:
            ns = [int(v) for v in str(args.n).split(",")]
        except ValueError:
            raise ConfigError(f"--n expects comma-separated integers, got {args.n!r}") from None
    else:
        ns = list(FULL_N if args.full else DESK_N)
    K, K_c, K_s = _parse_folds(args.folds) if args.folds else (None, None, None)
    settings = McSettings(K=K, K_circ=K_c, K_star=K_s, reuse=args.reuse,
                          alpha=args.alpha if args.alpha is not None else 0.05,
                          B=args.permutations if args.permutations is not None else 200,
                          scenario=args.scenario)
    out_dir = Path(args.out_dir)
    seed = args.seed if args.seed is not None else 0
    summaries = []
    for n in ns:
        log(f"{args.study} n={n} reps={reps}" + (f" scenario={args.scenario}" if args.study == "sim2-power" else ""))
        rep = run_monte_carlo(args.study, reps, n, seed, settings, workers=args.threads)
        csv_path, json_path = rep.write(out_dir)
        log(f"  wrote {csv_path} and {json_path}")
        log("  " + json.dumps(rep.summary, sort_keys=True))
        summaries.append(rep.summary)
    return summaries


# --- entry point --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, data_flags: bool = True) -> None:
    if data_flags:
        p.add_argument("--data", help="CSV file with a header row")
        p.add_argument("--config", help="JSON or YAML config file (flags override it)")
        p.add_argument("--outcomes", help="comma-separated outcome column names")
        p.add_argument("--covariates", help="comma-separated covariate column names (default: all others)")
    p.add_argument("--folds", help="K[,K_circ[,K_star]] fold counts (default 10,10,10)")
    p.add_argument("--reuse", action="store_true", help="share learner fits across layers (K_circ=K-1, K_star=K-2)")
    p.add_argument("--alpha", type=float, help="test level (default 0.05)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
    p.add_argument("--out-dir", default="mvassoc-out", help="output directory")
    p.add_argument("--permutations", type=int, help="permutations per baseline test")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvassoc", description="Association between covariates and a multivariate outcome.")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate and test the association")
    _common(p)
    p.add_argument("--groups", nargs="*", help="importance groups as label=col1,col2")
    p.add_argument("--baselines", help=f"comma-separated subset of {','.join(BASELINE_CHOICES)}")

    p = sub.add_parser("importance", help="group variable importance only")
    _common(p)
    p.add_argument("--groups", nargs="*", help="importance groups as label=col1,col2")

    p = sub.add_parser("baselines", help="canonical-correlation permutation tests and the PCA F-test")
    _common(p)
    p.add_argument("--baselines", help=f"comma-separated subset of {','.join(BASELINE_CHOICES)} (default all)")

    p = sub.add_parser("simulate", help="Monte Carlo studies")
    p.add_argument("study", choices=STUDIES)
    p.add_argument("--scenario", choices=SCENARIOS, default="null", help="outcome mean scenario for sim2-power")
    p.add_argument("--n", help="sample size(s), comma-separated")
    p.add_argument("--reps", type=int, help="replicates (default 200, or 1000 with --full)")
    p.add_argument("--full", action="store_true", help="use the larger replicate count and sample-size grid")
    _common(p, data_flags=False)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidHyperparameter)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, ConstantOutcome, OSError)):
        return EXIT_DATA
    if isinstance(exc, ReplicateFailures):
        return EXIT_REPLICATES
    if isinstance(exc, (DegenerateNull, SingularError, SingularFit, OptimizerFailure, LearnerError)):
        return EXIT_NUMERIC
    return EXIT_ERROR


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    log = (lambda *a, **k: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        if args.command == "simulate":
            run_simulate(args, log)
            return EXIT_OK
        cfg = build_config(args)
        out_dir = Path(args.out_dir)
        if args.command == "baselines":
            which = cfg.baselines or list(BASELINE_CHOICES)
            if any(b in STATISTICS for b in which) and cfg.permutations < 19:
                raise ConfigError("--permutations must be at least 19")
            data = load_data(cfg)
            cfg.baselines = which
            report = {"config": cfg.to_dict(), "seed": cfg.seed, "baselines": run_baselines(cfg, data, which)}
            out_dir.mkdir(parents=True, exist_ok=True)
            write_json(out_dir / "baselines.json", report)
            for k, v in report["baselines"].items():
                log(f"{k}: p={v['p_value']:.4g}")
        else:
            run_analyze(cfg, out_dir, max(1, args.threads), groups_only=args.command == "importance", log=log)
    except MvAssocError as exc:
        print(f"mvassoc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"mvassoc: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
