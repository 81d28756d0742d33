"""Data-generating processes, analytic oracles and Monte Carlo drivers."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, SimplexWeights, standardize_outcomes
from .errors import MvAssocError, ReplicateFailures

# --- Simulation 1 ------------------------------------------------------------------

DGP1_UNIFORM = (0, 1, 2, 6, 7, 8)          # X1, X2, X3, X7, X8, X9 ~ Uniform(0, 4)
DGP1_BERNOULLI = {3: 0.75, 4: 0.25, 5: 0.5}  # X4, X5, X6
DGP1_NOISE_SD = 5.0
# rows: outcomes, columns: X1..X9
DGP1_COEF = np.array([
    [1, 2, 4, 1, 2, 4, 2, 0, 0],
    [1, 2, 4, 1, 2, 4, 0, 2, 0],
    [1, 2, 4, 1, 2, 4, 0, 0, 2],
], dtype=float)
COVARIATE_NAMES = tuple(f"X{d + 1}" for d in range(9))


def _covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    X = np.empty((n, 9))
    for d in DGP1_UNIFORM:
        X[:, d] = rng.uniform(0.0, 4.0, n)
    for d, p in DGP1_BERNOULLI.items():
        X[:, d] = (rng.random(n) < p).astype(float)
    return X


def simulate_dgp1(n: int, seed) -> Dataset:
    """Three linear outcomes sharing six covariates, each with one private covariate."""
    rng = np.random.default_rng(seed)
    X = _covariates(rng, n)
    eps = rng.normal(0.0, DGP1_NOISE_SD, size=(n, 3))
    Y = X @ DGP1_COEF.T + eps
    return Dataset(X, Y, COVARIATE_NAMES, ("Y1", "Y2", "Y3"))


def covariate_variances() -> np.ndarray:
    v = np.empty(9)
    for d in DGP1_UNIFORM:
        v[d] = 16.0 / 12.0
    for d, p in DGP1_BERNOULLI.items():
        v[d] = p * (1 - p)
    return v


def dgp1_composite_r2(omega, available: Sequence[int] | None = None) -> float:
    """Population R² of the best predictor of the composite outcome from a covariate subset.

    Covariates are independent, so the explained variance of ``Y @ omega``
    is the sum of ``coef_d**2 Var(X_d)`` over the available covariates.
    Outcome standardization is a common rescaling here (all outcomes share
    one variance) and does not change the value.
    """
    w = np.asarray(omega, dtype=float)
    a = w @ DGP1_COEF
    v = covariate_variances()
    contrib = a * a * v
    total = contrib.sum() + DGP1_NOISE_SD**2 * float(w @ w)
    avail = range(9) if available is None else available
    return float(sum(contrib[d] for d in avail) / total)


def _maximize_on_simplex(f: Callable, J: int = 3) -> tuple[np.ndarray, float]:
    from scipy.optimize import minimize

    best = None
    starts = [np.full(J, 1.0 / J)] + [np.eye(J)[j] * 0.9 + 0.1 / J for j in range(J)]
    for s in starts:
        res = minimize(lambda w: -f(w), s, method="SLSQP", bounds=[(0, 1)] * J,
                       constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0}],
                       options={"ftol": 1e-14, "maxiter": 500})
        w = np.clip(res.x, 0, None)
        w /= w.sum()
        val = f(w)
        if best is None or val > best[1]:
            best = (w, val)
    return best


@dataclass(frozen=True)
class Dgp1Oracle:
    omega0: SimplexWeights
    r2_single: float
    r2_composite: float
    r2_single_noX2: float
    r2_composite_noX2: float
    omega_noX7: SimplexWeights
    r2_composite_noX7: float
    delta_X2: float
    delta_X7: float

    # values quoted for this design, checked against the analytic ones
    STATED = {
        "r2_single": 0.60, "r2_composite": 0.81, "r2_single_noX2": 0.52, "r2_composite_noX2": 0.68,
        "r2_composite_noX7": 0.79, "delta_X2": 0.13, "delta_X7": 0.02,
    }
    STATED_OMEGA_NOX7 = (0.24, 0.38, 0.38)

    @classmethod
    def compute(cls) -> "Dgp1Oracle":
        all_d = list(range(9))
        no_x2 = [d for d in all_d if d != 1]
        no_x7 = [d for d in all_d if d != 6]
        w_full, r_full = _maximize_on_simplex(lambda w: dgp1_composite_r2(w))
        w_nox2, r_nox2 = _maximize_on_simplex(lambda w: dgp1_composite_r2(w, no_x2))
        w_nox7, r_nox7 = _maximize_on_simplex(lambda w: dgp1_composite_r2(w, no_x7))
        e1 = np.array([1.0, 0, 0])
        return cls(
            omega0=SimplexWeights(w_full),
            r2_single=dgp1_composite_r2(e1),
            r2_composite=r_full,
            r2_single_noX2=dgp1_composite_r2(e1, no_x2),
            r2_composite_noX2=r_nox2,
            omega_noX7=SimplexWeights(w_nox7),
            r2_composite_noX7=r_nox7,
            delta_X2=r_full - r_nox2,
            delta_X7=r_full - r_nox7,
        )

    def discrepancies(self) -> dict:
        """Analytic minus stated value for every quoted quantity."""
        out = {k: getattr(self, k) - v for k, v in self.STATED.items()}
        out["omega_noX7"] = float(np.abs(self.omega_noX7.w - np.array(self.STATED_OMEGA_NOX7)).max())
        return out

    def to_dict(self) -> dict:
        return {
            "omega0": self.omega0.tolist(), "r2_single": self.r2_single, "r2_composite": self.r2_composite,
            "r2_single_noX2": self.r2_single_noX2, "r2_composite_noX2": self.r2_composite_noX2,
            "omega_noX7": self.omega_noX7.tolist(), "r2_composite_noX7": self.r2_composite_noX7,
            "delta_X2": self.delta_X2, "delta_X7": self.delta_X7,
        }


# --- Simulation 2 ------------------------------------------------------------------

SCENARIOS = ("null", "linear", "nonlinear")


def _sigma2() -> np.ndarray:
    S = np.diag(np.full(10, 5.0))
    for (i, j), v in {(1, 2): -2, (1, 3): -2, (4, 7): -2, (3, 9): 2, (4, 9): 2, (5, 9): 2}.items():
        S[i - 1, j - 1] = S[j - 1, i - 1] = v
    return S


@dataclass(frozen=True)
class Dgp2Config:
    scenario: str = "null"
    Sigma: np.ndarray = field(default_factory=_sigma2, repr=False)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; valid scenarios: {', '.join(SCENARIOS)}")
        S = np.asarray(self.Sigma, dtype=float)
        if not np.allclose(S, S.T):
            raise ValueError("Sigma must be symmetric")
        L = np.linalg.cholesky(S)  # raises if not positive definite
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "_chol", L)

    def mean(self, X: np.ndarray) -> np.ndarray:
        mu = np.zeros((X.shape[0], 10))
        if self.scenario == "linear":
            mu[:, 5] = -2.0 + 0.75 * X[:, 0]
        elif self.scenario == "nonlinear":
            mu[:, 5] = -2.0 + 0.75 * (X[:, 0] - 2.0) ** 2
        return mu


def simulate_dgp2(cfg: Dgp2Config, n: int, seed) -> Dataset:
    """Ten correlated normal outcomes; the scenario sets the mean of the sixth."""
    rng = np.random.default_rng(seed)
    X = _covariates(rng, n)
    Z = rng.standard_normal((n, 10))
    Y = cfg.mean(X) + Z @ cfg._chol.T
    return Dataset(X, Y, COVARIATE_NAMES, tuple(f"Y{j + 1}" for j in range(10)))


# --- Monte Carlo drivers -------------------------------------------------------------

STUDIES = ("sim1-bias-coverage", "sim1-importance", "sim2-power")
BASELINE_TESTS = ("wilks", "hotelling-lawley", "pillai-bartlett", "roy", "pca-f")
MAX_FAILURE_FRACTION = 0.02
DESK_N = (100, 500, 1000)
FULL_N = (100, 500, 1000, 5000)
FULL_REPS = 1000


@dataclass(frozen=True)
class McSettings:
    """Budget and method settings for one Monte Carlo study.

    ``K``/``library`` left as None take the study default: ten folds per layer
    and {mean, ols, stepwise} for the first design, five folds and
    {mean, ols, spline} for the second.
    """

    K: int | None = None
    K_circ: int | None = None
    K_star: int | None = None
    library: tuple | None = None
    reuse: bool = False
    alpha: float = 0.05
    B: int = 200
    scenario: str = "null"
    truth_n: int = 0

    def resolved(self, study: str) -> "McSettings":
        sim1 = study.startswith("sim1")
        K = self.K or (10 if sim1 else 5)
        lib = self.library or (("mean", "ols", "stepwise") if sim1 else ("mean", "ols", "spline"))
        return replace(self, K=K, K_circ=self.K_circ or (None if self.reuse else K),
                       K_star=self.K_star or (None if self.reuse else K), library=tuple(lib))


def _replicate_data(study: str, n: int, rep_seed, s: McSettings) -> Dataset:
    if study.startswith("sim1"):
        data = simulate_dgp1(n, rep_seed)
    else:
        data = simulate_dgp2(Dgp2Config(s.scenario), n, rep_seed)
    return standardize_outcomes(data)


def _assoc(data, s: McSettings, seed):
    from .association import estimate_association
    from .learners import library

    return estimate_association(library(*s.library), data, s.K, s.K_circ, s.K_star, seed, s.reuse,
                                alpha=s.alpha)


def _covers(lo, hi, target) -> bool:
    return bool(lo <= target <= hi)


def run_replicate(study: str, n: int, seed: int, rep: int, s: McSettings) -> dict:
    """One replicate; returns a flat row of results (no wall-clock values)."""
    from .superlearner import derive_seed

    rep_seq = derive_seed(seed, rep)
    data_seed, method_seed = (int(x) for x in rep_seq.generate_state(2, dtype=np.uint32))
    data = _replicate_data(study, n, data_seed, s)
    row = {"rep": rep, "n": n, "data_seed": data_seed, "method_seed": method_seed}
    if study in ("sim1-bias-coverage", "sim1-importance"):
        oracle = Dgp1Oracle.compute()
        full = _assoc(data, s, method_seed)
        row.update(r2=full.r2, ci_lower=full.ci_lower, ci_upper=full.ci_upper, log_ratio=full.log_ratio,
                   se_log_ratio=full.se, p_value=full.p_value, reject=full.reject, fits=full.fits,
                   covers=_covers(full.ci_lower, full.ci_upper, oracle.r2_composite))
        if s.truth_n:
            row["truth_fresh"] = _fresh_truth(full, data, s, method_seed, data_seed)
        if study == "sim1-importance":
            from .importance import importance_from_estimates

            for label, col, target in (("X2", 1, oracle.delta_X2), ("X7", 6, oracle.delta_X7)):
                red = _assoc(data.drop_covariates([col]), s, method_seed)
                imp = importance_from_estimates(full, red, [col], s.alpha)
                row.update({
                    f"r2_no{label}": red.r2, f"delta_{label}": imp.delta, f"se_delta_{label}": imp.se,
                    f"ci_lower_{label}": imp.ci_lower, f"ci_upper_{label}": imp.ci_upper,
                    f"p_value_{label}": imp.p_value,
                    f"covers_{label}": _covers(imp.ci_lower, imp.ci_upper, target),
                })
    else:
        from .baselines import STATISTICS, pca_f_test, permutation_tests

        est = _assoc(data, s, method_seed)
        row.update(scenario=s.scenario, r2=est.r2, log_ratio=est.log_ratio, se_log_ratio=est.se,
                   p_proposed=est.p_value, reject_proposed=est.reject)
        perm = permutation_tests(data.covariates, data.outcomes, s.B, derive_seed(method_seed, 7))
        for name in STATISTICS:
            row[f"p_{name}"] = perm[name].p_value
            row[f"reject_{name}"] = bool(perm[name].p_value < s.alpha)
        pca = pca_f_test(data.covariates, data.outcomes, s.alpha)
        row["p_pca-f"] = pca.p_value
        row["reject_pca-f"] = pca.reject
    return row


def _fresh_truth(full, data, s, method_seed, data_seed) -> float:
    """Data-adaptive target: refit on the sample, evaluate on a large fresh draw.

    Uses the full-sample composite super learner at the full-sample weights,
    which is an approximation to the fold-specific target.
    """
    from .association import estimate_weights
    from .learners import library
    from .superlearner import FitScheduler, ensembles_on
    from .data import make_folds

    specs = library(*s.library)
    sched = FitScheduler(specs, data, method_seed)
    w = estimate_weights(specs, data, s.K_circ or s.K - 1, s.K_star or s.K - 2, method_seed,
                         scheduler=sched).omega.w
    idx = np.arange(data.n)
    ens = ensembles_on(sched, idx, make_folds(data.n, s.K_star or s.K - 2, method_seed), range(data.J), "truth")
    fresh = simulate_dgp1(s.truth_n, np.random.SeedSequence([data_seed, 99]))
    Y = (fresh.outcomes - np.asarray(data.standardization["mean"])) / np.asarray(data.standardization["sd"])
    P = np.column_stack([e.predict(fresh.covariates) for e in ens])
    yw = Y @ w
    return float(1.0 - np.mean((yw - P @ w) ** 2) / np.var(yw))


def _safe_replicate(args) -> dict:
    study, n, seed, rep, s = args
    try:
        return run_replicate(study, n, seed, rep, s)
    except MvAssocError as exc:
        return {"rep": rep, "n": n, "error": f"{type(exc).__name__}: {exc}"}


def _rate(rows, key) -> float:
    vals = [bool(r[key]) for r in rows if key in r]
    return float(np.mean(vals)) if vals else float("nan")


def _mean(rows, key) -> float:
    vals = [r[key] for r in rows if key in r]
    return float(np.mean(vals)) if vals else float("nan")


def _sd(rows, key) -> float:
    vals = [r[key] for r in rows if key in r]
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")


def summarize(study: str, rows: Sequence[dict], s: McSettings) -> dict:
    ok = [r for r in rows if "error" not in r]
    out = {"replicates": len(rows), "failures": len(rows) - len(ok)}
    if study.startswith("sim1"):
        oracle = Dgp1Oracle.compute()
        out.update(
            oracle_r2=oracle.r2_composite,
            mean_r2=_mean(ok, "r2"),
            bias=_mean(ok, "r2") - oracle.r2_composite,
            coverage=_rate(ok, "covers"),
            mc_sd_log_ratio=_sd(ok, "log_ratio"),
            mean_se_log_ratio=_mean(ok, "se_log_ratio"),
            rejection_rate=_rate(ok, "reject"),
        )
        if s.truth_n:
            out["mean_truth_fresh"] = _mean(ok, "truth_fresh")
        if study == "sim1-importance":
            for label, target in (("X2", oracle.delta_X2), ("X7", oracle.delta_X7)):
                out[f"oracle_delta_{label}"] = target
                out[f"mean_delta_{label}"] = _mean(ok, f"delta_{label}")
                out[f"coverage_{label}"] = _rate(ok, f"covers_{label}")
                out[f"mean_r2_no{label}"] = _mean(ok, f"r2_no{label}")
    else:
        out["scenario"] = s.scenario
        out["mean_r2"] = _mean(ok, "r2")
        out["power"] = {"proposed": _rate(ok, "reject_proposed"),
                        **{t: _rate(ok, f"reject_{t}") for t in BASELINE_TESTS}}
    return out


@dataclass
class McReport:
    study: str
    n: int
    reps: int
    seed: int
    settings: McSettings
    rows: list
    summary: dict

    def config(self) -> dict:
        return {"study": self.study, "n": self.n, "reps": self.reps, "seed": self.seed,
                "settings": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.settings).items()}}

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.study}_n{self.n}" + (f"_{self.settings.scenario}" if self.study == "sim2-power" else "")
        csv_path = out_dir / f"{stem}.csv"
        json_path = out_dir / f"{stem}.json"
        keys: list[str] = []
        for r in self.rows:
            keys.extend(k for k in r if k not in keys)
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k, "")) for k in keys})
        with open(json_path, "w") as fh:
            json.dump({"config": self.config(), "summary": self.summary}, fh, indent=2, sort_keys=True,
                      default=_json_default)
            fh.write("\n")
        return csv_path, json_path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def run_monte_carlo(study: str, reps: int = 200, n: int = 1000, seed: int = 0,
                    settings: McSettings | None = None, workers: int = 1,
                    progress: Callable[[int, int], None] | None = None) -> McReport:
    """Replicate a study ``reps`` times and summarise.

    Replicate ``r`` draws its data and method seeds from ``(seed, r)``, so
    results do not depend on ``workers`` or completion order. Failed
    replicates are kept as rows with an ``error`` field; more than 2% of
    failures raises :class:`ReplicateFailures`.
    """
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; valid studies: {', '.join(STUDIES)}")
    if reps < 1:
        raise ValueError("reps must be positive")
    s = (settings or McSettings()).resolved(study)
    if study == "sim2-power":
        Dgp2Config(s.scenario)  # validate the scenario name early
    jobs = [(study, n, seed, r, s) for r in range(reps)]
    rows: dict[int, dict] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, row in enumerate(pool.map(_safe_replicate, jobs)):
                rows[row["rep"]] = row
                if progress:
                    progress(i + 1, reps)
    else:
        for i, job in enumerate(jobs):
            row = _safe_replicate(job)
            rows[row["rep"]] = row
            if progress:
                progress(i + 1, reps)
    ordered = [rows[r] for r in range(reps)]
    failed = sum("error" in r for r in ordered)
    if failed > math.floor(MAX_FAILURE_FRACTION * reps):
        first = next(r["error"] for r in ordered if "error" in r)
        raise ReplicateFailures(f"{failed} of {reps} replicates failed (first: {first})")
    return McReport(study, n, reps, seed, s, ordered, summarize(study, ordered, s))
