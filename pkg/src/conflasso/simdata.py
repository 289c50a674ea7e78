"""Synthetic regression models and coverage/length/time experiments.

Three data-generating families in two dimension regimes, plus the harness
that runs the conformal methods against them and aggregates empirical
coverage, set length, and wall-clock per replication.  All randomness flows
from a single seed per ``ModelSpec``; replications derive child seeds by
offset, so runs are reproducible bit for bit regardless of parallelism.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .conformal import (
    default_range,
    exact_set,
    exact_set_fast,
    grid_set,
    _rank_threshold,
)
from .homotopy import SegmentLimitError, SingularGramError
from .lasso import (
    Dataset,
    NonConvergenceError,
    PenaltyConfig,
    fit as lasso_fit,
    fit_path,
    lambda_max,
)

__all__ = [
    "ModelFamily",
    "DimRegime",
    "ModelSpec",
    "FixedLambda",
    "CvMedianLambda",
    "MethodStats",
    "CoverageReport",
    "bspline_basis",
    "generate",
    "cv_lambda",
    "cv_lambda_median",
    "resolve_lambda",
    "run_experiment",
]

_SPLINE_LO, _SPLINE_HI = -3.0, 3.0
_CV_SEED_OFFSET = 10_000  # keeps tuning streams clear of replication streams


class ModelFamily(str, enum.Enum):
    """The three synthetic designs.

    ``LINEAR_GAUSSIAN``: independent standard normal covariates, linear
    signal with unit-magnitude random-sign coefficients, normal noise.
    ``NONLINEAR_ADDITIVE``: additive per-coordinate cubic spline signal
    with random-sign basis coefficients, normal noise.
    ``HEAVY_TAIL_CORRELATED``: mixed-distribution columns smoothed by a
    weighted moving average across neighbors, linear signal, t(2) noise.
    """

    LINEAR_GAUSSIAN = "linear-gaussian"
    NONLINEAR_ADDITIVE = "nonlinear-additive"
    HEAVY_TAIL_CORRELATED = "heavy-tail-correlated"


class DimRegime(str, enum.Enum):
    """Problem size presets: LOW is n=100, p=10; HIGH is n=200, p=500."""

    LOW = "low"
    HIGH = "high"

    @property
    def n_train(self) -> int:
        return 100 if self is DimRegime.LOW else 200

    @property
    def p(self) -> int:
        return 10 if self is DimRegime.LOW else 500

    @property
    def default_sparsity(self) -> int:
        return self.p if self is DimRegime.LOW else 5

    @property
    def default_amplitude(self) -> float:
        return 1.0 if self is DimRegime.LOW else 8.0


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """A fully pinned data-generating process.

    ``sparsity`` and ``amplitude`` default per regime (all coordinates at
    magnitude 1 in LOW, the first 5 at magnitude 8 in HIGH).  The signal
    always occupies the leading coordinates.  ``noise_scale`` is a debug
    switch; 0 silences the noise entirely.
    """

    family: ModelFamily
    dim_regime: DimRegime = DimRegime.LOW
    sparsity: int | None = None
    amplitude: float | None = None
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        family = ModelFamily(self.family)
        regime = DimRegime(self.dim_regime)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "dim_regime", regime)
        sparsity = self.sparsity if self.sparsity is not None else regime.default_sparsity
        amplitude = (
            self.amplitude if self.amplitude is not None else regime.default_amplitude
        )
        if not 1 <= sparsity <= regime.p:
            raise ValueError(f"sparsity {sparsity} outside [1, {regime.p}]")
        if not amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {amplitude}")
        if self.noise_scale < 0 or not np.isfinite(self.noise_scale):
            raise ValueError(f"noise_scale must be finite and >= 0, got {self.noise_scale}")
        object.__setattr__(self, "sparsity", int(sparsity))
        object.__setattr__(self, "amplitude", float(amplitude))

    @property
    def p(self) -> int:
        return self.dim_regime.p


def bspline_basis(x: np.ndarray) -> np.ndarray:
    """Cubic B-spline basis with 4 functions on [-3, 3], clamped ends.

    Evaluated by the Cox-de Boor recursion on the knot vector
    ``[-3, -3, -3, -3, 3, 3, 3, 3]``; inputs are clipped into the interval
    and the right endpoint is treated as closed, so the four functions sum
    to 1 at every point.
    """
    x = np.clip(np.asarray(x, dtype=np.float64), _SPLINE_LO, _SPLINE_HI)
    knots = np.array([_SPLINE_LO] * 4 + [_SPLINE_HI] * 4)
    n_int = len(knots) - 1
    basis = np.zeros((x.size, n_int))
    for i in range(n_int):
        left, right = knots[i], knots[i + 1]
        if right > left:
            hit = (x >= left) & ((x < right) | ((right == knots[-1]) & (x == right)))
            basis[:, i] = hit
    for deg in range(1, 4):
        nxt = np.zeros((x.size, n_int - deg))
        for i in range(n_int - deg):
            acc = np.zeros(x.size)
            d1 = knots[i + deg] - knots[i]
            if d1 > 0:
                acc += (x - knots[i]) / d1 * basis[:, i]
            d2 = knots[i + 1 + deg] - knots[i + 1]
            if d2 > 0:
                acc += (knots[i + 1 + deg] - x) / d2 * basis[:, i + 1]
            nxt[:, i] = acc
        basis = nxt
    return basis


def _signal_beta(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    beta = np.zeros(spec.p)
    beta[: spec.sparsity] = spec.amplitude * rng.choice([-1.0, 1.0], spec.sparsity)
    return beta


def _skew_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    # shape parameter 5 via the |Z1|, Z2 mixture representation
    delta = 5.0 / math.sqrt(26.0)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    return delta * np.abs(z1) + math.sqrt(1.0 - delta * delta) * z2


def _draw(spec: ModelSpec, n: int, rng: np.random.Generator):
    p = spec.p
    if spec.family is ModelFamily.LINEAR_GAUSSIAN:
        X = rng.standard_normal((n, p))
        beta = _signal_beta(spec, rng)
        y = X @ beta + spec.noise_scale * rng.standard_normal(n)
        return X, y
    if spec.family is ModelFamily.NONLINEAR_ADDITIVE:
        X = rng.standard_normal((n, p))
        coefs = spec.amplitude * rng.choice([-1.0, 1.0], (spec.sparsity, 4))
        signal = np.zeros(n)
        for j in range(spec.sparsity):
            signal += bspline_basis(X[:, j]) @ coefs[j]
        y = signal + spec.noise_scale * rng.standard_normal(n)
        return X, y
    # HEAVY_TAIL_CORRELATED: mixed columns, scaled to unit variance by
    # their theoretical sds (not centered), then smoothed across neighbors.
    cols = np.empty((n, p))
    skew_sd = math.sqrt(1.0 - 2.0 * (25.0 / 26.0) / math.pi)
    for j in range(p):
        kind = j % 3
        if kind == 0:
            cols[:, j] = rng.standard_normal(n)
        elif kind == 1:
            cols[:, j] = (rng.random(n) < 0.5).astype(np.float64) / 0.5
        else:
            cols[:, j] = _skew_normal(rng, n) / skew_sd
    X = np.empty((n, p))
    for j in range(p):
        w = rng.random(3)  # always draw 3 so edge columns do not shift the stream
        idx = [k for k in (j - 1, j, j + 1) if 0 <= k < p]
        use = w[[k - (j - 1) for k in idx]]
        X[:, j] = cols[:, idx] @ (use / use.sum())
    beta = _signal_beta(spec, rng)
    y = X @ beta + spec.noise_scale * rng.standard_t(2, n)
    return X, y


def generate(
    spec: ModelSpec, n_train: int, n_test: int
) -> tuple[Dataset, list[tuple[np.ndarray, float]]]:
    """Draw one training set and an i.i.d. test set from the process.

    Returns ``(train, test)`` where ``test`` is a list of ``(x, y)`` pairs.
    Identical ``spec`` (seed included) and counts give bit-identical data.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError(f"counts must be positive, got {n_train}, {n_test}")
    rng = np.random.default_rng(spec.seed)
    X, y = _draw(spec, n_train + n_test, rng)
    train = Dataset(X[:n_train], y[:n_train])
    test = [(X[n_train + i].copy(), float(y[n_train + i])) for i in range(n_test)]
    return train, test


# ---- penalty selection -----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FixedLambda:
    """Use this exact penalty weight (un-normalized objective scale)."""

    value: float

    def __post_init__(self) -> None:
        if not self.value > 0 or not np.isfinite(self.value):
            raise ValueError(f"lambda must be positive and finite, got {self.value}")


@dataclasses.dataclass(frozen=True)
class CvMedianLambda:
    """Median of k-fold cross-validated penalties over independent samples."""

    k_folds: int = 10
    n_reps: int = 10

    def __post_init__(self) -> None:
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")


LambdaRule = FixedLambda | CvMedianLambda


def cv_lambda(
    data: Dataset,
    k_folds: int = 10,
    *,
    rho: float = 0.0,
    n_lambdas: int = 30,
    lam_min_ratio: float = 1e-3,
    seed: int = 0,
) -> float:
    """Pick the penalty minimizing k-fold held-out squared error.

    The grid runs log-spaced from the full-data ``lambda_max`` down by
    ``lam_min_ratio``.  Because the objective is un-normalized, fold fits
    scale the candidate by the fold's share of rows, so the returned value
    is on the full-sample scale.
    """
    n = data.n
    if not 2 <= k_folds <= n:
        raise ValueError(f"k_folds must be in [2, n={n}], got {k_folds}")
    grid = lambda_max(data) * np.logspace(0, math.log10(lam_min_ratio), n_lambdas)
    # Fold fits only rank held-out error, so they run with a bounded sweep
    # budget and a stationarity bar scaled to the dual magnitude.  Strict
    # certification is pointless here: near-singular folds crawl forever at
    # the tiny end of the grid, and the iterate after a couple thousand
    # sweeps ranks those (never-selected) penalties just as well.
    fold_tol = 1e-6 * max(1.0, float(grid[0]))
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k_folds)
    sse = np.zeros(n_lambdas)
    for hold in folds:
        mask = np.ones(n, dtype=bool)
        mask[hold] = False
        d_tr = Dataset(data.X[mask], data.y[mask])
        betas = fit_path(
            d_tr, grid * (d_tr.n / n), rho=rho,
            kkt_tol=fold_tol, max_sweeps=2000, strict=False,
        )
        pred = data.X[hold] @ betas.T
        sse += ((data.y[hold][:, None] - pred) ** 2).sum(axis=0)
    return float(grid[int(np.argmin(sse))])


def cv_lambda_median(
    spec: ModelSpec,
    n_train: int,
    k_folds: int = 10,
    n_reps: int = 10,
    *,
    rho: float = 0.0,
) -> float:
    """Median cross-validated penalty over independent draws of the model."""
    lams = []
    for r in range(n_reps):
        sub = dataclasses.replace(spec, seed=spec.seed + _CV_SEED_OFFSET + r)
        d, _ = generate(sub, n_train, 1)
        lams.append(cv_lambda(d, k_folds, rho=rho, seed=sub.seed))
    return float(np.median(lams))


def resolve_lambda(
    rule: LambdaRule, spec: ModelSpec, n_train: int, *, rho: float = 0.0
) -> float:
    if isinstance(rule, FixedLambda):
        return rule.value
    if isinstance(rule, CvMedianLambda):
        return cv_lambda_median(
            spec, n_train, rule.k_folds, rule.n_reps, rho=rho
        )
    raise TypeError(f"unknown lambda rule {rule!r}")


# ---- experiment harness ----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class MethodStats:
    """Aggregates for one method across completed replications."""

    method: str
    coverage_mean: float
    coverage_se: float
    length_mean: float
    length_se: float
    runtime_mean_s: float
    runtime_se_s: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.coverage_mean <= 1.0:
            raise ValueError(f"coverage {self.coverage_mean} outside [0, 1]")
        for se in (self.coverage_se, self.length_se, self.runtime_se_s):
            if se < 0:
                raise ValueError("standard errors must be nonnegative")


_CSV_FIELDS = [
    "family",
    "dim_regime",
    "alpha",
    "lambda",
    "rho",
    "method",
    "reps",
    "coverage_mean",
    "coverage_se",
    "length_mean",
    "length_se",
    "runtime_mean_s",
    "runtime_se_s",
]


@dataclasses.dataclass(frozen=True)
class CoverageReport:
    """Experiment results: one :class:`MethodStats` per requested method."""

    spec: ModelSpec
    alpha: float
    lam: float
    rho: float
    n_train: int
    n_test: int
    reps_requested: int
    reps_completed: int
    failures: tuple[str, ...]
    stats: tuple[MethodStats, ...]

    def method(self, name: str) -> MethodStats:
        for s in self.stats:
            if s.method == name:
                return s
        raise KeyError(f"no stats for method {name!r}")

    def to_json_dict(self) -> dict:
        return {
            "family": self.spec.family.value,
            "dim_regime": self.spec.dim_regime.value,
            "sparsity": self.spec.sparsity,
            "amplitude": self.spec.amplitude,
            "seed": self.spec.seed,
            "alpha": self.alpha,
            "lambda": self.lam,
            "rho": self.rho,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "reps_requested": self.reps_requested,
            "reps_completed": self.reps_completed,
            "failures": list(self.failures),
            "methods": {
                s.method: {
                    "coverage_mean": s.coverage_mean,
                    "coverage_se": s.coverage_se,
                    "length_mean": s.length_mean,
                    "length_se": s.length_se,
                    "runtime_mean_s": s.runtime_mean_s,
                    "runtime_se_s": s.runtime_se_s,
                }
                for s in self.stats
            },
        }

    def csv_rows(self) -> list[dict]:
        return [
            {
                "family": self.spec.family.value,
                "dim_regime": self.spec.dim_regime.value,
                "alpha": self.alpha,
                "lambda": self.lam,
                "rho": self.rho,
                "method": s.method,
                "reps": self.reps_completed,
                "coverage_mean": s.coverage_mean,
                "coverage_se": s.coverage_se,
                "length_mean": s.length_mean,
                "length_se": s.length_se,
                "runtime_mean_s": s.runtime_mean_s,
                "runtime_se_s": s.runtime_se_s,
            }
            for s in self.stats
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
            w.writeheader()
            for row in self.csv_rows():
                w.writerow(row)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_KNOWN_METHODS = ("exact", "exact-fast", "grid", "split")


def _split_batch(
    train: Dataset,
    xs: list[np.ndarray],
    penalty: PenaltyConfig,
    alpha: float,
    split_frac: float,
    seed: int,
    y_range: tuple[float, float],
) -> list[tuple[bool, float, tuple[float, float]]]:
    """Split-baseline sets for many queries with one shared split fit.

    Output per query: (unused placeholder kept False, half-width q or nan,
    (lo, hi)).  Matches :func:`conflasso.conformal.split_set` exactly for
    each query because the split, the fit, and the calibration quantile
    depend only on (data, penalty, split_frac, seed).
    """
    n = train.n
    n_train = int(round(split_frac * n))
    if not 1 <= n_train <= n - 1:
        raise ValueError(f"split leaves no data on one side: {n_train} of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    tr, cal = perm[:n_train], perm[n_train:]
    f = lasso_fit(Dataset(train.X[tr], train.y[tr]), penalty)
    cal_resid = np.abs(train.y[cal] - train.X[cal] @ f.beta)
    k = _rank_threshold(cal_resid.size, alpha)
    out = []
    if k > cal_resid.size:
        for _ in xs:
            out.append((False, math.nan, (y_range[0], y_range[1])))
        return out
    q = float(np.partition(cal_resid, k - 1)[k - 1])
    for x in xs:
        mu = float(x @ f.beta)
        hi = mu + q if q > 0.0 else float(np.nextafter(mu, np.inf))
        out.append((False, q, (mu - q, hi)))
    return out


def _run_one_rep(
    rep: int,
    spec: ModelSpec,
    alpha: float,
    lam: float,
    rho: float,
    n_train: int,
    n_test: int,
    methods: tuple[str, ...],
    grid_points: int,
    split_frac: float,
    early_stop_anchor: bool,
) -> dict:
    rep_spec = dataclasses.replace(spec, seed=spec.seed + rep)
    train, test = generate(rep_spec, n_train, n_test)
    gram = train.X.T @ train.X
    penalty = PenaltyConfig(lam=lam, rho=rho)
    base = lasso_fit(train, penalty, gram=gram)
    y_range = default_range(train.y)
    grid_step = (y_range[1] - y_range[0]) / (grid_points - 1)
    out: dict = {}
    for method in methods:
        covered = 0
        length = 0.0
        t0 = time.perf_counter()
        if method == "split":
            sets = _split_batch(
                train, [x for x, _ in test], penalty, alpha,
                split_frac, rep_spec.seed, y_range,
            )
            for (x, y_true), (_, _, (lo, hi)) in zip(test, sets):
                covered += lo <= y_true < hi
                length += hi - lo
        else:
            for x, y_true in test:
                if method == "exact-fast":
                    ps = exact_set_fast(
                        train, x, penalty, alpha, y_range,
                        base=base, gram=gram, early_stop_anchor=early_stop_anchor,
                    )
                    covered += ps.contains(y_true)
                    length += ps.total_length
                elif method == "exact":
                    ps = exact_set(
                        train, x, penalty, alpha, y_range,
                        base=base, gram=gram, early_stop_anchor=early_stop_anchor,
                    )
                    covered += ps.contains(y_true)
                    length += ps.total_length
                else:  # grid
                    ge = grid_set(
                        train, x, penalty, alpha, y_range, grid_step,
                        base=base, gram=gram,
                    )
                    ivs = ge.intervals()
                    covered += any(lo <= y_true < hi for lo, hi in ivs)
                    length += sum(hi - lo for lo, hi in ivs)
        out[method] = (
            covered / n_test,
            length / n_test,
            time.perf_counter() - t0,
        )
    return out


def run_experiment(
    spec: ModelSpec,
    alpha: float,
    lambda_rule: LambdaRule,
    methods,
    reps: int,
    *,
    n_train: int | None = None,
    n_test: int = 100,
    rho: float = 0.0,
    grid_points: int = 100,
    split_frac: float = 0.5,
    early_stop_anchor: bool = False,
    threads: int = 1,
    per_rep_csv=None,
) -> CoverageReport:
    """Coverage/length/time comparison of the selected methods.

    Methods: ``exact`` (path-traced, full enumeration), ``exact-fast``
    (path-traced, monotone classification), ``grid`` (``grid_points``
    refits per query), ``split`` (one split fit per rep).
    Each replication draws fresh data from ``spec`` with seed
    ``spec.seed + rep`` and evaluates every method on the same test points.
    A replication aborted by a solver error is logged in ``failures`` and
    excluded from the aggregates; the experiment itself continues.
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("methods must be nonempty")
    for m in methods:
        if m not in _KNOWN_METHODS:
            raise ValueError(f"unknown method {m!r}; known: {_KNOWN_METHODS}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if reps < 1:
        raise ValueError("reps must be positive")
    if n_train is None:
        n_train = spec.dim_regime.n_train
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    lam = resolve_lambda(lambda_rule, spec, n_train, rho=rho)

    results: dict[int, dict] = {}
    failures: list[str] = []

    def work(r: int):
        return r, _run_one_rep(
            r, spec, alpha, lam, rho, n_train, n_test, methods,
            grid_points, split_frac, early_stop_anchor,
        )

    errors = (
        NonConvergenceError,
        SingularGramError,
        SegmentLimitError,
        np.linalg.LinAlgError,
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(work, r) for r in range(reps)]
            for fut in futures:
                try:
                    r, res = fut.result()
                    results[r] = res
                except errors as exc:
                    failures.append(f"{type(exc).__name__}: {exc}")
    else:
        for r in range(reps):
            try:
                _, res = work(r)
                results[r] = res
            except errors as exc:
                failures.append(f"rep {r}: {type(exc).__name__}: {exc}")

    if per_rep_csv is not None:
        with open(per_rep_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "method", "coverage", "length_mean", "seconds"])
            for r in sorted(results):
                for m in methods:
                    cov, ln, sec = results[r][m]
                    w.writerow([r, m, cov, ln, sec])

    stats = []
    for m in methods:
        cov = np.array([results[r][m][0] for r in sorted(results)])
        ln = np.array([results[r][m][1] for r in sorted(results)])
        sec = np.array([results[r][m][2] for r in sorted(results)])

        def se(a: np.ndarray) -> float:
            if a.size < 2:
                return 0.0
            return float(a.std(ddof=1) / math.sqrt(a.size))

        stats.append(
            MethodStats(
                method=m,
                coverage_mean=float(cov.mean()) if cov.size else 0.0,
                coverage_se=se(cov),
                length_mean=float(ln.mean()) if ln.size else 0.0,
                length_se=se(ln),
                runtime_mean_s=float(sec.mean()) if sec.size else 0.0,
                runtime_se_s=se(sec),
            )
        )
    return CoverageReport(
        spec=spec,
        alpha=alpha,
        lam=lam,
        rho=rho,
        n_train=n_train,
        n_test=n_test,
        reps_requested=reps,
        reps_completed=len(results),
        failures=tuple(failures),
        stats=tuple(stats),
    )
