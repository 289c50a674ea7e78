"""Command-line front end.

Subcommands: ``fit`` (coefficients for one dataset), ``predict``
(conformal sets for query rows), ``simulate`` (coverage experiments on
the synthetic models), ``bench`` (method timing tables), ``dump-path``
(raw homotopy segments for inspection).

Exit codes are a stable contract: 0 success, 2 input error (bad flags,
unreadable or malformed data), 3 numerical failure (solver or path
breakdown).  Identical config and seed give identical output bytes apart
from the timing fields.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .conformal import (
    DegenerateSplitError,
    PredictionSet,
    default_range,
    exact_set,
    exact_set_fast,
    grid_set,
    split_set,
)
from .homotopy import SegmentLimitError, SingularGramError, trace
from .lasso import (
    Dataset,
    DimensionMismatchError,
    NonConvergenceError,
    PenaltyConfig,
    check_kkt,
    fit as lasso_fit,
)
from .simdata import (
    CvMedianLambda,
    DimRegime,
    FixedLambda,
    ModelFamily,
    ModelSpec,
    _split_batch,
    generate,
    resolve_lambda,
    run_experiment,
)

log = logging.getLogger("conflasso")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_METHODS = ("exact", "exact-fast", "grid", "split")


class ParseError(ValueError):
    """A CSV cell or row that cannot be read; positions are 1-based."""

    def __init__(self, row: int, column: int, token: str, reason: str = ""):
        self.row = row
        self.column = column
        self.token = token
        msg = f"row {row}, column {column}: cannot parse {token!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class NonFiniteValueError(ValueError):
    """A cell that parses but is NaN or infinite; positions are 1-based."""

    def __init__(self, row: int, column: int, token: str):
        self.row = row
        self.column = column
        self.token = token
        super().__init__(f"row {row}, column {column}: non-finite value {token!r}")


def _read_rows(path, header: bool) -> np.ndarray:
    """Rectangular float matrix from a comma-separated file.

    Row numbers in errors are physical 1-based line numbers, so a header
    line shifts them by one.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows: list[list[float]] = []
        width = None
        for lineno, rec in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue  # ignore blank lines
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise ParseError(
                    lineno, min(len(rec), width) + 1, "",
                    f"expected {width} fields, found {len(rec)}",
                )
            vals = []
            for c, tok in enumerate(rec, start=1):
                try:
                    v = float(tok)
                except ValueError:
                    raise ParseError(lineno, c, tok) from None
                if not np.isfinite(v):
                    raise NonFiniteValueError(lineno, c, tok)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(1, 1, "", "file has no data rows")
    return np.asarray(rows, dtype=np.float64)


def ingest_csv(path, *, header: bool = False) -> Dataset:
    """Dataset from a CSV whose last column is the response."""
    m = _read_rows(path, header)
    if m.shape[1] < 2:
        raise ParseError(1, 1, "", "need at least one covariate column plus the response")
    data = Dataset(m[:, :-1], m[:, -1])
    log.info("loaded %s: n=%d rows, p=%d covariates", path, data.n, data.p)
    return data


def read_query_csv(path, p: int, *, header: bool = False) -> np.ndarray:
    """Query rows (covariates only) matching the training width."""
    m = _read_rows(path, header)
    if m.shape[1] != p:
        raise ParseError(
            1 + int(header), m.shape[1], "",
            f"query rows have {m.shape[1]} columns, training data has p={p}",
        )
    log.info("loaded %s: %d query rows", path, m.shape[0])
    return m


@dataclasses.dataclass(frozen=True)
class Standardizer:
    """Column location/scale for X and location for y, from training data.

    Zero-variance columns keep scale 1 so they pass through unchanged.
    The response is centered, not scaled, so interval lengths are
    preserved and inversion is a shift.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float

    @classmethod
    def from_data(cls, data: Dataset) -> "Standardizer":
        mean = data.X.mean(axis=0)
        scale = data.X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(x_mean=mean, x_scale=scale, y_mean=float(data.y.mean()))

    def apply(self, data: Dataset) -> Dataset:
        return Dataset((data.X - self.x_mean) / self.x_scale, data.y - self.y_mean)

    def apply_x(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_mean) / self.x_scale

    def shift_back(self, v: float) -> float:
        return v + self.y_mean


# ---- argument plumbing -----------------------------------------------------


def _parse_range(text: str) -> tuple[float, float] | None:
    if text == "auto":
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"range must be 'lo,hi' or 'auto', got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be numeric, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"range needs lo < hi, got {text!r}")
    return lo, hi


def _parse_methods(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    for nm in names:
        if nm not in _METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {nm!r}; choose from {', '.join(_METHODS)}"
            )
    if not names:
        raise argparse.ArgumentTypeError("methods list is empty")
    return names


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be positive and finite, got {text}")
    return v


def _nonnegative(text: str) -> float:
    v = float(text)
    if v < 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be >= 0 and finite, got {text}")
    return v


def _alpha_arg(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1), got {text}")
    return v


def _default_threads() -> int:
    env = os.environ.get("CONFLASSO_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _add_data_flags(p: argparse.ArgumentParser, query: bool) -> None:
    p.add_argument("--data", required=True, help="training CSV, last column = response")
    if query:
        p.add_argument("--query", required=True, help="query CSV, covariate columns only")
    p.add_argument("--header", action="store_true", help="input CSVs start with a header line")
    p.add_argument("--standardize", action="store_true",
                   help="center/scale covariates and center the response before fitting; "
                        "outputs are mapped back to the original response scale")


def _add_penalty_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=_positive, required=True,
                   help="l1 penalty weight (un-normalized objective)")
    p.add_argument("--rho", type=_nonnegative, default=0.0, help="ridge weight")


def _add_out_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=[f.value for f in ModelFamily],
                   default=ModelFamily.LINEAR_GAUSSIAN.value)
    p.add_argument("--dim-regime", choices=[r.value for r in DimRegime],
                   default=DimRegime.LOW.value)
    p.add_argument("--sparsity", type=int, default=None)
    p.add_argument("--amplitude", type=_positive, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--alpha", type=_alpha_arg, default=0.1)
    p.add_argument("--rho", type=_nonnegative, default=0.0)
    p.add_argument("--lambda", dest="lam", type=_positive, default=None,
                   help="fixed penalty; omit to cross-validate (median rule)")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--cv-reps", type=int, default=10)
    p.add_argument("--methods", type=_parse_methods, default=("exact", "grid", "split"))
    p.add_argument("--grid-points", type=int, default=100)
    p.add_argument("--split-frac", type=_positive, default=0.5)
    p.add_argument("--early-stop-anchor", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="conflasso",
        description="Exact conformal prediction sets for the lasso and elastic net.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the penalized model on a CSV")
    _add_data_flags(p_fit, query=False)
    _add_penalty_flags(p_fit)
    _add_out_flags(p_fit)

    p_pred = sub.add_parser("predict", help="conformal prediction sets for query rows")
    _add_data_flags(p_pred, query=True)
    _add_penalty_flags(p_pred)
    p_pred.add_argument("--alpha", type=_alpha_arg, default=0.1)
    p_pred.add_argument("--method", choices=_METHODS, default="exact")
    p_pred.add_argument("--grid-step", type=_positive, default=1e-3)
    p_pred.add_argument("--split-frac", type=_positive, default=0.5)
    p_pred.add_argument("--range", dest="y_range", type=_parse_range, default="auto",
                        help="'lo,hi' or 'auto' (data-driven default)")
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $CONFLASSO_THREADS or 1)")
    p_pred.add_argument("--early-stop-anchor", action="store_true")
    p_pred.add_argument("--dump-path", default=None, metavar="FILE",
                        help="also write the homotopy segments per query to FILE (JSON)")
    _add_out_flags(p_pred)

    p_sim = sub.add_parser("simulate", help="coverage experiment on a synthetic model")
    _add_model_flags(p_sim)
    p_sim.add_argument("--reps", type=int, default=10)
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--per-rep-csv", default=None, metavar="FILE",
                       help="write per-replication rows to FILE")
    _add_out_flags(p_sim)

    p_bench = sub.add_parser("bench", help="timing table for the selected methods")
    _add_model_flags(p_bench)
    p_bench.add_argument("--reps", type=int, default=1,
                         help="datasets to average over")
    _add_out_flags(p_bench)

    p_dump = sub.add_parser("dump-path", help="raw homotopy segments for query rows")
    _add_data_flags(p_dump, query=True)
    _add_penalty_flags(p_dump)
    p_dump.add_argument("--range", dest="y_range", type=_parse_range, default="auto")
    _add_out_flags(p_dump)
    return ap


def _write_text(out: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(fieldnames: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


# ---- subcommands -----------------------------------------------------------


def cmd_fit(args) -> int:
    data = ingest_csv(args.data, header=args.header)
    std = Standardizer.from_data(data) if args.standardize else None
    fit_data = std.apply(data) if std else data
    penalty = PenaltyConfig(lam=args.lam, rho=args.rho)
    t0 = time.perf_counter()
    f = lasso_fit(fit_data, penalty)
    elapsed = time.perf_counter() - t0
    rep = check_kkt(fit_data, f, tol=1e-6)
    payload = {
        "n": data.n,
        "p": data.p,
        "lambda": args.lam,
        "rho": args.rho,
        "beta": [float(b) for b in f.beta],
        "active": [int(j) for j in f.active],
        "objective": float(f.objective),
        "kkt_passed": bool(rep.passed),
        "sweeps": int(f.sweeps),
        "standardized": bool(std),
        "runtime_ms": elapsed * 1e3,
    }
    if args.format == "json":
        _write_text(args.out, _json_text(payload))
    else:
        rows = [
            {"index": j, "beta": payload["beta"][j], "active": int(j in set(payload["active"]))}
            for j in range(data.p)
        ]
        _write_text(args.out, _csv_text(["index", "beta", "active"], rows))
    return EXIT_OK


def _one_set(
    method: str,
    data: Dataset,
    x_row: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    y_range,
    base,
    gram,
    args,
) -> PredictionSet:
    if method == "exact":
        return exact_set(data, x_row, penalty, alpha, y_range, base=base, gram=gram,
                         early_stop_anchor=args.early_stop_anchor)
    if method == "exact-fast":
        return exact_set_fast(data, x_row, penalty, alpha, y_range, base=base, gram=gram,
                              early_stop_anchor=args.early_stop_anchor)
    if method == "grid":
        return grid_set(data, x_row, penalty, alpha, y_range, args.grid_step,
                        base=base, gram=gram).to_prediction_set()
    return split_set(data, x_row, penalty, alpha, args.split_frac, args.seed,
                     y_range=y_range)


def cmd_predict(args) -> int:
    raw = ingest_csv(args.data, header=args.header)
    queries_raw = read_query_csv(args.query, raw.p, header=args.header)
    std = Standardizer.from_data(raw) if args.standardize else None
    data = std.apply(raw) if std else raw
    queries = std.apply_x(queries_raw) if std else queries_raw
    y_range = args.y_range if isinstance(args.y_range, tuple) else None
    if std and y_range is not None:
        y_range = (y_range[0] - std.y_mean, y_range[1] - std.y_mean)
    penalty = PenaltyConfig(lam=args.lam, rho=args.rho)
    gram = data.X.T @ data.X
    base = lasso_fit(data, penalty, gram=gram)
    threads = args.threads if args.threads is not None else _default_threads()

    def work(i: int) -> tuple[int, PredictionSet, float]:
        row = queries[i]
        ps = _one_set(args.method, data, row, penalty, args.alpha, y_range,
                      base, gram, args)
        return i, ps, float(row @ base.beta)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(queries))))
    else:
        results = [work(i) for i in range(len(queries))]
    results.sort(key=lambda r: r[0])  # input order regardless of completion order

    records = []
    for i, ps, mu in results:
        d = ps.to_json_dict()
        if std:
            d["intervals"] = [[lo + std.y_mean, hi + std.y_mean] for lo, hi in d["intervals"]]
            mu = std.shift_back(mu)
        records.append({"query_index": i, "prediction": mu, "set": d})
        log.info("query %d: %d interval(s), %.2f ms", i, len(d["intervals"]), d["runtime_ms"])

    if args.dump_path:
        _dump_paths(args, data, base, gram, queries, std)

    if args.format == "json":
        _write_text(args.out, _json_text(records))
    else:
        rows = []
        for rec in records:
            s = rec["set"]
            for k, (lo, hi) in enumerate(s["intervals"]):
                rows.append({
                    "query_index": rec["query_index"],
                    "interval_index": k,
                    "lo": lo,
                    "hi": hi,
                    "prediction": rec["prediction"],
                    "alpha": s["alpha"],
                    "single_interval": int(s["single_interval"]),
                    "n_segments": s["n_segments"],
                    "n_fallbacks": s["n_fallbacks"],
                    "runtime_ms": s["runtime_ms"],
                })
        _write_text(args.out, _csv_text(
            ["query_index", "interval_index", "lo", "hi", "prediction", "alpha",
             "single_interval", "n_segments", "n_fallbacks", "runtime_ms"], rows))
    return EXIT_OK


def _trace_window(data: Dataset, base, gram, x_row, y_range):
    from .homotopy import QueryPoint

    q = QueryPoint.for_fit(x_row, base)
    lo, hi = y_range if y_range is not None else default_range(data.y)
    t_lo = min(lo - q.y_hat0, 0.0)
    t_hi = max(hi - q.y_hat0, 0.0)
    return trace(data, base, q, t_lo, t_hi, gram=gram), q


def _path_lines(records: list[dict]) -> str:
    # Line-delimited JSON, one record per segment.
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records)


def _segment_records(queries, data, base, gram, y_range) -> list[dict]:
    records = []
    for i, row in enumerate(queries):
        path, _ = _trace_window(data, base, gram, row, y_range)
        for seg in path.dump_records():
            records.append({"query_index": i, **seg})
    return records


def _dump_paths(args, data, base, gram, queries, std) -> None:
    y_range = args.y_range if isinstance(args.y_range, tuple) else None
    if std and y_range is not None:
        y_range = (y_range[0] - std.y_mean, y_range[1] - std.y_mean)
    with open(args.dump_path, "w") as fh:
        fh.write(_path_lines(_segment_records(queries, data, base, gram, y_range)))


def cmd_dump_path(args) -> int:
    raw = ingest_csv(args.data, header=args.header)
    queries_raw = read_query_csv(args.query, raw.p, header=args.header)
    std = Standardizer.from_data(raw) if args.standardize else None
    data = std.apply(raw) if std else raw
    queries = std.apply_x(queries_raw) if std else queries_raw
    y_range = args.y_range if isinstance(args.y_range, tuple) else None
    if std and y_range is not None:
        y_range = (y_range[0] - std.y_mean, y_range[1] - std.y_mean)
    penalty = PenaltyConfig(lam=args.lam, rho=args.rho)
    gram = data.X.T @ data.X
    base = lasso_fit(data, penalty, gram=gram)
    records = _segment_records(queries, data, base, gram, y_range)
    if args.format == "json":
        _write_text(args.out, _path_lines(records))
    else:
        rows = [
            {**rec, "change_index": "" if rec["change_index"] is None else rec["change_index"]}
            for rec in records
        ]
        _write_text(args.out, _csv_text(
            ["query_index", "t_start", "t_end", "n_active", "change", "change_index"],
            rows))
    return EXIT_OK


def _model_spec(args) -> ModelSpec:
    return ModelSpec(
        family=ModelFamily(args.family),
        dim_regime=DimRegime(args.dim_regime),
        sparsity=args.sparsity,
        amplitude=args.amplitude,
        seed=args.seed,
    )


def _lambda_rule(args):
    if args.lam is not None:
        return FixedLambda(args.lam)
    return CvMedianLambda(k_folds=args.cv_folds, n_reps=args.cv_reps)


def cmd_simulate(args) -> int:
    spec = _model_spec(args)
    report = run_experiment(
        spec,
        args.alpha,
        _lambda_rule(args),
        args.methods,
        args.reps,
        n_train=args.n_train,
        n_test=args.n_test,
        rho=args.rho,
        grid_points=args.grid_points,
        split_frac=args.split_frac,
        early_stop_anchor=args.early_stop_anchor,
        threads=args.threads if args.threads is not None else _default_threads(),
        per_rep_csv=args.per_rep_csv,
    )
    if report.failures:
        for f in report.failures:
            log.warning("replication failed: %s", f)
    if args.format == "json":
        _write_text(args.out, _json_text(report.to_json_dict()))
    else:
        from .simdata import _CSV_FIELDS

        _write_text(args.out, _csv_text(_CSV_FIELDS, report.csv_rows()))
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _model_spec(args)
    n_train = args.n_train if args.n_train is not None else spec.dim_regime.n_train
    lam = resolve_lambda(_lambda_rule(args), spec, n_train, rho=args.rho)
    penalty = PenaltyConfig(lam=lam, rho=args.rho)
    per_method: dict[str, dict] = {
        m: {"seconds": [], "segments": 0, "fallbacks": 0, "queries": 0}
        for m in args.methods
    }
    for rep in range(args.reps):
        rep_spec = dataclasses.replace(spec, seed=spec.seed + rep)
        train, test = generate(rep_spec, n_train, args.n_test)
        y_range = default_range(train.y)
        step = (y_range[1] - y_range[0]) / (args.grid_points - 1)
        for m in args.methods:
            t0 = time.perf_counter()
            segs = falls = 0
            if m == "split":
                # One split fit serves every query of the dataset.
                _split_batch(train, [x for x, _ in test], penalty, args.alpha,
                             args.split_frac, rep_spec.seed, y_range)
            else:
                gram = train.X.T @ train.X
                base = lasso_fit(train, penalty, gram=gram)
                for x, _ in test:
                    if m == "exact":
                        ps = exact_set(train, x, penalty, args.alpha, y_range,
                                       base=base, gram=gram,
                                       early_stop_anchor=args.early_stop_anchor)
                    elif m == "exact-fast":
                        ps = exact_set_fast(train, x, penalty, args.alpha, y_range,
                                            base=base, gram=gram,
                                            early_stop_anchor=args.early_stop_anchor)
                    else:
                        ps = grid_set(train, x, penalty, args.alpha, y_range, step,
                                      base=base, gram=gram).to_prediction_set()
                    segs += ps.n_segments
                    falls += ps.n_fallbacks
            elapsed = time.perf_counter() - t0
            d = per_method[m]
            d["seconds"].append(elapsed)
            d["segments"] += segs
            d["fallbacks"] += falls
            d["queries"] += len(test)
    rows = []
    for m in args.methods:
        d = per_method[m]
        sec = np.asarray(d["seconds"])
        rows.append({
            "method": m,
            "datasets": args.reps,
            "queries_per_dataset": args.n_test,
            "mean_seconds_per_dataset": float(sec.mean()),
            "mean_ms_per_query": float(sec.mean() / args.n_test * 1e3),
            "segments_per_query": d["segments"] / d["queries"],
            "fallbacks_total": d["fallbacks"],
        })
    fields = ["method", "datasets", "queries_per_dataset", "mean_seconds_per_dataset",
              "mean_ms_per_query", "segments_per_query", "fallbacks_total"]
    if args.format == "json":
        _write_text(args.out, _json_text({"lambda": lam, "alpha": args.alpha, "rows": rows}))
    else:
        _write_text(args.out, _csv_text(fields, rows))
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "dump-path": cmd_dump_path,
}

_NUMERIC_ERRORS = (
    NonConvergenceError,
    SingularGramError,
    SegmentLimitError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

_INPUT_ERRORS = (
    ParseError,
    NonFiniteValueError,
    DimensionMismatchError,
    DegenerateSplitError,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except _NUMERIC_ERRORS as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as exc:
        log.error("input error: %s: %s", type(exc).__name__, exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
