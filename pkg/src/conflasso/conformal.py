"""Conformal prediction sets from the augmented-fit residual rank.

A candidate response ``y`` at a new covariate row is accepted when, after
fitting the penalized regression on the n+1 points including ``(x_new, y)``,
the candidate's absolute residual ranks low enough among all n+1 residuals.
``exact_set`` classifies every ``y`` in a range at once by tracing the
piecewise-linear solution path of the augmented problem, so its output is
exact up to floating point.  ``grid_set`` and ``split_set`` are the
brute-force and sample-splitting baselines.

Sets are unions of half-open intervals ``[lo, hi)``.  Membership at a single
point uses the weak inequality (ties count against the candidate), so an
interval endpoint that lands exactly on a tie may differ from the pointwise
rule on that one point; the discrepancy has measure zero.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from .homotopy import QueryPoint, SingularGramError, _Tracer
from .lasso import (
    Dataset,
    DimensionMismatchError,
    LassoFit,
    PenaltyConfig,
    check_kkt,
    fit as lasso_fit,
)

__all__ = [
    "Interval",
    "PredictionSet",
    "GridEvaluation",
    "ResidualTrajectory",
    "DegenerateSplitError",
    "default_range",
    "p_value",
    "interval_condition",
    "exact_set",
    "exact_set_fast",
    "grid_set",
    "split_set",
]

_ROOT_DEDUP_TOL = 1e-12   # absolute spacing below which crossing roots merge

# endpoint provenance tags
_TAG_BREAK = "breakpoint"
_TAG_RANK = "rank_crossing"
_TAG_CLIP = "range_clip"
_TAG_QUANTILE = "quantile"
_TAG_GRID = "grid"


class DegenerateSplitError(ValueError):
    """The requested split leaves the training or calibration part empty."""


@dataclasses.dataclass(frozen=True)
class Interval:
    """Half-open interval ``[lo, hi)`` with endpoint provenance tags.

    Tags: ``breakpoint`` (support change on the solution path),
    ``rank_crossing`` (a residual overtakes the candidate's),
    ``range_clip`` (cut by the search range), ``quantile`` (split baseline).
    """

    lo: float
    hi: float
    lo_tag: str
    hi_tag: str

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi})")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, y: float) -> bool:
        return self.lo <= y < self.hi

    def to_json_dict(self) -> dict:
        return {
            "lo": float(self.lo),
            "hi": float(self.hi),
            "lo_tag": self.lo_tag,
            "hi_tag": self.hi_tag,
        }


@dataclasses.dataclass(frozen=True)
class PredictionSet:
    """A conformal prediction set as a union of disjoint intervals."""

    alpha: float
    intervals: tuple[Interval, ...]
    single_interval: bool
    n_segments: int
    n_fallbacks: int
    runtime_ms: float

    def contains(self, y: float) -> bool:
        return any(iv.contains(y) for iv in self.intervals)

    @property
    def total_length(self) -> float:
        return sum(iv.length for iv in self.intervals)

    def to_json_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "intervals": [[float(iv.lo), float(iv.hi)] for iv in self.intervals],
            "single_interval": bool(self.single_interval),
            "n_segments": int(self.n_segments),
            "n_fallbacks": int(self.n_fallbacks),
            "runtime_ms": float(self.runtime_ms),
        }


@dataclasses.dataclass(frozen=True)
class GridEvaluation:
    """Pointwise membership of every grid value, from per-point refits."""

    alpha: float
    step: float
    y_values: np.ndarray
    counts: np.ndarray
    p_values: np.ndarray
    in_set: np.ndarray
    runtime_ms: float

    def intervals(self) -> list[tuple[float, float]]:
        """Maximal runs of in-set grid points as half-open intervals.

        The upper end of a run is the first out-of-set grid value after it
        (or one step past the grid when the run reaches the end), matching
        the half-open convention of the exact routines to within one step.
        """
        out: list[tuple[float, float]] = []
        inside = self.in_set
        y = self.y_values
        start = None
        for k in range(inside.size):
            if inside[k] and start is None:
                start = y[k]
            elif not inside[k] and start is not None:
                out.append((float(start), float(y[k])))
                start = None
        if start is not None:
            out.append((float(start), float(y[-1] + self.step)))
        return out

    def csv_rows(self) -> list[dict]:
        """One ``{y, in_set}`` row per grid point, for dumping."""
        return [
            {"y": float(v), "in_set": int(flag)}
            for v, flag in zip(self.y_values, self.in_set)
        ]

    def to_prediction_set(self) -> PredictionSet:
        """The grid runs repackaged in the exact methods' result type.

        Boundaries carry the ``grid`` tag: they are accurate only to one
        step.  Segment and fallback counts are zero by construction.
        """
        ivs = tuple(
            Interval(lo, hi, _TAG_GRID, _TAG_GRID) for lo, hi in self.intervals()
        )
        return PredictionSet(
            alpha=self.alpha,
            intervals=ivs,
            single_interval=len(ivs) == 1,
            n_segments=0,
            n_fallbacks=0,
            runtime_ms=self.runtime_ms,
        )


@dataclasses.dataclass(frozen=True)
class ResidualTrajectory:
    """Affine residuals of all n points and the candidate on one segment.

    On ``[t_start, t_end)`` the i-th residual is
    ``resid_anchor[i] + slopes[i] * (t - t_start)`` and the candidate's is
    ``cand_anchor + cand_slope * (t - t_start)`` with ``cand_slope > 0``.
    """

    t_start: float
    t_end: float
    resid_anchor: np.ndarray
    slopes: np.ndarray
    cand_anchor: float
    cand_slope: float

    def residuals_at(self, t: float) -> np.ndarray:
        return self.resid_anchor + self.slopes * (t - self.t_start)

    def candidate_at(self, t: float) -> float:
        return self.cand_anchor + self.cand_slope * (t - self.t_start)

    def count_at(self, t: float) -> int:
        """Rank statistic at ``t``: the candidate plus every point at least
        as close to its fitted value (weak inequality)."""
        c = abs(self.candidate_at(t))
        return 1 + int(np.sum(np.abs(self.residuals_at(t)) <= c))


def default_range(y: np.ndarray) -> tuple[float, float]:
    """Search range: the response span padded by a quarter on each side."""
    y = np.asarray(y, dtype=np.float64)
    lo, hi = float(y.min()), float(y.max())
    w = hi - lo
    if w <= 0.0:
        return lo - 1.0, hi + 1.0
    return lo - 0.25 * w, hi + 0.25 * w


def _rank_threshold(n: int, alpha: float) -> int:
    """Largest acceptable rank: ceil((n+1)(1-alpha)), guarded against the
    product landing a hair above an integer in floating point."""
    v = (n + 1) * (1.0 - alpha)
    r = round(v)
    if abs(v - r) <= 1e-9:
        return int(r)
    return int(math.ceil(v))


def p_value(
    data: Dataset,
    x_new: np.ndarray,
    y_cand: float,
    penalty: PenaltyConfig,
    *,
    base: LassoFit | None = None,
    gram: np.ndarray | None = None,
) -> float:
    """Rank-based p-value of the candidate ``(x_new, y_value)``.

    Equals ``(n + 2 - count) / (n + 1)`` where ``count`` is the candidate's
    weak rank among the n+1 augmented-fit absolute residuals, so the value
    lies in ``[1/(n+1), 1]`` and the candidate enters the level-alpha set
    exactly when the p-value exceeds ``alpha``.
    """
    aug = data.append(x_new, y_cand)
    gram_aug = None
    if gram is not None:
        x_row = np.asarray(x_new, dtype=np.float64)
        gram_aug = gram + np.outer(x_row, x_row)
    f = lasso_fit(
        aug, penalty, beta0=None if base is None else base.beta, gram=gram_aug
    )
    resid = aug.y - aug.X @ f.beta
    count = int(np.sum(np.abs(resid) <= abs(resid[-1])))
    return (data.n + 2 - count) / (data.n + 1)


def interval_condition(
    data: Dataset,
    x_new: np.ndarray,
    active: np.ndarray,
    rho: float = 0.0,
    *,
    gram: np.ndarray | None = None,
) -> bool:
    """Whether the cross-leverage bound forcing a single interval holds.

    True iff ``max_i |x_i_J' (X_J'X_J + rho I)^{-1} x_new_J| < 1`` strictly
    for the support ``J``.  When this holds on every traversed segment,
    every training residual moves slower than the candidate's, membership
    flips at most once per side, and the set is one interval.  An empty
    support passes vacuously.

    Raises
    ------
    SingularGramError
        If ``rho == 0`` and the support Gram block is singular.
    """
    active = np.asarray(active, dtype=np.intp)
    if active.size == 0:
        return True
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (data.p,):
        raise DimensionMismatchError(
            f"x_new has shape {x_new.shape}, expected ({data.p},)"
        )
    if gram is None:
        block = data.X[:, active].T @ data.X[:, active]
    else:
        block = gram[np.ix_(active, active)].copy()
    block = block + float(rho) * np.eye(active.size)
    try:
        u = np.linalg.solve(block, x_new[active])
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(
            f"support Gram block of size {active.size} is singular "
            "and rho is 0"
        ) from exc
    if not np.isfinite(u).all():
        raise SingularGramError("support Gram block solve overflowed")
    return bool(np.abs(data.X[:, active] @ u).max() < 1.0)


# ---- exact machinery -----------------------------------------------------


def _trajectory(
    X: np.ndarray,
    y: np.ndarray,
    x_new: np.ndarray,
    y_hat0: float,
    seg,
) -> ResidualTrajectory:
    beta_a = seg.beta_at(seg.t_start)
    resid_anchor = y - X @ beta_a
    if seg.active.size:
        slopes = -(X[:, seg.active] @ seg.eta)
        cand_slope = 1.0 - float(x_new[seg.active] @ seg.eta)
    else:
        slopes = np.zeros(X.shape[0])
        cand_slope = 1.0
    cand_anchor = (y_hat0 + seg.t_start) - float(x_new @ beta_a)
    return ResidualTrajectory(
        t_start=seg.t_start,
        t_end=seg.t_end,
        resid_anchor=resid_anchor,
        slopes=slopes,
        cand_anchor=cand_anchor,
        cand_slope=cand_slope,
    )


def _crossing_times(traj: ResidualTrajectory, idx: np.ndarray | None = None):
    """All t strictly inside the segment where |r_i(t)| = |candidate(t)|."""
    ra = traj.resid_anchor if idx is None else traj.resid_anchor[idx]
    s = traj.slopes if idx is None else traj.slopes[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_minus = traj.t_start - (ra - traj.cand_anchor) / (s - traj.cand_slope)
        t_plus = traj.t_start - (ra + traj.cand_anchor) / (s + traj.cand_slope)
    roots = np.concatenate([t_minus, t_plus])
    keep = np.isfinite(roots) & (roots > traj.t_start) & (roots < traj.t_end)
    return roots[keep]


def _general_parts(traj: ResidualTrajectory, m: int) -> list[tuple]:
    """Split the segment at every crossing and classify each piece at its
    midpoint.  Returns (lo, hi, in_set, lo_tag, hi_tag) tuples ascending."""
    roots = np.sort(_crossing_times(traj))
    if roots.size > 1:
        keep = np.concatenate([[True], np.diff(roots) > _ROOT_DEDUP_TOL])
        roots = roots[keep]
    edges = [traj.t_start, *roots.tolist(), traj.t_end]
    parts = []
    last = len(edges) - 2
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        if not lo < hi:
            continue
        inside = traj.count_at(0.5 * (lo + hi)) <= m
        lo_tag = _TAG_BREAK if k == 0 else _TAG_RANK
        hi_tag = _TAG_BREAK if k == last else _TAG_RANK
        parts.append((lo, hi, inside, lo_tag, hi_tag))
    return parts


def _fast_parts(
    traj: ResidualTrajectory, m: int, direction: int
) -> list[tuple] | None:
    """Single-crossing classification, valid when every training residual
    moves strictly slower than the candidate's on this segment.

    The candidate's absolute residual then grows strictly faster than any
    other as t moves away from 0, each point's closeness comparison flips
    at most once (toward counting), and the rank is monotone outward: the
    piece nearest 0 is in-set up to the rank's crossing of the threshold.
    Returns None when the premise fails and the caller must enumerate.
    """
    cs = traj.cand_slope
    if not cs > 0.0 or float(np.max(np.abs(traj.slopes), initial=0.0)) >= cs:
        return None
    inner = traj.t_start if direction > 0 else traj.t_end
    c0 = traj.count_at(inner)
    if c0 > m:
        return [(traj.t_start, traj.t_end, False, _TAG_BREAK, _TAG_BREAK)]
    need = m - c0 + 1
    gap = np.abs(traj.residuals_at(inner)) - abs(traj.candidate_at(inner))
    pending = np.flatnonzero(gap > 0.0)
    if pending.size < need:
        return [(traj.t_start, traj.t_end, True, _TAG_BREAK, _TAG_BREAK)]
    entries = _crossing_times(traj, pending)
    if entries.size < need:
        return [(traj.t_start, traj.t_end, True, _TAG_BREAK, _TAG_BREAK)]
    entries = np.sort(entries)
    t_star = float(entries[need - 1] if direction > 0 else entries[-need])
    if direction > 0:
        return [
            (traj.t_start, t_star, True, _TAG_BREAK, _TAG_RANK),
            (t_star, traj.t_end, False, _TAG_RANK, _TAG_BREAK),
        ]
    return [
        (traj.t_start, t_star, False, _TAG_BREAK, _TAG_RANK),
        (t_star, traj.t_end, True, _TAG_RANK, _TAG_BREAK),
    ]


def _direction_parts(
    tracer: _Tracer,
    direction: int,
    bound: float,
    m: int,
    fast: bool,
    early_stop: bool,
) -> list[tuple]:
    """Classified pieces of one trace direction, ordered outward from 0.

    With ``early_stop`` the walk abandons the trace at the first out-of-set
    piece, keeping only the connected component that touches the anchor.
    """
    X, y = tracer.X, tracer.y
    x_new, y_hat0 = tracer.x_new, tracer.y_hat0
    parts: list[tuple] = []
    for seg in tracer.run(direction, bound):
        if not seg.t_start < seg.t_end:
            continue
        traj = _trajectory(X, y, x_new, y_hat0, seg)
        seg_parts = _fast_parts(traj, m, direction) if fast else None
        if seg_parts is None:
            seg_parts = _general_parts(traj, m)
        if direction < 0:
            seg_parts = list(reversed(seg_parts))
        for part in seg_parts:
            parts.append(part)
            if early_stop and not part[2]:
                return parts
    return parts


def _assemble(
    parts: list[tuple], window: tuple[float, float], y_hat0: float
) -> tuple[Interval, ...]:
    """Clip classified pieces to the window, merge adjacent in-set pieces,
    and shift from offsets to response values."""
    wlo, whi = window
    merged: list[list] = []
    cur: list | None = None
    for lo, hi, inside, lo_tag, hi_tag in parts:
        if hi <= wlo or lo >= whi:
            continue
        if lo <= wlo:
            lo, lo_tag = wlo, _TAG_CLIP
        if hi >= whi:
            hi, hi_tag = whi, _TAG_CLIP
        if not lo < hi:
            continue
        if inside:
            if cur is not None and cur[1] == lo:
                cur[1], cur[3] = hi, hi_tag
            else:
                if cur is not None:
                    merged.append(cur)
                cur = [lo, hi, lo_tag, hi_tag]
        else:
            if cur is not None:
                merged.append(cur)
                cur = None
    if cur is not None:
        merged.append(cur)
    return tuple(
        Interval(y_hat0 + lo, y_hat0 + hi, lo_tag, hi_tag)
        for lo, hi, lo_tag, hi_tag in merged
    )


def _exact(
    data: Dataset,
    x_new: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    y_range: tuple[float, float] | None,
    base: LassoFit | None,
    gram: np.ndarray | None,
    fast: bool,
    early_stop_anchor: bool,
) -> PredictionSet:
    t0 = time.perf_counter()
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if base is None:
        base = lasso_fit(data, penalty, gram=gram)
    elif base.penalty != penalty:
        raise ValueError("base fit was made under a different penalty")
    rep = check_kkt(data, base, tol=1e-6)
    if not rep.passed:
        raise ValueError(
            "base fit fails its KKT check "
            f"(active sign violation {rep.active_sign_violation:.3e}, "
            f"inactive excess {rep.inactive_excess:.3e})"
        )
    x_row = np.asarray(x_new, dtype=np.float64)
    if x_row.shape != (data.p,):
        raise DimensionMismatchError(
            f"x_new has shape {x_row.shape}, expected ({data.p},)"
        )
    query = QueryPoint.for_fit(x_row, base)
    if y_range is None:
        y_range = default_range(data.y)
    y_lo, y_hi = float(y_range[0]), float(y_range[1])
    if not y_lo < y_hi:
        raise ValueError(f"need y_lo < y_hi, got [{y_lo}, {y_hi}]")
    wlo, whi = y_lo - query.y_hat0, y_hi - query.y_hat0
    m = _rank_threshold(data.n, alpha)
    tracer = _Tracer(data, base, query, gram=gram)
    pos_parts: list[tuple] = []
    neg_parts: list[tuple] = []
    if whi > 0.0:
        pos_parts = _direction_parts(tracer, +1, whi, m, fast, early_stop_anchor)
    if wlo < 0.0:
        neg_parts = _direction_parts(tracer, -1, wlo, m, fast, early_stop_anchor)
    parts = list(reversed(neg_parts)) + pos_parts
    intervals = _assemble(parts, (wlo, whi), query.y_hat0)
    diag = tracer.diagnostics
    return PredictionSet(
        alpha=alpha,
        intervals=intervals,
        single_interval=len(intervals) == 1,
        n_segments=diag.segments,
        n_fallbacks=diag.fallback_refits,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
    )


def exact_set(
    data: Dataset,
    x_new: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    y_range: tuple[float, float] | None = None,
    *,
    base: LassoFit | None = None,
    gram: np.ndarray | None = None,
    early_stop_anchor: bool = False,
) -> PredictionSet:
    """Exact prediction set over ``y_range``, general path.

    Every segment of the augmented solution path is split at all residual
    rank crossings and each piece is classified by the rank rule at its
    midpoint.  ``early_stop_anchor`` truncates the output to the connected
    component containing the anchor prediction, saving the tail of the
    trace; coverage is then heuristic when the full set is disconnected.

    Parameters
    ----------
    data : Dataset
    x_new : ndarray of shape (p,)
    penalty : PenaltyConfig
    alpha : float
        Miscoverage level in (0, 1).
    y_range : (float, float), optional
        Candidate range; defaults to :func:`default_range` of the responses.
    base : LassoFit, optional
        Fit of ``data`` under ``penalty``; computed when absent.
    gram : ndarray, optional
        Precomputed ``X'X`` of ``data``.
    early_stop_anchor : bool
    """
    return _exact(
        data, x_new, penalty, alpha, y_range, base, gram,
        fast=False, early_stop_anchor=early_stop_anchor,
    )


def exact_set_fast(
    data: Dataset,
    x_new: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    y_range: tuple[float, float] | None = None,
    *,
    base: LassoFit | None = None,
    gram: np.ndarray | None = None,
    early_stop_anchor: bool = False,
) -> PredictionSet:
    """Exact prediction set using per-segment monotonicity when available.

    Segments where every training residual moves strictly slower than the
    candidate's are classified with a single rank crossing instead of a
    full enumeration; segments failing that premise fall back to the
    general rule, so the result is always identical to :func:`exact_set`.
    """
    return _exact(
        data, x_new, penalty, alpha, y_range, base, gram,
        fast=True, early_stop_anchor=early_stop_anchor,
    )


def grid_set(
    data: Dataset,
    x_new: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    y_range: tuple[float, float] | None = None,
    step: float = 1e-3,
    *,
    base: LassoFit | None = None,
    gram: np.ndarray | None = None,
) -> GridEvaluation:
    """Brute-force baseline: refit the augmented problem at every grid value.

    Fits are chained (each warm-starts the next) with the augmented Gram
    computed once, but each grid value still pays a full solve; this is the
    oracle the exact routines are checked against, not a fast method.
    """
    t0 = time.perf_counter()
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if step <= 0.0 or not np.isfinite(step):
        raise ValueError(f"step must be positive, got {step}")
    if base is None:
        base = lasso_fit(data, penalty, gram=gram)
    elif base.penalty != penalty:
        raise ValueError("base fit was made under a different penalty")
    if y_range is None:
        y_range = default_range(data.y)
    y_lo, y_hi = float(y_range[0]), float(y_range[1])
    if not y_lo < y_hi:
        raise ValueError(f"need y_lo < y_hi, got [{y_lo}, {y_hi}]")
    x_row = np.asarray(x_new, dtype=np.float64)
    if x_row.shape != (data.p,):
        raise DimensionMismatchError(
            f"x_new has shape {x_row.shape}, expected ({data.p},)"
        )
    if gram is None:
        gram = data.X.T @ data.X
    gram_aug = gram + np.outer(x_row, x_row)
    k_max = int(math.floor((y_hi - y_lo) / step + 1e-9))
    y_values = y_lo + step * np.arange(k_max + 1)
    n = data.n
    m = _rank_threshold(n, alpha)
    counts = np.empty(y_values.size, dtype=np.intp)
    warm = base.beta
    for k, y_val in enumerate(y_values):
        aug = data.append(x_row, float(y_val))
        f = lasso_fit(aug, penalty, beta0=warm, gram=gram_aug)
        warm = f.beta
        resid = aug.y - aug.X @ f.beta
        counts[k] = int(np.sum(np.abs(resid) <= abs(resid[-1])))
    p_values = (n + 2 - counts) / (n + 1)
    in_set = counts <= m
    return GridEvaluation(
        alpha=alpha,
        step=step,
        y_values=y_values,
        counts=counts,
        p_values=p_values,
        in_set=in_set,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
    )


def split_set(
    data: Dataset,
    x_new: np.ndarray,
    penalty: PenaltyConfig,
    alpha: float,
    split_frac: float = 0.5,
    seed: int = 0,
    *,
    y_range: tuple[float, float] | None = None,
) -> PredictionSet:
    """Sample-splitting baseline: fit on one part, calibrate on the other.

    The interval is the training-fit prediction plus/minus the appropriate
    order statistic of the calibration absolute residuals.  When the
    calibration part is too small to certify the level (the required rank
    exceeds its size) the interval is the clipped search range instead,
    marked with ``range_clip`` tags.
    """
    t0 = time.perf_counter()
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 < split_frac < 1.0:
        raise ValueError(f"split_frac must be in (0, 1), got {split_frac}")
    x_row = np.asarray(x_new, dtype=np.float64)
    if x_row.shape != (data.p,):
        raise DimensionMismatchError(
            f"x_new has shape {x_row.shape}, expected ({data.p},)"
        )
    n = data.n
    n_train = int(round(split_frac * n))
    if n_train < 1 or n_train > n - 1:
        raise DegenerateSplitError(
            f"split_frac={split_frac} leaves train={n_train} of n={n}; "
            "both parts need at least one point"
        )
    perm = np.random.default_rng(seed).permutation(n)
    train_idx, cal_idx = perm[:n_train], perm[n_train:]
    train = Dataset(data.X[train_idx], data.y[train_idx])
    f = lasso_fit(train, penalty)
    mu = float(x_row @ f.beta)
    cal_resid = np.abs(data.y[cal_idx] - data.X[cal_idx] @ f.beta)
    k = _rank_threshold(cal_resid.size, alpha)
    if k > cal_resid.size:
        lo, hi = y_range if y_range is not None else default_range(data.y)
        iv = Interval(float(lo), float(hi), _TAG_CLIP, _TAG_CLIP)
    else:
        q = float(np.partition(cal_resid, k - 1)[k - 1])
        # q = 0 (an interpolating fit) degenerates to the point {mu}; keep
        # the half-open representation valid with the smallest step up.
        hi = mu + q if q > 0.0 else float(np.nextafter(mu, np.inf))
        iv = Interval(mu - q, hi, _TAG_QUANTILE, _TAG_QUANTILE)
    return PredictionSet(
        alpha=alpha,
        intervals=(iv,),
        single_interval=True,
        n_segments=0,
        n_fallbacks=0,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
    )
