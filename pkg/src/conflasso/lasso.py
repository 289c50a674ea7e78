"""Elastic-net regularized lasso solver with KKT certification.

Every solver in this package minimizes

    0.5 * sum_i (y_i - x_i' beta)^2 + lam * ||beta||_1 + 0.5 * rho * ||beta||_2^2

There is no 1/n factor on the quadratic loss.  scikit-learn and glmnet
divide the loss by n or 2n, so penalty values are NOT interchangeable with
those packages: ``lam`` here plays the role of ``n * alpha`` in
scikit-learn's ``Lasso``.

Solutions are certified through the dual vector

    v = X' (y - X beta) - rho * beta

which must equal ``sign(beta_j) * lam`` on the support and stay within
``[-lam, lam]`` elsewhere.
"""

from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "Dataset",
    "PenaltyConfig",
    "KktReport",
    "LassoFit",
    "NonConvergenceError",
    "DimensionMismatchError",
    "fit",
    "fit_path",
    "dual_of",
    "check_kkt",
    "objective_value",
    "lambda_max",
    "soft_threshold",
]

# Tolerance below which an inactive dual coordinate sitting at the boundary
# |v_j| = lam is reported as a tie (relative to max(1, lam)).
_BOUNDARY_TIE_TOL = 1e-9


class NonConvergenceError(RuntimeError):
    """Coordinate descent hit its sweep cap with the KKT residual above tolerance."""


class DimensionMismatchError(ValueError):
    """Input arrays disagree on the number of rows or columns."""


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Immutable regression sample.

    Parameters
    ----------
    X : ndarray of shape (n, p)
        Design matrix.  Must be finite.
    y : ndarray of shape (n,)
        Response vector.  Must be finite.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=np.float64, order="C", copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatchError(
                f"X has {X.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("X needs at least one row and one column")
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite entries")
        if not np.isfinite(y).all():
            raise ValueError("y contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def append(self, x_row: np.ndarray, y_value: float) -> "Dataset":
        """Return a new Dataset with one extra observation appended."""
        x_row = np.asarray(x_row, dtype=np.float64)
        if x_row.shape != (self.p,):
            raise DimensionMismatchError(
                f"appended row has shape {x_row.shape}, expected ({self.p},)"
            )
        return Dataset(np.vstack([self.X, x_row]), np.append(self.y, y_value))


@dataclasses.dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights: ``lam`` scales the l1 term, ``rho`` the l2 term.

    ``lam`` must be strictly positive; a pure ridge or unpenalized fit is
    outside the scope of this solver.  ``rho = 0`` gives the plain lasso.
    """

    lam: float
    rho: float = 0.0

    def __post_init__(self) -> None:
        lam = float(self.lam)
        rho = float(self.rho)
        if not np.isfinite(lam) or lam <= 0.0:
            raise ValueError(f"lam must be a finite positive number, got {lam!r}")
        if not np.isfinite(rho) or rho < 0.0:
            raise ValueError(f"rho must be finite and >= 0, got {rho!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "rho", rho)


@dataclasses.dataclass(frozen=True)
class KktReport:
    """Stationarity check of a candidate solution.

    ``active_sign_violation`` is ``max_j |v_j - sign(beta_j) * lam|`` over the
    support, ``inactive_excess`` is ``max(0, max_j |v_j| - lam)`` off it, and
    ``worst_index`` names the coordinate attaining the larger of the two.
    """

    active_sign_violation: float
    inactive_excess: float
    worst_index: int
    passed: bool


@dataclasses.dataclass(frozen=True)
class LassoFit:
    """A certified solution of the penalized problem.

    Attributes
    ----------
    beta : ndarray of shape (p,)
        Coefficient vector.
    active : ndarray of int
        Indices of the nonzero coefficients, ascending.
    dual : ndarray of shape (p,)
        ``X'(y - X beta) - rho * beta`` recomputed at the solution.
    penalty : PenaltyConfig
    objective : float
        Objective value at ``beta``.
    sweeps : int
        Coordinate-descent sweeps spent (0 when the fit was produced by the
        path tracker rather than the solver).
    dual_boundary_ties : tuple of int
        Inactive coordinates whose dual sits on the boundary |v_j| = lam up
        to a small tolerance.  A nonempty tuple warns path-tracking callers
        that the starting active set is ambiguous.
    """

    beta: np.ndarray
    active: np.ndarray
    dual: np.ndarray
    penalty: PenaltyConfig
    objective: float
    sweeps: int
    dual_boundary_ties: tuple[int, ...] = ()


def soft_threshold(z: float, threshold: float) -> float:
    """Scalar soft-thresholding ``sign(z) * max(|z| - threshold, 0)``."""
    if z > threshold:
        return z - threshold
    if z < -threshold:
        return z + threshold
    return 0.0


def objective_value(data: Dataset, beta: np.ndarray, penalty: PenaltyConfig) -> float:
    """Objective ``0.5 ||y - X beta||^2 + lam ||beta||_1 + 0.5 rho ||beta||^2``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (data.p,):
        raise DimensionMismatchError(
            f"beta has shape {beta.shape}, expected ({data.p},)"
        )
    r = data.y - data.X @ beta
    return float(
        0.5 * (r @ r)
        + penalty.lam * np.abs(beta).sum()
        + 0.5 * penalty.rho * (beta @ beta)
    )


def dual_of(data: Dataset, beta: np.ndarray, penalty: PenaltyConfig) -> np.ndarray:
    """Dual vector ``X'(y - X beta) - rho * beta`` of a candidate solution."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (data.p,):
        raise DimensionMismatchError(
            f"beta has shape {beta.shape}, expected ({data.p},)"
        )
    return data.X.T @ (data.y - data.X @ beta) - penalty.rho * beta


def lambda_max(data: Dataset) -> float:
    """Smallest ``lam`` at which the all-zero vector solves the lasso: ``||X'y||_inf``."""
    return float(np.abs(data.X.T @ data.y).max())


def _kkt_stats(
    beta: np.ndarray, dual: np.ndarray, lam: float
) -> tuple[float, float, int]:
    """(active sign violation, inactive excess, worst coordinate)."""
    active = beta != 0.0
    act_viol = 0.0
    act_worst = -1
    if active.any():
        gaps = np.abs(dual[active] - np.sign(beta[active]) * lam)
        k = int(np.argmax(gaps))
        act_viol = float(gaps[k])
        act_worst = int(np.flatnonzero(active)[k])
    inact_excess = 0.0
    inact_worst = -1
    if not active.all():
        excess = np.abs(dual[~active]) - lam
        k = int(np.argmax(excess))
        inact_excess = float(max(excess[k], 0.0))
        inact_worst = int(np.flatnonzero(~active)[k])
    worst = act_worst if act_viol >= inact_excess else inact_worst
    return act_viol, inact_excess, worst


def _cd(
    gram: np.ndarray,
    c: np.ndarray,
    lam: float,
    rho: float,
    beta0: np.ndarray | None,
    coord_tol: float,
    kkt_tol: float,
    max_sweeps: int,
    strict: bool = True,
) -> tuple[np.ndarray, int, np.ndarray]:
    """Cyclic coordinate descent on the Gram form of the objective.

    Minimizes ``0.5 b'Gb - c'b + lam ||b||_1 + 0.5 rho ||b||_2^2`` where
    ``G = X'X`` and ``c = X'y``.  Sweeps alternate between the current
    support and the full coordinate range; convergence requires both a full
    sweep with max coordinate update below ``coord_tol`` and a KKT residual
    below ``kkt_tol``.
    """
    p = c.shape[0]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    if beta.shape != (p,):
        raise DimensionMismatchError(
            f"warm start has shape {beta.shape}, expected ({p},)"
        )
    denom = gram.diagonal() + rho
    u = gram @ beta if beta.any() else np.zeros(p)

    def sweep(idx) -> float:
        nonlocal u
        worst_step = 0.0
        for j in idx:
            dj = denom[j]
            bj_old = beta[j]
            if dj <= 0.0:
                # zero-variance column with rho = 0: coefficient pinned at 0
                if bj_old != 0.0:
                    u -= gram[j] * bj_old
                    beta[j] = 0.0
                continue
            z = c[j] - u[j] + gram[j, j] * bj_old
            bj = soft_threshold(z, lam) / dj
            step = bj - bj_old
            if step != 0.0:
                u += gram[j] * step
                beta[j] = bj
                if abs(step) > worst_step:
                    worst_step = abs(step)
        return worst_step

    def settle_support() -> tuple[np.ndarray, np.ndarray] | None:
        # Ill-conditioned supports make the sweeps crawl.  Once the signs
        # have stopped changing the face is known, so try the face's exact
        # minimizer; it is adopted only when the full stationarity check
        # passes, so a failed attempt leaves the sweeps untouched.
        idx = np.flatnonzero(beta)
        signs = np.sign(beta[idx])
        sub = gram[np.ix_(idx, idx)].copy()
        sub[np.diag_indices_from(sub)] += rho
        try:
            bj = np.linalg.solve(sub, c[idx] - lam * signs)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(bj) != signs):
            return None
        cand = np.zeros(p)
        cand[idx] = bj
        dual = c - gram @ cand - rho * cand
        act_viol, inact_excess, _ = _kkt_stats(cand, dual, lam)
        if max(act_viol, inact_excess) > kkt_tol:
            return None
        return cand, dual

    sweeps = 0
    stalled = 0
    full = range(p)
    while sweeps < max_sweeps:
        while sweeps < max_sweeps:
            support = np.flatnonzero(beta)
            if support.size == 0:
                break
            sweeps += 1
            if sweep(support) < coord_tol:
                break
            stalled += 1
            if stalled >= 32:
                stalled = 0
                settled = settle_support()
                if settled is not None:
                    beta, dual = settled
                    return beta, sweeps, dual
        if sweeps >= max_sweeps:
            break
        sweeps += 1
        if sweep(full) >= coord_tol:
            continue
        u = gram @ beta  # clear accumulated drift before certifying
        dual = c - u - rho * beta
        act_viol, inact_excess, _ = _kkt_stats(beta, dual, lam)
        if max(act_viol, inact_excess) <= kkt_tol:
            return beta, sweeps, dual

    u = gram @ beta
    dual = c - u - rho * beta
    if not strict:
        return beta, sweeps, dual
    act_viol, inact_excess, worst = _kkt_stats(beta, dual, lam)
    raise NonConvergenceError(
        f"coordinate descent did not converge in {max_sweeps} sweeps; "
        f"worst violating coordinate {worst} "
        f"(active sign violation {act_viol:.3e}, inactive excess {inact_excess:.3e})"
    )


def fit(
    data: Dataset,
    penalty: PenaltyConfig,
    *,
    beta0: np.ndarray | None = None,
    gram: np.ndarray | None = None,
    coord_tol: float = 1e-10,
    kkt_tol: float = 1e-8,
    max_sweeps: int = 100_000,
) -> LassoFit:
    """Solve the penalized problem and certify the result.

    Parameters
    ----------
    data : Dataset
    penalty : PenaltyConfig
    beta0 : ndarray, optional
        Warm start.  The minimizer is unaffected; only the sweep count is.
    gram : ndarray, optional
        Precomputed ``X'X`` for callers fitting the same design repeatedly.
    coord_tol, kkt_tol, max_sweeps :
        Convergence controls; see `_cd`.

    Returns
    -------
    LassoFit

    Raises
    ------
    NonConvergenceError
        If the sweep cap is reached first.
    """
    X, y = data.X, data.y
    if gram is None:
        gram = X.T @ X
    elif gram.shape != (data.p, data.p):
        raise DimensionMismatchError(
            f"gram has shape {gram.shape}, expected ({data.p}, {data.p})"
        )
    c = X.T @ y
    beta, sweeps, dual = _cd(
        gram, c, penalty.lam, penalty.rho, beta0, coord_tol, kkt_tol, max_sweeps
    )
    active = np.flatnonzero(beta)
    inactive_gap = penalty.lam - np.abs(dual)
    tie_tol = _BOUNDARY_TIE_TOL * max(1.0, penalty.lam)
    ties = tuple(
        int(j) for j in np.flatnonzero((inactive_gap <= tie_tol) & (beta == 0.0))
    )
    beta.setflags(write=False)
    return LassoFit(
        beta=beta,
        active=active,
        dual=dual,
        penalty=penalty,
        objective=objective_value(data, beta, penalty),
        sweeps=sweeps,
        dual_boundary_ties=ties,
    )


def fit_path(
    data: Dataset,
    lambdas: np.ndarray,
    rho: float = 0.0,
    *,
    gram: np.ndarray | None = None,
    coord_tol: float = 1e-10,
    kkt_tol: float = 1e-8,
    max_sweeps: int = 100_000,
    strict: bool = True,
) -> np.ndarray:
    """Coefficients along a sequence of ``lam`` values, warm-starting each fit.

    Returns an array of shape ``(len(lambdas), p)`` in the given order.
    Pass ``lambdas`` descending for the cheapest warm-start chain.

    With ``strict=False`` a fit that exhausts ``max_sweeps`` contributes its
    final iterate instead of raising.  That trades certification for bounded
    effort and suits screening loops that only rank fits; anything whose
    output is consumed as an exact solution should stay strict.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if gram is None:
        gram = data.X.T @ data.X
    c = data.X.T @ data.y
    out = np.empty((lambdas.size, data.p))
    warm: np.ndarray | None = None
    for k, lam in enumerate(lambdas):
        if not np.isfinite(lam) or lam <= 0.0:
            raise ValueError(f"lambdas must be finite and positive, got {lam!r}")
        warm, _, _ = _cd(
            gram, c, float(lam), rho, warm, coord_tol, kkt_tol, max_sweeps, strict
        )
        out[k] = warm
    return out


def check_kkt(data: Dataset, fit_result: LassoFit, tol: float = 1e-8) -> KktReport:
    """Recompute the dual from the data and test stationarity of a fit.

    The dual stored on the fit is not trusted; it is rebuilt from
    ``fit_result.beta`` so the report certifies the coefficients alone.
    """
    dual = dual_of(data, fit_result.beta, fit_result.penalty)
    act_viol, inact_excess, worst = _kkt_stats(
        fit_result.beta, dual, fit_result.penalty.lam
    )
    return KktReport(
        active_sign_violation=act_viol,
        inactive_excess=inact_excess,
        worst_index=worst,
        passed=bool(max(act_viol, inact_excess) <= tol),
    )
