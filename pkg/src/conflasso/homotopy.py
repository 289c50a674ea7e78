"""Piecewise-linear tracking of the lasso solution under one moving response.

Append a covariate row ``x_new`` to a fitted dataset and give the new row the
response ``y_hat0 + t`` where ``y_hat0 = x_new' beta_hat``.  At ``t = 0`` the
augmented solution equals the original fit, and as ``t`` moves the solution
follows a piecewise-linear path: on each segment the active set is constant,
the active coefficients move with slope ``eta`` and the inactive dual
coordinates with slope ``gamma``.  Segments end where a coefficient hits zero
(deletion) or an inactive dual coordinate reaches the penalty boundary
(addition).

The tracer walks that path in both directions, maintaining the inverse of the
active-set Gram block by rank-one updates, and falls back to a fresh
augmented refit whenever two breakpoints collide within tolerance or the
starting duals sit exactly on the boundary.  All public entry points are pure
with respect to their inputs, so independent traces can run concurrently.
"""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from .lasso import (
    Dataset,
    DimensionMismatchError,
    LassoFit,
    PenaltyConfig,
    check_kkt,
    dual_of,
    fit as lasso_fit,
    objective_value,
)

__all__ = [
    "QueryPoint",
    "PathChange",
    "HomotopySegment",
    "PathDiagnostics",
    "HomotopyPath",
    "SingularGramError",
    "SegmentLimitError",
    "segment_directions",
    "next_breakpoint",
    "trace",
    "online_update",
]

# Spec'd numerical policy for the tracer.
_TIE_RTOL = 1e-9          # breakpoint collision tolerance, relative to max(1, |t|)
_REFIT_BUMP = 1e-7        # offset past a trouble point for the fallback refit
_REFACTOR_EVERY = 50      # rank-one updates between fresh factorizations
_COND_LIMIT = 1e12        # condition estimate forcing a fresh factorization
_DUAL_REFRESH_EVERY = 20  # segments between full dual recomputations
_SEGMENT_CAP_FACTOR = 10  # per-direction cap is this times (n + p)


class SingularGramError(RuntimeError):
    """The active-set Gram block is numerically singular."""


class SegmentLimitError(RuntimeError):
    """A single direction produced more segments than the safety cap allows."""


class PathChange(str, enum.Enum):
    """What happens at a segment's far boundary (in trace direction).

    ``START`` marks the degenerate zero-width anchor emitted when both range
    ends are 0.  ``DELETION``/``ADDITION`` name a support change, ``CLIPPED``
    means the range boundary cut the segment, and ``REFIT`` marks segments
    that end at a fallback refit (breakpoint tie or boundary-tied duals).
    """

    START = "start"
    DELETION = "deletion"
    ADDITION = "addition"
    CLIPPED = "clipped"
    REFIT = "refit"


@dataclasses.dataclass(frozen=True)
class QueryPoint:
    """A covariate row to be appended, with the base prediction at that row.

    ``y_hat0`` is always recomputed from the base fit by the tracer; the
    stored value is a convenience, not a trusted input.
    """

    x_new: np.ndarray
    y_hat0: float

    def __post_init__(self) -> None:
        x = np.array(self.x_new, dtype=np.float64, copy=True)
        if x.ndim != 1:
            raise ValueError(f"x_new must be 1-D, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("x_new contains non-finite entries")
        if not np.isfinite(self.y_hat0):
            raise ValueError("y_hat0 must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x_new", x)
        object.__setattr__(self, "y_hat0", float(self.y_hat0))

    @classmethod
    def for_fit(cls, x_new: np.ndarray, base: LassoFit) -> "QueryPoint":
        x_new = np.asarray(x_new, dtype=np.float64)
        return cls(x_new, float(x_new @ base.beta))


@dataclasses.dataclass(frozen=True)
class HomotopySegment:
    """One linear piece of the path, valid on ``[t_start, t_end)``.

    ``active`` holds the support indices ascending; ``beta_anchor`` the active
    coefficients at ``t_start``; ``eta`` their slope d beta / d t;
    ``dual_inactive_anchor`` the dual values on the complement (ascending) at
    ``t_start``; ``gamma`` their slope.  ``change`` describes the event at the
    far end of the segment in the direction it was traced (away from 0).
    """

    t_start: float
    t_end: float
    active: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    beta_anchor: np.ndarray
    dual_inactive_anchor: np.ndarray
    change: PathChange
    change_index: int | None = None

    @property
    def n_features(self) -> int:
        return self.active.size + self.gamma.size

    def beta_at(self, t: float) -> np.ndarray:
        """Full coefficient vector at offset ``t`` inside the segment."""
        beta = np.zeros(self.n_features)
        if self.active.size:
            beta[self.active] = self.beta_anchor + self.eta * (t - self.t_start)
        return beta


@dataclasses.dataclass
class PathDiagnostics:
    """Counters accumulated while tracing."""

    segments_forward: int = 0
    segments_backward: int = 0
    fallback_refits: int = 0
    tie_events: int = 0
    singular_gram_events: int = 0

    @property
    def segments(self) -> int:
        return self.segments_forward + self.segments_backward


@dataclasses.dataclass(frozen=True)
class HomotopyPath:
    """The traced path over ``[t_lo, t_hi]``.

    ``positive_segments`` tile ``[0, t_hi)`` in ascending order;
    ``negative_segments`` tile ``[t_lo, 0)`` ordered outward from 0 (the
    first element touches 0, the last touches ``t_lo``).
    """

    base: LassoFit
    query: QueryPoint
    positive_segments: tuple[HomotopySegment, ...]
    negative_segments: tuple[HomotopySegment, ...]
    t_lo: float
    t_hi: float
    diagnostics: PathDiagnostics

    def beta_at(self, t: float) -> np.ndarray:
        """Coefficients at offset ``t``; both range endpoints are included."""
        if not (self.t_lo <= t <= self.t_hi):
            raise ValueError(f"t={t} outside traced range [{self.t_lo}, {self.t_hi}]")
        if t >= 0:
            for seg in self.positive_segments:
                if t < seg.t_end or (t == seg.t_end == self.t_hi):
                    return seg.beta_at(t)
            if t == 0.0:
                return np.array(self.base.beta)
        else:
            for seg in self.negative_segments:
                if t >= seg.t_start:
                    return seg.beta_at(t)
        raise ValueError(f"no segment covers t={t}")

    def dump_records(self) -> list[dict]:
        """One JSON-ready record per segment, ascending in ``t_start``."""
        ordered = list(reversed(self.negative_segments)) + list(
            self.positive_segments
        )
        return [
            {
                "t_start": float(seg.t_start),
                "t_end": float(seg.t_end),
                "n_active": int(seg.active.size),
                "change": seg.change.value,
                "change_index": (
                    None if seg.change_index is None else int(seg.change_index)
                ),
            }
            for seg in ordered
        ]


def _directions_from_quantities(
    u: np.ndarray,
    x_new: np.ndarray,
    order: list[int],
    inactive: np.ndarray,
    gram_cols_u: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """(eta on order, gamma on inactive, denominator d)."""
    if len(order):
        d = 1.0 + float(x_new[order] @ u)
    else:
        d = 1.0
    eta = u / d
    gamma = (x_new[inactive] - gram_cols_u[inactive]) / d
    return eta, gamma, d


def segment_directions(
    data: Dataset,
    query: QueryPoint,
    active: np.ndarray,
    penalty: PenaltyConfig,
    *,
    gram: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit-``t`` slopes of the active coefficients and inactive duals.

    Parameters
    ----------
    data : Dataset
    query : QueryPoint
    active : array of int
        Current support, ascending.
    penalty : PenaltyConfig
        Only ``rho`` matters here; the slopes do not involve ``lam``.
    gram : ndarray, optional
        Precomputed ``X'X`` of the original (un-augmented) data.

    Returns
    -------
    eta : ndarray of shape (len(active),)
    gamma : ndarray of shape (p - len(active),)
        Ordered by ascending coordinate within each index set.

    Raises
    ------
    SingularGramError
        If the active Gram block cannot be solved.
    """
    p = data.p
    x_new = query.x_new
    if x_new.shape != (p,):
        raise DimensionMismatchError(
            f"x_new has shape {x_new.shape}, expected ({p},)"
        )
    active = np.asarray(active, dtype=np.intp)
    mask = np.zeros(p, dtype=bool)
    mask[active] = True
    inactive = np.flatnonzero(~mask)
    if gram is None:
        gram = data.X.T @ data.X
    if active.size:
        block = gram[np.ix_(active, active)] + penalty.rho * np.eye(active.size)
        try:
            u = np.linalg.solve(block, x_new[active])
        except np.linalg.LinAlgError as exc:
            raise SingularGramError(
                f"active Gram block of size {active.size} is singular"
            ) from exc
        if not np.isfinite(u).all():
            raise SingularGramError("active Gram block solve produced non-finite values")
        gram_cols_u = gram[:, active] @ u
    else:
        u = np.zeros(0)
        gram_cols_u = np.zeros(p)
    eta, gamma, _ = _directions_from_quantities(
        u, x_new, list(active), inactive, gram_cols_u
    )
    return eta, gamma


def _step_candidates(
    beta_active: np.ndarray,
    eta: np.ndarray,
    dual_inactive: np.ndarray,
    gamma: np.ndarray,
    lam: float,
    direction: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Positive step lengths to the next deletion / addition per coordinate.

    Steps that are non-positive, 0/0, or otherwise undefined come back as
    +inf (the ``(z)_++`` convention: only strictly positive steps count).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        del_steps = -beta_active / (direction * eta)
        g = direction * gamma
        add_steps = (np.sign(g) * lam - dual_inactive) / g
    del_steps = np.where(del_steps > 0.0, del_steps, np.inf)
    add_steps = np.where(add_steps > 0.0, add_steps, np.inf)
    return del_steps, add_steps


def next_breakpoint(
    t_k: float,
    active: np.ndarray,
    beta_anchor: np.ndarray,
    dual_inactive_anchor: np.ndarray,
    eta: np.ndarray,
    gamma: np.ndarray,
    lam: float,
    *,
    direction: int = 1,
    tie_tol: float = _TIE_RTOL,
) -> tuple[float, PathChange | None, int | None, bool]:
    """First support change beyond ``t_k`` along the given direction.

    Returns ``(t_next, change, change_index, tie_detected)``.  ``t_next`` is
    ``+inf`` (or ``-inf`` for ``direction=-1``) when no coefficient can reach
    zero and no dual can reach the boundary, in which case ``change`` is
    None.  ``tie_detected`` flags two candidate events within
    ``tie_tol * max(1, |t_next|)`` of each other; the tracer responds to that
    flag with a fallback refit just past the collision.
    """
    active = np.asarray(active, dtype=np.intp)
    p = active.size + np.asarray(gamma).size
    mask = np.zeros(p, dtype=bool)
    mask[active] = True
    inactive = np.flatnonzero(~mask)
    del_steps, add_steps = _step_candidates(
        np.asarray(beta_anchor, dtype=np.float64),
        np.asarray(eta, dtype=np.float64),
        np.asarray(dual_inactive_anchor, dtype=np.float64),
        np.asarray(gamma, dtype=np.float64),
        lam,
        direction,
    )
    steps = np.concatenate([del_steps, add_steps])
    if steps.size == 0 or not np.isfinite(steps).any():
        return math.inf * direction, None, None, False
    k = int(np.argmin(steps))
    delta = float(steps[k])
    t_next = t_k + direction * delta
    if k < del_steps.size:
        change, idx = PathChange.DELETION, int(active[k])
    else:
        change, idx = PathChange.ADDITION, int(inactive[k - del_steps.size])
    finite = np.sort(steps[np.isfinite(steps)])
    tie = bool(
        finite.size >= 2
        and finite[1] - finite[0] <= tie_tol * max(1.0, abs(t_next))
    )
    return t_next, change, idx, tie


def _inv_append(inv: np.ndarray, cross: np.ndarray, corner: float) -> np.ndarray:
    """Inverse of the (k+1)x(k+1) block [[A, b], [b', c]] given inv(A).

    Raises SingularGramError when the Schur complement is not safely positive.
    """
    if inv.shape[0] == 0:
        if corner <= 0.0 or not np.isfinite(corner):
            raise SingularGramError("1x1 Gram block is not positive")
        return np.array([[1.0 / corner]])
    ab = inv @ cross
    schur = corner - float(cross @ ab)
    if not np.isfinite(schur) or schur <= 1e-12 * max(abs(corner), 1.0):
        raise SingularGramError("rank-one append made the Gram block singular")
    k = inv.shape[0]
    out = np.empty((k + 1, k + 1))
    out[:k, :k] = inv + np.outer(ab, ab) / schur
    out[:k, k] = -ab / schur
    out[k, :k] = -ab / schur
    out[k, k] = 1.0 / schur
    return out


def _inv_delete(inv: np.ndarray, pos: int) -> np.ndarray:
    """Inverse of the Gram block with row/column ``pos`` removed."""
    q = inv[pos, pos]
    if q == 0.0 or not np.isfinite(q):
        raise SingularGramError("rank-one delete hit a zero pivot")
    keep = [i for i in range(inv.shape[0]) if i != pos]
    col = inv[keep, pos]
    row = inv[pos, keep]
    return inv[np.ix_(keep, keep)] - np.outer(col, row) / q


class _Tracer:
    """Stateful walker producing segments one direction at a time."""

    def __init__(
        self,
        data: Dataset,
        base: LassoFit,
        query: QueryPoint,
        *,
        gram: np.ndarray | None = None,
    ) -> None:
        if query.x_new.shape != (data.p,):
            raise DimensionMismatchError(
                f"x_new has shape {query.x_new.shape}, expected ({data.p},)"
            )
        self.data = data
        self.X = data.X
        self.y = data.y
        self.n = data.n
        self.p = data.p
        self.base = base
        self.penalty = base.penalty
        self.lam = base.penalty.lam
        self.rho = base.penalty.rho
        y_hat0 = float(query.x_new @ base.beta)  # recompute; never trust input
        self.query = QueryPoint(query.x_new, y_hat0)
        self.x_new = self.query.x_new
        self.y_hat0 = y_hat0
        self.gram = data.X.T @ data.X if gram is None else gram
        if self.gram.shape != (self.p, self.p):
            raise DimensionMismatchError(
                f"gram has shape {self.gram.shape}, expected ({self.p}, {self.p})"
            )
        self.diagnostics = PathDiagnostics()
        self.segment_cap = _SEGMENT_CAP_FACTOR * (self.n + self.p)

    # ---- state handling -------------------------------------------------

    def _state_from_fit(self, fit_result: LassoFit, t: float) -> dict:
        beta = np.array(fit_result.beta)
        mask = beta != 0.0
        return {
            "t": t,
            "beta": beta,
            "order": [int(j) for j in np.flatnonzero(mask)],
            "mask": mask,
            "signs": np.sign(beta),
            "dual": np.array(fit_result.dual),
            "inv": None,  # rebuilt lazily
            "updates": _REFACTOR_EVERY,  # force fresh factorization
        }

    def _refresh_inverse(self, st: dict) -> None:
        order = st["order"]
        k = len(order)
        if k == 0:
            st["inv"] = np.zeros((0, 0))
            st["updates"] = 0
            return
        block = self.gram[np.ix_(order, order)] + self.rho * np.eye(k)
        try:
            inv = np.linalg.inv(block)
        except np.linalg.LinAlgError:
            inv = None
        if inv is not None and np.isfinite(inv).all():
            cond = float(
                np.abs(block).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
            )
            if cond <= _COND_LIMIT:
                st["inv"] = inv
                st["updates"] = 0
                return
        # A rank-deficient face has no usable linear model; directions taken
        # from a patched or garbage inverse stay self-consistent, so the walk
        # would never notice it left the true path.  Hand the point to the
        # fallback refit instead.
        self.diagnostics.singular_gram_events += 1
        st["inv"] = None
        raise SingularGramError(
            f"active Gram block of size {k} is rank deficient or worse than "
            f"1e{int(math.log10(_COND_LIMIT))} conditioned"
        )

    def _cond_estimate(self, st: dict) -> float:
        order = st["order"]
        if not order or st["inv"] is None or st["inv"].shape[0] == 0:
            return 1.0
        block = self.gram[np.ix_(order, order)] + self.rho * np.eye(len(order))
        a = np.abs(block).sum(axis=0).max()
        b = np.abs(st["inv"]).sum(axis=0).max()
        return float(a * b)

    def _directions(self, st: dict) -> tuple[np.ndarray, np.ndarray, float]:
        try:
            return self._directions_fast(st)
        except SingularGramError:
            return self._directions_direct(st)

    def _directions_fast(self, st: dict) -> tuple[np.ndarray, np.ndarray, float]:
        if st["inv"] is None or st["updates"] >= _REFACTOR_EVERY:
            self._refresh_inverse(st)
        elif self._cond_estimate(st) > _COND_LIMIT:
            self._refresh_inverse(st)
        order = st["order"]
        if order:
            u = st["inv"] @ self.x_new[order]
            gram_cols_u = self.gram[:, order] @ u
        else:
            u = np.zeros(0)
            gram_cols_u = np.zeros(self.p)
        inactive = np.flatnonzero(~st["mask"])
        eta, gamma, d = _directions_from_quantities(
            u, self.x_new, order, inactive, gram_cols_u
        )
        if d <= 0.0 or not np.isfinite(d):
            raise SingularGramError("augmented Gram denominator is not positive")
        return eta, gamma, d

    def _directions_direct(self, st: dict) -> tuple[np.ndarray, np.ndarray, float]:
        """Directions solved against the appended-row Gram block.

        The fast route factors through ``inv(G_JJ + rho I)``, which breaks on
        faces where the base block is rank deficient even though the appended
        row makes the face itself perfectly traceable (duplicate columns, an
        active set as large as the appended sample count).  Solving with the
        appended block covers those exactly; a face where even that block is
        unusable has no linear model at all and is left to the refit fallback.
        """
        order = st["order"]
        k = len(order)
        x_act = self.x_new[order]
        block = (
            self.gram[np.ix_(order, order)]
            + self.rho * np.eye(k)
            + np.outer(x_act, x_act)
        )
        try:
            inv = np.linalg.inv(block)
        except np.linalg.LinAlgError as exc:
            raise SingularGramError(
                "appended-row Gram block is singular on this face"
            ) from exc
        if not np.isfinite(inv).all():
            raise SingularGramError("appended-row Gram block is singular on this face")
        cond = float(
            np.abs(block).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
        )
        if cond > _COND_LIMIT:
            raise SingularGramError(
                f"appended-row Gram block is 1e{int(math.log10(cond))} conditioned"
            )
        eta = inv @ x_act
        shrink = 1.0 - float(x_act @ eta)
        inactive = np.flatnonzero(~st["mask"])
        gamma = (
            self.x_new[inactive] * shrink
            - self.gram[np.ix_(inactive, order)] @ eta
        )
        d = math.inf if shrink <= 0.0 else 1.0 / shrink
        return eta, gamma, d

    def _recompute_dual(self, st: dict) -> None:
        beta = st["beta"]
        resid = self.y - self.X @ beta
        resid_new = self.y_hat0 + st["t"] - float(self.x_new @ beta)
        st["dual"] = (
            self.X.T @ resid + self.x_new * resid_new - self.rho * beta
        )

    def _kkt_drifted(self, st: dict) -> bool:
        """Stationarity of the propagated state, checked on a fresh dual.

        Catches accumulated drift that the per-segment linear model cannot
        see from inside its own face.
        """
        tol = 1e-7 * max(1.0, self.lam)
        order = st["order"]
        inactive = np.flatnonzero(~st["mask"])
        if inactive.size:
            if float(np.abs(st["dual"][inactive]).max()) > self.lam + tol:
                return True
        if order:
            gap = np.abs(st["dual"][order] - self.lam * st["signs"][order])
            if float(gap.max()) > tol:
                return True
        return False

    # ---- main loop ------------------------------------------------------

    def run(self, direction: int, bound: float):
        """Yield segments from 0 toward ``bound`` (|bound| > 0)."""
        st = self._state_from_fit(self.base, 0.0)
        if self.base.dual_boundary_ties:
            # Theory needs strict slack at the start; step past the boundary.
            yield from self._fallback(st, direction, 0.0, PathChange.REFIT)
        micro_steps = 0
        emitted = 0
        blocked = 0
        while True:
            try:
                eta, gamma, _ = self._directions(st)
                blocked = 0
            except SingularGramError:
                # Escalate the bump while consecutive refits keep landing on
                # untraceable faces, so a degenerate stretch is crossed in a
                # few slivers instead of thousands.
                yield from self._fallback(
                    st, direction, st["t"], PathChange.REFIT,
                    bump=_REFIT_BUMP * 10.0 ** min(blocked, 6),
                )
                blocked += 1
                continue
            order = st["order"]
            inactive = np.flatnonzero(~st["mask"])
            del_steps, add_steps = _step_candidates(
                st["beta"][order], eta, st["dual"][inactive], gamma, self.lam, direction
            )
            steps = np.concatenate([del_steps, add_steps])
            delta = float(steps.min()) if steps.size else math.inf
            t_next = st["t"] + direction * delta
            done = (not math.isfinite(delta)) or (
                direction > 0 and t_next >= bound
            ) or (direction < 0 and t_next <= bound)
            if done:
                # Count before yielding: the consumer may abandon the
                # generator right after this segment (early stopping).
                emitted += 1
                self._count(direction)
                yield self._emit(st, bound, eta, gamma, direction, PathChange.CLIPPED, None)
                return
            k = int(np.argmin(steps))
            if k < len(order):
                change, idx = PathChange.DELETION, order[k]
            else:
                change, idx = PathChange.ADDITION, int(inactive[k - len(order)])
            finite = steps[np.isfinite(steps)]
            if finite.size >= 2:
                two = np.partition(finite, 1)[:2]
                if two[1] - two[0] <= _TIE_RTOL * max(1.0, abs(t_next)):
                    self.diagnostics.tie_events += 1
                    emitted += 1
                    self._count(direction)
                    yield self._emit(
                        st, t_next, eta, gamma, direction, PathChange.REFIT, None
                    )
                    self._advance(st, t_next, eta, gamma)
                    yield from self._fallback(st, direction, t_next, PathChange.REFIT)
                    continue
            seg = self._emit(st, t_next, eta, gamma, direction, change, idx)
            emitted += 1
            self._count(direction)
            yield seg
            self._advance(st, t_next, eta, gamma)
            self._apply_change(st, change, idx)
            if emitted % _DUAL_REFRESH_EVERY == 0:
                self._recompute_dual(st)
                if self._kkt_drifted(st):
                    yield from self._fallback(
                        st, direction, st["t"], PathChange.REFIT
                    )
                    continue
            if delta <= 1e-14 * max(1.0, abs(st["t"])):
                micro_steps += 1
                if micro_steps >= 8:
                    yield from self._fallback(st, direction, st["t"], PathChange.REFIT)
                    micro_steps = 0
                    continue
            else:
                micro_steps = 0

    def _count(self, direction: int) -> None:
        if direction > 0:
            self.diagnostics.segments_forward += 1
            emitted = self.diagnostics.segments_forward
        else:
            self.diagnostics.segments_backward += 1
            emitted = self.diagnostics.segments_backward
        if emitted > self.segment_cap:
            raise SegmentLimitError(
                f"exceeded {self.segment_cap} segments in one direction "
                f"(n={self.n}, p={self.p}); diagnostics: {self.diagnostics}"
            )

    def _advance(
        self, st: dict, t_next: float, eta: np.ndarray, gamma: np.ndarray
    ) -> None:
        dt = t_next - st["t"]
        order = st["order"]
        if order:
            st["beta"][order] += eta * dt
        inactive = np.flatnonzero(~st["mask"])
        st["dual"][inactive] += gamma * dt
        st["t"] = t_next

    def _apply_change(self, st: dict, change: PathChange, idx: int) -> None:
        if change is PathChange.DELETION:
            pos = st["order"].index(idx)
            st["beta"][idx] = 0.0
            st["dual"][idx] = st["signs"][idx] * self.lam
            st["signs"][idx] = 0.0
            st["order"].pop(pos)
            st["mask"][idx] = False
            if st["inv"] is not None and st["inv"].shape[0] > 0:
                try:
                    st["inv"] = _inv_delete(st["inv"], pos)
                    st["updates"] += 1
                except SingularGramError:
                    st["inv"] = None
        else:  # ADDITION
            sign = 1.0 if st["dual"][idx] >= 0.0 else -1.0
            st["dual"][idx] = sign * self.lam
            st["beta"][idx] = 0.0
            if st["inv"] is not None:
                cross = self.gram[st["order"], idx] if st["order"] else np.zeros(0)
                corner = float(self.gram[idx, idx]) + self.rho
                try:
                    st["inv"] = _inv_append(st["inv"], cross, corner)
                    st["updates"] += 1
                except SingularGramError:
                    st["inv"] = None
            st["order"].append(idx)
            st["mask"][idx] = True
            st["signs"][idx] = sign

    def _emit(
        self,
        st: dict,
        t_next: float,
        eta: np.ndarray,
        gamma: np.ndarray,
        direction: int,
        change: PathChange,
        idx: int | None,
    ) -> HomotopySegment:
        order = st["order"]
        inactive = np.flatnonzero(~st["mask"])
        if direction > 0:
            t_start, t_end = st["t"], t_next
            beta_anchor = st["beta"][order].copy()
            dual_anchor = st["dual"][inactive].copy()
        else:
            t_start, t_end = t_next, st["t"]
            dt = t_next - st["t"]
            beta_anchor = st["beta"][order] + eta * dt
            dual_anchor = st["dual"][inactive] + gamma * dt
        perm = np.argsort(order) if order else np.zeros(0, dtype=np.intp)
        active_sorted = np.asarray(order, dtype=np.intp)[perm]
        return HomotopySegment(
            t_start=float(t_start),
            t_end=float(t_end),
            active=active_sorted,
            eta=np.asarray(eta)[perm].copy(),
            gamma=np.asarray(gamma).copy(),
            beta_anchor=np.asarray(beta_anchor)[perm].copy(),
            dual_inactive_anchor=dual_anchor,
            change=change,
            change_index=idx,
        )

    def _fallback(
        self,
        st: dict,
        direction: int,
        t_trouble: float,
        tag: PathChange,
        bump: float = _REFIT_BUMP,
    ):
        """Refit just past a trouble point and bridge the gap with a stub segment.

        The bridge holds the refit coefficients constant over a width-``bump``
        sliver, so pointwise path error there is bounded by the bump times
        the local slope.  Mutates ``st`` in place.
        """
        gram_aug = self.gram + np.outer(self.x_new, self.x_new)
        f = None
        t_new = t_trouble
        for _ in range(3):
            t_new = t_trouble + direction * bump
            aug = self.data.append(self.x_new, self.y_hat0 + t_new)
            f = lasso_fit(
                aug,
                self.penalty,
                beta0=st["beta"],
                gram=gram_aug,
            )
            if not f.dual_boundary_ties:
                break
            bump *= 10.0
        self.diagnostics.fallback_refits += 1
        assert f is not None
        new_st = self._state_from_fit(f, t_new)
        # The refit's dual is for the augmented data, which is what the path
        # propagates (base dual at t=0 coincides because the new residual is 0).
        bridge_lo, bridge_hi = (
            (t_trouble, t_new) if direction > 0 else (t_new, t_trouble)
        )
        order = new_st["order"]
        inactive = np.flatnonzero(~new_st["mask"])
        bridge = HomotopySegment(
            t_start=float(bridge_lo),
            t_end=float(bridge_hi),
            active=np.asarray(sorted(order), dtype=np.intp),
            eta=np.zeros(len(order)),
            gamma=np.zeros(inactive.size),
            beta_anchor=new_st["beta"][sorted(order)].copy(),
            dual_inactive_anchor=new_st["dual"][inactive].copy(),
            change=tag,
            change_index=None,
        )
        st.clear()
        st.update(new_st)
        self._count(direction)
        yield bridge


def trace(
    data: Dataset,
    base: LassoFit,
    query: QueryPoint,
    t_lo: float,
    t_hi: float,
    *,
    gram: np.ndarray | None = None,
) -> HomotopyPath:
    """Trace the augmented solution path over ``[t_lo, t_hi]``.

    Parameters
    ----------
    data : Dataset
        The original n-point sample (without the query row).
    base : LassoFit
        A certified fit of ``data`` under the penalty to be traced.
    query : QueryPoint
        Row to append; its prediction anchor is recomputed from ``base``.
    t_lo, t_hi : float
        Range of the appended response around the anchor; ``t_lo <= 0 <= t_hi``.
    gram : ndarray, optional
        Precomputed ``X'X`` of ``data``.

    Returns
    -------
    HomotopyPath

    Raises
    ------
    SegmentLimitError
        If one direction exceeds ``10 * (n + p)`` segments.
    SingularGramError
        If a fallback refit cannot restore a usable state.
    """
    if not (t_lo <= 0.0 <= t_hi):
        raise ValueError(f"need t_lo <= 0 <= t_hi, got [{t_lo}, {t_hi}]")
    rep = check_kkt(data, base, tol=1e-6)
    if not rep.passed:
        raise ValueError(
            "base fit fails its KKT check "
            f"(active sign violation {rep.active_sign_violation:.3e}, "
            f"inactive excess {rep.inactive_excess:.3e}); refusing to trace"
        )
    tracer = _Tracer(data, base, query, gram=gram)
    positive: tuple[HomotopySegment, ...] = ()
    negative: tuple[HomotopySegment, ...] = ()
    if t_hi > 0.0:
        positive = tuple(tracer.run(+1, t_hi))
    if t_lo < 0.0:
        negative = tuple(tracer.run(-1, t_lo))
    if t_lo == 0.0 == t_hi:
        order = np.asarray(base.active, dtype=np.intp)
        mask = np.zeros(data.p, dtype=bool)
        mask[order] = True
        positive = (
            HomotopySegment(
                t_start=0.0,
                t_end=0.0,
                active=order,
                eta=np.zeros(order.size),
                gamma=np.zeros(data.p - order.size),
                beta_anchor=np.array(base.beta[order]),
                dual_inactive_anchor=np.array(base.dual[~mask]),
                change=PathChange.START,
                change_index=None,
            ),
        )
    return HomotopyPath(
        base=base,
        query=tracer.query,
        positive_segments=positive,
        negative_segments=negative,
        t_lo=float(t_lo),
        t_hi=float(t_hi),
        diagnostics=tracer.diagnostics,
    )


def online_update(
    data: Dataset,
    base: LassoFit,
    new_point: tuple[np.ndarray, float],
    penalty: PenaltyConfig | None = None,
    *,
    gram: np.ndarray | None = None,
) -> LassoFit:
    """Absorb one observation by tracing instead of refitting.

    ``new_point`` is ``(x_row, y_value)``.  The path is traced from the
    anchor to ``t* = y_value - x_row' beta`` and evaluated there; the
    returned fit describes the (n+1)-point dataset, with its dual and
    objective recomputed from scratch.
    """
    if penalty is None:
        penalty = base.penalty
    elif penalty != base.penalty:
        raise ValueError("penalty does not match the one the base fit was made with")
    x_row, y_value = new_point
    x_row = np.asarray(x_row, dtype=np.float64)
    query = QueryPoint.for_fit(x_row, base)
    t_star = float(y_value) - query.y_hat0
    path = trace(
        data, base, query, min(t_star, 0.0), max(t_star, 0.0), gram=gram
    )
    beta = path.beta_at(t_star)
    beta[np.abs(beta) < 1e-14] = 0.0
    aug = data.append(x_row, y_value)
    dual = dual_of(aug, beta, penalty)
    active = np.flatnonzero(beta)
    inactive_gap = penalty.lam - np.abs(dual)
    tie_tol = 1e-9 * max(1.0, penalty.lam)
    ties = tuple(
        int(j) for j in np.flatnonzero((inactive_gap <= tie_tol) & (beta == 0.0))
    )
    beta.setflags(write=False)
    return LassoFit(
        beta=beta,
        active=active,
        dual=dual,
        penalty=penalty,
        objective=objective_value(aug, beta, penalty),
        sweeps=0,
        dual_boundary_ties=ties,
    )
