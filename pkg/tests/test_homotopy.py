"""Path-tracing checks against cold refits and hand-worked examples.

The running example: X = [[1], [1]], y = [1, 3], lam = 1 has base solution
beta = 1.5.  Appending x_new = [1] with response 1.5 + t moves beta with
slope 1/3; the coefficient hits zero at t = -4.5 and the dual re-reaches
the boundary at t = -6.5.
"""

import dataclasses
import math

import numpy as np
import pytest

from conflasso.homotopy import (
    HomotopyPath,
    PathChange,
    QueryPoint,
    SegmentLimitError,
    _Tracer,
    next_breakpoint,
    online_update,
    segment_directions,
    trace,
)
from conflasso.lasso import Dataset, PenaltyConfig, check_kkt, dual_of, fit
from conftest import make_instance


def _example():
    data = Dataset([[1.0], [1.0]], [1.0, 3.0])
    penalty = PenaltyConfig(lam=1.0)
    return data, penalty, fit(data, penalty)


def _trace_default(data, base, x_new, t_lo, t_hi):
    return trace(data, base, QueryPoint.for_fit(np.asarray(x_new, float), base), t_lo, t_hi)


# ---- per-segment slopes ----------------------------------------------------


def test_directions_empty_support_gives_gamma_x_new():
    rng = np.random.default_rng(2)
    data = Dataset(rng.standard_normal((5, 4)), rng.standard_normal(5))
    x_new = rng.standard_normal(4)
    eta, gamma = segment_directions(
        data, QueryPoint(x_new, 0.0), np.array([], dtype=int), PenaltyConfig(lam=1.0)
    )
    assert eta.size == 0
    np.testing.assert_allclose(gamma, x_new)


def test_directions_single_coordinate():
    """n=3 ones: G=3, u=1/3, d=4/3, so eta = 1/4."""
    data = Dataset([[1.0], [1.0], [1.0]], [2.0, 2.0, 2.0])
    base = fit(data, PenaltyConfig(lam=1.0))
    assert base.beta[0] == pytest.approx(5.0 / 3.0)
    eta, gamma = segment_directions(
        data, QueryPoint.for_fit(np.array([1.0]), base), base.active, base.penalty
    )
    np.testing.assert_allclose(eta, [0.25])
    assert gamma.size == 0


def test_directions_orthogonal_inactive_coordinate_is_flat():
    data = Dataset([[2.0, 0.0], [0.0, 3.0]], [4.0, 0.0])
    eta, gamma = segment_directions(
        data,
        QueryPoint(np.array([1.0, 0.0]), 0.0),
        np.array([0]),
        PenaltyConfig(lam=1.0),
    )
    np.testing.assert_allclose(eta, [0.2])  # u = 1/4, d = 5/4
    np.testing.assert_allclose(gamma, [0.0])


def test_next_breakpoint_cases():
    # coefficient drifting away from zero, nothing inactive: no event
    t, change, idx, tie = next_breakpoint(
        0.0, np.array([0]), np.array([2.0]), np.array([]),
        np.array([1.0]), np.array([]), 1.0,
    )
    assert t == math.inf and change is None and idx is None and not tie

    # coefficient heading to zero: deletion two units out
    t, change, idx, tie = next_breakpoint(
        1.0, np.array([0]), np.array([2.0]), np.array([]),
        np.array([-1.0]), np.array([]), 1.0,
    )
    assert t == pytest.approx(3.0)
    assert change is PathChange.DELETION and idx == 0 and not tie

    # inactive dual climbing to the boundary: addition
    t, change, idx, tie = next_breakpoint(
        0.0, np.array([], dtype=int), np.array([]), np.array([0.5]),
        np.array([]), np.array([0.25]), 1.0,
    )
    assert t == pytest.approx(2.0)
    assert change is PathChange.ADDITION and idx == 0

    # same dual walked the other way reaches the opposite boundary
    t, change, idx, tie = next_breakpoint(
        0.0, np.array([], dtype=int), np.array([]), np.array([0.5]),
        np.array([]), np.array([0.25]), 1.0, direction=-1,
    )
    assert t == pytest.approx(-6.0)
    assert change is PathChange.ADDITION and idx == 0

    # two coefficients hitting zero together flags a tie
    t, change, idx, tie = next_breakpoint(
        0.0, np.array([0, 1]), np.array([1.0, 1.0]), np.array([]),
        np.array([-1.0, -1.0]), np.array([]), 1.0,
    )
    assert t == pytest.approx(1.0) and change is PathChange.DELETION and tie


# ---- the worked 1-D example ------------------------------------------------


def test_trace_one_dim_segments_frozen():
    data, _, base = _example()
    path = _trace_default(data, base, [1.0], -5.0, 5.0)

    assert len(path.positive_segments) == 1
    pos = path.positive_segments[0]
    assert (pos.t_start, pos.t_end) == (0.0, 5.0)
    assert pos.change is PathChange.CLIPPED
    assert pos.active.tolist() == [0]
    np.testing.assert_allclose(pos.eta, [1.0 / 3.0])

    assert len(path.negative_segments) == 2
    inner, outer = path.negative_segments
    assert inner.t_start == pytest.approx(-4.5, rel=1e-12)
    assert inner.t_end == 0.0
    assert inner.change is PathChange.DELETION and inner.change_index == 0
    assert outer.t_end == inner.t_start
    assert outer.t_start == -5.0
    assert outer.change is PathChange.CLIPPED
    assert outer.active.size == 0

    assert path.diagnostics.segments == 3
    assert path.diagnostics.fallback_refits == 0


def test_trace_one_dim_beta_values():
    data, _, base = _example()
    path = _trace_default(data, base, [1.0], -5.0, 5.0)
    assert path.beta_at(0.0)[0] == pytest.approx(1.5)
    assert path.beta_at(-4.5)[0] == pytest.approx(0.0, abs=1e-12)
    assert path.beta_at(2.0)[0] == pytest.approx(1.5 + 2.0 / 3.0)
    assert path.beta_at(-5.0)[0] == 0.0
    assert path.beta_at(5.0)[0] == pytest.approx(1.5 + 5.0 / 3.0)
    with pytest.raises(ValueError):
        path.beta_at(5.1)


def test_dump_records_frozen():
    data, _, base = _example()
    path = _trace_default(data, base, [1.0], -5.0, 5.0)
    recs = path.dump_records()
    assert [r["t_start"] for r in recs] == pytest.approx([-5.0, -4.5, 0.0])
    assert [r["change"] for r in recs] == ["clipped", "deletion", "clipped"]
    assert [r["change_index"] for r in recs] == [None, 0, None]
    assert [r["n_active"] for r in recs] == [0, 1, 1]
    assert all(set(r) == {"t_start", "t_end", "n_active", "change", "change_index"} for r in recs)


def test_trace_past_reentry_picks_up_negative_sign():
    """Beyond t = -6.5 coordinate 0 re-enters with a negative coefficient."""
    data, penalty, base = _example()
    path = _trace_default(data, base, [1.0], -9.0, 0.0)
    changes = [(s.change, s.change_index) for s in path.negative_segments]
    assert (PathChange.DELETION, 0) in changes
    assert (PathChange.ADDITION, 0) in changes
    assert path.beta_at(-8.0)[0] < 0.0
    cold = fit(data.append(np.array([1.0]), base.beta[0] * 1.0 - 8.0), penalty)
    np.testing.assert_allclose(path.beta_at(-8.0), cold.beta, atol=1e-8)


# ---- equivalence with cold refits -------------------------------------------


def test_path_matches_cold_refits_random():
    rng = np.random.default_rng(100)
    for _ in range(15):
        data, penalty = make_instance(rng, n_lo=10, n_hi=30, p_lo=2, p_hi=8)
        base = fit(data, penalty)
        x_new = rng.standard_normal(data.p)
        q = QueryPoint.for_fit(x_new, base)
        spread = data.y.max() - data.y.min()
        t_lo, t_hi = -0.75 * spread, 0.75 * spread
        path = trace(data, base, q, t_lo, t_hi)
        for t in rng.uniform(t_lo, t_hi, 10):
            cold = fit(data.append(x_new, q.y_hat0 + t), penalty)
            np.testing.assert_allclose(path.beta_at(t), cold.beta, atol=1e-6)


def test_boundary_tied_start_falls_back_to_refit():
    """Duplicate columns put an inactive dual exactly on the boundary."""
    data = Dataset([[1.0, 1.0]], [3.0])
    penalty = PenaltyConfig(lam=1.0)
    base = fit(data, penalty)
    assert base.dual_boundary_ties == (1,)
    x_new = np.array([1.0, 0.0])
    path = _trace_default(data, base, x_new, -1.0, 1.0)
    assert path.diagnostics.fallback_refits >= 2  # one per direction
    assert any(s.change is PathChange.REFIT for s in path.positive_segments)
    q_hat = float(x_new @ base.beta)
    for t in (-0.9, -0.5, 0.0, 0.5, 0.9):
        cold = fit(data.append(x_new, q_hat + t), penalty)
        np.testing.assert_allclose(path.beta_at(t), cold.beta, atol=1e-6)


def test_segments_tile_the_range():
    rng = np.random.default_rng(31)
    for _ in range(10):
        data, penalty = make_instance(rng, n_lo=10, n_hi=25, p_lo=2, p_hi=8)
        base = fit(data, penalty)
        x_new = rng.standard_normal(data.p)
        path = _trace_default(data, base, x_new, -6.0, 6.0)
        pos = path.positive_segments
        assert pos[0].t_start == 0.0 and pos[-1].t_end == 6.0
        for a, b in zip(pos, pos[1:]):
            assert a.t_end == b.t_start
        neg = path.negative_segments
        assert neg[0].t_end == 0.0 and neg[-1].t_start == -6.0
        for a, b in zip(neg, neg[1:]):
            assert a.t_start == b.t_end


def test_coefficients_continuous_across_breakpoints():
    rng = np.random.default_rng(77)
    data, penalty = make_instance(rng, n_lo=20, n_hi=20, p_lo=6, p_hi=6)
    base = fit(data, penalty)
    x_new = rng.standard_normal(data.p)
    path = _trace_default(data, base, x_new, -8.0, 8.0)
    pos = path.positive_segments
    for a, b in zip(pos, pos[1:]):
        np.testing.assert_allclose(
            a.beta_at(a.t_end), b.beta_at(b.t_start), atol=1e-8
        )
    neg = path.negative_segments
    for inner, outer in zip(neg, neg[1:]):
        np.testing.assert_allclose(
            inner.beta_at(inner.t_start), outer.beta_at(outer.t_end), atol=1e-8
        )


def test_path_points_satisfy_stationarity():
    """Mid-segment coefficients pass the KKT conditions of the augmented fit."""
    rng = np.random.default_rng(55)
    for _ in range(5):
        data, penalty = make_instance(rng, n_lo=12, n_hi=25, p_lo=3, p_hi=8)
        base = fit(data, penalty)
        x_new = rng.standard_normal(data.p)
        q = QueryPoint.for_fit(x_new, base)
        path = trace(data, base, q, -5.0, 5.0)
        for seg in path.positive_segments + path.negative_segments:
            if not seg.t_start < seg.t_end or seg.change is PathChange.REFIT:
                continue
            t = 0.5 * (seg.t_start + seg.t_end)
            beta = path.beta_at(t)
            aug = data.append(x_new, q.y_hat0 + t)
            v = dual_of(aug, beta, penalty)
            on = beta != 0.0
            if on.any():
                worst = np.abs(v[on] - np.sign(beta[on]) * penalty.lam).max()
                assert worst <= 1e-6
            if (~on).any():
                assert np.abs(v[~on]).max() <= penalty.lam + 1e-6


def _inactive_pos(seg, j):
    p = seg.n_features
    inact = [k for k in range(p) if k not in set(seg.active.tolist())]
    return inact.index(j)


def test_sign_consistency_at_support_changes():
    """Deleted slopes keep their sign; added coefficients leave the boundary
    on the side the dual hit it."""
    rng = np.random.default_rng(123)
    seen_del = seen_add = 0
    for _ in range(12):
        n, p = 25, 6
        X = rng.standard_normal((n, p))
        X[:, 1] = 0.8 * X[:, 0] + 0.6 * X[:, 1]
        beta_true = np.array([1.5, -1.0, 0.8, 0.0, -0.6, 0.0])
        y = X @ beta_true + 0.4 * rng.standard_normal(n)
        data = Dataset(X, y)
        penalty = PenaltyConfig(lam=0.2 * np.abs(X.T @ y).max())
        base = fit(data, penalty)
        x_new = rng.standard_normal(p)
        spread = y.max() - y.min()
        path = _trace_default(data, base, x_new, -1.5 * spread, 1.5 * spread)
        lam = penalty.lam

        for s1, s2 in zip(path.positive_segments, path.positive_segments[1:]):
            j = s1.change_index
            if s1.change is PathChange.DELETION:
                seen_del += 1
                eta_j = s1.eta[s1.active.tolist().index(j)]
                gamma_j = s2.gamma[_inactive_pos(s2, j)]
                assert gamma_j * eta_j >= -1e-9
            elif s1.change is PathChange.ADDITION:
                seen_add += 1
                pos = _inactive_pos(s1, j)
                v_cross = s1.dual_inactive_anchor[pos] + s1.gamma[pos] * (
                    s1.t_end - s1.t_start
                )
                assert abs(abs(v_cross) - lam) <= 1e-6 * max(1.0, lam)
                eta_j = s2.eta[s2.active.tolist().index(j)]
                if abs(eta_j) > 1e-10:
                    assert np.sign(eta_j) == np.sign(v_cross)

        for s1, s2 in zip(path.negative_segments, path.negative_segments[1:]):
            j = s1.change_index
            if s1.change is PathChange.DELETION:
                seen_del += 1
                pos = s1.active.tolist().index(j)
                assert abs(s1.beta_anchor[pos]) <= 1e-8
                gamma_j = s2.gamma[_inactive_pos(s2, j)]
                assert gamma_j * s1.eta[pos] >= -1e-9
            elif s1.change is PathChange.ADDITION:
                seen_add += 1
                v_cross = s1.dual_inactive_anchor[_inactive_pos(s1, j)]
                assert abs(abs(v_cross) - lam) <= 1e-6 * max(1.0, lam)
                eta_j = s2.eta[s2.active.tolist().index(j)]
                if abs(eta_j) > 1e-10:
                    assert np.sign(eta_j) == -np.sign(v_cross)

    assert seen_del >= 5 and seen_add >= 5  # the checks actually fired


# ---- online updates ---------------------------------------------------------


def test_online_update_frozen_example():
    data, penalty, base = _example()
    upd = online_update(data, base, (np.array([1.0]), 3.0))
    assert upd.beta[0] == pytest.approx(2.0, abs=1e-9)
    aug = data.append(np.array([1.0]), 3.0)
    assert check_kkt(aug, upd, tol=1e-6).passed
    assert upd.objective == pytest.approx(fit(aug, penalty).objective, abs=1e-9)


def test_online_update_zero_row_keeps_beta():
    data, _, base = _example()
    upd = online_update(data, base, (np.array([0.0]), 7.0))
    np.testing.assert_array_equal(upd.beta, base.beta)


def test_online_update_matches_cold_refit_random():
    rng = np.random.default_rng(19)
    for _ in range(15):
        data, penalty = make_instance(rng, n_lo=10, n_hi=30, p_lo=2, p_hi=8)
        base = fit(data, penalty)
        x_row = rng.standard_normal(data.p)
        y_val = float(rng.normal(scale=np.abs(data.y).max()))
        upd = online_update(data, base, (x_row, y_val))
        cold = fit(data.append(x_row, y_val), penalty)
        np.testing.assert_allclose(upd.beta, cold.beta, atol=1e-6)


def test_online_update_at_own_prediction_is_identity():
    rng = np.random.default_rng(8)
    for _ in range(20):
        data, penalty = make_instance(rng, n_lo=10, n_hi=25, p_lo=2, p_hi=8)
        base = fit(data, penalty)
        x_row = rng.standard_normal(data.p)
        upd = online_update(data, base, (x_row, float(x_row @ base.beta)))
        np.testing.assert_allclose(upd.beta, base.beta, atol=1e-10)


def test_online_update_rejects_mismatched_penalty():
    data, _, base = _example()
    with pytest.raises(ValueError):
        online_update(data, base, (np.array([1.0]), 2.0), PenaltyConfig(lam=2.0))


# ---- guard rails ------------------------------------------------------------


def test_trace_validates_range_and_base():
    data, _, base = _example()
    q = QueryPoint.for_fit(np.array([1.0]), base)
    with pytest.raises(ValueError):
        trace(data, base, q, 1.0, 2.0)
    bad = dataclasses.replace(base, beta=base.beta + 1.0)
    with pytest.raises(ValueError):
        trace(data, bad, q, -1.0, 1.0)


def test_trace_degenerate_window_is_a_start_stub():
    data, _, base = _example()
    path = _trace_default(data, base, [1.0], 0.0, 0.0)
    assert len(path.positive_segments) == 1
    seg = path.positive_segments[0]
    assert seg.change is PathChange.START
    assert seg.t_start == seg.t_end == 0.0
    np.testing.assert_allclose(path.beta_at(0.0), base.beta)


def test_segment_cap_enforced():
    data, _, base = _example()
    tracer = _Tracer(data, base, QueryPoint.for_fit(np.array([1.0]), base))
    tracer.segment_cap = 1
    with pytest.raises(SegmentLimitError):
        list(tracer.run(-1, -10.0))


def test_query_point_validation():
    with pytest.raises(ValueError):
        QueryPoint(np.array([[1.0]]), 0.0)
    with pytest.raises(ValueError):
        QueryPoint(np.array([np.nan]), 0.0)
    with pytest.raises(ValueError):
        QueryPoint(np.array([1.0]), math.inf)


def test_stored_anchor_is_recomputed_not_trusted():
    data, _, base = _example()
    path = trace(data, base, QueryPoint(np.array([1.0]), 999.0), -1.0, 1.0)
    assert path.query.y_hat0 == pytest.approx(1.5)


def test_path_is_a_frozen_dataclass():
    data, _, base = _example()
    path = _trace_default(data, base, [1.0], -1.0, 1.0)
    assert isinstance(path, HomotopyPath)
    with pytest.raises(dataclasses.FrozenInstanceError):
        path.t_hi = 2.0
