import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from splitknock.knockoff_filter import (EmptyInput, ThresholdRule, aggregate, fdp_power, select,
                                        threshold, write_selection_csv)
from splitknock.model import DimensionMismatch, GroundTruth


def brute_threshold(w, q, plus):
    best = math.inf
    for lam in {abs(v) for v in w if v != 0}:
        neg = sum(1 for v in w if v <= -lam)
        pos = sum(1 for v in w if v >= lam)
        if (neg + plus) / max(1, pos) <= q and lam < best:
            best = lam
    return best


@pytest.mark.parametrize("plus, expected", [(False, 1.0), (True, 2.0)])
def test_threshold_examples(plus, expected):
    assert threshold([2, -1, 3], ThresholdRule(0.5, plus)) == expected


def test_threshold_all_zero():
    assert threshold([0, 0, 0], ThresholdRule(0.2)) == math.inf


def test_select_examples():
    # 0-based indices for the 1-based set {1, 3}
    assert select([2, -1, 3], ThresholdRule(0.5)).selected == (0, 2)
    assert select([-1, -2], ThresholdRule(0.9)).selected == ()
    assert select([5], ThresholdRule(0.2)).selected == (0,)


def test_rule_validation():
    for q in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError, match=r"q must be in \(0,1\)"):
            ThresholdRule(q)


def test_brute_force_oracle():
    r = np.random.default_rng(0)
    for _ in range(1000):
        w = r.integers(-3, 4, size=r.integers(0, 13)).astype(float)
        q = float(r.choice([0.1, 0.2, 0.3, 0.5, 0.9]))
        for plus in (False, True):
            assert threshold(w, ThresholdRule(q, plus)) == brute_threshold(w.tolist(), q, plus)


w_lists = st.lists(st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 2)), max_size=15)


@settings(max_examples=200, deadline=None)
@given(w_lists, st.floats(0.01, 0.98), st.floats(0.0, 0.5))
def test_threshold_monotone_in_q(w, q, dq):
    q2 = min(q + dq, 0.99)
    for plus in (False, True):
        assert threshold(w, ThresholdRule(q2, plus)) <= threshold(w, ThresholdRule(q, plus))


@settings(max_examples=200, deadline=None)
@given(w_lists, st.floats(0.01, 0.99), st.sampled_from([0.5, 2.0, 4.0, 0.125]))
def test_scale_equivariance(w, q, c):
    # power-of-two scalings keep the floating point values exact
    w = np.array(w)
    for plus in (False, True):
        rule = ThresholdRule(q, plus)
        assert threshold(c * w, rule) == c * threshold(w, rule)
        assert select(c * w, rule).selected == select(w, rule).selected


@settings(max_examples=200, deadline=None)
@given(w_lists, st.floats(0.01, 0.99))
def test_plus_dominates(w, q):
    assert threshold(w, ThresholdRule(q, True)) >= threshold(w, ThresholdRule(q, False))


@settings(max_examples=200, deadline=None)
@given(w_lists, st.floats(0.01, 0.99), st.booleans())
def test_selection_matches_threshold(w, q, plus):
    rep = select(w, ThresholdRule(q, plus))
    t = rep.threshold
    assert set(rep.selected) == {j for j, v in enumerate(w) if v >= t}
    if math.isinf(t):
        assert rep.selected == ()


def truth_with(h1, m):
    beta = np.zeros(m)
    beta[list(h1)] = 1.0
    return GroundTruth.from_beta(np.eye(m), beta)


def test_fdp_power_examples():
    truth = truth_with({1, 2}, 4)
    rep = select([0.0, 0.0, 0.0, 0.0], ThresholdRule(0.2))
    assert fdp_power(rep, truth) == (0.0, 0.0)
    exact = select([0.0, 3.0, 2.0, 0.0], ThresholdRule(0.2))
    assert fdp_power(exact, truth) == (0.0, 1.0)
    half = select([0.0, 3.0, 0.0, 3.0], ThresholdRule(0.2))
    assert half.selected == (1, 3)
    assert fdp_power(half, truth) == (0.5, 0.5)


def test_fdp_power_empty_h1():
    truth = truth_with(set(), 3)
    assert fdp_power(select([1.0, 2.0, 3.0], ThresholdRule(0.5)), truth) == (1.0, 0.0)


def test_fdp_power_mismatch():
    with pytest.raises(DimensionMismatch):
        fdp_power(select([1.0, 2.0], ThresholdRule(0.5)), truth_with({0}, 3))


def test_aggregate_examples():
    s = aggregate([0.3], [0.7], 0.2)
    assert s["mean_fdr"] == 0.3 and s["ci80_fdr"] == (0.3, 0.3)
    s = aggregate([0, 0.5], [1, 0], 0.2)
    assert (s["mean_fdr"], s["mean_power"]) == (0.25, 0.5)
    with pytest.raises(EmptyInput):
        aggregate([], [], 0.2)
    with pytest.raises(DimensionMismatch):
        aggregate([0.1], [0.1, 0.2], 0.2)


def test_aggregate_mc_sanity():
    r = np.random.default_rng(1)
    x = (r.random(200) < 0.2).astype(float)
    s = aggregate(x, x, 0.2)
    assert abs(s["mean_fdr"] - 0.2) <= 4 * math.sqrt(0.16 / 200)


def test_aggregate_mfdr_proxy():
    # one replicate with 4 selected, 1 false: 1 / (4 + 5)
    s = aggregate([0.25], [0.5], 0.2, selected_counts=[4])
    assert s["mfdr_proxy"] == pytest.approx(1 / 9)
    assert math.isnan(aggregate([0.25], [0.5], 0.2)["mfdr_proxy"])


def test_selection_csv(tmp_path):
    rep = select([2.0, -1.0, 3.0], ThresholdRule(0.5))
    path = tmp_path / "sel.csv"
    write_selection_csv(rep, path)
    assert path.read_text() == "index,w,selected\n0,2.0,1\n1,-1.0,0\n2,3.0,1\n"
