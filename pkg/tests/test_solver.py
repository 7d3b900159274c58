import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from splitknock.model import DimensionMismatch, LiftedDesign
from splitknock.solver import (EmptyGrid, Loss, SolverSettings, SplitProblem, _Engine, _Prepared,
                               _solve, cross_validate, default_lambda_grid, default_nu_grid, fit,
                               fit_path, lambda_max, objective, split_knockoff_w, w_statistics)

TIGHT = SolverSettings(tol=1e-15, kkt_tol=1e-10, max_iter=200000)


def random_design(r, n, p, m, loss):
    L = LiftedDesign(r.standard_normal((n, p)), r.standard_normal((n, m)), r.standard_normal((n, m)))
    if loss == "squared":
        y = r.standard_normal(n)
    else:
        y = (r.random(n) < 0.5).astype(float)
    return L.with_response(y)


# ---------------------------------------------------------------------------
# objective

def test_objective_zero_squared():
    d = LiftedDesign(np.ones((3, 1)), np.ones((3, 1)), np.ones((3, 1)), np.zeros(3))
    pr = SplitProblem(d, "squared", 1.0, 0.1, np.eye(1))
    assert objective(pr, [0.0], [0.0], [0.0]) == 0.0


def test_objective_zero_logistic():
    d = LiftedDesign(np.ones((4, 1)), np.ones((4, 1)), np.ones((4, 1)), np.array([0, 1, 1, 0.0]))
    pr = SplitProblem(d, "logistic", 1.0, 0.1, np.eye(1))
    assert objective(pr, [0.0], [0.0], [0.0]) == pytest.approx(math.log(2))


def test_objective_hand_value():
    d = LiftedDesign([[0.0]], [[1.0]], [[0.0]], [2.0])
    pr = SplitProblem(d, "squared", 1.0, 0.0, [[1.0]])
    assert objective(pr, [1.0], [2.0], [1.0]) == pytest.approx(1.0)


def test_objective_errors():
    d = LiftedDesign([[0.0]], [[1.0]], [[0.0]], [2.0])
    pr = SplitProblem(d, "squared", 1.0, 0.0, [[1.0]])
    with pytest.raises(DimensionMismatch):
        objective(pr, [1.0, 2.0], [2.0], [1.0])
    with pytest.raises(ValueError):
        objective(pr, [np.nan], [2.0], [1.0])
    with pytest.raises(ValueError):
        SplitProblem(d, "squared", 0.0, 0.0, [[1.0]])
    with pytest.raises(DimensionMismatch):
        SplitProblem(d, "squared", 1.0, 0.0, np.eye(2))


# ---------------------------------------------------------------------------
# gradients and descent

@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_gradient_finite_differences(loss):
    r = np.random.default_rng(7)
    h = 1e-6
    for _ in range(50):
        n, p, m = r.integers(5, 30), r.integers(1, 5), r.integers(1, 6)
        d = random_design(r, n, p, m, loss)
        D = r.standard_normal((m, p))
        eng = _Engine(_Prepared(d, Loss(loss), D), nu=float(r.uniform(0.3, 5)), lam=0.1)
        theta = r.standard_normal(p + 2 * m)
        _, g = eng.smooth(theta)
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (eng.smooth(theta + e, False)[0] - eng.smooth(theta - e, False)[0]) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-8)


def test_smooth_matches_objective(rng):
    d = random_design(rng, 20, 3, 4, "logistic")
    D = rng.standard_normal((4, 3))
    pr = SplitProblem(d, "logistic", 2.0, 0.3, D)
    b, g, gt = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(4)
    prep = _Prepared(d, Loss.LOGISTIC, D)
    eng = _Engine(prep, 2.0, 0.3)
    # random designs have no tied pairs; canonical flips only permute the pair blocks
    from splitknock.solver import _to_canonical
    theta = _to_canonical(prep, b, g, gt)
    val = eng.smooth(theta, False)[0] + eng.penalty(theta)
    assert val == pytest.approx(objective(pr, b, g, gt), rel=1e-12)


@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_monotone_descent(rng, loss):
    d = random_design(rng, 60, 4, 5, loss)
    D = rng.standard_normal((5, 4))
    eng = _Engine(_Prepared(d, Loss(loss), D), 1.5, 0.05)
    trace = []
    _solve(eng, np.zeros(14), SolverSettings(tol=1e-12), trace)
    assert len(trace) > 5
    assert np.all(np.diff(trace) <= 1e-12)


# ---------------------------------------------------------------------------
# fit

def test_linear_system_oracle():
    r = np.random.default_rng(3)
    for _ in range(10):
        n, p, m = 40, 2, 2
        d = random_design(r, n, p, m, "squared")
        D = r.standard_normal((m, p))
        nu = float(r.uniform(0.5, 3))
        sol = fit(SplitProblem(d, "squared", nu, 0.0, D), settings=TIGHT)
        Z = np.hstack([d.x_tilde, d.a, d.a_tilde])
        I = np.eye(m)
        Q = np.block([[2 * D.T @ D, -D.T, -D.T], [-D, I, 0 * I], [-D, 0 * I, I]])
        H = Z.T @ Z / n + (2 / nu) * Q
        theta = np.linalg.solve(H, Z.T @ d.y / n)
        got = np.concatenate([sol.beta, sol.gamma, sol.gamma_tilde])
        assert sol.converged
        assert np.linalg.norm(got - theta) <= 1e-6 * np.linalg.norm(theta)


@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_kill_threshold(rng, loss):
    d = random_design(rng, 50, 3, 4, loss)
    D = rng.standard_normal((4, 3))
    lmax = lambda_max(d, loss, D, 2.0, TIGHT)
    above = fit(SplitProblem(d, loss, 2.0, lmax * 1.01, D))
    assert not above.gamma.any() and not above.gamma_tilde.any()
    below = fit(SplitProblem(d, loss, 2.0, lmax * 0.9, D))
    assert below.gamma.any() or below.gamma_tilde.any()


def test_identical_pair_gives_equal_coefficients(rng):
    a = rng.standard_normal((50, 3))
    d = LiftedDesign(rng.standard_normal((50, 2)), a, a.copy(), rng.standard_normal(50))
    D = rng.standard_normal((3, 2))
    sol = fit(SplitProblem(d, "squared", 1.0, 0.01, D))
    assert_array_equal(sol.gamma, sol.gamma_tilde)
    assert_array_equal(w_statistics(sol), 0.0)


def test_converged_kkt(rng):
    d = random_design(rng, 80, 4, 6, "logistic")
    D = rng.standard_normal((6, 4))
    sol = fit(SplitProblem(d, "logistic", 3.0, 0.02, D))
    assert sol.converged and sol.kkt <= 1e-5 * 1.02
    assert np.isfinite(sol.objective)


def test_infinite_nu_is_lasso(rng):
    # nu = inf, x_tilde = 0: plain lasso on [a, a_tilde]; compare with a tight independent prox-grad run
    n = 100
    X = rng.standard_normal((n, 3))
    Xk = rng.standard_normal((n, 3))
    y = X @ [1.0, 0.0, -0.5] + 0.1 * rng.standard_normal(n)
    d = LiftedDesign(np.zeros((n, 3)), X, Xk, y)
    sol = fit(SplitProblem(d, "squared", math.inf, 0.05, np.eye(3)), settings=TIGHT)
    Z = np.hstack([X, Xk])
    b = np.zeros(6)
    step = n / np.linalg.norm(Z, 2) ** 2
    for _ in range(20000):
        z = b - step * Z.T @ (Z @ b - y) / n
        b = np.sign(z) * np.maximum(np.abs(z) - 0.05 * step, 0)
    assert_allclose(np.concatenate([sol.gamma, sol.gamma_tilde]), b, atol=1e-8)


def test_fit_warm_start_same_solution(rng):
    d = random_design(rng, 60, 3, 4, "logistic")
    D = rng.standard_normal((4, 3))
    pr = SplitProblem(d, "logistic", 1.0, 0.02, D)
    cold = fit(pr, settings=TIGHT)
    warm = fit(pr, init=fit(SplitProblem(d, "logistic", 1.0, 0.05, D)), settings=TIGHT)
    assert_allclose(warm.gamma, cold.gamma, atol=1e-6)


# ---------------------------------------------------------------------------
# paths and CV

def test_fit_path(rng):
    d = random_design(rng, 60, 3, 4, "squared")
    D = rng.standard_normal((4, 3))
    lams = np.array([1.0, 0.3, 0.1, 0.03, 0.01])
    path = fit_path(d, "squared", D, 1.0, lams)
    assert len(path) == 5
    assert all(s.converged for s in path)
    single = fit_path(d, "squared", D, 1.0, [0.1])[0]
    direct = fit(SplitProblem(d, "squared", 1.0, 0.1, D))
    assert_allclose(single.gamma, direct.gamma, atol=1e-6)
    with pytest.raises(ValueError):
        fit_path(d, "squared", D, 1.0, [0.1, 0.3])


def test_default_grids():
    lam, nu = default_lambda_grid(), default_nu_grid()
    assert lam.size == 21 and nu.size == 21
    assert lam[0] == pytest.approx(0.1) and lam[-1] == pytest.approx(0.01)
    assert nu[0] == pytest.approx(10.0) and nu[-1] == pytest.approx(1.0)
    assert np.all(np.diff(lam) < 0)
    assert_allclose(np.diff(np.log10(lam)), -0.05)


def test_cv_single_point(rng):
    d = random_design(rng, 30, 2, 3, "squared")
    assert cross_validate(d, "squared", np.ones((3, 2)), [0.05], [2.0], 5, rng) == (0.05, 2.0)


def test_cv_empty_grid(rng):
    d = random_design(rng, 30, 2, 3, "squared")
    with pytest.raises(EmptyGrid):
        cross_validate(d, "squared", np.ones((3, 2)), [], [1.0])


def test_cv_tie_breaks_to_large_lambda_and_nu(rng):
    # x_tilde = 0 and lambdas above every fold's kill threshold: every prediction is 0
    n = 60
    d = LiftedDesign(np.zeros((n, 2)), rng.standard_normal((n, 2)), rng.standard_normal((n, 2)),
                     (rng.random(n) < 0.5).astype(float))
    lam, nu = cross_validate(d, "logistic", np.eye(2), [100.0, 50.0, 20.0], [1.0, 3.0], 5, rng)
    assert (lam, nu) == (100.0, 3.0)


def test_cv_deterministic(rng):
    d = random_design(rng, 50, 2, 3, "logistic")
    D = rng.standard_normal((3, 2))
    a = cross_validate(d, "logistic", D, [0.1, 0.03, 0.01], [1.0, 10.0], 5, 11)
    b = cross_validate(d, "logistic", D, [0.1, 0.03, 0.01], [1.0, 10.0], 5, 11)
    assert a == b


def test_cv_prefers_signal(rng):
    n = 400
    a = rng.standard_normal((n, 4))
    d = LiftedDesign(np.zeros((n, 4)), a, rng.standard_normal((n, 4)), a[:, 0] * 2 + 0.1 * rng.standard_normal(n))
    lam, _ = cross_validate(d, "squared", np.eye(4), [3.0, 0.01], [1.0], 5, rng)
    assert lam == 0.01


def test_settings_json():
    s = SolverSettings()
    assert json.loads(s.to_json())["tol"] == 1e-8


# ---------------------------------------------------------------------------
# W statistics

def test_w_formula():
    from splitknock.solver import SplitSolution
    sol = SplitSolution(np.zeros(1), np.array([2.0, 0.0]), np.array([0.5, 0.0]), 0.0, 1, True)
    assert_array_equal(w_statistics(sol), [1.5, 0.0])


def flip_instance(seed, loss):
    r = np.random.default_rng(seed)
    p, m, n = 4, int(r.integers(2, 7)), 40
    D = r.standard_normal((m, p))
    d = random_design(r, n, p, m, loss)
    return d, D


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["squared", "logistic"]), st.data())
def test_flip_sign_exact(seed, loss, data):
    d, D = flip_instance(seed, loss)
    S = data.draw(st.lists(st.integers(0, d.m - 1), unique=True))
    w = w_statistics(fit(SplitProblem(d, loss, 1.0, 0.02, D)))
    w2 = w_statistics(fit(SplitProblem(d.swap(S), loss, 1.0, 0.02, D)))
    sign = np.ones(d.m)
    sign[S] = -1
    assert_array_equal(w2, sign * w)


def test_split_knockoff_w(rng):
    d = random_design(rng, 60, 3, 4, "logistic")
    D = rng.standard_normal((4, 3))
    w, sol, (lam, nu) = split_knockoff_w(d, "logistic", D, [0.1, 0.03], [1.0, 10.0], 3, 0)
    assert lam in (0.1, 0.03) and nu in (1.0, 10.0)
    assert_array_equal(w, np.abs(sol.gamma) - np.abs(sol.gamma_tilde))


@pytest.mark.parametrize("proj", [None, "zeros"])
def test_unique_rows_partition(rng, proj):
    from splitknock.solver import _unique_rows
    Z = np.eye(6)[rng.integers(0, 6, 300)][:, :5]
    Z[:10, 0] = -1.0
    Zu, inv, counts = _unique_rows(Z, None if proj is None else np.zeros(5))
    ref, ref_inv, ref_counts = np.unique(Z, axis=0, return_inverse=True, return_counts=True)
    assert_array_equal(Zu[inv], Z)
    assert len(np.unique(Zu, axis=0)) == len(Zu) == len(ref)
    assert sorted(counts) == sorted(ref_counts)
