"""Split-penalized estimation and W-statistics.

Minimizes over ``(beta, gamma, gamma_tilde)``::

    L(X_tilde beta + A gamma + A_tilde gamma_tilde, y)
        + (1/nu) (||D beta - gamma||^2 + ||D beta - gamma_tilde||^2)
        + lam (||gamma||_1 + ||gamma_tilde||_1)

with an accelerated proximal-gradient method (backtracking, restarts that
keep the accepted objective values non-increasing).  ``nu = inf`` drops the
coupling terms, which turns the problem into a plain lasso on ``[A, A_tilde]``.

Before solving, each column pair ``(A_j, A_tilde_j)`` is put in a canonical
order.  Swapping a pair therefore hands the solver the identical problem, so
``W_j`` flips sign exactly and every other ``W_k`` is reproduced bit for bit.
Pairs with identical columns are kept exactly symmetric, giving ``W_j = 0``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import (DimensionMismatch, LiftedDesign, NonFiniteInput, SplitKnockoffError,
                    as_matrix)


class NonFiniteIterate(SplitKnockoffError):
    pass


class EmptyGrid(SplitKnockoffError):
    pass


class Loss(enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    kkt_tol: float = 1e-5
    max_iter: int = 50000
    check_every: int = 10

    def to_json(self) -> str:
        return json.dumps(asdict(self))


DEFAULT_SETTINGS = SolverSettings()


def default_lambda_grid(lo: float = -2.0, hi: float = -1.0, step: float = 0.05) -> np.ndarray:
    """Descending ``10**k`` grid for ``k`` in ``[lo, hi]``."""
    k = np.round(np.arange(lo, hi + step / 2, step), 10)
    return np.sort(10.0 ** k)[::-1]


def default_nu_grid(lo: float = 0.0, hi: float = 1.0, step: float = 0.05) -> np.ndarray:
    k = np.round(np.arange(lo, hi + step / 2, step), 10)
    return np.sort(10.0 ** k)[::-1]


@dataclass(frozen=True)
class SplitProblem:
    design: LiftedDesign
    loss: Loss
    nu: float
    lam: float
    D: np.ndarray

    def __post_init__(self):
        D = as_matrix(self.D)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "loss", Loss(self.loss))
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.design.y is None:
            raise DimensionMismatch("design has no response")
        if D.shape != (self.design.m, self.design.p):
            raise DimensionMismatch(f"D {D.shape} does not match design (m={self.design.m}, p={self.design.p})")


@dataclass(frozen=True)
class SplitSolution:
    beta: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt: float = float("nan")


def _mean_loss(loss: Loss, eta, y) -> float:
    if loss is Loss.SQUARED:
        r = eta - y
        return float(r @ r) / (2 * y.size)
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def objective(pr: SplitProblem, beta, gamma, gamma_tilde) -> float:
    """Objective value evaluated directly in the caller's coordinates."""
    d = pr.design
    beta, gamma, gamma_tilde = (np.asarray(v, dtype=float) for v in (beta, gamma, gamma_tilde))
    if beta.shape != (d.p,) or gamma.shape != (d.m,) or gamma_tilde.shape != (d.m,):
        raise DimensionMismatch("coefficient lengths do not match the design")
    if not all(np.all(np.isfinite(v)) for v in (beta, gamma, gamma_tilde)):
        raise NonFiniteInput("non-finite coefficients")
    eta = d.x_tilde @ beta + d.a @ gamma + d.a_tilde @ gamma_tilde
    val = _mean_loss(pr.loss, eta, d.y)
    if math.isfinite(pr.nu):
        Db = pr.D @ beta
        val += (np.sum((Db - gamma) ** 2) + np.sum((Db - gamma_tilde) ** 2)) / pr.nu
    return val + pr.lam * (np.abs(gamma).sum() + np.abs(gamma_tilde).sum())


def canonical_order(design: LiftedDesign):
    """Per pair, True where ``a_tilde`` must be swapped in front of ``a``.

    Also returns the mask of pairs whose two columns are identical.
    """
    a, at = design.a, design.a_tilde
    diff = a != at
    tied = ~diff.any(axis=0)
    first = np.argmax(diff, axis=0)
    cols = np.arange(a.shape[1])
    flip = ~tied & (at[first, cols] < a[first, cols])
    return flip, tied


def _unique_rows(Z, proj=None):
    """``np.unique(Z, axis=0)`` with inverse and counts, grouped by a projection key.

    Rows are bucketed by a fixed random projection; the buckets are then checked
    for exact equality, falling back to the lexicographic sort on a collision.
    """
    if proj is None:
        proj = np.random.default_rng(0).standard_normal(Z.shape[1])
    key = Z @ proj
    _, first, inv, counts = np.unique(key, return_index=True, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    Zu = Z[first]
    if np.array_equal(Zu[inv], Z):
        return Zu, inv, counts
    return np.unique(Z, axis=0, return_inverse=True, return_counts=True)


class _Prepared:
    """Canonicalized, row-compressed design ready for repeated solves."""

    def __init__(self, design: LiftedDesign, loss: Loss, D: np.ndarray):
        if design.y is None:
            raise DimensionMismatch("design has no response")
        for arr in (design.x_tilde, design.a, design.a_tilde, design.y):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput("design or response has non-finite entries")
        self.loss = Loss(loss)
        self.D = as_matrix(D)
        self.n, self.p, self.m = design.n, design.p, design.m
        self.flip, self.tied = canonical_order(design)
        self.tied_idx = np.flatnonzero(self.tied)
        a = np.where(self.flip, design.a_tilde, design.a)
        at = np.where(self.flip, design.a, design.a_tilde)
        self.use_x = bool(np.any(design.x_tilde))
        blocks = ([design.x_tilde] if self.use_x else []) + [a, at]
        Z = np.hstack(blocks)
        y = design.y
        # identical design rows share one linear predictor; aggregate them
        Zu = None
        if not self.use_x:
            Zu, inv, counts = _unique_rows(Z)
        if Zu is not None and Zu.shape[0] <= 0.5 * Z.shape[0]:
            inv = inv.reshape(-1)
            self.Z = Zu
            self.w = counts.astype(float)
            self.sy = np.bincount(inv, weights=y, minlength=Zu.shape[0])
        else:
            self.Z = Z
            self.w = np.ones(Z.shape[0])
            self.sy = y.astype(float)
        self.y_sq = float(y @ y)
        self.offset = 0 if self.use_x else self.p
        self.DtD_norm = np.linalg.norm(self.D, 2) ** 2 if self.D.size else 0.0
        self.L_loss = self._loss_lipschitz()

    def _loss_lipschitz(self) -> float:
        Z = self.Z
        if Z.size == 0:
            return 0.0
        curv = 1.0 if self.loss is Loss.SQUARED else 0.25
        v = np.ones(Z.shape[1]) / math.sqrt(Z.shape[1])
        lam = 0.0
        for _ in range(30):
            u = Z.T @ (self.w * (Z @ v))
            lam_new = float(np.linalg.norm(u))
            if lam_new == 0.0:
                return 0.0
            v = u / lam_new
            if abs(lam_new - lam) <= 1e-6 * lam_new:
                lam = lam_new
                break
            lam = lam_new
        return curv * lam * 1.05 / self.n

    def eta(self, theta):
        return self.Z @ theta[self.offset:]

    def loss_value(self, eta) -> float:
        if self.loss is Loss.SQUARED:
            return (float(self.w @ (eta * eta)) - 2.0 * float(self.sy @ eta) + self.y_sq) / (2 * self.n)
        return (float(self.w @ np.logaddexp(0.0, eta)) - float(self.sy @ eta)) / self.n

    def loss_grad_eta(self, eta):
        if self.loss is Loss.SQUARED:
            return (self.w * eta - self.sy) / self.n
        return (self.w * _sigmoid(eta) - self.sy) / self.n


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _Engine:
    """Smooth part, prox and KKT for one (nu, lambda) on a prepared design."""

    def __init__(self, prep: _Prepared, nu: float, lam: float):
        self.prep, self.lam = prep, float(lam)
        self.inv_nu = 0.0 if math.isinf(nu) else 1.0 / nu
        p, m = prep.p, prep.m
        self.p, self.m = p, m
        self.L = max(prep.L_loss + 2.0 * self.inv_nu * (2.0 * prep.DtD_norm + 1.0), 1e-12)

    def smooth(self, theta, need_grad=True):
        prep, p, m = self.prep, self.p, self.m
        eta = prep.eta(theta)
        val = prep.loss_value(eta)
        grad = None
        if need_grad:
            grad = np.zeros_like(theta)
            grad[prep.offset:] = prep.Z.T @ prep.loss_grad_eta(eta)
        if self.inv_nu:
            beta, g, gt = theta[:p], theta[p:p + m], theta[p + m:]
            Db = prep.D @ beta
            u, v = Db - g, Db - gt
            val += self.inv_nu * (float(u @ u) + float(v @ v))
            if need_grad:
                c = 2.0 * self.inv_nu
                grad[:p] += c * (prep.D.T @ (u + v))
                grad[p:p + m] -= c * u
                grad[p + m:] -= c * v
        return val, grad

    def penalty(self, theta) -> float:
        return self.lam * float(np.abs(theta[self.p:]).sum())

    def prox(self, theta, step):
        out = theta.copy()
        thr = self.lam * step
        if thr > 0:
            z = theta[self.p:]
            out[self.p:] = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
        return self.symmetrize(out)

    def symmetrize(self, theta):
        idx = self.prep.tied_idx
        if idx.size:
            g = self.p + idx
            gt = self.p + self.m + idx
            avg = 0.5 * (theta[g] + theta[gt])
            theta[g] = avg
            theta[gt] = avg
        return theta

    def kkt(self, theta, grad) -> float:
        p = self.p
        res_beta = np.abs(grad[:p])
        z, gz = theta[p:], grad[p:]
        res_pen = np.where(z != 0, np.abs(gz + self.lam * np.sign(z)),
                           np.maximum(np.abs(gz) - self.lam, 0.0))
        return float(max(res_beta.max(initial=0.0), res_pen.max(initial=0.0)))


def _solve(engine: _Engine, theta0, settings: SolverSettings, trace=None):
    x = engine.symmetrize(np.array(theta0, dtype=float))
    fx, _ = engine.smooth(x, need_grad=False)
    Fx = fx + engine.penalty(x)
    y, t = x.copy(), 1.0
    L = engine.L
    kkt_tol = settings.kkt_tol * (1.0 + engine.lam)
    it = 0
    restarted = True
    while it < settings.max_iter:
        it += 1
        fy, gy = engine.smooth(y)
        while True:
            z = engine.prox(y - gy / L, 1.0 / L)
            d = z - y
            fz, _ = engine.smooth(z, need_grad=False)
            if fz <= fy + float(gy @ d) + 0.5 * L * float(d @ d) + 1e-12 * max(1.0, abs(fy)):
                break
            L *= 2.0
        Fz = fz + engine.penalty(z)
        if not math.isfinite(Fz):
            raise NonFiniteIterate("objective became non-finite; check the scaling of the design")
        if Fz > Fx and not restarted:
            # momentum overshot: drop it and redo a plain step from x
            y, t, restarted = x.copy(), 1.0, True
            continue
        rel = (Fx - Fz) / max(1.0, abs(Fx))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = engine.symmetrize(z + ((t - 1.0) / t_next) * (z - x))
        x, Fx, t, restarted = z, Fz, t_next, False
        if trace is not None:
            trace.append(Fx)
        L *= 0.95
        if rel < settings.tol or it % settings.check_every == 0:
            _, gx = engine.smooth(x)
            k = engine.kkt(x, gx)
            if k <= kkt_tol:
                return x, Fx, it, True, k
    _, gx = engine.smooth(x)
    k = engine.kkt(x, gx)
    return x, Fx, it, k <= kkt_tol, k


def _to_canonical(prep: _Prepared, beta, gamma, gamma_tilde):
    g = np.where(prep.flip, gamma_tilde, gamma)
    gt = np.where(prep.flip, gamma, gamma_tilde)
    return np.concatenate([beta, g, gt])


def _from_canonical(prep: _Prepared, theta):
    p, m = prep.p, prep.m
    beta, g, gt = theta[:p], theta[p:p + m], theta[p + m:]
    return beta.copy(), np.where(prep.flip, gt, g), np.where(prep.flip, g, gt)


def _solution(prep, theta, F, it, conv, k) -> SplitSolution:
    beta, g, gt = _from_canonical(prep, theta)
    return SplitSolution(beta, g, gt, float(F), it, bool(conv), float(k))


def _initial(prep, init):
    if init is None:
        return np.zeros(prep.p + 2 * prep.m)
    return _to_canonical(prep, init.beta, init.gamma, init.gamma_tilde)


def fit(pr: SplitProblem, init: SplitSolution | None = None,
        settings: SolverSettings = DEFAULT_SETTINGS) -> SplitSolution:
    prep = _Prepared(pr.design, pr.loss, pr.D)
    engine = _Engine(prep, pr.nu, pr.lam)
    return _solution(prep, *_solve(engine, _initial(prep, init), settings))


def _path(prep, nu, lambdas, settings, init=None):
    theta = _initial(prep, init)
    out = []
    for lam in lambdas:
        res = _solve(_Engine(prep, nu, lam), theta, settings)
        theta = res[0]
        out.append(res)
    return out


def _check_lambdas(lambdas):
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise EmptyGrid("lambda grid is empty")
    if np.any(lambdas <= 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be positive and strictly descending")
    return lambdas


def fit_path(design: LiftedDesign, loss, D, nu: float, lambdas,
             settings: SolverSettings = DEFAULT_SETTINGS) -> list:
    """Warm-started solutions along a strictly descending lambda grid."""
    lambdas = _check_lambdas(lambdas)
    SplitProblem(design, loss, nu, float(lambdas[0]), D)
    prep = _Prepared(design, loss, D)
    return [_solution(prep, *res) for res in _path(prep, nu, lambdas, settings)]


def lambda_max(design: LiftedDesign, loss, D, nu: float,
               settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Smallest lambda at which ``gamma = gamma_tilde = 0`` is optimal."""
    prep = _Prepared(design, loss, D)
    engine = _Engine(prep, nu, 1e300)
    theta = _solve(engine, np.zeros(prep.p + 2 * prep.m), settings)[0]
    _, grad = engine.smooth(theta)
    return float(np.abs(grad[prep.p:]).max())


def _fold_ids(n: int, folds: int, rng) -> np.ndarray:
    ids = np.arange(n) % folds
    rng.shuffle(ids)
    return ids


def cross_validate(design: LiftedDesign, loss, D, lambda_grid=None, nu_grid=None,
                   folds: int = 5, rng=None, settings: SolverSettings = DEFAULT_SETTINGS,
                   return_scores: bool = False):
    """K-fold CV over ``(lambda, nu)``; returns the pair with least held-out loss.

    Ties go to the larger lambda, then the larger nu.
    """
    loss = Loss(loss)
    lambdas = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    nus = default_nu_grid() if nu_grid is None else np.asarray(nu_grid, dtype=float)
    if lambdas.size == 0 or nus.size == 0:
        raise EmptyGrid("CV grids must be nonempty")
    if folds < 2:
        raise ValueError("folds must be at least 2")
    lambdas = _check_lambdas(np.sort(lambdas)[::-1])
    nus = np.sort(nus)[::-1]
    if lambdas.size == 1 and nus.size == 1 and not return_scores:
        return float(lambdas[0]), float(nus[0])
    rng = np.random.default_rng(rng)
    # canonical order first so that the held-out losses are swap invariant
    flip, _ = canonical_order(design)
    design = LiftedDesign(design.x_tilde, np.where(flip, design.a_tilde, design.a),
                          np.where(flip, design.a, design.a_tilde), design.y)
    ids = _fold_ids(design.n, folds, rng)
    scores = np.zeros((nus.size, lambdas.size))
    for f in range(folds):
        train, test = design.take(ids != f), design.take(ids == f)
        prep = _Prepared(train, loss, D)
        for i, nu in enumerate(nus):
            for k, res in enumerate(_path(prep, nu, lambdas, settings)):
                beta, g, gt = _from_canonical(prep, res[0])
                eta = test.a @ g + test.a_tilde @ gt
                if prep.use_x:
                    eta += test.x_tilde @ beta
                scores[i, k] += _mean_loss(loss, eta, test.y) * test.n
    scores /= design.n
    best = None
    for k, lam in enumerate(lambdas):  # descending: larger lambda first
        for i, nu in enumerate(nus):
            if best is None or scores[i, k] < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (scores[i, k], lam, nu)
    result = (float(best[1]), float(best[2]))
    if return_scores:
        return result, (lambdas, nus, scores)
    return result


def w_statistics(sol: SplitSolution) -> np.ndarray:
    return np.abs(sol.gamma) - np.abs(sol.gamma_tilde)


def split_knockoff_w(design: LiftedDesign, loss, D, lambda_grid=None, nu_grid=None,
                     folds: int = 5, rng=None, settings: SolverSettings = DEFAULT_SETTINGS,
                     cv_settings: SolverSettings | None = None):
    """Cross-validate ``(lambda, nu)``, refit on all rows and return W."""
    lam, nu = cross_validate(design, loss, D, lambda_grid, nu_grid, folds, rng,
                             cv_settings or settings)
    sol = fit(SplitProblem(design, loss, nu, lam, D), settings=settings)
    return w_statistics(sol), sol, (lam, nu)
