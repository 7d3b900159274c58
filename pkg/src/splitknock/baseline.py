"""Gaussian Model-X knockoffs for the identity transform.

The lasso-coefficient-difference statistic is computed with the split solver
on the lifted design ``(0, X, X_knockoff)`` with ``D = I`` and the coupling
switched off (``nu = inf``); with ``X_tilde = 0`` the split objective is then
exactly the lasso on ``[X, X_knockoff]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import check_psd, psd_factor, symmetrize
from .model import DimensionMismatch, LiftedDesign
from .solver import (DEFAULT_SETTINGS, Loss, SolverSettings, SplitProblem, cross_validate,
                     fit, w_statistics)

EQUI_FRACTION = 0.95


@dataclass(frozen=True)
class MXParams:
    sigma_x: np.ndarray
    s: np.ndarray
    # X_knockoff | X = x has mean x @ mean_coef and covariance factor @ factor.T
    mean_coef: np.ndarray = field(init=False, repr=False)
    factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sigma = symmetrize(np.asarray(self.sigma_x, dtype=float))
        s = np.asarray(self.s, dtype=float)
        if s.shape != (sigma.shape[0],) or np.any(s < 0):
            raise ValueError("s must be a nonnegative vector of length p")
        check_psd(self.joint_covariance_of(sigma, s), "knockoff joint covariance")
        sigma_inv = np.linalg.pinv(sigma, hermitian=True)
        Sinv_s = sigma_inv * s  # Sigma^{-1} diag(s)
        cond_cov = 2.0 * np.diag(s) - s[:, None] * Sinv_s
        object.__setattr__(self, "sigma_x", sigma)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "mean_coef", np.eye(s.size) - Sinv_s)
        object.__setattr__(self, "factor", psd_factor(cond_cov))

    @staticmethod
    def joint_covariance_of(sigma, s):
        off = sigma - np.diag(s)
        return np.block([[sigma, off], [off, sigma]])

    def joint_covariance(self):
        return self.joint_covariance_of(self.sigma_x, self.s)


def equicorrelated_s(sigma_x, fraction: float = EQUI_FRACTION) -> np.ndarray:
    """Equi-correlated gaps, computed on the correlation scale."""
    sigma = symmetrize(np.asarray(sigma_x, dtype=float))
    sd = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(sd, sd)
    lam_min = np.linalg.eigvalsh(corr)[0]
    return min(2.0 * lam_min, 1.0) * fraction * sd ** 2


def build_mx_params(sigma_x, s=None) -> MXParams:
    return MXParams(sigma_x, equicorrelated_s(sigma_x) if s is None else s)


def mx_knockoff_copies(X, params: MXParams, rng) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.s.size:
        raise DimensionMismatch(f"X has shape {X.shape}, expected p={params.s.size}")
    noise = rng.standard_normal(X.shape) @ params.factor.T
    return X @ params.mean_coef + noise


def mx_lifted(X, X_knockoff, y) -> LiftedDesign:
    """The lifted design that reduces the split objective to the MX lasso."""
    X = np.asarray(X, dtype=float)
    return LiftedDesign(np.zeros_like(X), X, X_knockoff, y)


def default_mx_lambda_grid() -> np.ndarray:
    return 10.0 ** np.linspace(-1.0, -3.0, 9)


def mx_lcd_statistic(X, X_knockoff, y, loss=Loss.LOGISTIC, lambda_grid=None, folds: int = 5,
                     rng=None, settings: SolverSettings = DEFAULT_SETTINGS,
                     cv_settings: SolverSettings | None = None):
    """``W_j = |b_j| - |b_{j+p}|`` from an l1 fit on ``[X, X_knockoff]`` at CV lambda."""
    X = np.asarray(X, dtype=float)
    X_knockoff = np.asarray(X_knockoff, dtype=float)
    if X.shape != X_knockoff.shape:
        raise DimensionMismatch("X and its knockoff differ in shape")
    design = mx_lifted(X, X_knockoff, y)
    D = np.eye(X.shape[1])
    grid = default_mx_lambda_grid() if lambda_grid is None else lambda_grid
    lam, _ = cross_validate(design, loss, D, grid, [math.inf], folds, rng, cv_settings or settings)
    sol = fit(SplitProblem(design, loss, math.inf, lam, D), settings=settings)
    return w_statistics(sol)
