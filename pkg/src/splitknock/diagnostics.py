"""Sample KL divergence between true and estimated Gaussian designs.

``kl_hat`` measures, per transformation coordinate ``j``, how much the
swap ``a_ij <-> a_tilde_ij`` changes the log-likelihood ratio between the
true precision ``theta_star`` and an estimate ``theta_hat``.  The bound
functions give the corresponding high-probability envelope for a sample
covariance plug-in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import symmetrize
from .model import DimensionMismatch, LiftedDesign, SplitKnockoffError, as_matrix


class SingularPrecision(SplitKnockoffError):
    pass


class SingularAfterRidge(SplitKnockoffError):
    pass


@dataclass(frozen=True)
class PrecisionPair:
    theta_star: np.ndarray
    theta_hat: np.ndarray
    lambda_x: float

    @classmethod
    def from_matrices(cls, theta_star, theta_hat) -> "PrecisionPair":
        theta_star = symmetrize(np.asarray(theta_star, dtype=float))
        theta_hat = symmetrize(np.asarray(theta_hat, dtype=float))
        if theta_star.shape != theta_hat.shape:
            raise DimensionMismatch("precision matrices differ in shape")
        lam_min = np.linalg.eigvalsh(theta_star)[0]
        if lam_min <= 0:
            raise SingularPrecision("theta_star is not positive definite")
        # largest eigenvalue of Sigma_X = 1 / smallest eigenvalue of Theta
        return cls(theta_star, theta_hat, float(1.0 / lam_min))

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.theta_star - self.theta_hat, 2))


def _precision_cholesky(theta, name):
    try:
        return linalg.cholesky(symmetrize(np.asarray(theta, dtype=float)), lower=True)
    except linalg.LinAlgError:
        raise SingularPrecision(f"{name} is not positive definite") from None


def gaussian_logpdf(X, theta) -> np.ndarray:
    """Row-wise zero-mean Gaussian log-density with precision ``theta``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = _precision_cholesky(theta, "precision")
    z = X @ L  # x' Theta x = |L' x|^2
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return 0.5 * logdet - 0.5 * np.einsum("ij,ij->i", z, z) - 0.5 * X.shape[1] * math.log(2 * math.pi)


def kl_hat(lifted: LiftedDesign, D, theta_star, theta_hat) -> np.ndarray:
    """Per-coordinate sample KL divergence.

    With ``x_i = x_tilde_i + a_i D`` and ``x_i^(j) = x_i + delta_ij D_j``
    where ``delta = a_tilde - a``, the summand
    ``l*(x) - lhat(x) + lhat(x^(j)) - l*(x^(j))`` reduces to
    ``delta_ij (x_i Delta D_j') + delta_ij^2 (D_j Delta D_j') / 2`` with
    ``Delta = theta_star - theta_hat``; the log-determinants cancel.
    """
    D = as_matrix(D)
    theta_star = np.asarray(theta_star, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if D.shape != (lifted.m, lifted.p):
        raise DimensionMismatch(f"D {D.shape} does not match design (m={lifted.m}, p={lifted.p})")
    if theta_star.shape != (lifted.p, lifted.p) or theta_hat.shape != theta_star.shape:
        raise DimensionMismatch(f"precisions must be {lifted.p}x{lifted.p}")
    _precision_cholesky(theta_star, "theta_star")
    _precision_cholesky(theta_hat, "theta_hat")
    X = lifted.reconstruct(D)
    delta = lifted.a_tilde - lifted.a
    Delta = theta_star - theta_hat
    DDelta = D @ Delta
    lin = X @ DDelta.T  # (x_i Delta D_j')
    quad = np.einsum("jk,jk->j", DDelta, D)  # D_j Delta D_j'
    return (delta * lin).sum(axis=0) + 0.5 * (delta ** 2).sum(axis=0) * quad


def kl_hat_bruteforce(lifted: LiftedDesign, D, theta_star, theta_hat) -> np.ndarray:
    """Direct evaluation of the four log-densities per (i, j); O(n m p^2)."""
    D = as_matrix(D)
    X = lifted.reconstruct(D)
    base = gaussian_logpdf(X, theta_star) - gaussian_logpdf(X, theta_hat)
    out = np.zeros(lifted.m)
    for j in range(lifted.m):
        Xj = X + np.outer(lifted.a_tilde[:, j] - lifted.a[:, j], D[j])
        out[j] = np.sum(base + gaussian_logpdf(Xj, theta_hat) - gaussian_logpdf(Xj, theta_star))
    return out


def delta_theta(alpha: float, d_row_norm: float, delta_norm: float, p: int, lambda_x: float) -> float:
    """``4 alpha |D_j| |Delta| (sqrt(2 p Lambda_X) + 2 alpha |D_j|^2)``."""
    if min(alpha, d_row_norm, delta_norm, p, lambda_x) < 0:
        raise ValueError("delta_theta inputs must be nonnegative")
    return 4.0 * alpha * d_row_norm * delta_norm * (
        math.sqrt(2.0 * p * lambda_x) + 2.0 * alpha * d_row_norm ** 2)


def kl_bound(delta: float, n: int, m: float) -> float:
    """Leading term ``2 delta sqrt(n log m)`` of the high-probability bound."""
    if n < 1 or m < 2:
        raise ValueError("kl_bound needs n >= 1 and m >= 2")
    return 2.0 * delta * math.sqrt(n * math.log(m))


def estimate_precision(X, ridge: float | None = None) -> np.ndarray:
    """Inverse of ``X'X / N + ridge I``; ridge defaults to ``1e-8 trace / p``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, p = X.shape
    if N < 1:
        raise ValueError("need at least one row")
    S = X.T @ X / N
    if ridge is None:
        ridge = 1e-8 * np.trace(S) / p
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    S = S + ridge * np.eye(p)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 1e-12 * max(w[-1], np.finfo(float).tiny):
        raise SingularAfterRidge(f"sample covariance is singular (N={N}, p={p}, ridge={ridge:g})")
    return linalg.cho_solve(linalg.cho_factor(S, lower=True), np.eye(p))


def kl_report(lifted: LiftedDesign, D, pair: PrecisionPair, alpha: float) -> list:
    """Rows ``{j, kl_hat, bound}`` with the per-coordinate bound."""
    D = as_matrix(D)
    kl = kl_hat(lifted, D, pair.theta_star, pair.theta_hat)
    dn = pair.delta_norm
    m = max(lifted.m, 2)
    rows = []
    for j in range(lifted.m):
        d = delta_theta(alpha, float(np.linalg.norm(D[j])), dn, lifted.p, pair.lambda_x)
        rows.append({"j": j, "kl_hat": float(kl[j]), "bound": kl_bound(d, lifted.n, m)})
    return rows
