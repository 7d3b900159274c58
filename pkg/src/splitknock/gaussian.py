"""Split knockoff construction for (approximately) Gaussian designs.

Two parameterizations are supported:

* :class:`GaussianSplitParams` -- the power-oriented choice
  ``Sigma_A = alpha I`` and ``Sigma_AX = alpha D``, which makes ``X_tilde``
  independent of ``A`` so that ``(A, A_tilde)`` can be drawn marginally.
* :class:`GeneralSplitParams` -- arbitrary ``Sigma_A`` and ``Sigma_AX``; the
  copy is drawn from the conditional law given ``X_tilde``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from ._linalg import NotPSD, check_psd, psd_factor, psd_tolerance, symmetrize
from .model import DimensionMismatch, LiftedDesign, SplitKnockoffError, as_matrix

SAFETY = 0.99
MAX_EQUI_FRACTION = 0.95


class ZeroTransform(SplitKnockoffError):
    pass


class InfeasibleAlpha(SplitKnockoffError):
    pass


class InvalidS(SplitKnockoffError):
    pass


class SMode(enum.Enum):
    INDEPENDENT = "independent"
    MAX_EQUI = "max_equi"
    CUSTOM = "custom"


class PrecisionSource(enum.Enum):
    KNOWN = "known"
    ESTIMATED = "estimated_sample_cov"


def sample_covariance(X, ridge: float = 0.0) -> np.ndarray:
    """``X^T X / n`` with optional diagonal loading."""
    X = np.asarray(X, dtype=float)
    S = X.T @ X / X.shape[0]
    if ridge:
        S = S + ridge * np.eye(S.shape[0])
    return S


def max_feasible_alpha(sigma_x, D, safety: float = SAFETY) -> float:
    """Largest alpha with ``sigma_x - alpha D^T D`` PSD, times ``safety``.

    Works on the eigenbasis of ``sigma_x`` so that singular covariances are
    handled: any direction of ``D^T D`` inside the null space of ``sigma_x``
    makes every positive alpha infeasible.
    """
    sigma = symmetrize(np.asarray(sigma_x, dtype=float))
    Dm = as_matrix(D)
    if sigma.shape != (Dm.shape[1], Dm.shape[1]):
        raise DimensionMismatch(f"sigma_x {sigma.shape} does not match D {Dm.shape}")
    DtD = Dm.T @ Dm
    if not np.any(DtD):
        raise ZeroTransform("D^T D is the zero matrix")
    w, U = np.linalg.eigh(sigma)
    tol = psd_tolerance(sigma)
    if w[0] < -tol:
        raise NotPSD(f"sigma_x has negative eigenvalue {w[0]:.3e}")
    pos = w > tol
    DU = Dm @ U
    if np.any(~pos) and np.linalg.norm(DU[:, ~pos]) > 1e-10 * np.linalg.norm(Dm):
        raise InfeasibleAlpha("range of D^T D meets the null space of sigma_x; no positive alpha")
    B = DU[:, pos] / np.sqrt(w[pos])
    top = np.linalg.eigvalsh(B.T @ B)[-1]
    return safety / top


def _check_alpha(sigma, DtD, alpha):
    if not alpha > 0:
        raise InfeasibleAlpha(f"alpha must be positive, got {alpha}")
    gap = symmetrize(sigma - alpha * DtD)
    w = np.linalg.eigvalsh(gap)[0]
    if w < -max(psd_tolerance(sigma), 1e-12):
        raise InfeasibleAlpha(f"sigma_x - alpha D^T D has eigenvalue {w:.3e} for alpha={alpha}")


def _check_s(s, alpha, m):
    s = np.asarray(s, dtype=float)
    if s.shape != (m,):
        raise InvalidS(f"s must have length {m}, got shape {s.shape}")
    if np.any(s < 0) or np.any(s > 2 * alpha * (1 + 1e-12)):
        raise InvalidS(f"s must satisfy 0 <= s_j <= 2*alpha = {2 * alpha}")
    return s


@dataclass(frozen=True)
class GaussianSplitParams:
    sigma_x: np.ndarray
    alpha: float
    D: np.ndarray
    s: np.ndarray
    precision_source: PrecisionSource = PrecisionSource.KNOWN
    # derived: A | X = x has mean x @ cond_coef, covariance noise_factor noise_factor^T
    cond_coef: np.ndarray = field(init=False, repr=False)
    noise_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sigma = np.asarray(self.sigma_x, dtype=float)
        Dm = as_matrix(self.D)
        m = Dm.shape[0]
        # alpha Sigma^{-1} D^T via the pseudo-inverse: alpha at the boundary is allowed
        sigma_pinv = np.linalg.pinv(symmetrize(sigma), hermitian=True)
        coef = self.alpha * sigma_pinv @ Dm.T
        noise_cov = self.alpha * np.eye(m) - self.alpha * Dm @ coef
        object.__setattr__(self, "sigma_x", sigma)
        object.__setattr__(self, "D", Dm)
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        object.__setattr__(self, "cond_coef", coef)
        object.__setattr__(self, "noise_factor", psd_factor(noise_cov))

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    def joint_covariance(self) -> np.ndarray:
        """Covariance of ``(X_tilde, A, A_tilde)`` under this construction."""
        p, m = self.p, self.m
        C = np.zeros((p + 2 * m, p + 2 * m))
        C[:p, :p] = self.sigma_x - self.alpha * self.D.T @ self.D
        C[p:p + m, p:p + m] = self.alpha * np.eye(m)
        C[p + m:, p + m:] = self.alpha * np.eye(m)
        cross = self.alpha * np.eye(m) - np.diag(self.s)
        C[p:p + m, p + m:] = cross
        C[p + m:, p:p + m] = cross
        return C

    def to_general(self) -> "GeneralSplitParams":
        return build_general_params(self.sigma_x, self.D, self.alpha * np.eye(self.m),
                                    self.alpha * self.D, self.s)

    def to_json(self) -> str:
        return json.dumps({
            "sigma_x_source": self.precision_source.value,
            "alpha": float(self.alpha),
            "s": [float(v) for v in self.s],
        })


def build_params(sigma_x, D, alpha: float | None = None, s_mode="independent",
                 precision_source=PrecisionSource.KNOWN) -> GaussianSplitParams:
    """Assemble validated Gaussian split parameters.

    ``s_mode`` is ``"independent"`` (s = alpha, so A_tilde is independent of
    A), ``"max_equi"`` (s = 1.9 alpha) or an explicit vector of length m.
    """
    sigma = symmetrize(np.asarray(sigma_x, dtype=float))
    Dm = as_matrix(D)
    if sigma.shape != (Dm.shape[1], Dm.shape[1]):
        raise DimensionMismatch(f"sigma_x {sigma.shape} does not match D {Dm.shape}")
    check_psd(sigma, "sigma_x")
    if alpha is None:
        alpha = max_feasible_alpha(sigma, Dm)
    else:
        _check_alpha(sigma, Dm.T @ Dm, alpha)
    m = Dm.shape[0]
    if isinstance(s_mode, str):
        s_mode = SMode(s_mode)
    if s_mode is SMode.INDEPENDENT:
        s = np.full(m, float(alpha))
    elif s_mode is SMode.MAX_EQUI:
        s = np.full(m, 2.0 * alpha * MAX_EQUI_FRACTION)
    else:
        s = _check_s(s_mode, alpha, m)
    return GaussianSplitParams(sigma, float(alpha), Dm, s, PrecisionSource(precision_source))


def lift_gaussian(X, params: GaussianSplitParams, rng) -> LiftedDesign:
    """Draw ``A | X`` and ``A_tilde | A`` for observed rows ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.p:
        raise DimensionMismatch(f"X has shape {X.shape}, expected (n, {params.p})")
    n, m = X.shape[0], params.m
    A = X @ params.cond_coef + rng.standard_normal((n, m)) @ params.noise_factor.T
    x_tilde = X - A @ params.D
    shrink = 1.0 - params.s / params.alpha
    sd = np.sqrt(np.clip(2.0 * params.s - params.s ** 2 / params.alpha, 0.0, None))
    a_tilde = A * shrink + rng.standard_normal((n, m)) * sd
    return LiftedDesign(x_tilde, A, a_tilde)


def sample_lifted(params: GaussianSplitParams, n: int, rng) -> LiftedDesign:
    L = psd_factor(params.sigma_x)
    X = rng.standard_normal((n, params.p)) @ L.T
    return lift_gaussian(X, params, rng)


@dataclass(frozen=True)
class GeneralSplitParams:
    sigma_x: np.ndarray
    sigma_a: np.ndarray
    sigma_ax: np.ndarray
    s: np.ndarray
    D: np.ndarray
    sigma_xtilde: np.ndarray
    sigma_a_tilde: np.ndarray
    # E[A | X_tilde = x] = x @ mean_coef.T
    mean_coef: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    def joint_covariance(self) -> np.ndarray:
        """Unconditional covariance of ``(X_tilde, A, A_tilde)``."""
        p, m = self.p, self.m
        cross_xa = self.sigma_ax.T - self.D.T @ self.sigma_a
        C = np.zeros((p + 2 * m, p + 2 * m))
        C[:p, :p] = self.sigma_xtilde
        C[:p, p:p + m] = cross_xa
        C[:p, p + m:] = cross_xa
        C[p:p + m, :p] = cross_xa.T
        C[p + m:, :p] = cross_xa.T
        C[p:p + m, p:p + m] = self.sigma_a
        C[p + m:, p + m:] = self.sigma_a
        C[p:p + m, p + m:] = self.sigma_a - np.diag(self.s)
        C[p + m:, p:p + m] = self.sigma_a - np.diag(self.s)
        return C


def build_general_params(sigma_x, D, sigma_a, sigma_ax, s) -> GeneralSplitParams:
    sigma = symmetrize(np.asarray(sigma_x, dtype=float))
    Dm = as_matrix(D)
    m, p = Dm.shape
    sigma_a = symmetrize(np.asarray(sigma_a, dtype=float))
    sigma_ax = np.asarray(sigma_ax, dtype=float)
    if sigma.shape != (p, p) or sigma_a.shape != (m, m) or sigma_ax.shape != (m, p):
        raise DimensionMismatch("covariance blocks do not match D")
    joint = np.block([[sigma, sigma_ax.T], [sigma_ax, sigma_a]])
    check_psd(joint, "joint covariance of (X, A)")
    DtSa = Dm.T @ sigma_a
    sigma_xtilde = symmetrize(sigma - sigma_ax.T @ Dm - Dm.T @ sigma_ax + DtSa @ Dm)
    cross = sigma_ax - sigma_a @ Dm  # Cov(A, X_tilde), m x p
    mean_coef = cross @ np.linalg.pinv(sigma_xtilde, hermitian=True)
    sigma_a_tilde = symmetrize(sigma_a - mean_coef @ cross.T)
    s = np.asarray(s, dtype=float)
    if s.shape != (m,) or np.any(s < 0):
        raise InvalidS(f"s must be a nonnegative vector of length {m}")
    cond = np.block([[sigma_a_tilde, sigma_a_tilde - np.diag(s)],
                     [sigma_a_tilde - np.diag(s), sigma_a_tilde]])
    try:
        check_psd(cond, "conditional covariance of (A, A_tilde)")
    except NotPSD as exc:
        raise InvalidS(str(exc)) from exc
    return GeneralSplitParams(sigma, sigma_a, sigma_ax, s, Dm, sigma_xtilde, sigma_a_tilde, mean_coef)


def sample_lifted_general(params: GeneralSplitParams, n: int, rng) -> LiftedDesign:
    """Draw joint ``(X, A)``, form ``X_tilde``, then ``A_tilde | A, X_tilde``."""
    p, m = params.p, params.m
    joint = np.block([[params.sigma_x, params.sigma_ax.T], [params.sigma_ax, params.sigma_a]])
    XA = rng.standard_normal((n, p + m)) @ psd_factor(joint).T
    X, A = XA[:, :p], XA[:, p:]
    x_tilde = X - A @ params.D
    mu = x_tilde @ params.mean_coef.T
    S_pinv = np.linalg.pinv(params.sigma_a_tilde, hermitian=True)
    # A_tilde = mu + (a - mu)(I - S^+ diag(s)) + noise; written so s = 0 copies A exactly
    gain = S_pinv * params.s  # S^+ diag(s)
    noise_cov = 2.0 * np.diag(params.s) - params.s[:, None] * S_pinv * params.s[None, :]
    noise = rng.standard_normal((n, m)) @ psd_factor(noise_cov).T
    a_tilde = A - (A - mu) @ gain + noise
    return LiftedDesign(x_tilde, A, a_tilde)
