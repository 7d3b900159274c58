from __future__ import annotations

import numpy as np

from .model import SplitKnockoffError


class NotPSD(SplitKnockoffError):
    pass


class CholeskyFailure(SplitKnockoffError):
    pass


def psd_tolerance(C: np.ndarray) -> float:
    """Eigenvalues above ``-tol`` are treated as zero."""
    k = C.shape[0]
    return 1e-10 * max(abs(np.trace(C)) / max(k, 1), 1e-300)


def symmetrize(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def check_psd(C: np.ndarray, name: str = "matrix") -> None:
    w = np.linalg.eigvalsh(symmetrize(C))
    if w.size and w[0] < -psd_tolerance(C):
        raise NotPSD(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3e})")


def psd_factor(C: np.ndarray) -> np.ndarray:
    """Return L with ``L @ L.T == C``.

    Cholesky first; rank-deficient blocks fall back to an eigendecomposition
    with tiny negative eigenvalues clipped to zero.
    """
    C = symmetrize(np.asarray(C, dtype=float))
    if C.size == 0:
        return C.copy()
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(C)
    if w[0] < -max(psd_tolerance(C), 1e-12 * abs(w[-1])):
        raise CholeskyFailure(f"covariance has negative eigenvalue {w[0]:.3e}")
    return U * np.sqrt(np.clip(w, 0.0, None))
