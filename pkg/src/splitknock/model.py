"""Core data types shared across the package.

Notation follows the usual split-knockoff setup: ``X`` is the random design
(n x p), ``D`` a fixed m x p transformation, ``gamma* = D beta*`` the
transformed coefficients whose support is selected, ``A`` the auxiliary
design (n x m), ``A_tilde`` its knockoff copy and ``X_tilde = X - A D``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class SplitKnockoffError(ValueError):
    """Base class for every error raised by this package."""


class DimensionMismatch(SplitKnockoffError):
    pass


class InvalidResponseDomain(SplitKnockoffError):
    pass


class MalformedComparisonRow(SplitKnockoffError):
    pass


class NonFiniteInput(SplitKnockoffError):
    pass


class Task(enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    PAIRWISE = "pairwise"


@dataclass(frozen=True)
class TransformMatrix:
    """A dense m x p transformation together with a descriptive kind.

    ``kind="graph"`` asserts that every row is a signed edge (+1, -1).
    """

    matrix: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise DimensionMismatch(f"transform must be a nonempty 2-d matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise NonFiniteInput("transform has non-finite entries")
        if self.kind == "graph":
            plus = (mat == 1).sum(axis=1)
            minus = (mat == -1).sum(axis=1)
            nnz = (mat != 0).sum(axis=1)
            if not (np.all(plus == 1) and np.all(minus == 1) and np.all(nnz == 2)):
                raise MalformedComparisonRow("graph difference rows need exactly one +1 and one -1")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


def as_matrix(D) -> np.ndarray:
    """Return the dense array behind ``D`` (a TransformMatrix or array-like)."""
    if isinstance(D, TransformMatrix):
        return D.matrix
    mat = np.asarray(D, dtype=float)
    if mat.ndim != 2:
        raise DimensionMismatch(f"transform must be 2-d, got shape {mat.shape}")
    return mat


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: Task = Task.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def validate_dataset(ds: Dataset) -> None:
    """Raise if ``ds`` breaks any dataset invariant; return None otherwise."""
    X, y = ds.X, ds.y
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise DimensionMismatch(f"X has shape {X.shape}, y has shape {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("dataset contains non-finite values")
    if ds.task is Task.LOGISTIC and not np.all((y == 0) | (y == 1)):
        raise InvalidResponseDomain("logistic responses must lie in {0, 1}")
    if ds.task is Task.PAIRWISE:
        if not np.all((y == -1) | (y == 1)):
            raise InvalidResponseDomain("pairwise responses must lie in {-1, +1}")
        bad = ((X == 1).sum(axis=1) != 1) | ((X == -1).sum(axis=1) != 1) | ((X != 0).sum(axis=1) != 2)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise MalformedComparisonRow(f"row {row} is not a single signed comparison: {X[row]}")


def gamma_from_beta(D, beta) -> np.ndarray:
    mat = as_matrix(D)
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or mat.shape[1] != beta.shape[0]:
        raise DimensionMismatch(f"D has {mat.shape[1]} columns but beta has length {beta.shape}")
    return mat @ beta


def to_binary(y) -> np.ndarray:
    """Map {-1, +1} labels to {0, 1}; {0, 1} labels pass through."""
    y = np.asarray(y, dtype=float)
    if np.all((y == 0) | (y == 1)):
        return y
    if np.all((y == -1) | (y == 1)):
        return (y + 1.0) / 2.0
    raise InvalidResponseDomain("labels must be in {0,1} or {-1,+1}")


@dataclass(frozen=True)
class LiftedDesign:
    """Knockoff-augmented design rows ``(x_tilde, a, a_tilde)`` and response."""

    x_tilde: np.ndarray
    a: np.ndarray
    a_tilde: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        xt = np.asarray(self.x_tilde, dtype=float)
        a = np.asarray(self.a, dtype=float)
        at = np.asarray(self.a_tilde, dtype=float)
        if xt.ndim != 2 or a.ndim != 2 or a.shape != at.shape or xt.shape[0] != a.shape[0]:
            raise DimensionMismatch(
                f"inconsistent lifted design shapes {xt.shape}, {a.shape}, {at.shape}")
        object.__setattr__(self, "x_tilde", xt)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_tilde", at)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.shape != (a.shape[0],):
                raise DimensionMismatch(f"response has shape {y.shape}, expected ({a.shape[0]},)")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.x_tilde.shape[1]

    @property
    def m(self) -> int:
        return self.a.shape[1]

    def with_response(self, y) -> "LiftedDesign":
        return LiftedDesign(self.x_tilde, self.a, self.a_tilde, y)

    def take(self, rows) -> "LiftedDesign":
        y = None if self.y is None else self.y[rows]
        return LiftedDesign(self.x_tilde[rows], self.a[rows], self.a_tilde[rows], y)

    def swap(self, S) -> "LiftedDesign":
        """Exchange columns ``S`` between ``a`` and ``a_tilde``."""
        S = np.asarray(S, dtype=int)
        a, at = self.a.copy(), self.a_tilde.copy()
        a[:, S], at[:, S] = self.a_tilde[:, S], self.a[:, S]
        return LiftedDesign(self.x_tilde, a, at, self.y)

    def reconstruct(self, D) -> np.ndarray:
        """Recover ``X = X_tilde + A D``."""
        return self.x_tilde + self.a @ as_matrix(D)


@dataclass(frozen=True)
class GroundTruth:
    beta_star: np.ndarray
    gamma_star: np.ndarray
    h1: frozenset = field(default_factory=frozenset)

    @classmethod
    def from_beta(cls, D, beta_star) -> "GroundTruth":
        beta = np.asarray(beta_star, dtype=float)
        gamma = gamma_from_beta(D, beta)
        return cls(beta, gamma, frozenset(int(j) for j in np.flatnonzero(gamma != 0)))

    @property
    def m(self) -> int:
        return self.gamma_star.shape[0]


@dataclass(frozen=True)
class SelectionReport:
    threshold: float
    selected: tuple
    q: float
    plus: bool
    w: np.ndarray | None = None
