"""Split knockoff copies for pairwise-comparison designs.

Each design row holds one comparison: +1 for one object, -1 for the other.
``bootstrap_plus`` resamples rows after augmenting them with zero rows and
draws ``A_tilde`` so that ``[A, A_tilde]`` is one-hot; ``sequential_copies``
samples ``A_tilde`` coordinate by coordinate from exact conditionals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (Dataset, LiftedDesign, MalformedComparisonRow, SplitKnockoffError,
                    Task, TransformMatrix, to_binary, validate_dataset)


class UnknownEdge(SplitKnockoffError):
    pass


@dataclass(frozen=True)
class ComparisonGraph:
    """Edges ``(i, j)`` with ``i < j``; row ``k`` of ``D`` is ``e_i - e_j``."""

    p: int
    edges: tuple
    edge_index: dict = field(repr=False)
    D: TransformMatrix = field(repr=False)

    @classmethod
    def from_edges(cls, p: int, edges) -> "ComparisonGraph":
        edges = tuple((int(i), int(j)) for i, j in edges)
        if any(not 0 <= i < j < p for i, j in edges) or len(set(edges)) != len(edges):
            raise MalformedComparisonRow("edges must be distinct pairs (i, j) with 0 <= i < j < p")
        D = np.zeros((len(edges), p))
        for k, (i, j) in enumerate(edges):
            D[k, i], D[k, j] = 1.0, -1.0
        return cls(p, edges, {e: k for k, e in enumerate(edges)}, TransformMatrix(D, kind="graph"))

    @classmethod
    def full(cls, p: int) -> "ComparisonGraph":
        return cls.from_edges(p, [(i, j) for i in range(p) for j in range(i + 1, p)])

    @classmethod
    def from_design(cls, X) -> "ComparisonGraph":
        """Graph of the distinct pairs present in ``X``, in lexicographic order."""
        X = np.asarray(X, dtype=float)
        lo, hi, _ = _row_pairs(X)
        pairs = sorted(set(zip(lo.tolist(), hi.tolist())))
        return cls.from_edges(X.shape[1], pairs)

    @property
    def m(self) -> int:
        return len(self.edges)

    def row_edges(self, X):
        """Edge index and orientation (+1 if the row equals the D row) per row."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise UnknownEdge(f"rows have {X.shape[-1]} columns, graph has p={self.p}")
        try:
            lo, hi, sign = _row_pairs(X)
        except MalformedComparisonRow as exc:
            raise UnknownEdge(str(exc)) from exc
        lookup = np.full((self.p, self.p), -1, dtype=int)
        for (i, j), k in self.edge_index.items():
            lookup[i, j] = k
        idx = lookup[lo, hi]
        if np.any(idx < 0):
            r = int(np.flatnonzero(idx < 0)[0])
            raise UnknownEdge(f"row {r} compares ({lo[r]}, {hi[r]}), which is not an edge")
        return idx, sign


def _row_pairs(X):
    ok = ((X == 1).sum(axis=1) == 1) & ((X == -1).sum(axis=1) == 1) & ((X != 0).sum(axis=1) == 2)
    if not ok.all():
        r = int(np.flatnonzero(~ok)[0])
        raise MalformedComparisonRow(f"row {r} is not a single signed comparison")
    pos = np.argmax(X == 1, axis=1)
    neg = np.argmax(X == -1, axis=1)
    return np.minimum(pos, neg), np.maximum(pos, neg), np.where(pos < neg, 1, -1)


@dataclass(frozen=True)
class EdgeDistribution:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("edge probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", probs)


def edge_distribution_from_data(ds: Dataset, g: ComparisonGraph) -> EdgeDistribution:
    idx, _ = g.row_edges(ds.X)
    counts = np.bincount(idx, minlength=g.m)
    return EdgeDistribution(counts / counts.sum())


def _resample(ds: Dataset, g: ComparisonGraph, n_r: int, augment: bool, rng):
    """Row edges (-1 for zero rows) and {-1, +1} responses of a resample."""
    validate_dataset(ds)
    if ds.task is not Task.PAIRWISE:
        raise ValueError("pairwise constructions need a PAIRWISE dataset")
    if n_r < 1:
        raise ValueError("n_r must be at least 1")
    idx, sign = g.row_edges(ds.X)
    # rows oriented against D flip their response (symmetric link)
    y_canon = ds.y * sign
    zero = rng.integers(0, 2, size=n_r).astype(bool) if augment else np.zeros(n_r, dtype=bool)
    pick = rng.integers(0, ds.n, size=n_r)
    coin = rng.integers(0, 2, size=n_r) * 2 - 1
    edge = np.where(zero, -1, idx[pick])
    y = np.where(zero, coin, y_canon[pick]).astype(float)
    return edge, y


def bootstrap_plus(ds: Dataset, g: ComparisonGraph, n_r: int | None = None, rng=None) -> LiftedDesign:
    """Zero-augmented bootstrap construction; ``X_tilde`` is identically zero."""
    rng = np.random.default_rng(rng)
    n_r = 2 * ds.n if n_r is None else int(n_r)
    probs = edge_distribution_from_data(ds, g).probs
    edge, y = _resample(ds, g, n_r, True, rng)
    zero = edge < 0
    rows = np.arange(n_r)
    a = np.zeros((n_r, g.m))
    a[rows[~zero], edge[~zero]] = 1.0
    a_tilde = np.zeros((n_r, g.m))
    draw = rng.choice(g.m, size=int(zero.sum()), p=probs)
    a_tilde[rows[zero], draw] = 1.0
    return LiftedDesign(np.zeros((n_r, g.p)), a, a_tilde, to_binary(y))


def sequential_copies(ds: Dataset, g: ComparisonGraph, n_r: int | None = None, rng=None,
                      augment: bool = False) -> LiftedDesign:
    """Draw ``A_tilde_j ~ L(A_j | A_-j, A_tilde_{1:j-1})`` for j = 1..m.

    ``A`` takes one of the m+1 states ``{e_1, ..., e_m, 0}`` (zero only when
    ``augment``).  For every row we carry the unnormalized joint mass of each
    candidate state together with the copies drawn so far; the conditional of
    step j compares the two states compatible with ``A_-j``.  Cost is
    O(n_r m^2).  Without augmentation the conditional is degenerate and the
    copy equals ``A``; ``augment=True`` uses the zero-augmented resample of
    ``bootstrap_plus`` and gives a non-trivial copy.
    """
    rng = np.random.default_rng(rng)
    n_r = 2 * ds.n if n_r is None else int(n_r)
    m = g.m
    probs = edge_distribution_from_data(ds, g).probs
    edge, y = _resample(ds, g, n_r, augment, rng)
    state = np.where(edge < 0, m, edge)
    p0 = 0.5 if augment else 0.0
    prior = np.append((1.0 - p0) * probs, p0)
    mass = np.tile(prior, (n_r, 1))
    a_tilde = np.zeros((n_r, m))
    for j in range(m):
        w1, w0 = mass[:, j], mass[:, m]
        tot = w1 + w0
        prob1 = np.divide(w1, tot, out=np.zeros(n_r), where=tot > 0)
        free = (state == j) | (state == m)
        draw = free & (rng.random(n_r) < prob1)
        a_tilde[:, j] = draw
        # update every hypothetical state with the likelihood of this draw
        keep = ~draw
        mass[:, :j] *= keep[:, None]
        mass[:, j + 1:m] *= keep[:, None]
        step = np.where(draw, prob1, 1.0 - prob1)
        mass[:, j] *= step
        mass[:, m] *= step
        scale = mass.sum(axis=1)
        mass /= np.where(scale > 0, scale, 1.0)[:, None]
    rows = np.arange(n_r)
    a = np.zeros((n_r, m))
    a[rows[state < m], state[state < m]] = 1.0
    return LiftedDesign(np.zeros((n_r, g.p)), a, a_tilde, to_binary(y))


def comparisons_to_dataset(item_i, item_j, winner_is_i) -> Dataset:
    """Build a PAIRWISE dataset from integer item indices."""
    item_i = np.asarray(item_i, dtype=int)
    item_j = np.asarray(item_j, dtype=int)
    p = int(max(item_i.max(), item_j.max())) + 1
    X = np.zeros((item_i.size, p))
    rows = np.arange(item_i.size)
    X[rows, item_i] = 1.0
    X[rows, item_j] = -1.0
    y = np.where(np.asarray(winner_is_i, dtype=bool), 1.0, -1.0)
    return Dataset(X, y, Task.PAIRWISE)
