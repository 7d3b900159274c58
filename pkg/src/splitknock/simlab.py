"""Simulation designs and experiment runners.

Gaussian designs: AR(1) covariance, a fixed sparse coefficient pattern,
D in {identity, 1-d difference, stacked}, logistic responses.  Pairwise
designs: Bradley-Terry comparisons on the complete graph.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ._linalg import psd_factor
from .baseline import build_mx_params, default_mx_lambda_grid, mx_knockoff_copies, mx_lcd_statistic
from .gaussian import build_params, lift_gaussian, sample_covariance
from .knockoff_filter import ThresholdRule, aggregate, fdp_power, select
from .model import Dataset, GroundTruth, Task, TransformMatrix
from .pairwise import ComparisonGraph, bootstrap_plus, sequential_copies
from .solver import Loss, SolverSettings, lambda_max, split_knockoff_w


def gen_ar_cov(p: int, c: float) -> np.ndarray:
    if not 0 <= c < 1:
        raise ValueError("c must lie in [0, 1)")
    idx = np.arange(p)
    return c ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def gen_beta_star(p: int, k: int, amp: float) -> np.ndarray:
    """``amp`` at 1-based positions i <= k with i = 0 or 2 (mod 3)."""
    if k > p:
        raise ValueError("k must not exceed p")
    i = np.arange(1, p + 1)
    return np.where((i <= k) & (i % 3 != 1), float(amp), 0.0)


def make_D(kind: str, p: int) -> TransformMatrix:
    kind = kind.upper()
    eye = np.eye(p)
    if kind == "D1":
        return TransformMatrix(eye, kind="identity")
    if p < 2:
        raise ValueError(f"{kind} needs p >= 2")
    diff = eye[:-1] - eye[1:]
    if kind == "D2":
        return TransformMatrix(diff, kind="graph")
    if kind == "D3":
        return TransformMatrix(np.vstack([eye, diff]), kind="stacked")
    raise ValueError(f"unknown D kind {kind!r}")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def gen_logistic(X, beta_star, rng) -> np.ndarray:
    prob = sigmoid(np.asarray(X, dtype=float) @ np.asarray(beta_star, dtype=float))
    return (rng.random(prob.shape[0]) < prob).astype(float)


def gen_gaussian_design(sigma, n: int, rng) -> np.ndarray:
    return rng.standard_normal((n, sigma.shape[0])) @ psd_factor(sigma).T


def gen_pairwise(p: int, sparsity: float, n: int, rng, beta_star=None):
    """Bradley-Terry comparisons among ``p`` objects on the complete graph."""
    if not 0 < sparsity <= 1:
        raise ValueError("sparsity must lie in (0, 1]")
    if beta_star is None:
        beta_star = rng.standard_normal(p)
        beta_star[int(math.floor(sparsity * p + 1e-9)):] = 0.0
    beta_star = np.asarray(beta_star, dtype=float)
    g = ComparisonGraph.full(p)
    pair = rng.integers(0, g.m, size=n)
    edges = np.array(g.edges)
    X = np.zeros((n, p))
    rows = np.arange(n)
    X[rows, edges[pair, 0]] = 1.0
    X[rows, edges[pair, 1]] = -1.0
    y = np.where(rng.random(n) < sigmoid(X @ beta_star), 1.0, -1.0)
    truth = GroundTruth.from_beta(g.D, beta_star)
    return Dataset(X, y, Task.PAIRWISE), truth, g


# ---------------------------------------------------------------------------
# experiment runners

GAUSS_LAMBDA_GRID = tuple(10.0 ** np.array([-1.0, -1.25, -1.5, -1.75, -2.0]))
GAUSS_NU_GRID = tuple(10.0 ** np.array([1.0, 0.5, 0.0]))
# CV settings: looser than the final refit, which uses the solver defaults
CV_SETTINGS = SolverSettings(tol=1e-6, kkt_tol=1e-4)
# pairwise lambdas are multiples of the data's kill threshold: one-hot edge
# columns are rarely active, so absolute grids are off by orders of magnitude
PAIRWISE_RELATIVE_GRID = tuple(10.0 ** np.array([0.0, -0.5, -1.0, -1.5, -2.0]))

RESULT_FIELDS = ("method", "n", "rep", "fdp", "power", "selected_count", "wall_ms")
AGGREGATE_FIELDS = ("method", "n", "mean_fdr", "lo80", "hi80", "mean_power", "plo80", "phi80")


@dataclass(frozen=True)
class GaussianSimConfig:
    p: int = 30
    k: int = 6
    amp: float = 1.0
    c: float = 0.5
    n_list: tuple = (200, 500, 1000, 2000)
    q: float = 0.2
    reps: int = 100
    d_kind: str = "D1"
    task: str = "logistic"
    seed: int = 0
    plus: bool = True
    folds: int = 5
    lambda_grid: tuple = GAUSS_LAMBDA_GRID
    nu_grid: tuple = GAUSS_NU_GRID
    fast: bool = False
    baseline: bool = True

    def __post_init__(self):
        if not 0 <= self.c < 1:
            raise ValueError("c must lie in [0, 1)")
        if not 0 <= self.k <= self.p:
            raise ValueError("k must lie in [0, p]")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.task != "logistic":
            raise ValueError("only the logistic task is simulated")
        ThresholdRule(self.q, self.plus)
        make_D(self.d_kind, self.p)
        object.__setattr__(self, "d_kind", self.d_kind.upper())
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))


@dataclass(frozen=True)
class PairwiseSimConfig:
    p: int = 15
    sparsity: float = 0.5
    n_list: tuple = (500, 1000, 2000, 4000)
    q: float = 0.2
    reps: int = 100
    construction: str = "bootstrap+"
    seed: int = 0
    plus: bool = True
    folds: int = 5
    lambda_grid: tuple | None = None  # None: PAIRWISE_RELATIVE_GRID times lambda_max
    nu_grid: tuple = GAUSS_NU_GRID
    fast: bool = False
    # zero-augment the sequential sampler; without it A_tilde = A and W = 0
    sequential_augment: bool = True

    def __post_init__(self):
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must lie in (0, 1]")
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"construction must be one of {sorted(CONSTRUCTIONS)}")
        ThresholdRule(self.q, self.plus)
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))


CONSTRUCTIONS = {"bootstrap+": bootstrap_plus, "sequential": sequential_copies}


def replicate_rng(seed: int, n: int, rep: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, n, replicate, stream)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(n), int(rep), stream]))


def _grids(lambda_grid, nu_grid, fast: bool):
    lam, nu = np.asarray(lambda_grid, float), np.asarray(nu_grid, float)
    if fast:
        # geometric midpoints of the grids
        lam = np.array([math.sqrt(lam.max() * lam.min())])
        nu = np.array([math.sqrt(nu.max() * nu.min())])
    return lam, nu


def _row(method, n, rep, report, truth, wall_ms):
    fdp, power = fdp_power(report, truth)
    return {"method": method, "n": n, "rep": rep, "fdp": fdp, "power": power,
            "selected_count": len(report.selected), "wall_ms": wall_ms}


def gaussian_replicate(cfg: GaussianSimConfig, n: int, rep: int) -> list:
    """One replicate: split knockoffs and, for D1, the Model-X baseline."""
    sigma = gen_ar_cov(cfg.p, cfg.c)
    beta = gen_beta_star(cfg.p, cfg.k, cfg.amp)
    D = make_D(cfg.d_kind, cfg.p)
    truth = GroundTruth.from_beta(D, beta)
    rule = ThresholdRule(cfg.q, cfg.plus)
    lam_grid, nu_grid = _grids(cfg.lambda_grid, cfg.nu_grid, cfg.fast)

    data_rng = replicate_rng(cfg.seed, n, rep, 0)
    X = gen_gaussian_design(sigma, n, data_rng)
    y = gen_logistic(X, beta, data_rng)
    sigma_hat = sample_covariance(X)

    t0 = time.perf_counter()
    params = build_params(sigma_hat, D, precision_source="estimated_sample_cov")
    lifted = lift_gaussian(X, params, replicate_rng(cfg.seed, n, rep, 1)).with_response(y)
    w, _, _ = split_knockoff_w(lifted, Loss.LOGISTIC, D, lam_grid, nu_grid, cfg.folds,
                               replicate_rng(cfg.seed, n, rep, 2), cv_settings=CV_SETTINGS)
    rows = [_row("split", n, rep, select(w, rule), truth, (time.perf_counter() - t0) * 1e3)]

    if cfg.baseline and cfg.d_kind == "D1":
        t0 = time.perf_counter()
        mx = build_mx_params(sigma_hat)
        Xk = mx_knockoff_copies(X, mx, replicate_rng(cfg.seed, n, rep, 3))
        w = mx_lcd_statistic(X, Xk, y, Loss.LOGISTIC, default_mx_lambda_grid(), cfg.folds,
                             replicate_rng(cfg.seed, n, rep, 4), cv_settings=CV_SETTINGS)
        rows.append(_row("mx", n, rep, select(w, rule), truth, (time.perf_counter() - t0) * 1e3))
    return rows


def pairwise_w(ds: Dataset, g: ComparisonGraph, construction: str, rng_copy, rng_cv,
               lambda_grid=None, nu_grid=GAUSS_NU_GRID, folds: int = 5, fast: bool = False,
               sequential_augment: bool = True):
    """Construct split knockoff copies of a comparison dataset and return W."""
    if construction == "sequential":
        lifted = sequential_copies(ds, g, rng=rng_copy, augment=sequential_augment)
    else:
        lifted = CONSTRUCTIONS[construction](ds, g, rng=rng_copy)
    nu_grid = np.asarray(nu_grid, float)
    if lambda_grid is None:
        lmax = lambda_max(lifted, Loss.LOGISTIC, g.D, nu_grid.max(), CV_SETTINGS)
        lambda_grid = lmax * np.asarray(PAIRWISE_RELATIVE_GRID)
    lam, nu = _grids(lambda_grid, nu_grid, fast)
    w, _, _ = split_knockoff_w(lifted, Loss.LOGISTIC, g.D, lam, nu, folds, rng_cv,
                               cv_settings=CV_SETTINGS)
    return w


def pairwise_replicate(cfg: PairwiseSimConfig, n: int, rep: int) -> list:
    data_rng = replicate_rng(cfg.seed, n, rep, 0)
    ds, truth, g = gen_pairwise(cfg.p, cfg.sparsity, n, data_rng)
    t0 = time.perf_counter()
    w = pairwise_w(ds, g, cfg.construction, replicate_rng(cfg.seed, n, rep, 1),
                   replicate_rng(cfg.seed, n, rep, 2), cfg.lambda_grid, cfg.nu_grid,
                   cfg.folds, cfg.fast, cfg.sequential_augment)
    wall = (time.perf_counter() - t0) * 1e3
    return [_row(cfg.construction, n, rep, select(w, ThresholdRule(cfg.q, cfg.plus)), truth, wall)]


def _init_worker():
    threadpool_limits(1)


def _run(fn, cfg, threads: int) -> list:
    jobs = [(n, rep) for n in cfg.n_list for rep in range(cfg.reps)]
    if threads <= 1:
        with threadpool_limits(1):
            out = [fn(cfg, n, rep) for n, rep in jobs]
    else:
        with ProcessPoolExecutor(threads, initializer=_init_worker) as pool:
            out = list(pool.map(fn, [cfg] * len(jobs), *zip(*jobs), chunksize=1))
    rows = [r for chunk in out for r in chunk]
    rows.sort(key=lambda r: (r["method"], r["n"], r["rep"]))
    return rows


def run_gaussian_experiment(cfg: GaussianSimConfig, threads: int = 1) -> list:
    """Per-replicate rows, sorted by method, n and replicate."""
    return _run(gaussian_replicate, cfg, threads)


def run_pairwise_experiment(cfg: PairwiseSimConfig, threads: int = 1) -> list:
    return _run(pairwise_replicate, cfg, threads)


def aggregate_rows(rows, q: float) -> list:
    """One summary row per (method, n) with 80% bands."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["n"]), []).append(r)
    out = []
    for (method, n), grp in sorted(groups.items()):
        s = aggregate([r["fdp"] for r in grp], [r["power"] for r in grp], q,
                      [r["selected_count"] for r in grp])
        out.append({"method": method, "n": n, "mean_fdr": s["mean_fdr"],
                    "lo80": s["ci80_fdr"][0], "hi80": s["ci80_fdr"][1],
                    "mean_power": s["mean_power"], "plo80": s["ci80_power"][0],
                    "phi80": s["ci80_power"][1], "se_fdr": s["se_fdr"],
                    "mfdr_proxy": s["mfdr_proxy"], "reps": s["reps"]})
    return out
