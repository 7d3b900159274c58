"""Command line entry point.

Commands: ``simulate-gaussian``, ``simulate-pairwise``, ``select-pairwise``
and ``diagnose``.  Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import simlab
from .diagnostics import PrecisionPair, kl_report
from .gaussian import build_params, lift_gaussian
from .knockoff_filter import ThresholdRule, select
from .model import SplitKnockoffError
from .pairwise import ComparisonGraph, comparisons_to_dataset

log = logging.getLogger("splitknock")


class InputError(SplitKnockoffError):
    pass


# ---------------------------------------------------------------------------
# argument types

def _q(text):
    try:
        q = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"q must be in (0,1), got {text!r}") from None
    if not 0 < q < 1:
        raise argparse.ArgumentTypeError(f"q must be in (0,1), got {text}")
    return q


def _seed(text):
    try:
        seed = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return seed


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text):
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return vals


def _default_threads():
    env = os.environ.get("SPLITKNOCK_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _common(sp, svg=False):
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--threads", type=_positive_int, default=None,
                    help="worker processes (default: $SPLITKNOCK_THREADS or 1)")
    sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
    if svg:
        sp.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True,
                        help="write fdr_power.svg")
        sp.add_argument("--timing", action="store_true",
                        help="record wall_ms; timings make the results CSV non-reproducible")
        sp.add_argument("--plus", action=argparse.BooleanOptionalAction, default=True,
                        help="knockoff+ threshold; --no-plus uses the plain knockoff threshold")
        sp.add_argument("--fast", action="store_true",
                        help="skip CV, fix (lambda, nu) at the grid midpoints")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitknock",
                                     description="Model-X split knockoffs for transformational sparsity")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("simulate-gaussian", help="logistic simulations with AR(1) Gaussian designs")
    g.add_argument("--p", type=_positive_int, default=30)
    g.add_argument("--k", type=int, default=6)
    g.add_argument("--amp", type=float, default=1.0)
    g.add_argument("--c", type=float, default=0.5)
    g.add_argument("--n-list", type=_int_list, default=(200, 500, 1000, 2000))
    g.add_argument("--q", type=_q, default=0.2)
    g.add_argument("--reps", type=_positive_int, default=100)
    g.add_argument("--d-kind", choices=["D1", "D2", "D3"], default="D1")
    g.add_argument("--no-baseline", action="store_true", help="skip the Model-X baseline for D1")
    _common(g, svg=True)

    pw = sub.add_parser("simulate-pairwise", help="Bradley-Terry pairwise simulations")
    pw.add_argument("--p", type=_positive_int, default=15)
    pw.add_argument("--sparsity", type=float, default=0.5)
    pw.add_argument("--n-list", type=_int_list, default=(500, 1000, 2000, 4000))
    pw.add_argument("--q", type=_q, default=0.2)
    pw.add_argument("--reps", type=_positive_int, default=100)
    pw.add_argument("--construction", choices=sorted(simlab.CONSTRUCTIONS), default="bootstrap+")
    _common(pw, svg=True)

    sel = sub.add_parser("select-pairwise", help="repeated bootstrap+ selection on a comparisons CSV")
    sel.add_argument("--data", type=Path, required=True, help="CSV with item_i,item_j,winner")
    sel.add_argument("--q", type=_q, default=0.2)
    sel.add_argument("--reps", type=_positive_int, default=100)
    sel.add_argument("--plus", action=argparse.BooleanOptionalAction, default=True,
                     help="knockoff+ threshold; --no-plus uses the plain knockoff threshold")
    _common(sel)

    dg = sub.add_parser("diagnose", help="per-coordinate sample KL divergence report")
    dg.add_argument("--data", type=Path, required=True, help="CSV with header x1,...,xp[,y]")
    dg.add_argument("--theta-hat", type=Path, required=True, help="estimated precision, p x p CSV")
    dg.add_argument("--theta-star", type=Path, required=True, help="true precision, p x p CSV")
    dg.add_argument("--d-kind", choices=["D1", "D2", "D3"], default="D1")
    dg.add_argument("--q", type=_q, default=0.2, help="accepted for symmetry with other commands")
    _common(dg)
    return parser


# ---------------------------------------------------------------------------
# output helpers

def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(fields)
        for r in rows:
            out.writerow([_fmt(r[f]) for f in fields])


def _write_experiment(args, rows, q):
    args.out.mkdir(parents=True, exist_ok=True)
    if not args.timing:
        rows = [dict(r, wall_ms="") for r in rows]
    write_csv(args.out / "results.csv", simlab.RESULT_FIELDS, rows)
    agg = simlab.aggregate_rows(rows, q)
    write_csv(args.out / "aggregate.csv", simlab.AGGREGATE_FIELDS, agg)
    for a in agg:
        log.info("n=%d %s mean_fdr=%.3f mean_power=%.3f", a["n"], a["method"], a["mean_fdr"],
                 a["mean_power"])
    if args.svg:
        (args.out / "fdr_power.svg").write_text(render_svg(agg, q))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def render_svg(agg, q: float) -> str:
    """Two panels (FDR, power) against n, one line and 80% band per method."""
    W, H = 800, 500
    panels = (("mean_fdr", "lo80", "hi80", "FDR"), ("mean_power", "plo80", "phi80", "Power"))
    methods = sorted({a["method"] for a in agg})
    ns = sorted({a["n"] for a in agg})
    x0, x1 = min(ns), max(ns)
    left, top, pw, ph, gap = 60, 50, 320, 380, 80
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{W}" height="{H}" fill="white"/>']

    def sx(n, off):
        frac = 0.5 if x1 == x0 else (n - x0) / (x1 - x0)
        return off + frac * pw

    def sy(v):
        return top + (1.0 - v) * ph

    for k, (mean, lo, hi, title) in enumerate(panels):
        off = left + k * (pw + gap)
        parts.append(f'<rect x="{off}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        parts.append(f'<text x="{off + pw / 2:.1f}" y="{top - 15}" text-anchor="middle">{title}</text>')
        for t in (0.0, 0.5, 1.0):
            parts.append(f'<text x="{off - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
        for n in ns:
            parts.append(f'<text x="{sx(n, off):.1f}" y="{top + ph + 18}" text-anchor="middle">{n}</text>')
        parts.append(f'<text x="{off + pw / 2:.1f}" y="{top + ph + 38}" text-anchor="middle">n</text>')
        if k == 0:
            parts.append(f'<line x1="{off}" x2="{off + pw}" y1="{sy(q):.1f}" y2="{sy(q):.1f}" '
                         f'stroke="gray" stroke-dasharray="4 4"/>')
        for c, method in enumerate(methods):
            color = _COLORS[c % len(_COLORS)]
            pts = sorted((a["n"], a[mean], a[lo], a[hi]) for a in agg if a["method"] == method)
            upper = [f"{sx(n, off):.1f},{sy(h):.1f}" for n, _, _, h in pts]
            lower = [f"{sx(n, off):.1f},{sy(l):.1f}" for n, _, l, _ in reversed(pts)]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                         f'fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{sx(n, off):.1f},{sy(v):.1f}" for n, v, _, _ in pts)
            parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
            if k == 1:
                parts.append(f'<text x="{off + pw - 5}" y="{top + ph - 10 - 16 * c}" text-anchor="end" '
                             f'fill="{color}">{method}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_simulate_gaussian(args) -> int:
    cfg = simlab.GaussianSimConfig(p=args.p, k=args.k, amp=args.amp, c=args.c, n_list=args.n_list,
                                   q=args.q, reps=args.reps, d_kind=args.d_kind, seed=args.seed,
                                   plus=args.plus, fast=args.fast, baseline=not args.no_baseline)
    rows = simlab.run_gaussian_experiment(cfg, args.threads)
    _write_experiment(args, rows, cfg.q)
    return 0


def cmd_simulate_pairwise(args) -> int:
    cfg = simlab.PairwiseSimConfig(p=args.p, sparsity=args.sparsity, n_list=args.n_list, q=args.q,
                                   reps=args.reps, construction=args.construction, seed=args.seed,
                                   plus=args.plus, fast=args.fast)
    rows = simlab.run_pairwise_experiment(cfg, args.threads)
    _write_experiment(args, rows, cfg.q)
    return 0


def read_comparisons(path: Path):
    """Parse ``item_i,item_j,winner``; items are labels, sorted to indices."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["item_i", "item_j", "winner"]:
        raise InputError(f"{path}: line 1: expected header item_i,item_j,winner")
    recs = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r or all(not f.strip() for f in r):
            continue
        if len(r) != 3:
            raise InputError(f"{path}: line {lineno}: expected 3 fields, got {len(r)}")
        a, b, w = (f.strip() for f in r)
        if a == b:
            raise InputError(f"{path}: line {lineno}: an item cannot be compared with itself")
        if w not in (a, b):
            raise InputError(f"{path}: line {lineno}: winner {w!r} is neither {a!r} nor {b!r}")
        recs.append((a, b, w == a))
    if not recs:
        raise InputError(f"{path}: no comparisons")
    labels = sorted({a for a, _, _ in recs} | {b for _, b, _ in recs})
    if len(labels) < 2:
        raise InputError(f"{path}: need at least two items")
    idx = {lab: k for k, lab in enumerate(labels)}
    ds = comparisons_to_dataset([idx[a] for a, _, _ in recs], [idx[b] for _, b, _ in recs],
                                [win for _, _, win in recs])
    return ds, labels


def _selection_rep(ds, g, seed, rep, q, plus):
    w = simlab.pairwise_w(ds, g, "bootstrap+", simlab.replicate_rng(seed, ds.n, rep, 1),
                          simlab.replicate_rng(seed, ds.n, rep, 2))
    return select(w, ThresholdRule(q, plus)).selected


def cmd_select_pairwise(args) -> int:
    ds, labels = read_comparisons(args.data)
    g = ComparisonGraph.from_design(ds.X)
    jobs = range(args.reps)
    call = (ds, g, args.seed)
    if args.threads <= 1:
        with threadpool_limits(1):
            picks = [_selection_rep(*call, r, args.q, args.plus) for r in jobs]
    else:
        with ProcessPoolExecutor(args.threads, initializer=simlab._init_worker) as pool:
            futs = [pool.submit(_selection_rep, *call, r, args.q, args.plus) for r in jobs]
            picks = [f.result() for f in futs]
    counts = np.zeros(g.m, dtype=int)
    for sel in picks:
        counts[list(sel)] += 1
    rows = [{"item_i": labels[i], "item_j": labels[j], "selection_frequency": counts[e] / args.reps}
            for e, (i, j) in enumerate(g.edges)]
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "pairs_selected.csv", ("item_i", "item_j", "selection_frequency"), rows)
    return 0


def _read_matrix(path: Path, name: str) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: cannot parse {name}: {exc}") from None
    if M.shape[0] != M.shape[1]:
        raise InputError(f"{path}: {name} must be square, got {M.shape}")
    return M


def read_design(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    cols = [k for k, h in enumerate(header) if h != "y"]
    X = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InputError(f"{path}: line {lineno}: expected {len(header)} fields")
        try:
            X.append([float(r[k]) for k in cols])
        except ValueError:
            raise InputError(f"{path}: line {lineno}: non-numeric entry") from None
    X = np.array(X)
    if not np.all(np.isfinite(X)):
        raise InputError(f"{path}: non-finite entries")
    return X


def cmd_diagnose(args) -> int:
    X = read_design(args.data)
    theta_hat = _read_matrix(args.theta_hat, "theta_hat")
    theta_star = _read_matrix(args.theta_star, "theta_star")
    p = X.shape[1]
    if theta_hat.shape != (p, p) or theta_star.shape != (p, p):
        raise InputError(f"data has p={p} columns, precisions are {theta_hat.shape} and {theta_star.shape}")
    D = simlab.make_D(args.d_kind, p)
    pair = PrecisionPair.from_matrices(theta_star, theta_hat)
    # the construction only knows the estimate, as in practice
    params = build_params(np.linalg.inv(pair.theta_hat), D, precision_source="estimated_sample_cov")
    lifted = lift_gaussian(X, params, np.random.default_rng(np.random.SeedSequence([args.seed])))
    rows = kl_report(lifted, D, pair, params.alpha)
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "kl_report.csv", ("j", "kl_hat", "bound"), rows)
    return 0


COMMANDS = {
    "simulate-gaussian": cmd_simulate_gaussian,
    "simulate-pairwise": cmd_simulate_pairwise,
    "select-pairwise": cmd_select_pairwise,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if args.threads is None:
        args.threads = _default_threads()
    for name in ("data", "theta_hat", "theta_star"):
        path = getattr(args, name, None)
        if path is not None and not path.is_file():
            parser.error(f"no such file: {path}")
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (SplitKnockoffError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"splitknock: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
