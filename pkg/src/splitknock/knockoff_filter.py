"""Knockoff / knockoff+ thresholds, selection sets and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import DimensionMismatch, GroundTruth, SelectionReport, SplitKnockoffError


class EmptyInput(SplitKnockoffError):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    q: float
    plus: bool = False

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError(f"q must be in (0,1), got {self.q}")


def threshold(w, rule: ThresholdRule) -> float:
    """Smallest nonzero |W_j| whose estimated false discovery proportion is <= q.

    Returns ``inf`` when no candidate qualifies.
    """
    w = np.asarray(w, dtype=float).ravel()
    cand = np.unique(np.abs(w[w != 0]))  # ascending
    if cand.size == 0:
        return math.inf
    ws = np.sort(w)
    n_neg = np.searchsorted(ws, -cand, side="right")  # #{W <= -t}
    n_pos = ws.size - np.searchsorted(ws, cand, side="left")  # #{W >= t}
    ratio = (n_neg + (1 if rule.plus else 0)) / np.maximum(1, n_pos)
    ok = np.flatnonzero(ratio <= rule.q)
    return float(cand[ok[0]]) if ok.size else math.inf


def select(w, rule: ThresholdRule) -> SelectionReport:
    w = np.asarray(w, dtype=float).ravel()
    t = threshold(w, rule)
    chosen = () if math.isinf(t) else tuple(int(j) for j in np.flatnonzero(w >= t))
    return SelectionReport(t, chosen, rule.q, rule.plus, w)


def fdp_power(report: SelectionReport, truth: GroundTruth) -> tuple[float, float]:
    if report.w is not None and report.w.size != truth.m:
        raise DimensionMismatch(f"W has length {report.w.size}, truth has m={truth.m}")
    if any(j >= truth.m for j in report.selected):
        raise DimensionMismatch("selected index outside the truth's range")
    S = set(report.selected)
    false = len(S - truth.h1)
    fdp = false / max(len(S), 1)
    power = len(S & truth.h1) / len(truth.h1) if truth.h1 else 0.0
    return fdp, power


def aggregate(fdps, powers, q: float, selected_counts=None) -> dict:
    """Means, 10%/90% bands and the mFDR proxy over replicates.

    The proxy ``|S & H0| / (|S| + 1/q)`` needs the selection sizes; without
    ``selected_counts`` it is reported as NaN.
    """
    fdps = np.asarray(fdps, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if fdps.size == 0 or powers.size == 0:
        raise EmptyInput("need at least one replicate")
    if fdps.shape != powers.shape:
        raise DimensionMismatch("fdps and powers differ in length")
    mfdr = math.nan
    if selected_counts is not None:
        R = np.asarray(selected_counts, dtype=float)
        mfdr = float(np.mean(fdps * R / (R + 1.0 / q)))
    return {
        "mean_fdr": float(fdps.mean()),
        "mean_power": float(powers.mean()),
        "ci80_fdr": (float(np.quantile(fdps, 0.1)), float(np.quantile(fdps, 0.9))),
        "ci80_power": (float(np.quantile(powers, 0.1)), float(np.quantile(powers, 0.9))),
        "mfdr_proxy": mfdr,
        "se_fdr": float(fdps.std(ddof=1) / math.sqrt(fdps.size)) if fdps.size > 1 else 0.0,
        "reps": int(fdps.size),
    }


def write_selection_csv(report: SelectionReport, path) -> None:
    chosen = set(report.selected)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "w", "selected"])
        for j, wj in enumerate(report.w):
            out.writerow([j, repr(float(wj)), int(j in chosen)])
