"""Scoring metrics for rare-event classifiers.

``mae_mse_plus`` only looks at the events (defaulters). ``h_measure`` follows
Hand's construction: the expected minimum misclassification loss over a
Beta-distributed normalised cost, taken relative to the loss of the better
trivial classifier. The cost density is Beta(2, 1 + 1/SR), whose mode sits at
``SR / (1 + SR)``, where SR is the severity ratio (cost of misclassifying a
non-event relative to misclassifying an event).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import special, stats


class MetricError(ValueError):
    pass


def _as_binary(y):
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0/1")
    return y


def _both_classes(y):
    n1 = int(y.sum())
    if n1 == 0 or n1 == y.size:
        raise MetricError("both classes must be present")
    return n1, y.size - n1


def mae_mse_plus(y, pd):
    """Mean absolute and squared error of ``pd`` over the events only."""
    y = _as_binary(y)
    pd = np.asarray(pd, dtype=float).ravel()
    pos = y == 1
    if not np.any(pos):
        raise MetricError("MAE+/MSE+ need at least one event")
    err = 1.0 - pd[pos]
    return float(np.mean(np.abs(err))), float(np.mean(err**2))


def auc(y, scores):
    """Mann-Whitney AUC with mid-ranks for ties."""
    y = _as_binary(y)
    n1, n0 = _both_classes(y)
    r = stats.rankdata(np.asarray(scores, dtype=float).ravel())
    u = r[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc_points(y, scores):
    """ROC vertices (FPR, TPR) over distinct thresholds, from (0,0) to (1,1)."""
    y = _as_binary(y)
    n1, n0 = _both_classes(y)
    s = np.asarray(scores, dtype=float).ravel()
    order = np.argsort(-s, kind="mergesort")
    s, yy = s[order], y[order]
    # cumulative counts at the end of each block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(yy)[last]
    fp = np.cumsum(1.0 - yy)[last]
    fpr = np.r_[0.0, fp / n0]
    tpr = np.r_[0.0, tp / n1]
    return fpr, tpr


def roc_hull(fpr, tpr):
    """Upper convex hull of ROC points (monotone chain)."""
    hull = []
    for p in zip(fpr, tpr):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    h = np.array(hull)
    return h[:, 0], h[:, 1]


def severity_beta(severity_ratio):
    if not severity_ratio > 0:
        raise MetricError("severity ratio must be positive")
    return 2.0, 1.0 + 1.0 / severity_ratio


def h_measure(y, scores, severity_ratio=0.01):
    """H-measure with a Beta(2, 1 + 1/SR) cost density.

    For normalised cost ``c`` (cost of a false positive) the loss at ROC
    point (F, T) is ``c*pi0*F + (1-c)*pi1*(1-T)``. The minimum over the ROC
    hull is piecewise linear in ``c``, so its expectation is a sum of
    incomplete-Beta terms.
    """
    y = _as_binary(y)
    n1, n0 = _both_classes(y)
    pi1, pi0 = n1 / y.size, n0 / y.size
    a, b = severity_beta(severity_ratio)
    fpr, tpr = roc_points(y, scores)
    hf, ht = roc_hull(fpr, tpr)

    def part(lo, hi):
        # (int_lo^hi u, int_lo^hi c u) for the Beta(a, b) density u
        m0 = special.betainc(a, b, hi) - special.betainc(a, b, lo)
        m1 = a / (a + b) * (special.betainc(a + 1, b, hi) - special.betainc(a + 1, b, lo))
        return m0, m1

    # vertex k is optimal for c in [c_k, c_{k-1}]; c decreases along the hull
    dF, dT = np.diff(hf), np.diff(ht)
    c_switch = pi1 * dT / (pi1 * dT + pi0 * dF)
    edges = np.r_[1.0, c_switch, 0.0]
    loss = 0.0
    for k in range(hf.size):
        hi, lo = edges[k], edges[k + 1]
        if hi <= lo:
            continue
        m0, m1 = part(lo, hi)
        # c*pi0*F + (1-c)*pi1*(1-T) = pi1*(1-T) + c*(pi0*F - pi1*(1-T))
        base = pi1 * (1.0 - ht[k])
        loss += base * m0 + (pi0 * hf[k] - base) * m1
    # trivial rules: all positive costs c*pi0, all negative (1-c)*pi1; switch at c = pi1
    m0a, m1a = part(0.0, pi1)
    m0b, m1b = part(pi1, 1.0)
    lmax = pi0 * m1a + pi1 * (m0b - m1b)
    h = 1.0 - loss / lmax
    return float(min(max(h, 0.0), 1.0))


@dataclass
class MetricsReport:
    mae_plus: float
    mse_plus: float
    auc: float
    h_measure: float
    n_pos: int
    n_neg: int
    severity_ratio: float
    split_label: str = ""

    def to_dict(self):
        return asdict(self)


def evaluate(y, pd, severity_ratio=0.01, label=""):
    y = _as_binary(y)
    n1, n0 = _both_classes(y)
    mae, mse = mae_mse_plus(y, pd)
    return MetricsReport(mae, mse, auc(y, pd), h_measure(y, pd, severity_ratio), n1, n0,
                         severity_ratio, label)
