"""Shared builders and independent oracles for the test-suite.

Every oracle here is written from first principles and deliberately avoids
the package's own code paths (no QR-reduced working model, no ROC hull, no
rank-based AUC).
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from bgeva.data import Dataset
from bgeva.likelihood import build_design, parse_terms
from bgeva.links import LinkKind

LINKS = {
    "gev-1": LinkKind("gev", -1.0),
    "gev-0.5": LinkKind("gev", -0.5),
    "gev-0.25": LinkKind("gev", -0.25),
    "loglog": LinkKind("loglog"),
    "logit": LinkKind("logit"),
}


def random_dataset(n, p, seed, rate=0.3):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, p))
    y = (rng.uniform(size=n) < rate).astype(float)
    y[:2] = (1.0, 0.0)  # both classes always present
    return Dataset(y, X, tuple(f"x{j + 1}" for j in range(p)))


def random_problem(link, seed, n=40, q=8):
    """Design with one smooth of q-1 columns, a feasible random delta and its data."""
    data = random_dataset(n, 1, seed)
    design = build_design(parse_terms(smooth=["x1"], k=q), data, link)
    assert design.q == q
    rng = np.random.default_rng(10_000 + seed)
    for _ in range(100):
        delta = rng.normal(0.0, 0.1, size=q)
        delta[0] = -0.5
        if np.all(link.feasible(design.B @ delta)) and _margin_ok(link, design.B @ delta):
            return design, delta, data
    raise RuntimeError("no feasible random problem")


def _margin_ok(link, eta, margin=0.05):
    # keep finite-difference stencils well inside the GEV support
    return link.kind != "gev" or np.min(1.0 + link.tau * eta) > margin


def central_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jacobian(F, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((F(x + e) - F(x - e)) / (2 * h))
    return np.column_stack(cols)


def irls_logit(X, y, tol=1e-13, max_iter=100):
    """Textbook iteratively reweighted least squares for logistic regression."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1.0 - p)
        z = eta + (y - p) / w
        XtW = X.T * w
        new = np.linalg.solve(XtW @ X, XtW @ z)
        if np.max(np.abs(new - beta)) < tol:
            return new
        beta = new
    return beta


def dense_ubre(B, W, z, S):
    """UBRE and tr(A) with the hat matrix A = B (B'WB + S)^-1 B'W formed explicitly."""
    n = B.shape[0]
    Wm = np.diag(W)
    A = B @ np.linalg.inv(B.T @ Wm @ B + S) @ B.T @ Wm
    r = np.sqrt(W) * (z - A @ z)
    tr = float(np.trace(A))
    return float(r @ r) / n - 1.0 + 2.0 * tr / n, tr


def brute_auc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (pos.size * neg.size)


def quadrature_h(y, s, severity_ratio=0.01, points=100_000):
    """H-measure by midpoint quadrature of the minimum expected loss over cost c.

    At each c the loss of every threshold rule (plus both trivial rules) is
    evaluated directly from the empirical class-conditional score counts.
    """
    y = np.asarray(y)
    s = np.asarray(s, dtype=float)
    n1, n0 = int(y.sum()), int((1 - y).sum())
    pi1, pi0 = n1 / y.size, n0 / y.size
    th = np.r_[np.inf, np.unique(s)]
    # predict "event" when score >= threshold
    tpr = np.array([(s[y == 1] >= t).mean() for t in th])
    fpr = np.array([(s[y == 0] >= t).mean() for t in th])
    c = (np.arange(points) + 0.5) / points
    w = stats.beta.pdf(c, 2.0, 1.0 + 1.0 / severity_ratio)
    loss = c[:, None] * pi0 * fpr[None, :] + (1 - c[:, None]) * pi1 * (1 - tpr[None, :])
    L = np.sum(loss.min(axis=1) * w) / points
    Lmax = np.sum(np.minimum(c * pi0, (1 - c) * pi1) * w) / points
    return 1.0 - L / Lmax
