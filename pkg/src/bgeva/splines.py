"""Penalized regression spline bases for one-dimensional smooth terms.

Two bases are available:

``tp``
    Low-rank thin-plate regression spline. The radial kernel on up to 200
    quantile-spaced knots is restricted to the space orthogonal to the
    polynomial null space and eigendecomposed; the leading ``K - m``
    eigenvectors are kept together with the non-constant polynomial columns.
``cr``
    Natural cubic regression spline with ``K`` quantile knots, parameterised
    by function values at the knots.

Both are mean-centred on the training covariate so that every column sums to
zero, which removes the constant and leaves ``K - 1`` columns. Penalty
matrices are rescaled so that their 1-norm matches the squared maximal row sum
of the basis, which puts smoothing parameters for different terms on a common
footing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

MAX_KNOTS = 200
EIG_RTOL = 1e-10


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothTermSpec:
    covariate: str
    basis: str = "tp"
    k: int = 20
    penalty_order: int = 2

    def __post_init__(self):
        if self.basis not in ("tp", "cr"):
            raise BasisError(f"unknown basis {self.basis!r}; expected 'tp' or 'cr'")
        if self.penalty_order not in (1, 2):
            raise BasisError("penalty order must be 1 or 2")
        if self.k < 4:
            raise BasisError("basis dimension must be at least 4")

    def to_dict(self):
        return {"covariate": self.covariate, "basis": self.basis, "k": self.k,
                "penalty_order": self.penalty_order}


def _quantile_knots(x, count):
    ux = np.unique(x)
    if ux.size <= count:
        return ux
    pos = np.linspace(0, ux.size - 1, count)
    return ux[np.round(pos).astype(int)]


# --- thin plate --------------------------------------------------------------


def _tp_kernel(r, m):
    # 1-D thin-plate radial function, scaled so that d'Ed = int f^(m)(x)^2 dx
    if m == 2:
        return r**3 / 12.0
    return -r / 2.0


def _tp_raw(u, knots, U, m):
    E = _tp_kernel(np.abs(u[:, None] - knots[None, :]), m)
    cols = [E @ U]
    if m == 2:
        cols.append(u[:, None])
    return np.hstack(cols)


def _tp_setup(u, k, m):
    knots = _quantile_knots(u, MAX_KNOTS)
    if knots.size < k:
        raise BasisError(f"need at least k={k} distinct covariate values, found {knots.size}")
    T = np.vander(knots, m, increasing=True)
    Q, _ = linalg.qr(T)
    Zt = Q[:, m:]
    E = _tp_kernel(np.abs(knots[:, None] - knots[None, :]), m)
    Ec = Zt.T @ E @ Zt
    Ec = 0.5 * (Ec + Ec.T)
    ev, V = linalg.eigh(Ec)
    order = np.argsort(ev)[::-1][: k - m]
    ev, V = ev[order], V[:, order]
    # fix eigenvector signs for reproducibility across LAPACK builds
    V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])] < 0, -1.0, 1.0)
    U = Zt @ V
    S = np.zeros((k - 1, k - 1))
    S[: k - m, : k - m] = np.diag(ev)
    return knots, U, S


# --- cubic regression --------------------------------------------------------


def _cr_second_derivs(knots):
    """Map from knot values to second derivatives at knots (natural ends)."""
    K = knots.size
    h = np.diff(knots)
    D = np.zeros((K - 2, K))
    B = np.zeros((K - 2, K - 2))
    for i in range(K - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < K - 2:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    F = np.zeros((K, K))
    F[1:-1] = linalg.solve(B, D, assume_a="sym")
    return F, D, B


def _cr_raw(u, knots, F, deriv=0):
    """Cardinal natural cubic spline basis (or its derivative) at u."""
    K = knots.size
    n = u.size
    out = np.zeros((n, K))
    j = np.clip(np.searchsorted(knots, u, side="right") - 1, 0, K - 2)
    h = knots[j + 1] - knots[j]
    a = knots[j + 1] - u
    b = u - knots[j]
    rows = np.arange(n)
    if deriv == 0:
        wa, wb = a / h, b / h
        ca = (a**3 / h - h * a) / 6.0
        cb = (b**3 / h - h * b) / 6.0
    elif deriv == 1:
        wa, wb = -1.0 / h, 1.0 / h
        ca = (-3.0 * a**2 / h + h) / 6.0
        cb = (3.0 * b**2 / h - h) / 6.0
    else:
        wa = wb = np.zeros(n)
        ca, cb = a / h, b / h
    out[rows, j] += wa
    out[rows, j + 1] += wb
    out += ca[:, None] * F[j] + cb[:, None] * F[j + 1]
    # linear continuation beyond the boundary knots
    lo, hi = u < knots[0], u > knots[-1]
    if np.any(lo | hi):
        edge = np.array([knots[0], knots[-1]])
        f_edge = _cr_raw(edge, knots, F, 0) if deriv == 0 else None
        s_edge = _cr_raw(edge, knots, F, 1)
        for mask, i, x0 in ((lo, 0, knots[0]), (hi, 1, knots[-1])):
            if not np.any(mask):
                continue
            if deriv == 0:
                out[mask] = f_edge[i] + (u[mask] - x0)[:, None] * s_edge[i]
            elif deriv == 1:
                out[mask] = s_edge[i]
            else:
                out[mask] = 0.0
    return out


def _cr_penalty(knots, F, m):
    if m == 2:
        _, D, B = _cr_second_derivs(knots)
        return D.T @ linalg.solve(B, D, assume_a="sym")
    # int f'(x)^2: f' is quadratic per interval, 3-point Gauss-Legendre is exact
    g, w = np.polynomial.legendre.leggauss(3)
    lo, hi = knots[:-1], knots[1:]
    pts = (0.5 * (hi - lo)[:, None] * g[None, :] + 0.5 * (hi + lo)[:, None]).ravel()
    wts = (0.5 * (hi - lo)[:, None] * w[None, :]).ravel()
    d = _cr_raw(pts, knots, F, 1)
    return d.T @ (wts[:, None] * d)


def _sum_to_zero_complement(k):
    """Orthonormal k x (k-1) basis of the complement of the constant vector."""
    Q, _ = linalg.qr(np.ones((k, 1)))
    return Q[:, 1:]


# --- public API --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothBasis:
    """A built smooth: training design ``B``, penalty ``S`` and what is needed to
    evaluate the basis at new covariate values."""

    spec: SmoothTermSpec
    shift: float
    scale: float
    knots: np.ndarray
    transform: np.ndarray  # tp: kernel -> wiggly columns; cr: second-derivative map
    reparam: np.ndarray | None  # cr: sum-to-zero reparameterisation
    col_means: np.ndarray
    S: np.ndarray
    x_range: tuple
    B: np.ndarray = field(repr=False, default=None)

    @property
    def ncol(self):
        return self.S.shape[0]

    @property
    def null_dim(self):
        return self.spec.penalty_order - 1

    def _raw(self, x):
        u = (np.asarray(x, dtype=float) - self.shift) / self.scale
        m = self.spec.penalty_order
        if self.spec.basis == "tp":
            return _tp_raw(u, self.knots, self.transform, m)
        return _cr_raw(u, self.knots, self.transform)

    def design(self, x):
        """Centred basis matrix at ``x`` (same arithmetic as on training data)."""
        R = self._raw(x) - self.col_means
        if self.reparam is not None:
            R = R @ self.reparam
        return R

    def outside(self, x):
        x = np.asarray(x, dtype=float)
        return (x < self.x_range[0]) | (x > self.x_range[1])

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "shift": self.shift,
            "scale": self.scale,
            "knots": self.knots.tolist(),
            "transform": self.transform.tolist(),
            "reparam": None if self.reparam is None else self.reparam.tolist(),
            "col_means": self.col_means.tolist(),
            "S": self.S.tolist(),
            "x_range": list(self.x_range),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: None if v is None else np.array(v, dtype=float)  # noqa: E731
        return cls(
            SmoothTermSpec(**d["spec"]),
            float(d["shift"]),
            float(d["scale"]),
            arr(d["knots"]),
            arr(d["transform"]),
            arr(d["reparam"]),
            arr(d["col_means"]),
            arr(d["S"]),
            tuple(float(v) for v in d["x_range"]),
        )


def build_basis(x, spec: SmoothTermSpec) -> SmoothBasis:
    """Construct the centred basis and scaled penalty for covariate values ``x``."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        raise BasisError(f"covariate {spec.covariate!r} is constant")
    nuniq = np.unique(x).size
    if nuniq < spec.k:
        raise BasisError(
            f"covariate {spec.covariate!r} has {nuniq} distinct values; need at least k={spec.k}"
        )
    u = (x - lo) / (hi - lo)
    m = spec.penalty_order
    if spec.basis == "tp":
        knots, transform, S = _tp_setup(u, spec.k, m)
        raw = _tp_raw(u, knots, transform, m)
        reparam = None
    else:
        knots = _quantile_knots(u, spec.k)
        transform, _, _ = _cr_second_derivs(knots)
        raw = _cr_raw(u, knots, transform)
        reparam = _sum_to_zero_complement(spec.k)
        S = reparam.T @ _cr_penalty(knots, transform, m) @ reparam
    means = raw.mean(axis=0)
    proto = SmoothBasis(spec, lo, hi - lo, knots, transform, reparam, means, S, (lo, hi))
    B = proto.design(x)
    S = 0.5 * (S + S.T)
    ma = np.abs(B).sum(axis=1).max() ** 2
    S = S * (ma / np.linalg.norm(S, 1))
    return SmoothBasis(spec, lo, hi - lo, knots, transform, reparam, means, S, (lo, hi), B)


def evaluate_smooth(basis: SmoothBasis, gamma, x_new):
    """Evaluate ``f(x) = B(x) @ gamma``; returns ``(values, extrapolated)``.

    Points outside the training range are continued linearly and reported
    through the boolean flag rather than rejected.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (basis.ncol,):
        raise BasisError(f"gamma has length {gamma.size}, basis has {basis.ncol} columns")
    x_new = np.asarray(x_new, dtype=float)
    return basis.design(x_new) @ gamma, bool(np.any(basis.outside(x_new)))


def penalty_rank(S, rtol=EIG_RTOL):
    ev = np.linalg.eigvalsh(S)
    return int(np.sum(ev > rtol * max(ev.max(), 0.0)))


def smooth_label(term, edf):
    """Axis caption in the ``s(x,edf)`` style, edf to 2 decimals."""
    return f"s({term},{edf:.2f})"


__all__ = [
    "BasisError", "SmoothTermSpec", "SmoothBasis", "build_basis", "evaluate_smooth",
    "penalty_rank", "smooth_label", "MAX_KNOTS",
]
