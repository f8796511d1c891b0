"""Confidence bands, Wald tests and chi-square tests for fitted terms."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, stats

from .data import Dataset
from .fit import FitConfig, FittedModel, covariance, fit
from .likelihood import LinearTerm, term_name
from .splines import SmoothTermSpec

__all__ = [
    "CiBand", "SmoothSummary", "WaldResult", "covariance", "demote_linear_smooths",
    "round_edf", "smooth_ci", "smooth_pvalue", "summarize", "wald_test",
]

EIG_RTOL = 1e-10
DEMOTE_EDF = 1.01


@dataclass
class CiBand:
    term: str
    x: np.ndarray
    fit: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    edf: float
    extrapolated: bool = False


def _require_smooth(model, term):
    if term not in model.design.smooth_names:
        raise KeyError(f"{term!r} is not a smooth term of this model")


def smooth_ci(model: FittedModel, term: str, grid_size: int = 200, level: float = 0.95,
              x=None) -> CiBand:
    """Point-wise band ``f(x) +/- z * sqrt(B(x)' V_j B(x))`` on a grid over the training range."""
    _require_smooth(model, term)
    basis = model.design.bases[term]
    if x is None:
        x = np.linspace(basis.x_range[0], basis.x_range[1], grid_size)
    x = np.asarray(x, dtype=float)
    sl = model.design.layout[term]
    Bx = basis.design(x)
    f = Bx @ model.delta[sl]
    Vj = model.V[sl, sl]
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Bx, Vj, Bx), 0.0))
    z = stats.norm.ppf(0.5 + level / 2.0)
    return CiBand(term, x, f, se, f - z * se, f + z * se, level, model.edf(term),
                  bool(np.any(basis.outside(x))))


def round_edf(edf: float):
    """Round an edf to the integer rank used by the smooth-term test.

    ``floor(edf)`` unless edf exceeds it by at least 0.05, in which case
    ``floor(edf) + 1``. Returns ``(rank, promoted)`` where ``promoted`` marks a
    zero result raised to 1.
    """
    if not edf > 0:
        raise ValueError("edf must be positive")
    fl = math.floor(edf)
    r = fl if edf < fl + 0.05 else fl + 1
    if r < 1:
        return 1, True
    return int(r), False


@dataclass
class SmoothSummary:
    term: str
    edf: float
    rank: int
    chi_sq: float
    p_value: float
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _term_matrix(model, term, data):
    if data is None:
        if model.design.B.shape[0] == 0:
            raise ValueError("model carries no training rows; pass the training data")
        return model.design.B[:, model.design.layout[term]]
    return model.design.bases[term].design(data.column(term))


def smooth_pvalue(model: FittedModel, term: str, data: Dataset | None = None) -> SmoothSummary:
    """Chi-square test of ``f_j = 0`` using the rank-r pseudo-inverse of ``Cov(f_j)``.

    ``Cov(f_j) = B_j V_j B_j'`` is never formed: with ``B_j = QR`` its non-zero
    spectrum is that of ``R V_j R'`` and ``Q' f_j = R gamma_j``.
    """
    _require_smooth(model, term)
    sl = model.design.layout[term]
    gamma = model.delta[sl]
    Bj = _term_matrix(model, term, data)
    edf = model.edf(term)
    r, promoted = round_edf(edf)
    flags = ["rank_promoted"] if promoted else []
    _, R = linalg.qr(Bj, mode="economic")
    M = R @ model.V[sl, sl] @ R.T
    ev, U = linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(ev)[::-1]
    ev, U = ev[order], U[:, order]
    top = ev[0] if ev.size else 0.0
    npos = int(np.sum(ev > EIG_RTOL * max(top, 0.0))) if top > 0 else 0
    if npos == 0:
        return SmoothSummary(term, edf, r, 0.0, 1.0, flags + ["degenerate"])
    if npos < r:
        flags.append(f"rank_reduced_from_{r}")
        r = npos
    proj = U[:, :r].T @ (R @ gamma)
    T = float(np.sum(proj**2 / ev[:r]))
    return SmoothSummary(term, edf, r, T, float(stats.chi2.sf(T, r)), flags)


@dataclass
class WaldResult:
    term: str
    estimate: float
    se: float
    z: float
    p_value: float
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def wald_test(model: FittedModel, term: str) -> WaldResult:
    """Normal-reference Wald test of a single unpenalized coefficient."""
    if term != "(Intercept)" and term not in model.design.linear_names:
        raise KeyError(f"{term!r} is not a parametric term of this model")
    i = model.design.layout[term].start
    est = float(model.delta[i])
    var = float(model.V[i, i])
    if not var > 0:
        return WaldResult(term, est, 0.0, float("nan"), float("nan"), ["zero_se"])
    se = math.sqrt(var)
    z = est / se
    return WaldResult(term, est, se, z, float(2.0 * stats.norm.sf(abs(z))))


@dataclass
class TermSummary:
    parametric: list
    smooth: list
    link: str
    n: int
    edf_total: float
    converged: bool

    def to_dict(self):
        return {
            "link": self.link,
            "n": self.n,
            "edf_total": self.edf_total,
            "converged": self.converged,
            "parametric": [r.to_dict() for r in self.parametric],
            "smooth": [r.to_dict() for r in self.smooth],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [WaldResult(**r) for r in d["parametric"]],
            [SmoothSummary(**r) for r in d["smooth"]],
            d["link"], d["n"], d["edf_total"], d["converged"],
        )

    def format(self):
        """Aligned text table with a parametric block and (if any) a smooth block."""
        lines = []
        w = max([len(r.term) for r in self.parametric + self.smooth] + [14])
        lines.append(f"{'Parametric terms':<{w}}  {'Estimate':>11}  {'Std. Error':>11}  "
                     f"{'z value':>9}  {'p-value':>10}")
        for r in self.parametric:
            lines.append(f"{r.term:<{w}}  {r.estimate:>11.4g}  {r.se:>11.4g}  {r.z:>9.3f}  "
                         f"{_fmt_p(r.p_value):>10}")
        if self.smooth:
            lines.append("")
            lines.append(f"{'Smooth terms':<{w}}  {'Edf':>11}  {'Est.rank':>11}  "
                         f"{'Chi.sq':>9}  {'p-value':>10}")
            for r in self.smooth:
                lines.append(f"{r.term:<{w}}  {r.edf:>11.2f}  {r.rank:>11d}  {r.chi_sq:>9.2f}  "
                             f"{_fmt_p(r.p_value):>10}")
        lines.append("")
        lines.append(f"link = {self.link}   n = {self.n}   total edf = {self.edf_total:.2f}   "
                     f"converged = {self.converged}")
        return "\n".join(lines)


def _fmt_p(p):
    if p != p:
        return "NA"
    return "< 2e-16" if p < 2e-16 else f"{p:.3g}"


def summarize(model: FittedModel, data: Dataset | None = None) -> TermSummary:
    parametric = [wald_test(model, "(Intercept)")]
    parametric += [wald_test(model, name) for name in model.design.linear_names]
    smooth = [smooth_pvalue(model, name, data) for name in model.design.smooth_names]
    return TermSummary(parametric, smooth, str(model.link), model.n,
                       model.smoothing.edf_total, model.converged)


def demote_linear_smooths(model: FittedModel, data: Dataset, cfg: FitConfig | None = None,
                          threshold: float = DEMOTE_EDF):
    """Refit with smooths whose edf <= ``threshold`` turned into linear terms.

    Returns ``(model, demoted_names)``; the input model is returned unchanged
    when nothing qualifies.
    """
    low = [n for n in model.design.smooth_names if model.edf(n) <= threshold]
    if not low:
        return model, []
    terms = tuple(LinearTerm(term_name(t)) if term_name(t) in low else t for t in model.terms)
    # linear terms first, keeping declaration order within each kind
    terms = tuple(t for t in terms if isinstance(t, LinearTerm)) + tuple(
        t for t in terms if isinstance(t, SmoothTermSpec)
    )
    cfg = cfg or model.config
    if cfg.fixed_lambdas is not None:
        keep = [i for i, n in enumerate(model.design.smooth_names) if n not in low]
        cfg = FitConfig.from_dict({**cfg.to_dict(),
                                   "fixed_lambdas": [cfg.fixed_lambdas[i] for i in keep]})
    return fit(terms, data, model.link, cfg), low
