"""Backward elimination of model terms at a fixed significance level."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import links as _links
from .data import Dataset
from .fit import FitConfig, FitError, FittedModel, fit
from .inference import demote_linear_smooths, smooth_pvalue, wald_test
from .likelihood import LinearTerm, term_name

log = logging.getLogger(__name__)


@dataclass
class SelectionStep:
    dropped: str
    p_value: float
    loglik: float
    edf_total: float
    reinstated: bool = False

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SelectionTrace:
    steps: list = field(default_factory=list)
    final_terms: list = field(default_factory=list)
    demoted: list = field(default_factory=list)
    kept_degenerate: list = field(default_factory=list)

    def to_dict(self):
        return {
            "steps": [s.to_dict() for s in self.steps],
            "final_terms": list(self.final_terms),
            "demoted": list(self.demoted),
            "kept_degenerate": list(self.kept_degenerate),
        }


def term_pvalues(model: FittedModel, data: Dataset | None = None):
    """p-value per term in declaration order (Wald for linear, chi-square for smooth)."""
    out = {}
    for t in model.terms:
        name = term_name(t)
        if isinstance(t, LinearTerm):
            p = wald_test(model, name).p_value
        else:
            p = smooth_pvalue(model, name, data).p_value
        out[name] = 1.0 if p != p else p
    return out


def backward_select(terms, data: Dataset, link: _links.LinkKind, cfg: FitConfig = FitConfig(),
                    alpha: float = 0.05, demote: bool = True):
    """Drop the least significant term one at a time until every p-value <= alpha.

    Smooths with edf close to 1 are turned into linear terms before each
    p-value pass. A drop whose refit fails is undone and the term is kept
    (flagged ``kept_degenerate``); the next-worst term is tried instead.
    Returns ``(model, trace)``.
    """
    if cfg.fixed_lambdas is not None:
        raise ValueError("backward selection re-estimates smoothing parameters; unset fixed_lambdas")
    trace = SelectionTrace()
    model = fit(terms, data, link, cfg)
    protected = set()
    while True:
        if demote:
            model, low = demote_linear_smooths(model, data, cfg)
            trace.demoted.extend(low)
        pvals = term_pvalues(model)
        if len(pvals) <= 1:
            break
        # worst first; equal p-values fall back to declaration order
        declared = list(pvals)
        candidates = sorted(
            (name for name in pvals if name not in protected and pvals[name] > alpha),
            key=lambda nm: (-pvals[nm], declared.index(nm)),
        )
        if not candidates:
            break
        dropped = False
        for name in candidates:
            remaining = tuple(t for t in model.terms if term_name(t) != name)
            try:
                refit = fit(remaining, data, link, cfg)
            except (FitError, _links.DomainError) as exc:
                log.warning("refit without %s failed (%s); keeping it", name, exc)
                protected.add(name)
                trace.kept_degenerate.append(name)
                trace.steps.append(SelectionStep(name, pvals[name], model.loglik,
                                                 model.smoothing.edf_total, reinstated=True))
                continue
            trace.steps.append(SelectionStep(name, pvals[name], refit.loglik,
                                             refit.smoothing.edf_total))
            model = refit
            dropped = True
            break
        if not dropped or len(model.terms) <= 1:
            break
    trace.final_terms = [term_name(t) for t in model.terms]
    return model, trace
