"""Model design assembly and the binary log-likelihood with its derivatives.

The coefficient vector is laid out as ``(intercept, linear terms..., smooth
blocks...)``. The maximised objective is

    l_p(delta) = l(delta) - 1/2 * sum_j lambda_j * gamma_j' S_j gamma_j

i.e. the penalty is subtracted, which is what makes the Newton update
``delta + (J - S)^-1 (S delta - U)`` an ascent step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import links as _links
from .data import Dataset
from .splines import SmoothBasis, SmoothTermSpec, build_basis

W_FLOOR = 1e-8


@dataclass(frozen=True)
class LinearTerm:
    covariate: str

    def to_dict(self):
        return {"covariate": self.covariate}


def term_name(term):
    return term.covariate


def parse_terms(smooth=(), linear=(), k=20, basis="tp", penalty_order=2):
    """Build a term list from covariate names: linear terms first, then smooths."""
    terms = [LinearTerm(c) for c in linear]
    terms += [SmoothTermSpec(c, basis, k, penalty_order) for c in smooth]
    names = [term_name(t) for t in terms]
    if len(set(names)) != len(names):
        raise ValueError("a covariate may appear in only one term")
    return tuple(terms)


@dataclass(frozen=True, eq=False)
class ModelDesign:
    """Assembled design for one training set.

    ``layout`` maps a term name (and ``"(Intercept)"``) to its column slice;
    ``penalties`` lists ``(slice, S_j)`` per smooth in declaration order.
    """

    link: _links.LinkKind
    terms: tuple
    bases: dict
    layout: dict
    B: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def smooth_names(self):
        return [term_name(t) for t in self.terms if isinstance(t, SmoothTermSpec)]

    @property
    def linear_names(self):
        return [term_name(t) for t in self.terms if isinstance(t, LinearTerm)]

    @property
    def penalties(self):
        return [(self.layout[name], self.bases[name].S) for name in self.smooth_names]

    def penalty_matrix(self, lambdas):
        """Block-diagonal ``S_lambda`` (zeros on intercept and linear columns)."""
        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.shape != (len(self.smooth_names),):
            raise ValueError(
                f"expected {len(self.smooth_names)} smoothing parameters, got {lambdas.size}"
            )
        if np.any(lambdas < 0) or np.any(np.isnan(lambdas)):
            raise ValueError("smoothing parameters must be non-negative")
        S = np.zeros((self.q, self.q))
        for lam, (sl, Sj) in zip(lambdas, self.penalties):
            S[sl, sl] = lam * Sj
        return S

    def matrix(self, data: Dataset):
        """Design matrix for (possibly new) data; returns ``(B, extrapolated_rows)``."""
        cols = [np.ones((data.n, 1))]
        outside = np.zeros(data.n, dtype=bool)
        for t in self.terms:
            x = data.column(term_name(t))
            if isinstance(t, LinearTerm):
                cols.append(x[:, None])
            else:
                basis = self.bases[term_name(t)]
                cols.append(basis.design(x))
                outside |= basis.outside(x)
        return np.hstack(cols), outside

    def eta(self, delta, data: Dataset | None = None):
        B = self.B if data is None else self.matrix(data)[0]
        return B @ np.asarray(delta, dtype=float)


def _layout(terms, bases):
    layout = {"(Intercept)": slice(0, 1)}
    pos = 1
    for t in terms:
        width = 1 if isinstance(t, LinearTerm) else bases[term_name(t)].ncol
        layout[term_name(t)] = slice(pos, pos + width)
        pos += width
    return layout, pos


def build_design(terms, data: Dataset, link: _links.LinkKind, bases=None) -> ModelDesign:
    """Assemble ``B`` for ``data``; smooth bases are built unless supplied."""
    terms = tuple(terms)
    if bases is None:
        bases = {
            term_name(t): build_basis(data.column(term_name(t)), t)
            for t in terms
            if isinstance(t, SmoothTermSpec)
        }
    layout, q = _layout(terms, bases)
    proto = ModelDesign(link, terms, bases, layout, np.zeros((0, q)), np.zeros(0))
    B, _ = proto.matrix(data)
    return ModelDesign(link, terms, bases, layout, B, data.response)


def restore_design(link, terms, bases: dict[str, SmoothBasis]) -> ModelDesign:
    """Design shell (no training rows) used for prediction from an archive."""
    layout, q = _layout(tuple(terms), bases)
    return ModelDesign(link, tuple(terms), bases, layout, np.zeros((0, q)), np.zeros(0))


# --- likelihood --------------------------------------------------------------


def _resolve(design, data):
    if data is None:
        return design.B, design.y
    return design.matrix(data)[0], data.response


def _terms_at(design, delta, data):
    B, y = _resolve(design, data)
    eta = B @ np.asarray(delta, dtype=float)
    design.link.check_domain(eta)
    with np.errstate(divide="ignore"):
        ll, d1, d2 = _links.loglik_terms(design.link, eta, y)
    return B, eta, ll, d1, d2


def loglik(design: ModelDesign, delta, data: Dataset | None = None) -> float:
    """Bernoulli log-likelihood; raises :class:`~bgeva.links.DomainError` if any
    row is outside the GEV support."""
    return float(np.sum(_terms_at(design, delta, data)[2]))


def penalty_value(design, delta, lambdas):
    delta = np.asarray(delta, dtype=float)
    return 0.5 * float(delta @ design.penalty_matrix(lambdas) @ delta)


def penalized_loglik(design, delta, lambdas, data=None) -> float:
    pen = penalty_value(design, delta, lambdas)
    return loglik(design, delta, data) - pen


def score(design, delta, data=None):
    B, _, _, d1, _ = _terms_at(design, delta, data)
    return B.T @ d1


def hessian(design, delta, data=None):
    B, _, _, _, d2 = _terms_at(design, delta, data)
    J = (B * d2[:, None]).T @ B
    return 0.5 * (J + J.T)  # exactly symmetric


@dataclass(frozen=True, eq=False)
class WorkingState:
    eta: np.ndarray
    pd: np.ndarray
    d: np.ndarray
    W: np.ndarray  # floored working weights
    W_raw: np.ndarray
    z: np.ndarray
    loglik: float
    feasible: np.ndarray


def working_quantities(design, delta, data=None) -> WorkingState:
    """Per-row ``d = dl/deta``, ``W = -d2l/deta2`` (floored at 1e-8) and ``z = eta + d/W``."""
    B, eta, ll, d1, d2 = _terms_at(design, delta, data)
    W_raw = -d2
    W = np.maximum(W_raw, W_FLOOR)
    return WorkingState(
        eta=eta,
        pd=_links.inverse_link(design.link, eta),
        d=d1,
        W=W,
        W_raw=W_raw,
        z=eta + d1 / W,
        loglik=float(np.sum(ll)),
        feasible=design.link.feasible(eta),
    )
