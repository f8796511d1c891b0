"""Response/link functions for binary regression: GEV, logit and log-log.

The GEV response is ``PD = exp(-(1 + tau*eta)^(-1/tau))``, defined only where
``1 + tau*eta > 0``. The log-log link ``PD = exp(-exp(-eta))`` is its
``tau -> 0`` (Gumbel) limit and is kept as a separate kind so that nothing
ever evaluates ``(x**-tau - 1)/tau`` close to ``tau = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit as _logit

PROB_FLOOR = 1e-12
DOMAIN_EPS = 1e-6
MIN_ABS_TAU = 1e-3

KINDS = ("gev", "logit", "loglog")


class DomainError(ValueError):
    """Raised when a linear predictor falls outside the GEV support."""

    def __init__(self, message, eta=None, rows=None):
        super().__init__(message)
        self.eta = eta
        self.rows = rows


@dataclass(frozen=True)
class LinkKind:
    kind: str
    tau: float | None = None
    domain_eps: float = DOMAIN_EPS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown link kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gev":
            if self.tau is None:
                raise ValueError("gev link needs a tail parameter tau")
            if abs(self.tau) < MIN_ABS_TAU:
                raise ValueError(
                    f"|tau| = {abs(self.tau):g} < {MIN_ABS_TAU:g}; request the loglog link instead"
                )
            object.__setattr__(self, "tau", float(self.tau))
        elif self.tau is not None:
            raise ValueError(f"{self.kind} link takes no tau")
        if not self.domain_eps > 0:
            raise ValueError("domain_eps must be positive")

    @classmethod
    def parse(cls, text: str) -> "LinkKind":
        """Parse ``"logit"``, ``"loglog"``, ``"gev:-0.25"`` (or ``"gev"`` plus tau)."""
        text = text.strip().lower()
        if text.startswith("gev"):
            _, _, tau = text.partition(":")
            if not tau:
                raise ValueError("gev link must be written as gev:<tau>")
            return cls("gev", float(tau))
        return cls(text)

    def __str__(self):
        return f"gev:{self.tau!r}" if self.kind == "gev" else self.kind

    def to_dict(self):
        return {"kind": self.kind, "tau": self.tau, "domain_eps": self.domain_eps}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("tau"), d.get("domain_eps", DOMAIN_EPS))

    # --- domain -----------------------------------------------------------

    def margin(self, eta):
        """``1 + tau*eta`` for gev, ``+inf`` otherwise."""
        eta = np.asarray(eta, dtype=float)
        if self.kind != "gev":
            return np.full(eta.shape, np.inf)
        return 1.0 + self.tau * eta

    def feasible(self, eta):
        return self.margin(eta) >= self.domain_eps

    def check_domain(self, eta):
        eta = np.asarray(eta, dtype=float)
        ok = self.feasible(eta)
        if not np.all(ok):
            rows = np.flatnonzero(~np.atleast_1d(ok))
            bad = np.atleast_1d(eta)[rows]
            raise DomainError(
                f"eta outside the {self} domain (1 + tau*eta < {self.domain_eps:g}) "
                f"at {rows.size} row(s); first offending eta = {bad[0]!r}",
                eta=bad,
                rows=rows,
            )

    def clamp_eta(self, eta):
        """Pull eta back to the boundary minus eps; returns (eta, clamped-mask)."""
        eta = np.asarray(eta, dtype=float)
        if self.kind != "gev":
            return eta.copy(), np.zeros(eta.shape, dtype=bool)
        bad = ~self.feasible(eta)
        # 1 + tau*eta = 2*eps keeps the clamped point strictly inside
        edge = (2.0 * self.domain_eps - 1.0) / self.tau
        return np.where(bad, edge, eta), bad

    # --- GEV/Gumbel helper ---------------------------------------------------

    def _extreme_parts(self, eta):
        """Return (t, g, dg) with PD = exp(-t), g = -dt/deta, dg = dg/deta."""
        if self.kind == "loglog":
            t = np.exp(-eta)
            return t, t, -t
        u = 1.0 + self.tau * eta
        t = u ** (-1.0 / self.tau)
        g = t / u
        dg = -(1.0 + self.tau) * g / u
        return t, g, dg


def inverse_link(link: LinkKind, eta):
    """Probability of the event for linear predictor ``eta``.

    Output is clamped to ``[1e-12, 1 - 1e-12]``. Raises :class:`DomainError`
    for GEV predictors with ``1 + tau*eta < domain_eps``.
    """
    eta = np.asarray(eta, dtype=float)
    link.check_domain(eta)
    if link.kind == "logit":
        p = expit(eta)
    else:
        t, _, _ = link._extreme_parts(eta)
        p = np.exp(-t)
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def link(link: LinkKind, pd):
    """Linear predictor for probability ``pd`` (exact inverse of :func:`inverse_link`)."""
    pd = np.asarray(pd, dtype=float)
    if np.any((pd <= 0) | (pd >= 1)) or np.any(np.isnan(pd)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    if link.kind == "logit":
        return _logit(pd)
    m = -np.log(pd)
    if link.kind == "loglog":
        return -np.log(m)
    # (m^-tau - 1)/tau written via expm1 to keep precision when m^-tau ~ 1
    return np.expm1(-link.tau * np.log(m)) / link.tau


def response_derivs(link: LinkKind, eta):
    """First and second derivatives of PD with respect to eta."""
    eta = np.asarray(eta, dtype=float)
    link.check_domain(eta)
    if link.kind == "logit":
        p = expit(eta)
        d1 = p * (1.0 - p)
        return d1, d1 * (1.0 - 2.0 * p)
    t, g, dg = link._extreme_parts(eta)
    p = np.exp(-t)
    return p * g, p * (g * g + dg)


def loglik_terms(link: LinkKind, eta, y):
    """Per-observation log-likelihood and its first two eta-derivatives.

    Computed in log space (no probability clamping) so that the derivatives are
    exact for the value returned. The caller is responsible for the domain.
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    if link.kind == "logit":
        ll = -(y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta))
        p = expit(eta)
        return ll, y - p, -p * (1.0 - p)
    t, g, dg = link._extreme_parts(eta)
    with np.errstate(over="ignore"):
        em1 = np.expm1(t)
    r = 1.0 / em1  # = PD/(1-PD); 0 when t overflows
    ll0 = np.log(-np.expm1(-t))
    ll = np.where(y > 0.5, -t, ll0)
    d1 = np.where(y > 0.5, g, -g * r)
    d2 = np.where(y > 0.5, dg, -(dg * r + g * g * r * (1.0 + r)))
    return ll, d1, d2
