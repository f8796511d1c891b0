"""Penalized maximum-likelihood fitting.

The coefficient vector is found by a trust-region Newton method on the
penalized log-likelihood (dogleg steps on the quadratic model built from the
penalized gradient ``U - S delta`` and Hessian ``J - S``). Smoothing
parameters are picked by minimising the UBRE score of the working linear model
at the current coefficients, and the two steps alternate until both settle
(performance iteration).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg

from . import links as _links
from . import metrics as _metrics
from .data import Dataset, DataError, SplitPlan, split
from .likelihood import (
    LinearTerm,
    ModelDesign,
    WorkingState,
    build_design,
    penalty_value,
    term_name,
    working_quantities,
)

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
PREFERRED_TAU = -0.25


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_outer: int = 50
    max_inner: int = 100
    tol_delta: float = 1e-6
    tol_lambda: float = 1e-5
    grad_tol: float = 1e-8
    log10_lambda_range: tuple = (-6.0, 6.0)
    golden_width: float = 1e-2
    ubre_tol: float = 1e-7
    max_cycles: int = 10
    trust_radius_init: float = 1.0
    initial_lambda: float = 1.0
    fixed_lambdas: tuple | None = None
    tau_grid: tuple = (-1.0, -0.75, -0.5, -0.25)
    tau_metric: str = "h_measure"
    severity_ratio: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("tol_delta", "tol_lambda", "grad_tol", "golden_width", "trust_radius_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.tau_metric not in ("h_measure", "mae_plus"):
            raise ValueError("tau_metric must be 'h_measure' or 'mae_plus'")
        lo, hi = self.log10_lambda_range
        if not lo < hi:
            raise ValueError("empty smoothing-parameter range")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("log10_lambda_range", "tau_grid", "fixed_lambdas"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


# --- inner trust-region loop ---------------------------------------------------


@dataclass
class InnerTrace:
    iterations: int = 0
    accepted: int = 0
    rejected: int = 0
    infeasible: int = 0
    levenberg: int = 0
    objective: list = field(default_factory=list)
    grad_norm: float = float("nan")
    converged: bool = False
    reason: str = ""


class PenalizedObjective:
    """Penalized log-likelihood of a design at fixed smoothing parameters.

    ``value`` returns ``-inf`` off the GEV domain so that such trial steps
    are rejected by the trust region.
    """

    def __init__(self, design: ModelDesign, lambdas):
        self.design = design
        self.S = design.penalty_matrix(lambdas)

    def _parts(self, delta):
        eta = self.design.B @ delta
        if not np.all(self.design.link.feasible(eta)):
            return None
        with np.errstate(divide="ignore"):
            return _links.loglik_terms(self.design.link, eta, self.design.y)

    def value(self, delta):
        parts = self._parts(delta)
        if parts is None:
            return -np.inf
        return float(np.sum(parts[0])) - 0.5 * float(delta @ self.S @ delta)

    def derivatives(self, delta):
        """Return (value, penalized gradient, penalized Hessian, unpenalized J)."""
        parts = self._parts(delta)
        if parts is None:
            raise _links.DomainError("coefficients outside the GEV domain")
        ll, d1, d2 = parts
        B = self.design.B
        Sd = self.S @ delta
        J = (B * d2[:, None]).T @ B
        J = 0.5 * (J + J.T)
        return float(np.sum(ll)) - 0.5 * float(delta @ Sd), B.T @ d1 - Sd, J - self.S, J


class QuadraticObjective:
    """Concave quadratic ``b'x - x'Ax/2`` with the objective interface (testing aid)."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def value(self, x):
        return float(self.b @ x - 0.5 * x @ self.A @ x)

    def derivatives(self, x):
        return self.value(x), self.b - self.A @ x, -self.A, -self.A


def _negdef_factor(H, trace):
    """Cholesky factor of ``-H + mu I`` with the smallest mu (doubling from 1e-8)."""
    A = -H
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    mu = 0.0
    while True:
        try:
            return linalg.cho_factor(A + mu * np.eye(A.shape[0]), lower=True), mu
        except linalg.LinAlgError:
            trace.levenberg += 1
            mu = 1e-8 * scale if mu == 0.0 else 2.0 * mu
            if mu > 1e20 * scale:
                raise FitError("penalized Hessian could not be regularised") from None


def _dogleg(g, A, cho, radius):
    p_newton = linalg.cho_solve(cho, g)
    nn = np.linalg.norm(p_newton)
    if nn <= radius:
        return p_newton, True
    gAg = float(g @ A @ g)
    gg = float(g @ g)
    if gAg <= 0:
        return radius * g / math.sqrt(gg), False
    p_cauchy = (gg / gAg) * g
    nc = np.linalg.norm(p_cauchy)
    if nc >= radius:
        return radius * g / math.sqrt(gg), False
    d = p_newton - p_cauchy
    a = d @ d
    b = 2.0 * p_cauchy @ d
    c = nc * nc - radius * radius
    t = (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    return p_cauchy + t * d, False


def trust_region_maximize(objective, start, cfg: FitConfig):
    """Maximise ``objective`` from a feasible ``start``.

    Returns ``(x, J_unpenalized_at_x, trace)``. Accepted steps never decrease
    the objective; steps leaving the domain count as rejections.
    """
    x = np.array(start, dtype=float)
    f, g, H, J = objective.derivatives(x)
    if not np.isfinite(f):
        raise FitError("starting point is not feasible")
    trace = InnerTrace(objective=[f])
    radius = cfg.trust_radius_init
    for it in range(cfg.max_inner):
        trace.iterations = it + 1
        trace.grad_norm = float(np.max(np.abs(g)))
        A = -H
        cho, mu = _negdef_factor(H, trace)
        p, full = _dogleg(g, A + mu * np.eye(A.shape[0]), cho, radius)
        if trace.grad_norm < cfg.grad_tol * (1.0 + abs(f)):
            # a small gradient can still hide a sizeable Newton step on a poorly
            # scaled basis, so finish with one polishing step when it is safe
            if full and mu == 0.0 and np.any(p):
                f_new = objective.value(x + p)
                if np.isfinite(f_new) and f_new >= f:
                    x = x + p
                    f, g, H, J = objective.derivatives(x)
                    trace.accepted += 1
                    trace.objective.append(f)
                    trace.grad_norm = float(np.max(np.abs(g)))
            trace.converged, trace.reason = True, "gradient"
            break
        pred = float(g @ p - 0.5 * p @ A @ p)
        f_new = objective.value(x + p)
        if not np.isfinite(f_new):
            trace.infeasible += 1
            rho = -1.0
        elif pred <= 0:
            rho = 1.0 if f_new >= f else -1.0
        else:
            rho = (f_new - f) / pred
        step = np.linalg.norm(p)
        if rho < 0.25:
            radius = 0.5 * step if step > 0 else 0.5 * radius
        elif rho > 0.75 and not full:
            radius = 2.0 * radius
        if rho > 1e-4 and f_new >= f:
            x = x + p
            f, g, H, J = objective.derivatives(x)
            trace.accepted += 1
            trace.objective.append(f)
            if full and step <= 1e-10 * (1.0 + np.linalg.norm(x)):
                trace.grad_norm = float(np.max(np.abs(g)))
                trace.converged, trace.reason = True, "step"
                break
        else:
            trace.rejected += 1
            if radius < 1e-14 * (1.0 + np.linalg.norm(x)):
                trace.grad_norm = float(np.max(np.abs(g)))
                # no representable ascent left: at the optimum to working precision
                trace.converged = trace.grad_norm < 1e-4 * (1.0 + abs(f))
                trace.reason = "radius"
                break
    else:
        trace.grad_norm = float(np.max(np.abs(g)))
        trace.reason = "max_inner"
    return x, J, trace


def fit_inner(design: ModelDesign, lambdas, start, cfg: FitConfig = FitConfig()):
    """Penalized Newton/trust-region fit at fixed smoothing parameters."""
    start = np.asarray(start, dtype=float)
    if not np.all(design.link.feasible(design.B @ start)):
        raise FitError("start coefficients are outside the GEV domain")
    return trust_region_maximize(PenalizedObjective(design, lambdas), start, cfg)


# --- UBRE on the working model -------------------------------------------------


@dataclass
class SmoothingState:
    lambdas: np.ndarray
    edf_total: float
    edf_per_term: np.ndarray
    ubre: float
    evaluations: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "edf_total": self.edf_total,
            "edf_per_term": [float(v) for v in self.edf_per_term],
            "ubre": self.ubre,
        }


class WorkingModel:
    """QR-reduced working linear model: ``sqrt(W) B = Q R``, ``f = Q' sqrt(W) z``.

    Each smoothing-parameter evaluation then costs one q x q Cholesky.
    """

    def __init__(self, working: WorkingState, design: ModelDesign):
        sw = np.sqrt(working.W)
        X = design.B * sw[:, None]
        wz = sw * working.z
        self.Q, self.R = linalg.qr(X, mode="economic")
        self.f = self.Q.T @ wz
        self.rss0 = max(float(wz @ wz - self.f @ self.f), 0.0)
        self.RtR = self.R.T @ self.R
        self.n = design.n
        self.design = design

    def solve(self, lambdas):
        S = self.design.penalty_matrix(lambdas)
        try:
            cho = linalg.cho_factor(self.RtR + S, lower=True)
        except linalg.LinAlgError:
            raise FitError("B'WB + S_lambda is singular") from None
        delta = linalg.cho_solve(cho, self.R.T @ self.f)
        return cho, delta

    def evaluate(self, lambdas, per_term=False):
        """UBRE score and tr(A_lambda) (plus per-term edf when asked)."""
        cho, delta = self.solve(lambdas)
        r = self.f - self.R @ delta
        rss = float(r @ r) + self.rss0
        if per_term:
            F = linalg.cho_solve(cho, self.RtR)
            diag = np.diag(F)
            edf = float(diag.sum())
        else:
            L = linalg.solve_triangular(cho[0], self.R.T, lower=True)
            diag = None
            edf = float(np.sum(L * L))
        value = rss / self.n - 1.0 + 2.0 * edf / self.n
        if per_term:
            terms = np.array([diag[sl].sum() for sl, _ in self.design.penalties])
            return value, edf, terms, delta
        return value, edf


def ubre(working: WorkingState, design: ModelDesign, lambdas):
    """``(UBRE score, edf)`` of the working model at ``lambdas``."""
    return WorkingModel(working, design).evaluate(lambdas)


def select_lambda(working, design, cfg: FitConfig = FitConfig(), start=None) -> SmoothingState:
    """Coordinate-wise log10 grid search plus golden-section refinement of UBRE."""
    wm = working if isinstance(working, WorkingModel) else WorkingModel(working, design)
    m = len(design.smooth_names)
    lo, hi = cfg.log10_lambda_range
    if start is None:
        start = np.full(m, cfg.initial_lambda)
    loglam = np.clip(np.log10(np.maximum(np.asarray(start, float), 1e-300)), lo, hi)
    evaluations = []

    def score(ll):
        try:
            v = wm.evaluate(10.0**ll)[0]
        except FitError:
            v = np.inf
        evaluations.append((ll.copy(), v))
        return v

    if m == 0:
        value, edf = wm.evaluate(np.zeros(0))
        return SmoothingState(np.zeros(0), edf, np.zeros(0), value, [])

    best = score(loglam)
    grid = np.arange(lo, hi + 0.5, 1.0)
    for _ in range(cfg.max_cycles):
        before = best
        for j in range(m):
            trial = loglam.copy()
            vals = []
            for node in grid:
                trial[j] = node
                vals.append(score(trial))
            k = int(np.argmin(vals))
            a, b = max(grid[k] - 1.0, lo), min(grid[k] + 1.0, hi)
            c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
            trial[j] = c
            fc = score(trial)
            trial[j] = d
            fd = score(trial)
            while b - a > cfg.golden_width:
                if fc <= fd:
                    b, d, fd = d, c, fc
                    c = b - GOLDEN * (b - a)
                    trial[j] = c
                    fc = score(trial)
                else:
                    a, c, fc = c, d, fd
                    d = a + GOLDEN * (b - a)
                    trial[j] = d
                    fd = score(trial)
            # arg-min over everything evaluated on this coordinate sweep
            cand = min(evaluations, key=lambda e: e[1])
            loglam, best = cand[0].copy(), cand[1]
        if before - best < cfg.ubre_tol:
            break
    lambdas = 10.0**loglam
    value, edf, terms, _ = wm.evaluate(lambdas, per_term=True)
    return SmoothingState(lambdas, edf, terms, value, evaluations)


# --- full fit ----------------------------------------------------------------


@dataclass(eq=False)
class FittedModel:
    design: ModelDesign
    delta: np.ndarray
    V: np.ndarray
    smoothing: SmoothingState
    converged: bool
    iterations: dict
    loglik: float
    penalized_loglik: float
    grad_norm: float
    config: FitConfig
    n: int
    flags: dict = field(default_factory=dict)

    @property
    def link(self):
        return self.design.link

    @property
    def q(self):
        return self.delta.size

    @property
    def terms(self):
        return self.design.terms

    def coef(self, name):
        return self.delta[self.design.layout[name]]

    def edf(self, name):
        names = self.design.smooth_names
        return float(self.smoothing.edf_per_term[names.index(name)])


def initial_delta(design: ModelDesign, y):
    """Intercept-only start at link(mean(y)), pulled inside the GEV domain."""
    ybar = float(np.clip(np.mean(y), 1e-6, 1 - 1e-6))
    a = float(_links.link(design.link, ybar))
    lk = design.link
    if lk.kind == "gev":
        edge = (1.0 - 1e3 * lk.domain_eps) / -lk.tau  # 1 + tau*a >= 1e3*eps
        a = min(a, edge) if lk.tau < 0 else max(a, edge)
    delta = np.zeros(design.q)
    delta[0] = a
    return delta


def covariance(J, S):
    """``V = (-J + S)^-1``; falls back to a pseudo-inverse, returning ``(V, pinv_used)``."""
    A = -np.asarray(J, dtype=float) + np.asarray(S, dtype=float)
    A = 0.5 * (A + A.T)
    try:
        cho = linalg.cho_factor(A, lower=True)
        V = linalg.cho_solve(cho, np.eye(A.shape[0]))
        used_pinv = False
    except linalg.LinAlgError:
        warnings.warn("-J + S_lambda is not positive definite; using a pseudo-inverse")
        V = np.linalg.pinv(A, hermitian=True)
        used_pinv = True
    return 0.5 * (V + V.T), used_pinv


def _rel_change(new, old):
    new, old = np.asarray(new, float), np.asarray(old, float)
    if new.size == 0:
        return 0.0
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-300)))


def fit(terms, data: Dataset, link: _links.LinkKind, cfg: FitConfig = FitConfig(),
        design: ModelDesign | None = None) -> FittedModel:
    """Fit a penalized additive binary regression by performance iteration."""
    data.require_fittable()
    if design is None:
        design = build_design(terms, data, link)
    data.require_fittable(design.q + 1)
    m = len(design.smooth_names)
    fixed = cfg.fixed_lambdas is not None
    if fixed:
        lambdas = np.asarray(cfg.fixed_lambdas, dtype=float)
        if lambdas.shape != (m,):
            raise ValueError(f"fixed_lambdas needs {m} values")
    else:
        lambdas = np.full(m, cfg.initial_lambda)
    delta = initial_delta(design, data.response)
    totals = {"outer": 0, "inner": 0, "rejected": 0, "infeasible": 0, "levenberg": 0}
    outer_ok = False
    trace = None
    for outer in range(cfg.max_outer):
        totals["outer"] = outer + 1
        new, J, trace = fit_inner(design, lambdas, delta, cfg)
        for key, attr in (("inner", "iterations"), ("rejected", "rejected"),
                          ("infeasible", "infeasible"), ("levenberg", "levenberg")):
            totals[key] += getattr(trace, attr)
        step = np.linalg.norm(new - delta) / (1.0 + np.linalg.norm(delta))
        delta = new
        if fixed or m == 0:
            outer_ok = trace.converged
            break
        state = select_lambda(working_quantities(design, delta), design, cfg, start=lambdas)
        change = _rel_change(state.lambdas, lambdas)
        lambdas = state.lambdas
        if step < cfg.tol_delta and change < cfg.tol_lambda:
            outer_ok = trace.converged
            break
    else:
        if not fixed and m:
            # leave delta consistent with the final smoothing parameters
            delta, J, trace = fit_inner(design, lambdas, delta, cfg)
            totals["inner"] += trace.iterations

    S = design.penalty_matrix(lambdas)
    wm = WorkingModel(working_quantities(design, delta), design)
    value, edf, per_term, _ = wm.evaluate(lambdas, per_term=True)
    smoothing = SmoothingState(np.asarray(lambdas, float), edf, per_term, value)
    V, pinv = covariance(J, S)
    ll = float(np.sum(_links.loglik_terms(link, design.B @ delta, design.y)[0]))
    lp = ll - penalty_value(design, delta, lambdas)
    converged = bool(outer_ok and trace.grad_norm < 1e-4 * (1.0 + abs(lp)))
    if not converged:
        log.warning("fit did not converge (%s; %d outer iterations)", trace.reason, totals["outer"])
    return FittedModel(
        design=design,
        delta=delta,
        V=V,
        smoothing=smoothing,
        converged=converged,
        iterations=totals,
        loglik=ll,
        penalized_loglik=lp,
        grad_norm=trace.grad_norm,
        config=cfg,
        n=data.n,
        flags={"pseudo_inverse": pinv, "inner_reason": trace.reason},
    )


# --- prediction --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prediction:
    pd: np.ndarray
    eta: np.ndarray
    extrapolated: np.ndarray
    clamped: np.ndarray


def predict_detail(model: FittedModel, newdata: Dataset) -> Prediction:
    missing = [term_name(t) for t in model.terms if term_name(t) not in newdata.names]
    if missing:
        raise DataError(f"new data lacks model covariate(s): {missing}")
    B, outside = model.design.matrix(newdata)
    eta, clamped = model.link.clamp_eta(B @ model.delta)
    return Prediction(_links.inverse_link(model.link, eta), eta, outside, clamped)


def predict(model: FittedModel, newdata: Dataset):
    """Predicted event probabilities for ``newdata``."""
    pr = predict_detail(model, newdata)
    if pr.extrapolated.any():
        log.info("%d row(s) extrapolated beyond the training range", int(pr.extrapolated.sum()))
    if pr.clamped.any():
        log.warning("%d row(s) clamped to the GEV domain boundary", int(pr.clamped.sum()))
    return pr.pd


# --- tail-parameter grid -------------------------------------------------------


def _tau_key(tau, value, metric):
    better = -value if metric == "h_measure" else value
    return (better, abs(tau - PREFERRED_TAU), -tau)


def fit_tau_grid(terms, data: Dataset, plan: SplitPlan, cfg: FitConfig = FitConfig()):
    """Fit one GEV model per tau on the training part and score on the test part.

    Returns ``(best_model, table)`` where ``table`` has one dict per tau with
    every metric (or an ``error`` note when that fit failed).
    """
    if not cfg.tau_grid:
        raise ValueError("empty tau grid")
    train, test = split(data, plan)
    table = []
    fitted = {}
    for tau in cfg.tau_grid:
        row = {"tau": float(tau)}
        try:
            lk = _links.LinkKind("gev", tau) if abs(tau) >= _links.MIN_ABS_TAU else _links.LinkKind("loglog")
            model = fit(terms, train, lk, cfg)
            rep = _metrics.evaluate(test.response, predict(model, test), cfg.severity_ratio,
                                    plan.label)
            row.update(rep.to_dict(), converged=model.converged)
            fitted[float(tau)] = model
        except (FitError, _links.DomainError, DataError, _metrics.MetricError) as exc:
            row["error"] = str(exc)
        table.append(row)
    ok = [r for r in table if "error" not in r]
    if not ok:
        raise FitError("every tau in the grid failed: " + "; ".join(r["error"] for r in table))
    winner = min(ok, key=lambda r: _tau_key(r["tau"], r[cfg.tau_metric], cfg.tau_metric))
    for r in table:
        r["selected"] = r is winner
    return fitted[winner["tau"]], table


def with_fixed_lambdas(cfg: FitConfig, lambdas) -> FitConfig:
    return replace(cfg, fixed_lambdas=tuple(float(v) for v in lambdas))


__all__ = [
    "FitConfig", "FitError", "FittedModel", "InnerTrace", "Prediction", "QuadraticObjective",
    "SmoothingState", "WorkingModel", "covariance", "fit", "fit_inner", "fit_tau_grid",
    "initial_delta", "predict", "predict_detail", "select_lambda", "trust_region_maximize",
    "ubre", "with_fixed_lambdas", "LinearTerm",
]
