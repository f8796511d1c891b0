"""Datasets, CSV ingestion, sampling utilities and the synthetic generator.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import links as _links

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary response, continuous covariates and an optional year column."""

    response: np.ndarray
    covariates: np.ndarray
    names: tuple
    year: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        y = _frozen(self.response, float).ravel()
        X = _frozen(self.covariates, float)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1), float)
        if X.shape[0] != y.size:
            raise DataError(f"response has {y.size} rows but covariates have {X.shape[0]}")
        if X.shape[1] != len(self.names):
            raise DataError("covariate names do not match the number of columns")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("response must contain only 0 and 1")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain missing or non-finite values")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if self.year is not None:
            yr = _frozen(self.year, np.int64).ravel()
            if yr.size != y.size:
                raise DataError("year column length mismatch")
            object.__setattr__(self, "year", yr)

    @property
    def n(self) -> int:
        return self.response.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_pos(self) -> int:
        return int(self.response.sum())

    def column(self, name) -> np.ndarray:
        try:
            return self.covariates[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"no covariate named {name!r}") from None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.response[idx],
            self.covariates[idx],
            self.names,
            None if self.year is None else self.year[idx],
        )

    def select(self, names) -> "Dataset":
        cols = [self.names.index(n) for n in names]
        return Dataset(self.response, self.covariates[:, cols], tuple(names), self.year)

    def require_fittable(self, n_params=None):
        if self.n_pos == 0 or self.n_pos == self.n:
            raise DataError("fitting needs at least one observation of each class")
        need = self.p + 2 if n_params is None else n_params
        if self.n < need:
            raise DataError(f"need at least {need} rows to fit, have {self.n}")

    def to_frame(self, response_name="y", year_name="year") -> pd.DataFrame:
        df = pd.DataFrame(self.covariates, columns=list(self.names))
        df.insert(0, response_name, self.response.astype(int))
        if self.year is not None:
            df.insert(1, year_name, self.year)
        return df


# --- ingestion ---------------------------------------------------------------


def ingest_csv(path, response="y", year=None, covariates=None) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    Rows with any missing cell in the used columns are dropped; the count is
    stored on ``Dataset.dropped``. All non-role columns are covariates unless
    ``covariates`` names a subset.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8", keep_default_na=False, na_values=[""],
                         float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    for col in (response, year):
        if col is not None and col not in df.columns:
            raise DataError(f"column {col!r} not found in {path}")
    if covariates is None:
        covariates = [c for c in df.columns if c not in (response, year)]
    else:
        missing = [c for c in covariates if c not in df.columns]
        if missing:
            raise DataError(f"covariate column(s) not found: {missing}")
    used = [response] + ([year] if year else []) + list(covariates)
    df = df[used]
    try:
        df = df.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as exc:
        raise DataError(f"non-numeric value in {path}: {exc}") from exc
    complete = df.notna().all(axis=1)
    dropped = int((~complete).sum())
    df = df[complete]
    if len(df) == 0:
        raise DataError(f"{path}: no usable rows after dropping {dropped} incomplete row(s)")
    y = df[response].to_numpy(dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise DataError(f"response column {response!r} is not binary 0/1")
    yr = None
    if year:
        yv = df[year].to_numpy(dtype=float)
        if not np.all((yv == np.round(yv)) & (yv >= 1000) & (yv <= 9999)):
            raise DataError(f"year column {year!r} must hold 4-digit integers")
        yr = yv.astype(np.int64)
    if dropped:
        log.info("%s: dropped %d row(s) with missing values", path, dropped)
    return Dataset(y, df[list(covariates)].to_numpy(dtype=float), tuple(covariates), yr, dropped)


# --- choice-based sampling ---------------------------------------------------


def stratified_subsample(d: Dataset, target_rate: float, seed: int) -> Dataset:
    """Keep every positive row and thin negatives until the event rate hits ``target_rate``."""
    if not 0 < target_rate < 1:
        raise DataError("target rate must lie in (0, 1)")
    n_pos = d.n_pos
    n_neg = d.n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("stratified sampling needs both classes")
    native = n_pos / d.n
    keep_neg = int(round(n_pos * (1.0 - target_rate) / target_rate))
    if keep_neg > n_neg:
        if n_pos / (n_pos + n_neg) <= target_rate + 0.5 / d.n:
            # already at (or within one row of) the target
            keep_neg = n_neg
        else:
            raise DataError(
                f"target rate {target_rate:g} is below the native rate {native:g}; "
                "it cannot be reached by deleting negatives"
            )
    if keep_neg == n_neg:
        return d
    rng = rng_for(seed)
    neg = np.flatnonzero(d.response == 0)
    chosen = np.sort(rng.choice(neg, size=keep_neg, replace=False))
    idx = np.sort(np.concatenate([np.flatnonzero(d.response == 1), chosen]))
    return d.subset(idx)


# --- VIF screening -----------------------------------------------------------


def _vifs(X):
    """VIF of each column of X regressed on the remaining columns (with intercept)."""
    n, p = X.shape
    out = np.empty(p)
    for j in range(p):
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, X[:, j], rcond=None)
        resid = X[:, j] - others @ coef
        tss = np.sum((X[:, j] - X[:, j].mean()) ** 2)
        r2 = 1.0 - resid @ resid / tss
        out[j] = np.inf if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out


def vif_screen(d: Dataset, threshold: float = 5.0):
    """Iteratively drop the covariate with the largest VIF above ``threshold``.

    Returns ``(kept_names, [(dropped_name, vif), ...])``. Exact ties drop the
    column appearing later.
    """
    if d.p < 2:
        raise DataError("VIF screening needs at least two covariates")
    X = d.covariates
    if np.any(X.std(axis=0) == 0):
        raise DataError("VIF screening needs non-constant covariates")
    kept = list(range(d.p))
    dropped = []
    while len(kept) > 1:
        v = _vifs(X[:, kept])
        top = v.max()
        if top <= threshold:
            break
        j = int(np.flatnonzero(v == top)[-1])
        if np.isinf(top):
            warnings.warn(f"covariate {d.names[kept[j]]!r} is perfectly collinear; dropped")
        dropped.append((d.names[kept[j]], float(top)))
        del kept[j]
    return [d.names[k] for k in kept], dropped


# --- splits ------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    kind: str
    fraction: float | None = None
    train_years: tuple = ()
    test_years: tuple = ()
    seed: int = 0
    label: str = ""

    @classmethod
    def holdout(cls, fraction=0.10, seed=0):
        return cls("holdout", fraction=fraction, seed=seed, label="Out-of-sample")

    @classmethod
    def time_cutoff(cls, train_years, test_years, label=None):
        train_years = tuple(sorted(int(y) for y in train_years))
        test_years = tuple(sorted(int(y) for y in test_years))
        if label is None:
            if len(test_years) == 1:
                label = f"Out-of-time {test_years[0]}"
            else:
                label = f"Out-of-time {test_years[0]}-{test_years[-1]}"
        return cls("time", train_years=train_years, test_years=test_years, label=label)

    def __post_init__(self):
        if self.kind == "holdout":
            if self.fraction is None or not 0 < self.fraction < 1:
                raise DataError("holdout fraction must lie in (0, 1)")
        elif self.kind == "time":
            if set(self.train_years) & set(self.test_years):
                raise DataError("train and test years overlap")
        else:
            raise DataError(f"unknown split kind {self.kind!r}")


def split_indices(d: Dataset, plan: SplitPlan):
    if plan.kind == "holdout":
        n_test = int(round(plan.fraction * d.n))
        perm = rng_for(plan.seed).permutation(d.n)
        test = np.sort(perm[:n_test])
        train = np.sort(perm[n_test:])
    else:
        if d.year is None:
            raise DataError("time-cutoff split needs a year column")
        train = np.flatnonzero(np.isin(d.year, plan.train_years))
        test = np.flatnonzero(np.isin(d.year, plan.test_years))
    if test.size == 0:
        raise DataError(f"split {plan.label or plan.kind!r} has an empty test set")
    if train.size == 0:
        raise DataError(f"split {plan.label or plan.kind!r} has an empty training set")
    return train, test


def split(d: Dataset, plan: SplitPlan):
    """Partition ``d`` into ``(train, test)`` according to ``plan``.

    Time-cutoff plans use only the listed years, so ``train + test`` covers the
    whole dataset only when the years do.
    """
    train, test = split_indices(d, plan)
    tr = d.subset(train)
    if tr.n_pos == 0 or tr.n_pos == tr.n:
        raise DataError("training part of the split is missing a class")
    return tr, d.subset(test)


# --- simulation --------------------------------------------------------------

# each shape has mean zero under U(-1, 1)
_BUMP_MEAN = 0.5 * math.sqrt(math.pi / 8.0) * math.erf(math.sqrt(8.0))
SHAPES = {
    "sine": lambda x: np.sin(np.pi * x),
    "bump": lambda x: np.exp(-8.0 * x**2) - _BUMP_MEAN,
    "piecewise": lambda x: np.where(x < 0.0, -0.5 * x, 1.5 * x) - 0.5,
}


def shape_function(name):
    try:
        return SHAPES[name]
    except KeyError:
        raise DataError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}") from None


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    link: _links.LinkKind = field(default_factory=lambda: _links.LinkKind("logit"))
    linear: tuple = ()  # coefficients on x1, x2, ...
    nonlinear: tuple = ()  # (shape, amplitude) pairs on the following columns
    noise: int = 0  # extra covariates with no effect
    target_rate: float = 0.05
    seed: int = 0
    intercept: float | None = None  # None = calibrate

    def __post_init__(self):
        if not 0 < self.target_rate < 1:
            raise DataError("target rate must lie in (0, 1)")
        if self.n < 2:
            raise DataError("n must be at least 2")
        for shape, _ in self.nonlinear:
            shape_function(shape)


@dataclass(frozen=True, eq=False)
class Simulated:
    data: Dataset
    intercept: float
    components: dict  # covariate name -> true effect per row
    eta: np.ndarray


def _calibrate(link, offset, target, u, lo=-30.0, hi=30.0):
    """Bisect the intercept so that the realised rate mean(u < PD) hits target."""
    if link.kind == "gev":
        # keep every row inside the domain: 1 + tau*(a + offset) >= 2 eps
        bound = (2 * link.domain_eps - 1.0) / link.tau
        if link.tau < 0:
            hi = min(hi, bound - offset.max())
        else:
            lo = max(lo, bound - offset.min())
        if lo >= hi:
            raise DataError("effect amplitudes too extreme for the gev domain")

    def rate(a):
        return np.mean(u < _links.inverse_link(link, a + offset))

    if not rate(lo) <= target <= rate(hi):
        raise DataError(
            f"cannot bracket intercept for target rate {target:g} "
            f"(achievable range [{rate(lo):.4g}, {rate(hi):.4g}])"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return hi


def simulate(cfg: SimulationConfig) -> Simulated:
    """Draw a synthetic binary dataset.

    Covariates are i.i.d. U(-1, 1); columns are linear effects first, then
    nonlinear shapes, then pure-noise columns. When ``cfg.intercept`` is None
    it is chosen by bisection on the realised event rate (the uniforms behind
    the Bernoulli draws are fixed first), so the rate lands within 1/n of the
    target.
    """
    rng = rng_for(cfg.seed)
    p = len(cfg.linear) + len(cfg.nonlinear) + cfg.noise
    if p == 0:
        raise DataError("simulation needs at least one covariate")
    X = rng.uniform(-1.0, 1.0, size=(cfg.n, p))
    names = tuple(f"x{j + 1}" for j in range(p))
    comps = {}
    offset = np.zeros(cfg.n)
    for j, beta in enumerate(cfg.linear):
        comps[names[j]] = beta * X[:, j]
        offset += comps[names[j]]
    for k, (shape, amp) in enumerate(cfg.nonlinear):
        j = len(cfg.linear) + k
        comps[names[j]] = amp * shape_function(shape)(X[:, j])
        offset += comps[names[j]]
    u = rng.uniform(size=cfg.n)
    if cfg.intercept is None:
        a = _calibrate(cfg.link, offset, cfg.target_rate, u)
    else:
        a = cfg.intercept
    eta = a + offset
    y = (u < _links.inverse_link(cfg.link, eta)).astype(float)
    return Simulated(Dataset(y, X, names), float(a), comps, eta)
