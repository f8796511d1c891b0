"""Versioned JSON model archives.

Floats are written with Python's shortest round-trip ``repr`` so a reloaded
model reproduces predictions bit for bit. No timestamps are stored, so the
same fit always produces the same file.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import links as _links
from .fit import FitConfig, FittedModel, SmoothingState
from .likelihood import LinearTerm, restore_design
from .splines import SmoothBasis, SmoothTermSpec

FORMAT_VERSION = 1
MAGIC = "bgeva-model"


class ArchiveError(ValueError):
    pass


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def term_dict(t):
    if isinstance(t, LinearTerm):
        return {"type": "linear", **t.to_dict()}
    return {"type": "smooth", **t.to_dict()}


def _term_from(d):
    d = dict(d)
    kind = d.pop("type")
    if kind == "linear":
        return LinearTerm(**d)
    if kind == "smooth":
        return SmoothTermSpec(**d)
    raise ArchiveError(f"unknown term type {kind!r}")


def to_dict(model: FittedModel, provenance=None):
    names = model.design.smooth_names
    return {
        "format": MAGIC,
        "format_version": FORMAT_VERSION,
        "link": model.link.to_dict(),
        "terms": [term_dict(t) for t in model.terms],
        "bases": {name: model.design.bases[name].to_dict() for name in names},
        "layout": {k: [v.start, v.stop] for k, v in model.design.layout.items()},
        "delta": model.delta.tolist(),
        "V": model.V.tolist(),
        "smoothing": model.smoothing.to_dict(),
        "edf": {name: model.edf(name) for name in names},
        "diagnostics": {
            "converged": model.converged,
            "iterations": dict(model.iterations),
            "loglik": model.loglik,
            "penalized_loglik": model.penalized_loglik,
            "grad_norm": model.grad_norm,
            "flags": dict(model.flags),
        },
        "n": model.n,
        "config": model.config.to_dict(),
        "provenance": dict(provenance or {}),
    }


def from_dict(d) -> FittedModel:
    try:
        if d.get("format") != MAGIC:
            raise ArchiveError("not a model archive")
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ArchiveError(
                f"archive format version {version!r} is not supported "
                f"(this build reads version {FORMAT_VERSION})"
            )
        link = _links.LinkKind.from_dict(d["link"])
        terms = [_term_from(t) for t in d["terms"]]
        bases = {name: SmoothBasis.from_dict(b) for name, b in d["bases"].items()}
        design = restore_design(link, terms, bases)
        for name, (a, b) in d["layout"].items():
            sl = design.layout.get(name)
            if sl is None or (sl.start, sl.stop) != (a, b):
                raise ArchiveError(f"layout mismatch for term {name!r}")
        delta = np.array(d["delta"], dtype=float)
        V = np.array(d["V"], dtype=float)
        if delta.shape != (design.q,) or V.shape != (design.q, design.q):
            raise ArchiveError("coefficient dimensions do not match the term layout")
        sm = d["smoothing"]
        smoothing = SmoothingState(np.array(sm["lambdas"], dtype=float), float(sm["edf_total"]),
                                   np.array(sm["edf_per_term"], dtype=float), float(sm["ubre"]))
        diag = d["diagnostics"]
        return FittedModel(
            design=design,
            delta=delta,
            V=V,
            smoothing=smoothing,
            converged=bool(diag["converged"]),
            iterations=dict(diag["iterations"]),
            loglik=float(diag["loglik"]),
            penalized_loglik=float(diag["penalized_loglik"]),
            grad_norm=float(diag["grad_norm"]),
            config=FitConfig.from_dict(d["config"]),
            n=int(d["n"]),
            flags=dict(diag.get("flags", {})),
        )
    except ArchiveError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"corrupt model archive: {exc!r}") from exc


def dumps(model: FittedModel, provenance=None) -> str:
    return json.dumps(to_dict(model, provenance), indent=1, allow_nan=True) + "\n"


def save(model: FittedModel, path, provenance=None):
    Path(path).write_text(dumps(model, provenance), encoding="utf-8")


def load(path) -> FittedModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path} is not a complete archive: {exc}") from exc
    if not isinstance(d, dict):
        raise ArchiveError(f"{path} is not a model archive")
    return from_dict(d)


def provenance(data_path=None, seed=None, **extra):
    out = {"seed": seed}
    if data_path is not None:
        out["data_sha256"] = file_sha256(data_path)
        out["data_file"] = Path(data_path).name
    out.update(extra)
    return out


__all__ = ["ArchiveError", "FORMAT_VERSION", "dumps", "file_sha256", "from_dict", "load",
           "provenance", "save", "to_dict"]
