"""Out-of-sample / out-of-time comparison of fitted model specifications."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import metrics as _metrics
from .data import Dataset, SplitPlan, split
from .fit import FitConfig, FittedModel, fit, predict

MEASURES = (("MAE+", "mae_plus"), ("MSE+", "mse_plus"), ("H", "h_measure"), ("AUC", "auc"))
_WORDS = {2: "Two", 3: "Three", 4: "Four", 5: "Five"}


def model_label(link):
    if link.kind == "gev":
        return f"BGEVA(tau={link.tau:g})"
    return {"loglog": "log-log", "logit": "logistic"}[link.kind]


def time_plan(train_years, test_years):
    """Time split labelled as "Out-of-time 2009" or "Two years: 2009-2010"."""
    test_years = sorted(int(y) for y in test_years)
    if len(test_years) == 1:
        label = f"Out-of-time {test_years[0]}"
    else:
        word = _WORDS.get(len(test_years), str(len(test_years)))
        label = f"{word} years: {test_years[0]}-{test_years[-1]}"
    return SplitPlan.time_cutoff(train_years, test_years, label=label)


@dataclass
class ValidationReport:
    rows: list = field(default_factory=list)  # dicts: split, model, metrics...
    models: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def value(self, split_label, model, key):
        for r in self.rows:
            if r["split"] == split_label and r["model"] == model:
                return r[key]
        raise KeyError((split_label, model))

    def format(self):
        w0 = max([len(s) for s in self.splits] + [22])
        wm = max([len(m) for m in self.models] + [9])
        head = f"{'Type of control sample':<{w0}}  {'measure':<7}" + "".join(
            f"  {m:>{wm}}" for m in self.models)
        lines = [head, "-" * len(head)]
        for s in self.splits:
            for i, (label, key) in enumerate(MEASURES):
                cells = "".join(f"  {self.value(s, m, key):>{wm}.3f}" for m in self.models)
                lines.append(f"{s if i == 0 else '':<{w0}}  {label:<7}{cells}")
            lines.append("-" * len(head))
        return "\n".join(lines) + "\n"

    def jsonl(self):
        out = [json.dumps({"record": "config", **self.config}, sort_keys=True)]
        out += [json.dumps({"record": "metrics", **r}, sort_keys=True) for r in self.rows]
        return "\n".join(out) + "\n"


def score_split(model: FittedModel, data: Dataset, plan: SplitPlan, refit=True,
                severity_ratio=0.01, cfg: FitConfig | None = None):
    """Metrics of one model specification on one split.

    With ``refit`` the model's terms, link and configuration are re-estimated
    on the training part; otherwise the stored coefficients are scored as is.
    """
    train, test = split(data, plan)
    if refit:
        model = fit(model.terms, train, model.link, cfg or model.config)
    pd = predict(model, test)
    return _metrics.evaluate(test.response, pd, severity_ratio, plan.label), model


def validate(models, data: Dataset, plans, refit=True, severity_ratio=0.01, labels=None):
    """Score every model on every split; returns a :class:`ValidationReport`."""
    labels = list(labels) if labels else [model_label(m.link) for m in models]
    if len(set(labels)) != len(labels):
        labels = [f"{lab}#{i + 1}" for i, lab in enumerate(labels)]
    rep = ValidationReport(models=labels, splits=[p.label for p in plans],
                           config={"refit": refit, "severity_ratio": severity_ratio,
                                   "h_measure_cost_density": "Beta(2, 1 + 1/SR)",
                                   "plans": [p.__dict__ for p in plans]})
    for plan in plans:
        for label, model in zip(labels, models):
            m, refitted = score_split(model, data, plan, refit, severity_ratio)
            rep.rows.append({"split": plan.label, "model": label, "link": str(model.link),
                             "converged": refitted.converged, **m.to_dict()})
    return rep
