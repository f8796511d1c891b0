"""Command-line interface: ``bgeva {simulate,fit,predict,validate,plot}``.

Exit codes: 0 success, 2 data error, 3 convergence failure (the archive is
still written, marked ``converged=false``), 4 configuration error.

Every option can also come from a ``key=value`` config file given with
``--config``; explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import archive, links
from .data import DataError, SimulationConfig, SplitPlan, ingest_csv, simulate, stratified_subsample
from .fit import FitConfig, FitError, fit, fit_tau_grid, predict_detail
from .inference import demote_linear_smooths, smooth_ci, summarize
from .likelihood import parse_terms
from .selection import backward_select
from .splines import BasisError
from .svgplot import write_svg
from .validation import time_plan, validate

EXIT_OK, EXIT_DATA, EXIT_CONVERGENCE, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("bgeva")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --- config helpers ----------------------------------------------------------------


def read_config(path):
    """Parse a ``key=value`` file (``#`` comments, blank lines ignored)."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{no}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _floats(text):
    if text is None or text == "":
        return ()
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(","))


def _names(text):
    if not text:
        return []
    if isinstance(text, (list, tuple)):
        return list(text)
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _years(text):
    """``2006-2008`` or ``2006,2007`` -> list of ints."""
    out = []
    for part in str(text).split(","):
        a, sep, b = part.strip().partition("-")
        out.extend(range(int(a), int(b) + 1) if sep else [int(a)])
    return out


_FIT_FIELDS = {f.name: f for f in fields(FitConfig)}


def fit_config(args, extra):
    """FitConfig from flags plus any FitConfig keys present in the config file."""
    kw = {}
    for key, value in extra.items():
        if key in _FIT_FIELDS and key not in ("tau_grid", "fixed_lambdas", "log10_lambda_range"):
            typ = type(getattr(FitConfig(), key))
            kw[key] = typ(value)
    if getattr(args, "tau_grid", None):
        kw["tau_grid"] = _floats(args.tau_grid)
    if getattr(args, "fixed_lambdas", None):
        kw["fixed_lambdas"] = _floats(args.fixed_lambdas)
    for key in ("max_outer", "max_inner", "tau_metric", "severity_ratio", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            kw[key] = v
    try:
        return FitConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --- subcommands ---------------------------------------------------------------


def _load_data(args):
    return ingest_csv(args.data, response=args.response, year=args.year)


def _terms(args, data):
    smooth, linear = _names(args.smooth), _names(args.linear)
    if not smooth and not linear:
        smooth = list(data.names)
    unknown = [c for c in smooth + linear if c not in data.names]
    if unknown:
        raise DataError(f"unknown covariate(s): {unknown}")
    return parse_terms(smooth=smooth, linear=linear, k=args.k, basis=args.basis,
                       penalty_order=args.penalty_order)


def _link(text, tau=None):
    if tau is not None:
        if not text.strip().lower().startswith("gev"):
            raise ConfigError("--tau only applies to --link gev")
        text = f"gev:{tau}"
    try:
        return links.LinkKind.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_reports(stem, text, records):
    Path(f"{stem}.txt").write_text(text, encoding="utf-8")
    with open(f"{stem}.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_fit(args, extra):
    cfg = fit_config(args, extra)
    data = _load_data(args)
    if args.subsample is not None:
        data = stratified_subsample(data, args.subsample, cfg.seed)
    terms = _terms(args, data)
    lk = _link(args.link, args.tau)
    records = [{"record": "config", "link": str(lk), "terms": [archive.term_dict(t) for t in terms],
                "fit_config": cfg.to_dict(), "data": str(args.data), "dropped_rows": data.dropped}]
    sections = []
    if args.tau_grid:
        plan = SplitPlan.holdout(args.holdout, cfg.seed)
        model, table = fit_tau_grid(terms, data, plan, cfg)
        sections.append(_tau_table(table, cfg.tau_metric))
        records += [{"record": "tau_grid", **row} for row in table]
        # the winning specification is refitted on all rows
        model = fit(terms, data, model.link, cfg)
    elif args.backward_select:
        model, trace = backward_select(terms, data, lk, cfg, alpha=args.alpha,
                                       demote=not args.no_demote)
        records.append({"record": "selection", **trace.to_dict()})
        sections.append(_selection_text(trace, args.alpha))
    else:
        model = fit(terms, data, lk, cfg)
        if not args.no_demote:
            model, low = demote_linear_smooths(model, data, cfg)
            if low:
                records.append({"record": "demoted", "terms": low})
                sections.append("Smooths with edf ~ 1 refitted as linear terms: " + ", ".join(low))
    summary = summarize(model)
    text = summary.format()
    if sections:
        text = text + "\n\n" + "\n\n".join(sections)
    records.append({"record": "summary", **summary.to_dict()})
    prov = archive.provenance(args.data, cfg.seed)
    archive.save(model, args.out, prov)
    stem = args.report or str(Path(args.out).with_suffix(""))
    _write_reports(stem, text + "\n", records)
    if args.plots:
        out = Path(args.plots)
        out.mkdir(parents=True, exist_ok=True)
        from .figures import smooth_panels

        for name in model.design.smooth_names:
            write_svg(smooth_ci(model, name), out / f"{name}.svg", rug=data.column(name))
        smooth_panels(model, out / "smooths.png", data)
    print(text)
    if not model.converged:
        print("warning: fit did not converge; archive marked converged=false", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _tau_table(table, metric):
    lines = [f"{'tau':>7}  {'MAE+':>7}  {'MSE+':>7}  {'H':>7}  {'AUC':>7}  selected"]
    for r in table:
        if "error" in r:
            lines.append(f"{r['tau']:>7g}  failed: {r['error']}")
            continue
        lines.append(f"{r['tau']:>7g}  {r['mae_plus']:>7.3f}  {r['mse_plus']:>7.3f}  "
                     f"{r['h_measure']:>7.3f}  {r['auc']:>7.3f}  {'*' if r['selected'] else ''}")
    lines.append(f"(tau selected by {metric} on the held-out rows)")
    return "\n".join(lines)


def _selection_text(trace, alpha):
    lines = [f"Backward selection at alpha = {alpha:g}"]
    for s in trace.steps:
        what = "kept (refit failed)" if s.reinstated else "dropped"
        lines.append(f"  {what:<20} {s.dropped:<20} p = {s.p_value:.4g}")
    if not trace.steps:
        lines.append("  no terms dropped")
    lines.append("  final terms: " + ", ".join(trace.final_terms))
    return "\n".join(lines)


def cmd_predict(args, extra):
    model = archive.load(args.model)
    data = _load_data(args)
    pr = predict_detail(model, data)
    df = data.to_frame(args.response)
    df["pd"] = pr.pd
    df["eta"] = pr.eta
    df["extrapolated"] = pr.extrapolated.astype(int)
    df["clamped"] = pr.clamped.astype(int)
    df.to_csv(args.out, index=False, float_format="%.17g")
    return EXIT_OK


def _plans(args, seed):
    plans = []
    if args.holdout is not None:
        plans.append(SplitPlan.holdout(args.holdout, seed))
    for spec in args.time or []:
        train, sep, test = spec.partition(":")
        if not sep:
            raise ConfigError(f"--time expects TRAIN:TEST years, got {spec!r}")
        plans.append(time_plan(_years(train), _years(test)))
    if not plans:
        raise ConfigError("give --holdout and/or --time")
    return plans


def cmd_validate(args, extra):
    models = [archive.load(p) for p in args.models]
    data = _load_data(args)
    seed = args.seed if args.seed is not None else 0
    plans = _plans(args, seed)
    rep = validate(models, data, plans, refit=not args.no_refit,
                   severity_ratio=args.severity_ratio or 0.01)
    text = rep.format()
    if args.out:
        Path(f"{args.out}.txt").write_text(text, encoding="utf-8")
        Path(f"{args.out}.jsonl").write_text(rep.jsonl(), encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_plot(args, extra):
    model = archive.load(args.model)
    if args.term not in model.design.smooth_names:
        raise ConfigError(f"{args.term!r} is not a smooth term of the model "
                          f"(smooths: {', '.join(model.design.smooth_names) or 'none'})")
    band = smooth_ci(model, args.term, grid_size=args.grid, level=args.level)
    rug = None
    if args.data:
        rug = ingest_csv(args.data, response=args.response, year=args.year).column(args.term)
    write_svg(band, args.out, rug=rug)
    if args.png:
        from .figures import smooth_panels

        smooth_panels(model, args.png)
    return EXIT_OK


def cmd_simulate(args, extra):
    if not 0 < args.rate < 1:
        raise ConfigError("--rate must lie in (0, 1)")
    lk = _link(args.link, args.tau)
    nonlinear = []
    for item in _names(args.shapes):
        shape, _, amp = item.partition(":")
        nonlinear.append((shape, float(amp or 1.0)))
    try:
        cfg = SimulationConfig(args.n, lk, linear=_floats(args.linear), nonlinear=tuple(nonlinear),
                               noise=args.noise, target_rate=args.rate, seed=args.seed)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    sim = simulate(cfg)
    df = sim.data.to_frame()
    if args.years:
        yrs = _years(args.years)
        df.insert(1, "year", np.repeat(yrs, -(-sim.data.n // len(yrs)))[: sim.data.n])
    df.to_csv(args.out, index=False, float_format="%.17g")
    # no-effect covariates get an explicit zero column
    truth = {f"f_{k}": sim.components.get(k, np.zeros(sim.data.n)) for k in sim.data.names}
    truth_df = df[["y"]].copy()
    truth_df["eta"] = sim.eta
    for k, v in truth.items():
        truth_df[k] = v
    truth_path = Path(args.out).with_suffix(".truth.csv")
    truth_df.to_csv(truth_path, index=False, float_format="%.17g")
    Path(args.out).with_suffix(".truth.json").write_text(
        json.dumps({"intercept": sim.intercept, "link": str(lk), "seed": args.seed,
                    "linear": list(cfg.linear), "nonlinear": [list(t) for t in cfg.nonlinear],
                    "noise": cfg.noise, "target_rate": cfg.target_rate,
                    "achieved_rate": float(sim.data.response.mean())}, indent=1) + "\n",
        encoding="utf-8")
    print(f"wrote {args.out} (n={sim.data.n}, positives={sim.data.n_pos}, "
          f"rate={sim.data.response.mean():.4f}) and {truth_path}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------


def _data_args(p, required=True):
    p.add_argument("--data", required=required, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column (0/1)")
    p.add_argument("--year", default=None, help="optional 4-digit year column")


def build_parser():
    parser = _Parser(prog="bgeva", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and write an archive + summary")
    _data_args(p)
    p.add_argument("--smooth", help="comma-separated covariates with smooth effects")
    p.add_argument("--linear", help="comma-separated covariates with linear effects")
    p.add_argument("--link", default="gev:-0.25", help="logit, loglog, gev (with --tau) or gev:<tau>")
    p.add_argument("--tau", type=float, help="tail parameter when --link gev")
    p.add_argument("--k", type=int, default=20, help="basis dimension per smooth")
    p.add_argument("--basis", default="tp", choices=("tp", "cr"))
    p.add_argument("--penalty-order", type=int, default=2, choices=(1, 2))
    p.add_argument("--out", required=True, help="archive path (.json)")
    p.add_argument("--report", help="report stem; writes <stem>.txt and <stem>.jsonl")
    p.add_argument("--plots", help="directory for per-term SVG plots and a PNG overview")
    p.add_argument("--backward-select", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-demote", action="store_true",
                   help="keep smooths with edf ~ 1 as smooths")
    p.add_argument("--tau-grid", help='e.g. "-1,-0.75,-0.5,-0.25"; picks tau on a holdout')
    p.add_argument("--tau-metric", choices=("h_measure", "mae_plus"))
    p.add_argument("--holdout", type=float, default=0.10)
    p.add_argument("--subsample", type=float, help="choice-based sampling to this event rate")
    p.add_argument("--fixed-lambdas", help="comma-separated smoothing parameters")
    p.add_argument("--max-outer", type=int)
    p.add_argument("--max-inner", type=int)
    p.add_argument("--severity-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score a dataset with an archive")
    p.add_argument("--model", required=True)
    _data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="out-of-sample / out-of-time comparison")
    p.add_argument("--models", nargs="+", required=True, help="archives to compare")
    _data_args(p)
    p.add_argument("--holdout", type=float, help="random holdout fraction (e.g. 0.1)")
    p.add_argument("--time", action="append", help="TRAIN:TEST years, e.g. 2006-2008:2009-2010")
    p.add_argument("--no-refit", action="store_true", help="score stored coefficients as is")
    p.add_argument("--severity-ratio", type=float, default=0.01)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report stem; writes <stem>.txt and <stem>.jsonl")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="write a synthetic dataset and its truth sidecar")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--link", default="gev:-0.25")
    p.add_argument("--tau", type=float)
    p.add_argument("--linear", default="1.0", help="comma-separated linear coefficients")
    p.add_argument("--shapes", default="sine:1,bump:1",
                   help="comma-separated shape:amplitude (sine, bump, piecewise)")
    p.add_argument("--noise", type=int, default=0, help="number of no-effect covariates")
    p.add_argument("--years", help="assign rows to these years in blocks, e.g. 2006-2011")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="SVG plot of one smooth with its 95% band and rug")
    p.add_argument("--model", required=True)
    p.add_argument("--term", required=True)
    p.add_argument("--out", required=True)
    _data_args(p, required=False)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--png", help="also write a matplotlib overview of all smooths")
    p.set_defaults(func=cmd_plot)
    # --config is also accepted after the subcommand name
    for sp in sub.choices.values():
        sp.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return parser


# options whose values may begin with "-" (negative tau, comma lists)
_SIGNED = ("--tau", "--tau-grid", "--linear", "--fixed-lambdas")


def _glue_signed(argv):
    """Rewrite ``--tau-grid -1,-0.5`` as ``--tau-grid=-1,-0.5`` for argparse."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _SIGNED and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    argv = _glue_signed(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    extra = {}
    try:
        if known.config:
            extra = read_config(known.config)
            # file values become defaults of the chosen subcommand; flags still win
            for action in parser._subparsers._group_actions:
                for sp in action.choices.values():
                    dests = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in extra.items() if k in dests})
        args = parser.parse_args(argv)
        for name in ("k", "penalty_order", "n", "noise", "seed", "max_outer", "max_inner"):
            if isinstance(getattr(args, name, None), str):
                setattr(args, name, int(getattr(args, name)))
        for name in ("alpha", "holdout", "rate", "tau", "severity_ratio", "subsample", "level"):
            if isinstance(getattr(args, name, None), str):
                setattr(args, name, float(getattr(args, name)))
        for name in ("backward_select", "no_demote", "no_refit"):
            if isinstance(getattr(args, name, None), str):
                setattr(args, name, getattr(args, name).lower() in ("1", "true", "yes", "on"))
    except (ConfigError, ValueError) as exc:
        print(f"bgeva: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"bgeva: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, BasisError, links.DomainError, archive.ArchiveError, KeyError) as exc:
        print(f"bgeva: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"bgeva: fit failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
