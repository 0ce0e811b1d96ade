"""Command-line entry point: ``genforest train | predict | simulate``.

Errors are reported as one ``Tag: message`` line on standard error with
exit status 1. Options may also come from a ``--config`` file of
``key=value`` lines; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .benchmark import QUANTILE_LEVELS, run_benchmark, write_rows
from .centering import AUTO_ROLES, CENTERING_OPTIONS, center
from .data import ColumnRoles, MODEL_KINDS, default_roles, load_csv, read_header
from .errors import (
    FeatureMismatch,
    FileError,
    ForestError,
    InvalidOptions,
    MissingRole,
    UnsupportedForModel,
)
from .forest import ForestOptions, load_forest, predict_many, save_forest, train_forest
from .inference import confidence_interval, variance_at
from .models import MomentModel
from .simulation import DesignSpec
from .tree import SplitOptions

_NEEDS = {
    "regression": (),
    "quantile": (),
    "partial_effect": ("treatment",),
    "instrumental": ("treatment", "instrument"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidOptions(message)


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _forest_flags(p, trees=2000):
    p.add_argument("--num-trees", type=int, default=trees)
    p.add_argument("--subsample-fraction", type=float, default=0.5)
    p.add_argument("--little-bag-size", type=int, default=4)
    p.add_argument("--min-node-size", type=int, default=5)
    p.add_argument("--balance-fraction", type=float, default=0.05)
    p.add_argument("--mtry-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genforest", description="Generalized random forests.")
    parser.add_argument("--config", default=None, help="key=value file; flags override it")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="fit a forest on a CSV and save it")
    t.add_argument("--model", choices=MODEL_KINDS, default="regression")
    t.add_argument("--data")
    t.add_argument("--features", type=_names, default=None)
    t.add_argument("--outcome", default=None)
    t.add_argument("--treatment", default=None)
    t.add_argument("--instrument", default=None)
    t.add_argument("--quantiles", type=_floats, default=(0.5,))
    t.add_argument("--center", choices=("none", "auto"), default="none")
    t.add_argument("--out")
    _forest_flags(t)

    p = sub.add_parser("predict", help="predict with a saved forest")
    p.add_argument("--forest")
    p.add_argument("--data")
    p.add_argument("--features", type=_names, default=None)
    p.add_argument("--ci", action="store_true")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", default=None, help="output CSV (default: standard output)")

    s = sub.add_parser("simulate", help="run the simulation benchmark")
    s.add_argument("--design")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--p", type=int, default=10)
    s.add_argument("--confounding", action=argparse.BooleanOptionalAction, default=False)
    s.add_argument("--heterogeneity", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--omega", type=float, default=1.0)
    s.add_argument("--kappa-tau", type=int, default=2)
    s.add_argument("--additive", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--nuisance", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--quantiles", type=_floats, default=QUANTILE_LEVELS)
    s.add_argument("--test-points", type=int, default=1000)
    s.add_argument("--ci", action="store_true")
    s.add_argument("--ci-points", type=int, default=None)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--out", default=None, help="output CSV (default: standard output)")
    _forest_flags(s)
    return parser


# ---------------------------------------------------------------------------
# configuration


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidOptions(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for k, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InvalidOptions(f"{path}:{k}: expected key=value")
                key, value = line.split("=", 1)
                out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    except OSError as exc:
        raise FileError(str(exc)) from exc
    return out


def _apply_config(sub: argparse.ArgumentParser, config: dict):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in config.items():
        if key not in actions:
            raise InvalidOptions(f"unknown configuration key {key!r}")
        a = actions[key]
        if a.nargs == 0 or isinstance(a, argparse.BooleanOptionalAction):
            defaults[key] = _parse_bool(raw)
        elif a.type is not None:
            try:
                defaults[key] = a.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise InvalidOptions(f"bad value for {key}: {raw!r}") from exc
        else:
            defaults[key] = raw
        if a.choices is not None and defaults[key] not in a.choices:
            raise InvalidOptions(f"{key} must be one of {list(a.choices)}")
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config and rest:
        subs = parser._subparsers._group_actions[0].choices
        if rest[0] in subs:
            _apply_config(subs[rest[0]], read_config(known.config))
    args = parser.parse_args(argv)
    if args.command is None:
        raise InvalidOptions("choose a command: train, predict or simulate")
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            raise InvalidOptions(f"{args.command} needs --{name.replace('_', '-')}")


def forest_options(args) -> ForestOptions:
    split = SplitOptions(
        min_node_size=args.min_node_size,
        balance_fraction=args.balance_fraction,
        mtry_rate=args.mtry_rate,
    )
    return ForestOptions(
        num_trees=args.num_trees,
        little_bag_size=args.little_bag_size,
        subsample_fraction=args.subsample_fraction,
        split=split,
        seed=args.seed,
    )


def _model(kind, quantiles) -> MomentModel:
    if kind == "quantile":
        return MomentModel.quantile(quantiles)
    return getattr(MomentModel, kind)()


def _config_dict(args) -> dict:
    # output paths are left out so that reruns elsewhere produce identical files
    return {k: v for k, v in sorted(vars(args).items()) if k != "out"}


# ---------------------------------------------------------------------------
# commands


def cmd_train(args, out=None):
    out = sys.stdout if out is None else out
    _require(args, "data", "out")
    for role in _NEEDS[args.model]:
        if getattr(args, role) is None:
            raise MissingRole(role)
    _require(args, "outcome")
    model = _model(args.model, args.quantiles)
    opts = forest_options(args)
    roles = _roles(args)
    t0 = time.perf_counter()
    data = load_csv(args.data, roles)
    centered = ()
    if args.center == "auto" and AUTO_ROLES[args.model]:
        centered = AUTO_ROLES[args.model]
        copts = replace(CENTERING_OPTIONS, split=opts.split, seed=opts.seed)
        data = center(data, centered, copts).data
    forest = train_forest(data, model, opts)
    extra = {"centered": list(centered), "config": _config_dict(args)}
    try:
        save_forest(forest, args.out, extra=extra)
    except OSError as exc:
        raise FileError(str(exc)) from exc
    wall = time.perf_counter() - t0
    summary = {
        "model": args.model,
        "n": data.n,
        "p": data.p,
        "num_trees": opts.num_trees,
        "subsample_size": opts.subsample_size(data.n),
        "little_bag_size": opts.little_bag_size,
        "seed": opts.seed,
        "centered": ",".join(centered) or "none",
        "wall_time": round(wall, 3),
        "out": args.out,
    }
    out.write(" ".join(f"{k}={v}" for k, v in summary.items()) + "\n")
    return forest


def _roles(args) -> ColumnRoles:
    header = _header(args.data)
    return default_roles(header, outcome=args.outcome, treatment=args.treatment,
                         instrument=args.instrument, features=args.features)


def _header(path):
    try:
        return read_header(path)
    except OSError as exc:
        raise FileError(str(exc)) from exc


def _query_features(args, forest):
    names = forest.data.feature_names
    if args.features is not None:
        if len(args.features) != len(names):
            raise FeatureMismatch(
                f"forest has {len(names)} features, --features lists {len(args.features)}")
        if tuple(args.features) != tuple(names):
            raise FeatureMismatch(f"feature names {list(args.features)} differ from {list(names)}")
    header = _header(args.data)
    missing = [c for c in names if c not in header]
    if missing:
        raise FeatureMismatch(f"prediction data lacks feature columns {missing}")
    return load_csv(args.data, ColumnRoles(features=names)).features


def cmd_predict(args, out=None):
    out = sys.stdout if out is None else out
    _require(args, "forest", "data")
    try:
        forest, _ = load_forest(args.forest)
    except OSError as exc:
        raise FileError(str(exc)) from exc
    model = forest.model
    if args.ci and not model.supports_curvature:
        raise UnsupportedForModel("confidence intervals are not available for quantile forests")
    X = _query_features(args, forest)
    if model.n_theta == 1:
        columns = ["estimate"]
    else:
        columns = [f"estimate_q{q:g}" for q in model.quantiles]
    if args.ci:
        if not 0.0 < args.level < 1.0:
            raise InvalidOptions(f"level must lie in (0, 1), got {args.level}")
        rows = []
        for x in X:
            v = variance_at(forest, x)
            ci = confidence_interval(v.estimate, v, args.level)
            rows.append([v.estimate.theta, v.std_err, ci.lower, ci.upper])
        columns += ["std_err", "ci_lower", "ci_upper"]
    else:
        theta, _ = predict_many(forest, X)
        rows = np.asarray(theta).reshape(X.shape[0], -1).tolist()
    _emit(args, columns, rows, out)
    return rows


def _emit(args, columns, rows, out):
    fh = out
    own = args.out is not None
    if own:
        try:
            fh = open(args.out, "w", newline="", encoding="utf-8")
        except OSError as exc:
            raise FileError(str(exc)) from exc
    try:
        fh.write("# config: " + json.dumps(_config_dict(args), sort_keys=True, default=str) + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([format(float(v), ".17g") for v in r])
    finally:
        if own:
            fh.close()


def cmd_simulate(args, out=None):
    out = sys.stdout if out is None else out
    _require(args, "design")
    spec = DesignSpec(
        kind=args.design,
        n=args.n,
        p=args.p,
        seed=args.seed,
        confounding=args.confounding,
        heterogeneity=args.heterogeneity,
        omega=args.omega,
        kappa_tau=args.kappa_tau,
        additive=args.additive,
        nuisance=args.nuisance,
    )
    if args.reps < 1:
        raise InvalidOptions("reps must be at least 1")
    rows = run_benchmark(
        spec,
        args.reps,
        options=forest_options(args),
        test_points=args.test_points,
        ci=args.ci,
        ci_points=args.ci_points,
        level=args.level,
        quantiles=args.quantiles,
        progress=lambda r: print(f"rep {r['rep']} {r['method']} mse={r['mse']:.4g}",
                                 file=sys.stderr),
    )
    target = args.out if args.out is not None else out
    try:
        write_rows(rows, target, _config_dict(args))
    except OSError as exc:
        raise FileError(str(exc)) from exc
    return rows


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "simulate": cmd_simulate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except ForestError as exc:
        print(str(exc).splitlines()[0], file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
