"""Replicated simulation runs producing MSE / coverage rows."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import replace
from typing import Iterable, Optional

import numpy as np

from .centering import CENTERING_OPTIONS, center
from .errors import InvalidOptions
from .forest import ForestOptions, predict_many, train_forest
from .inference import confidence_interval, variance_at
from .models import MomentModel
from .simulation import (
    DesignSpec,
    coverage,
    diagnostic_moment_check,
    generate,
    mse,
)

QUANTILE_LEVELS = (0.1, 0.5, 0.9)

FIELDS = (
    "design", "rep", "method", "q", "n", "p", "params",
    "mse", "mse_x10", "coverage", "wall_time",
)


def methods_for(kind: str) -> tuple:
    if kind.startswith("quantile"):
        return ("grf", "regression-split")
    return ("grf", "centered-grf")


def _effect_model(kind):
    return MomentModel.partial_effect() if kind == "causal" else MomentModel.instrumental()


def fit_method(sim, kind, method, opts: ForestOptions, quantiles=QUANTILE_LEVELS, workers=None):
    data = sim.data
    if kind.startswith("quantile"):
        model = MomentModel.quantile(quantiles)
        split = MomentModel.regression() if method == "regression-split" else None
        return train_forest(data, model, opts, split_model=split, workers=workers)
    model = _effect_model(kind)
    if method == "centered-grf":
        roles = ("outcome", "treatment") if kind == "causal" else (
            "outcome", "treatment", "instrument")
        copts = replace(CENTERING_OPTIONS, seed=opts.seed)
        data = center(data, roles, copts, workers=workers).data
    return train_forest(data, model, opts, workers=workers)


def run_benchmark(
    spec: DesignSpec,
    reps: int,
    options: Optional[ForestOptions] = None,
    test_points: int = 1000,
    ci: bool = False,
    ci_points: Optional[int] = None,
    level: float = 0.95,
    methods: Optional[Iterable[str]] = None,
    quantiles=QUANTILE_LEVELS,
    workers=None,
    progress=None,
):
    """Run ``reps`` replications and return per-replication plus aggregate rows.

    ``options`` is the forest template; replication ``r`` uses the design
    seed ``spec.seed + 1000 * r`` for both the data and the forest.
    """
    options = options or ForestOptions()
    if reps < 1:
        raise InvalidOptions("reps must be at least 1")
    kind = spec.kind
    methods = tuple(methods or methods_for(kind))
    if ci and kind.startswith("quantile"):
        raise InvalidOptions("confidence intervals are not available for quantile designs")
    params = spec.params()
    if kind.startswith("iv_diagnostic"):
        params["moment_check"] = diagnostic_moment_check(kind, seed=spec.seed)
    rows = []
    for rep in range(reps):
        rspec = replace(spec, seed=spec.seed + 1000 * rep)
        sim = generate(rspec)
        params["noise"] = sim.info or None
        test_rng = np.random.default_rng([spec.seed, rep, 7])
        Xt = sim.sample_x(test_points, test_rng)
        opts = replace(options, seed=rspec.seed)
        for method in methods:
            t0 = time.perf_counter()
            forest = fit_method(sim, kind, method, opts, quantiles, workers)
            theta, _ = predict_many(forest, Xt, strict=False)
            cov = None
            if ci:
                k = Xt.shape[0] if ci_points is None else min(ci_points, Xt.shape[0])
                truth = sim.truth(Xt[:k])
                cis = [confidence_interval(v.estimate, v, level)
                       for v in (variance_at(forest, Xt[j]) for j in range(k))]
                cov = coverage(cis, truth)
            wall = time.perf_counter() - t0
            if kind.startswith("quantile"):
                for j, q in enumerate(quantiles):
                    err = mse(theta[:, j], sim.truth(Xt, q))
                    rows.append(_row(spec, rep, method, q, params, err, cov, wall))
            else:
                err = mse(theta, sim.truth(Xt))
                rows.append(_row(spec, rep, method, None, params, err, cov, wall))
            if progress:
                progress(rows[-1])
    return rows + aggregate(rows)


def _row(spec, rep, method, q, params, err, cov, wall):
    return {
        "design": spec.kind,
        "rep": rep,
        "method": method,
        "q": q,
        "n": spec.n,
        "p": spec.p,
        "params": json.dumps(params, sort_keys=True),
        "mse": err,
        "mse_x10": 10.0 * err,
        "coverage": cov,
        "wall_time": wall,
    }


def aggregate(rows):
    out = []
    keys = []
    for r in rows:
        k = (r["method"], r["q"])
        if k not in keys:
            keys.append(k)
    for method, q in keys:
        sub = [r for r in rows if r["method"] == method and r["q"] == q]
        covs = [r["coverage"] for r in sub if r["coverage"] is not None]
        agg = dict(sub[0])
        agg.update(
            rep="mean",
            mse=float(np.mean([r["mse"] for r in sub])),
            coverage=float(np.mean(covs)) if covs else None,
            wall_time=float(np.mean([r["wall_time"] for r in sub])),
        )
        agg["mse_x10"] = 10.0 * agg["mse"]
        out.append(agg)
    return out


def write_rows(rows, path_or_file, config: dict):
    """CSV with the resolved configuration as a leading ``#`` comment line."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        fh.write("# config: " + json.dumps(config, sort_keys=True, default=str) + "\n")
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in FIELDS})
    finally:
        if own:
            fh.close()
