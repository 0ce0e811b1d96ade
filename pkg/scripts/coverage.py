"""Coverage of 95% intervals from centered instrumental forests.

Reports two coverages per setting: of the true effect, and of the expected
forest prediction (estimated by averaging tau-hat over the replications at
a fixed set of test points).

    python scripts/coverage.py --reps 10 --num-trees 2000 --p 6 --n 2000
"""

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from genforest.centering import CENTERING_OPTIONS, center
from genforest.forest import ForestOptions, train_forest
from genforest.inference import confidence_interval, variance_at
from genforest.models import MomentModel
from genforest.simulation import DesignSpec, generate


def run(spec, reps, points, opts, level):
    Xt = generate(spec).sample_x(points, np.random.default_rng([spec.seed, 1]))
    truth = generate(spec).truth(Xt)
    est, cis = np.zeros((reps, points)), []
    for rep in range(reps):
        sim = generate(replace(spec, seed=spec.seed + rep))
        data = center(sim.data, ("outcome", "treatment", "instrument"),
                      replace(CENTERING_OPTIONS, seed=rep)).data
        forest = train_forest(data, MomentModel.instrumental(), replace(opts, seed=rep))
        var = [variance_at(forest, x) for x in Xt]
        est[rep] = [v.estimate.theta for v in var]
        cis.append([confidence_interval(v.estimate, v, level) for v in var])
    expected = est.mean(axis=0)
    cover_truth = np.mean([truth[j] in cis[r][j] for r in range(reps) for j in range(points)])
    cover_mean = np.mean([expected[j] in cis[r][j] for r in range(reps) for j in range(points)])
    return float(cover_truth), float(cover_mean)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--points", type=int, default=50)
    ap.add_argument("--num-trees", type=int, default=2000)
    ap.add_argument("--little-bag-size", type=int, default=4)
    ap.add_argument("--kappa-tau", type=int, nargs="+", default=[2])
    ap.add_argument("--p", type=int, nargs="+", default=[6])
    ap.add_argument("--n", type=int, nargs="+", default=[2000])
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="coverage.csv")
    args = ap.parse_args(argv)

    opts = ForestOptions(num_trees=args.num_trees, little_bag_size=args.little_bag_size)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["additive", "kappa_tau", "p", "n", "coverage_truth", "coverage_expected"])
        for additive in (True, False):
            for kappa in args.kappa_tau:
                for p in args.p:
                    for n in args.n:
                        spec = DesignSpec("iv", n=n, p=p, seed=args.seed, omega=1.0,
                                          kappa_tau=kappa, additive=additive)
                        ct, ce = run(spec, args.reps, args.points, opts, args.level)
                        print(f"additive={additive!s:5s} kappa={kappa} p={p} n={n} "
                              f"truth={ct:.3f} expected={ce:.3f}", file=sys.stderr)
                        w.writerow([additive, kappa, p, n, ct, ce])


if __name__ == "__main__":
    main()
