"""Student-t convergence traces for both L-kernels.

Writes one CSV per kernel with per-iteration estimates (one row per
iteration per seed) and prints paired comparisons at a few iterations.
"""

import argparse

import numpy as np

from smcnuts.cli import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--offset", type=float, default=10.0)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--out", default="results/student_t")
    args = ap.parse_args()

    rows = {}
    for lk in ("near-optimal", "symmetric"):
        cfg = ExperimentConfig(
            experiment="student-t", n=200, t=50, repeats=args.repeats, lkernel=lk, offset=args.offset, out=f"{args.out}_c{args.offset:g}/{lk}"
        )
        rows[lk], summary = run_experiment(cfg)
        print(f"{lk:13s} first iteration with all errors < 0.5: {summary['first_iteration_below']['iterations']}")

    def err(lk, seed, it, field):
        r = next(r for r in rows[lk] if r.seed == seed and r.iteration == it)
        return np.abs(np.array(getattr(r, field)) - np.array([0, 2, 4, 6, 8]))

    for field in ("recycled", "estimate"):
        for it in (5, 10, 20, 50):
            wins = sum(err("near-optimal", s, it, field).mean() <= err("symmetric", s, it, field).mean() for s in range(args.repeats))
            below = sum(np.all(err("near-optimal", s, it, field) < 0.5) for s in range(args.repeats))
            print(f"{field:9s} it={it:2d}: near-optimal <= symmetric in {wins}/{args.repeats}, near-optimal all < 0.5 in {below}/{args.repeats}")


if __name__ == "__main__":
    main()
