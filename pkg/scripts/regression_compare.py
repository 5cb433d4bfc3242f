"""Count-regression comparison: NUTS at several (N, T) against the random walk.

Besides the error against the data-generating coefficients, each final
estimate is also scored against a long NUTS-MCMC estimate of the posterior
mean, which separates sampler error from the posterior's own bias.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from smcnuts.cli import ExperimentConfig, build_problem, run_experiment
from smcnuts.hamiltonian import MassMatrix, sample_momentum
from smcnuts.nuts import NutsConfig, nuts_propose

SETTINGS = [("nuts", 25, 100), ("nuts", 50, 100), ("nuts", 100, 100), ("nuts", 200, 200), ("random-walk", 50, 100), ("random-walk", 200, 200)]


def posterior_mean(model, n_draws, burn, step_size, seed=99):
    M = MassMatrix.identity(model.dim)
    cfg = NutsConfig(step_size=step_size)
    rng = np.random.default_rng(seed)
    x, acc = np.zeros(model.dim), []
    for i in range(n_draws + burn):
        x = nuts_propose(model, x, sample_momentum(M, rng), cfg, rng).x_new
        if i >= burn:
            acc.append(x)
    return np.mean(acc, axis=0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--rw-scale", type=float, default=0.1)
    ap.add_argument("--chain", type=int, default=11000)
    ap.add_argument("--out", default="results/regression_compare.csv")
    args = ap.parse_args()

    base = ExperimentConfig(experiment="poisson-lasso")
    model, truth = build_problem(base)
    pm = posterior_mean(model, args.chain, 1000, base.step_size)
    print(f"posterior-mean MSE against true coefficients: {np.mean((pm - truth) ** 2):.4f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["proposal", "n", "t", "median_mse_truth", "median_mse_posterior_mean", "median_runtime_ms"])
        for proposal, n, t in SETTINGS:
            cfg = ExperimentConfig(experiment="poisson-lasso", n=n, t=t, repeats=args.repeats, proposal=proposal, rw_scale=args.rw_scale)
            rows, summary = run_experiment(cfg, write=False)
            final = [np.array(r.recycled) for r in rows if r.iteration == t]
            vs_pm = float(np.median([np.mean((f - pm) ** 2) for f in final]))
            w.writerow([proposal, n, t, summary["median_final_mse"], vs_pm, summary["median_runtime_ms"]])
            print(f"{proposal:12s} N={n:4d} T={t:4d}  mse(truth)={summary['median_final_mse']:.4f}  mse(post mean)={vs_pm:.5f}")


if __name__ == "__main__":
    main()
