"""Experiment harness and ``smcnuts`` command line.

``smcnuts run --config cfg.json [--n N --t T --seed S --lkernel L --proposal P --out DIR]``
executes ``repeats`` seeded runs and writes ``results.csv`` (one row per
iteration per run) and ``summary.json``. ``smcnuts gen-data`` writes the
count-regression dataset.

Exit codes: 0 success, 1 run aborted (all weights zero), 2 bad usage/config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .smc import GaussianInit, SMCAbort, SMCConfig, run
from .target import (
    GaussianTarget,
    PoissonLassoTarget,
    StudentTTarget,
    generate_regression_dataset,
    load_dataset,
    save_dataset,
)

log = logging.getLogger("smcnuts")

EXPERIMENTS = ("student-t", "poisson-lasso", "gaussian-sanity")

# per-experiment defaults applied where the config leaves a field as None
_DEFAULTS = {
    "student-t": dict(step_size=0.1, mean=[0.0, 2.0, 4.0, 6.0, 8.0], offset=5.0),
    "poisson-lasso": dict(step_size=0.05, offset=0.0),
    "gaussian-sanity": dict(step_size=0.1, mean=[1.0, -2.0, 0.5], offset=0.0),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "gaussian-sanity"
    n: int = 200
    t: int = 20
    seed: int = 0
    repeats: int = 1
    step_size: float | None = None
    max_depth: int = 10
    lkernel: str = "symmetric"
    proposal: str = "nuts"
    rw_scale: float = 0.1
    resampling: str = "systematic"
    recycling: bool = True
    weighted_fit: bool = False
    # target parameters
    dof: float = 5.0
    mean: list[float] | None = None
    z: float = 0.5
    gamma: float = 1.0
    n_obs: int = 100
    data_seed: int = 0
    data_path: str | None = None
    # initial proposal N(offset * 1, init_std^2 I)
    offset: float | None = None
    init_std: float = 1.0
    record_timing: bool = True
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.n < 2 or self.t < 1 or self.repeats < 1:
            raise ConfigError("need n >= 2, t >= 1 and repeats >= 1")
        if self.lkernel not in ("symmetric", "near-optimal"):
            raise ConfigError(f"unknown lkernel {self.lkernel!r}")
        if self.proposal not in ("nuts", "random-walk"):
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        for k, v in _DEFAULTS[self.experiment].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.mean is None:
            self.mean = [0.0]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def build_problem(cfg: ExperimentConfig):
    """Return ``(model, truth)`` for the configured experiment."""
    if cfg.experiment == "student-t":
        model = StudentTTarget(cfg.mean, cfg.dof)
        return model, model.mean.copy()
    if cfg.experiment == "gaussian-sanity":
        model = GaussianTarget(cfg.mean, 1.0)
        return model, model.mean.copy()
    if cfg.data_path:
        data, _ = load_dataset(cfg.data_path)
    else:
        data = generate_regression_dataset(cfg.data_seed, n=cfg.n_obs)
    return PoissonLassoTarget.from_data(data, z=cfg.z, gamma=cfg.gamma), data.beta_true.copy()


def sampler_config(cfg: ExperimentConfig, seed: int) -> SMCConfig:
    return SMCConfig(
        n_particles=cfg.n,
        n_iterations=cfg.t,
        seed=seed,
        step_size=cfg.step_size,
        max_depth=cfg.max_depth,
        lkernel=cfg.lkernel,
        proposal=cfg.proposal,
        rw_scale=cfg.rw_scale,
        init=GaussianInit(cfg.offset, cfg.init_std),
        resampling=cfg.resampling,
        recycling=cfg.recycling,
        weighted_fit=cfg.weighted_fit,
    )


@dataclass
class ResultRow:
    experiment: str
    seed: int
    iteration: int
    ess: float
    resampled: bool
    estimate: list[float]
    recycled: list[float]
    abs_error: list[float]
    mse: float
    wall_ms: float

    def to_csv(self) -> list:
        return (
            [self.experiment, self.seed, self.iteration, repr(self.ess), int(self.resampled)]
            + [repr(v) for v in self.estimate + self.recycled + self.abs_error]
            + [repr(self.mse), repr(self.wall_ms)]
        )


def csv_header(dim: int) -> list[str]:
    cols = ["experiment", "seed", "iteration", "ess", "resampled"]
    for prefix in ("est", "rec", "abserr"):
        cols += [f"{prefix}_{d}" for d in range(dim)]
    return cols + ["mse", "wall_ms"]


def read_results(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(h.startswith("est_") for h in header)
        rows = []
        for r in reader:
            vals = [float(v) for v in r[5 : 5 + 3 * dim]]
            rows.append(
                ResultRow(
                    experiment=r[0],
                    seed=int(r[1]),
                    iteration=int(r[2]),
                    ess=float(r[3]),
                    resampled=bool(int(r[4])),
                    estimate=vals[:dim],
                    recycled=vals[dim : 2 * dim],
                    abs_error=vals[2 * dim :],
                    mse=float(r[-2]),
                    wall_ms=float(r[-1]),
                )
            )
    return rows


def _rows_for_run(cfg, seed, est, truth) -> list[ResultRow]:
    rows = []
    for k in range(cfg.t):
        err = np.abs(est.recycled[k] - truth)
        rows.append(
            ResultRow(
                experiment=cfg.experiment,
                seed=seed,
                iteration=k + 1,
                ess=float(est.ess[k]),
                resampled=bool(est.resampled[k]),
                estimate=[float(v) for v in est.means[k]],
                recycled=[float(v) for v in est.recycled[k]],
                abs_error=[float(v) for v in err],
                mse=float(np.mean(err**2)),
                wall_ms=float(est.wall_ms[k]) if cfg.record_timing else 0.0,
            )
        )
    return rows


def summarize(cfg: ExperimentConfig, rows: list[ResultRow], threshold: float = 0.5) -> dict:
    seeds = sorted({r.seed for r in rows})
    final = [next(r for r in rows if r.seed == s and r.iteration == cfg.t) for s in seeds]
    mse = np.array([r.mse for r in final])
    first_hit = []
    for s in seeds:
        hit = [r.iteration for r in rows if r.seed == s and max(r.abs_error) < threshold]
        first_hit.append(hit[0] if hit else None)
    return {
        "experiment": cfg.experiment,
        "config": dataclasses.asdict(cfg),
        "seeds": seeds,
        "final_mse": mse.tolist(),
        "median_final_mse": float(np.median(mse)),
        "iqr_final_mse": [float(np.percentile(mse, 25)), float(np.percentile(mse, 75))],
        "final_max_abs_error": [max(r.abs_error) for r in final],
        "first_iteration_below": {"threshold": threshold, "iterations": first_hit},
        "median_runtime_ms": float(np.median([r.wall_ms for r in final])),
    }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> tuple[list[ResultRow], dict]:
    """Run ``cfg.repeats`` seeded repetitions; seeds are ``seed, seed+1, ...``."""
    model, truth = build_problem(cfg)
    rows: list[ResultRow] = []
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        est = run(model, sampler_config(cfg, seed))
        rows += _rows_for_run(cfg, seed, est, truth)
        log.info("%s seed=%d final mse=%.4g", cfg.experiment, seed, rows[-1].mse)
    summary = summarize(cfg, rows)
    if write:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header(len(truth)))
            for row in rows:
                w.writerow(row.to_csv())
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return rows, summary


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smcnuts", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="run an experiment from a JSON config")
    rp.add_argument("--config", help="JSON file with ExperimentConfig fields")
    rp.add_argument("--experiment", choices=EXPERIMENTS)
    rp.add_argument("--n", type=int)
    rp.add_argument("--t", type=int)
    rp.add_argument("--seed", type=int)
    rp.add_argument("--repeats", type=int)
    rp.add_argument("--step-size", dest="step_size", type=float)
    rp.add_argument("--lkernel", choices=("symmetric", "near-optimal"))
    rp.add_argument("--proposal", choices=("nuts", "random-walk"))
    rp.add_argument("--out")

    gp = sub.add_parser("gen-data", help="write the count-regression dataset")
    gp.add_argument("--seed", type=int, required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--n-obs", type=int, default=100)
    gp.add_argument("--z", type=float, default=0.5)
    gp.add_argument("--gamma", type=float, default=1.0)
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "gen-data":
        data = generate_regression_dataset(args.seed, n=args.n_obs)
        csv_path, _ = save_dataset(data, args.out, z=args.z, gamma=args.gamma)
        print(csv_path)
        return 0

    try:
        raw = json.loads(Path(args.config).read_text()) if args.config else {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose") and v is not None}
        cfg = ExperimentConfig.from_dict({**raw, **overrides})
    except (OSError, json.JSONDecodeError, ConfigError, ValueError) as exc:
        print(f"smcnuts: error: {exc}", file=sys.stderr)
        return 2

    try:
        _, summary = run_experiment(cfg)
    except SMCAbort as exc:
        print(f"smcnuts: run aborted: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({k: summary[k] for k in ("experiment", "median_final_mse", "iqr_final_mse", "median_runtime_ms")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
