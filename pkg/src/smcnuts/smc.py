"""SMC sampler with a NUTS (or random-walk) mutation and an L-kernel weight update.

Per iteration each particle draws ``p ~ N(0, M)`` and runs one NUTS
trajectory from its current position. The L-kernel is then fitted on the
whole ensemble, and every log-weight gets

    log pi(x_k) - log pi(x_{k-1}) + log L(-p_k | x_k) - log N(p_{k-1}; 0, M)

Leapfrog Jacobians are not computed because they cancel in this ratio;
``check_determinants=True`` computes them anyway as a debugging aid. After
the update the weights are normalised, the ESS is computed, and the ensemble
is resampled when the ESS falls below ``resample_threshold * N``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .hamiltonian import MassMatrix, PhasePoint, jacobian_determinant_check, momentum_log_density, sample_momentum
from .lkernel import make_lkernel
from .nuts import NutsConfig, nuts_propose_batch

__all__ = [
    "SMCAbort",
    "SMCConfig",
    "GaussianInit",
    "Ensemble",
    "StepInfo",
    "RunEstimates",
    "initialize",
    "smc_step",
    "normalize_and_ess",
    "systematic_resample",
    "multinomial_resample",
    "resample",
    "recycle",
    "random_walk_propose",
    "run",
]

log = logging.getLogger(__name__)


class SMCAbort(RuntimeError):
    """Every particle has zero weight; the target was not reached."""


@dataclass
class GaussianInit:
    """Independent normal initial proposal ``q0``."""

    mean: np.ndarray | float = 0.0
    std: np.ndarray | float = 1.0

    def _params(self, dim):
        mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (dim,))
        std = np.broadcast_to(np.asarray(self.std, dtype=float), (dim,))
        if np.any(std <= 0):
            raise ValueError("initial proposal std must be positive")
        return mean, std

    def sample(self, rng, n, dim):
        mean, std = self._params(dim)
        return mean + std * rng.standard_normal((n, dim))

    def log_density(self, x):
        x = np.atleast_2d(x)
        mean, std = self._params(x.shape[1])
        r = (x - mean) / std
        return -0.5 * np.sum(r * r, axis=1) - np.sum(np.log(std)) - 0.5 * x.shape[1] * math.log(2 * math.pi)


@dataclass
class SMCConfig:
    n_particles: int = 100
    n_iterations: int = 50
    seed: int = 0
    step_size: float = 0.1
    max_depth: int = 10
    mass_diag: np.ndarray | None = None
    lkernel: str = "symmetric"
    proposal: str = "nuts"
    rw_scale: float = 0.1
    init: GaussianInit = field(default_factory=GaussianInit)
    resample_threshold: float = 0.5
    resampling: str = "systematic"
    recycling: bool = True
    weighted_fit: bool = False
    check_determinants: bool = False

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.proposal not in ("nuts", "random-walk"):
            raise ValueError(f"unknown proposal {self.proposal!r}")
        if self.lkernel not in ("symmetric", "near-optimal"):
            raise ValueError(f"unknown L-kernel {self.lkernel!r}")
        if self.resampling not in ("systematic", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")

    def mass(self, dim: int) -> MassMatrix:
        return MassMatrix.identity(dim) if self.mass_diag is None else MassMatrix(self.mass_diag)


@dataclass
class Ensemble:
    """Particle population stored as arrays, one row per particle."""

    x: np.ndarray
    logp: np.ndarray
    log_w: np.ndarray
    rngs: list
    x_prev: np.ndarray | None = None
    p_initial: np.ndarray | None = None
    p_final: np.ndarray | None = None
    k: int = 1
    resample_threshold: float = 0.5

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass
class StepInfo:
    estimate: np.ndarray
    ess: float
    resampled: bool
    weights: np.ndarray
    log_increment: np.ndarray
    n_divergent: int = 0
    n_gradient_evals: int = 0
    # only filled when determinants are checked
    log_increment_with_det: np.ndarray | None = None


@dataclass
class RunEstimates:
    means: np.ndarray
    recycled: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    wall_ms: np.ndarray
    n_divergent: np.ndarray
    n_gradient_evals: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.recycled[-1]


def normalize_and_ess(log_w):
    """Return normalised weights and ``1 / sum(w^2)``."""
    log_w = np.asarray(log_w, dtype=float)
    if not np.any(np.isfinite(log_w)):
        raise SMCAbort("all particle weights are zero")
    w = np.exp(log_w - logsumexp(log_w))
    w /= w.sum()
    return w, 1.0 / float(np.sum(w * w))


def systematic_resample(w, rng) -> np.ndarray:
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def multinomial_resample(w, rng) -> np.ndarray:
    n = len(w)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right")


def resample(ens: Ensemble, w, rng, scheme: str = "systematic") -> np.ndarray:
    """Resample ``ens`` in place and reset weights to 1/N; returns ancestor indices."""
    idx = systematic_resample(w, rng) if scheme == "systematic" else multinomial_resample(w, rng)
    ens.x = ens.x[idx]
    ens.logp = ens.logp[idx]
    for name in ("x_prev", "p_initial", "p_final"):
        arr = getattr(ens, name)
        if arr is not None:
            setattr(ens, name, arr[idx])
    ens.log_w = np.full(ens.n, -math.log(ens.n))
    return idx


def recycle(estimates, ess) -> np.ndarray:
    """ESS-weighted average of per-iteration estimates."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    lam = np.asarray(ess, dtype=float)
    lam = lam / lam.sum()
    return lam @ estimates


def random_walk_propose(x, scale: float, rng) -> np.ndarray:
    """Gaussian random-walk move; the kernel is symmetric so it drops out of the weight."""
    x = np.asarray(x, dtype=float)
    return x + scale * rng.standard_normal(x.shape)


def initialize(model, init: GaussianInit, n: int, seed, resample_threshold: float = 0.5) -> tuple[Ensemble, np.random.Generator]:
    """Draw the first population from ``init`` and importance-weight it.

    Returns the ensemble and the ensemble-level generator used for
    resampling. Each particle slot gets its own generator spawned from
    ``seed``.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ens_ss, *particle_ss = ss.spawn(n + 1)
    ens_rng = np.random.default_rng(ens_ss)
    x = init.sample(ens_rng, n, model.dim)
    logp = np.array([model.logp_and_grad(xi)[0] for xi in x])
    logp = np.where(np.isnan(logp), -np.inf, logp)
    log_w = logp - init.log_density(x)
    ens = Ensemble(
        x=x,
        logp=logp,
        log_w=log_w,
        rngs=[np.random.default_rng(s) for s in particle_ss],
        resample_threshold=resample_threshold,
    )
    return ens, ens_rng


def _nuts_moves(ens, model, nuts_cfg, mass):
    p0 = np.array([sample_momentum(mass, r) for r in ens.rngs])
    x_new, p_new, logp_new = ens.x.copy(), p0.copy(), ens.logp.copy()
    steps = np.zeros(ens.n, dtype=int)
    # zero-weight particles stay where they are
    live = np.flatnonzero(np.isfinite(ens.logp))
    out = nuts_propose_batch(model, ens.x[live], p0[live], nuts_cfg, [ens.rngs[i] for i in live])
    x_new[live], p_new[live], logp_new[live], steps[live] = out.x_new, out.p_new, out.logp_new, out.n_steps
    return x_new, p0, p_new, logp_new, steps, int(out.divergent.sum()), int(out.n_gradient_evals.sum())


def _log_det_ratio(model, x_prev, p0, x_new, p_new, n_steps, h, mass):
    # log |d x_k / d p_{k-1}| - log |d x_{k-1} / d p_k| along the recorded path
    out = np.zeros(len(n_steps))
    for i, ns in enumerate(n_steps):
        if ns == 0:
            continue
        sgn = 1.0 if ns > 0 else -1.0
        fwd = jacobian_determinant_check(model, PhasePoint(x_prev[i], sgn * p0[i]), h, mass, abs(ns))
        rev = jacobian_determinant_check(model, PhasePoint(x_new[i], -p_new[i]), h, mass, abs(ns))
        out[i] = math.log(fwd) - math.log(rev)
    return out


def smc_step(ens: Ensemble, model, cfg: SMCConfig, lkernel, rng, nuts_cfg: NutsConfig | None = None) -> StepInfo:
    """Advance ``ens`` by one iteration in place."""
    mass = cfg.mass(ens.dim)
    n_div = n_grad = 0
    det_incr = None
    if cfg.proposal == "nuts":
        if nuts_cfg is None:
            nuts_cfg = NutsConfig(step_size=cfg.step_size, max_depth=cfg.max_depth, mass=mass)
        x_new, p0, p_new, logp_new, steps, n_div, n_grad = _nuts_moves(ens, model, nuts_cfg, mass)
        w_prev, _ = normalize_and_ess(ens.log_w)
        lkernel.prepare(-p_new, x_new, weights=w_prev)
        with np.errstate(invalid="ignore"):
            log_incr = logp_new - ens.logp + lkernel.log_density(-p_new, x_new) - momentum_log_density(p0, mass)
        if cfg.check_determinants:
            det_incr = log_incr + _log_det_ratio(model, ens.x, p0, x_new, p_new, steps, nuts_cfg.step_size, mass)
        ens.p_initial, ens.p_final = p0, p_new
    else:
        x_new = np.array([random_walk_propose(ens.x[i], cfg.rw_scale, ens.rngs[i]) for i in range(ens.n)])
        logp_new = np.array([model.logp_and_grad(xi)[0] for xi in x_new])
        logp_new = np.where(np.isnan(logp_new), -np.inf, logp_new)
        with np.errstate(invalid="ignore"):
            log_incr = logp_new - ens.logp

    log_incr = np.where(np.isnan(log_incr), -np.inf, log_incr)
    ens.x_prev = ens.x
    ens.x = x_new
    ens.logp = logp_new
    ens.log_w = ens.log_w + log_incr
    ens.k += 1

    w, ess = normalize_and_ess(ens.log_w)
    estimate = w @ ens.x
    resampled = ess < ens.resample_threshold * ens.n
    if resampled:
        resample(ens, w, rng, cfg.resampling)
    return StepInfo(estimate, ess, resampled, w, log_incr, n_div, n_grad, det_incr)


def run(model, cfg: SMCConfig, sink: Callable[[dict], None] | None = None) -> RunEstimates:
    """Run ``cfg.n_iterations`` iterations; the first is importance sampling from ``cfg.init``."""
    T, D = cfg.n_iterations, model.dim
    mass = cfg.mass(D)
    nuts_cfg = NutsConfig(step_size=cfg.step_size, max_depth=cfg.max_depth, mass=mass)
    lkernel = make_lkernel(cfg.lkernel, mass, weighted=cfg.weighted_fit)

    means = np.empty((T, D))
    recycled = np.empty((T, D))
    ess = np.empty(T)
    resampled = np.zeros(T, dtype=bool)
    wall_ms = np.empty(T)
    n_div = np.zeros(T, dtype=int)
    n_grad = np.zeros(T, dtype=int)

    t0 = time.perf_counter()
    ens, rng = initialize(model, cfg.init, cfg.n_particles, cfg.seed, cfg.resample_threshold)
    w, ess[0] = normalize_and_ess(ens.log_w)
    means[0] = w @ ens.x
    for k in range(T):
        if k > 0:
            info = smc_step(ens, model, cfg, lkernel, rng, nuts_cfg)
            means[k], ess[k], resampled[k] = info.estimate, info.ess, info.resampled
            n_div[k], n_grad[k] = info.n_divergent, info.n_gradient_evals
        recycled[k] = recycle(means[: k + 1], ess[: k + 1]) if cfg.recycling else means[k]
        wall_ms[k] = 1000.0 * (time.perf_counter() - t0)
        if sink is not None:
            sink(
                {
                    "iteration": k + 1,
                    "ess": float(ess[k]),
                    "resampled": bool(resampled[k]),
                    "estimate": means[k].copy(),
                    "recycled": recycled[k].copy(),
                    "wall_ms": float(wall_ms[k]),
                }
            )
    if n_div.sum():
        log.debug("%d divergent NUTS trajectories", int(n_div.sum()))
    return RunEstimates(means, recycled, ess, resampled, wall_ms, n_div, n_grad)
