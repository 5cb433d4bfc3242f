"""Differentiable target densities.

A target exposes ``dim``, ``log_density(x)`` and ``grad_log_density(x)``.
Samplers call ``logp_and_grad`` on their hot path, which skips input
validation and returns both quantities from one pass.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

__all__ = [
    "TargetModel",
    "GaussianTarget",
    "StudentTTarget",
    "FlatTarget",
    "PoissonLassoTarget",
    "RegressionData",
    "BETA_TRUE",
    "gaussian_basis",
    "generate_regression_dataset",
    "save_dataset",
    "load_dataset",
]


def _check_point(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected a point of shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("target evaluated at a non-finite point")
    return x


class TargetModel:
    """Base class for targets; subclasses implement ``logp_and_grad``."""

    dim: int

    def logp_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def logp_and_grad_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row-wise ``logp_and_grad``; subclasses override with a vectorised form."""
        out = [self.logp_and_grad(x) for x in X]
        return np.array([o[0] for o in out], dtype=float), np.array([o[1] for o in out], dtype=float)

    def log_density(self, x) -> float:
        return self.logp_and_grad(_check_point(x, self.dim))[0]

    def grad_log_density(self, x) -> np.ndarray:
        return self.logp_and_grad(_check_point(x, self.dim))[1]


class GaussianTarget(TargetModel):
    """Normal target with diagonal covariance."""

    def __init__(self, mean, var=1.0, dim: int | None = None):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if dim is not None and mean.size == 1:
            mean = np.full(dim, mean[0])
        var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape).copy()
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        self.dim = mean.size
        self.mean = mean
        self.var = var
        self._const = -0.5 * (self.dim * math.log(2 * math.pi) + np.sum(np.log(var)))

    def logp_and_grad(self, x):
        r = (x - self.mean) / self.var
        return self._const - 0.5 * float(np.sum(r * (x - self.mean))), -r

    def logp_and_grad_batch(self, X):
        r = (X - self.mean) / self.var
        return self._const - 0.5 * np.sum(r * (X - self.mean), axis=1), -r


class StudentTTarget(TargetModel):
    """Product of independent unit-scale Student-t marginals centred at ``mean``."""

    def __init__(self, mean, dof: float = 5.0):
        if dof <= 0:
            raise ValueError("degrees of freedom must be positive")
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.size
        self.dof = float(dof)
        nu = self.dof
        self._const_1d = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)

    def logp_and_grad(self, x):
        nu = self.dof
        r = x - self.mean
        logp = self.dim * self._const_1d - 0.5 * (nu + 1) * float(np.sum(np.log1p(r * r / nu)))
        return logp, -(nu + 1) * r / (nu + r * r)

    def logp_and_grad_batch(self, X):
        nu = self.dof
        r = X - self.mean
        logp = self.dim * self._const_1d - 0.5 * (nu + 1) * np.sum(np.log1p(r * r / nu), axis=1)
        return logp, -(nu + 1) * r / (nu + r * r)


class FlatTarget(TargetModel):
    """Constant log-density; used to check flat-potential identities."""

    def __init__(self, dim: int, log_value: float = 0.0):
        self.dim = dim
        self.log_value = float(log_value)

    def logp_and_grad(self, x):
        return self.log_value, np.zeros(self.dim)

    def logp_and_grad_batch(self, X):
        return np.full(X.shape[0], self.log_value), np.zeros(X.shape)


# Coefficients used to simulate the count data: intercept first, then 11 basis weights.
BETA_TRUE = np.array([1.0, 0.0, 1.5, 0.0, -2.0, 0.0, 1.0, -2.0, 0.0, 1.2, 0.0, 0.0])


def gaussian_basis(x, centres, widths) -> np.ndarray:
    """``Phi[i, j] = exp(-(x_i - c_j)^2 / (2 r_j^2))``."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    centres = np.asarray(centres, dtype=float)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), centres.shape)
    if np.any(widths <= 0):
        raise ValueError("basis widths must be positive")
    return np.exp(-((x - centres) ** 2) / (2 * widths**2))


@dataclass
class RegressionData:
    x: np.ndarray
    y: np.ndarray
    centres: np.ndarray
    widths: np.ndarray
    beta_true: np.ndarray
    seed: int | None = None
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.centres = np.asarray(self.centres, dtype=float)
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=float), self.centres.shape).copy()
        self.beta_true = np.asarray(self.beta_true, dtype=float)
        self.phi = gaussian_basis(self.x, self.centres, self.widths)


def generate_regression_dataset(
    seed: int,
    n: int = 100,
    beta_true=None,
    centres=None,
    widths=0.5,
    n_basis: int = 11,
    x_range: tuple[float, float] = (0.0, 10.0),
) -> RegressionData:
    """Simulate Poisson counts from the Gaussian-basis log-linear model.

    Inputs are drawn uniformly on ``x_range``; unless given, the ``n_basis``
    centres are equispaced over the observed input range. With 11 centres
    and width 0.5 the default range keeps neighbouring bumps about two
    widths apart; on a unit interval they are collinear to machine precision.
    """
    beta_true = BETA_TRUE.copy() if beta_true is None else np.asarray(beta_true, dtype=float)
    if np.any(np.asarray(widths) <= 0):
        raise ValueError("basis widths must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(x_range[0], x_range[1], size=n)
    if centres is None:
        centres = np.linspace(x.min(), x.max(), n_basis)
    centres = np.asarray(centres, dtype=float)
    if beta_true.size != centres.size + 1:
        raise ValueError("beta_true must hold an intercept plus one weight per centre")
    phi = gaussian_basis(x, centres, widths)
    rate = np.exp(beta_true[0] + phi @ beta_true[1:])
    y = rng.poisson(rate)
    return RegressionData(x=x, y=y, centres=centres, widths=widths, beta_true=beta_true, seed=seed)


def save_dataset(data: RegressionData, out_dir, **extra) -> tuple[Path, Path]:
    """Write ``data.csv`` (columns x, y) and a ``data.json`` sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "data.csv", out_dir / "data.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for xi, yi in zip(data.x, data.y):
            w.writerow([repr(float(xi)), int(yi)])
    meta = {
        "centres": data.centres.tolist(),
        "widths": data.widths.tolist(),
        "beta_true": data.beta_true.tolist(),
        "seed": data.seed,
        **extra,
    }
    json_path.write_text(json.dumps(meta, indent=2))
    return csv_path, json_path


def load_dataset(path) -> tuple[RegressionData, dict]:
    """Read a dataset written by :func:`save_dataset`; ``path`` is the directory."""
    path = Path(path)
    with open(path / "data.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    meta = json.loads((path / "data.json").read_text())
    data = RegressionData(
        x=[float(r["x"]) for r in rows],
        y=[int(r["y"]) for r in rows],
        centres=meta["centres"],
        widths=meta["widths"],
        beta_true=meta["beta_true"],
        seed=meta.get("seed"),
    )
    return data, meta


class PoissonLassoTarget(TargetModel):
    """Posterior of a Poisson log-linear model under an exponential-power prior.

    The coefficient vector is ``[beta_0, beta_1, ..., beta_J]``. The intercept
    is unpenalised; each basis weight gets density
    ``z / (2 gamma Gamma(1/z)) * exp(-|beta_j / gamma|^z)``.

    For ``z <= 1`` the prior is not differentiable at zero. The gradient there
    is taken as 0 and ``subgradient_hits`` is incremented.
    """

    def __init__(self, y, phi, z: float = 0.5, gamma: float = 1.0):
        if not 0 < z < 2:
            raise ValueError("prior shape z must lie in (0, 2)")
        if gamma <= 0:
            raise ValueError("prior scale gamma must be positive")
        self.y = np.asarray(y, dtype=float)
        self.phi = np.asarray(phi, dtype=float)
        if self.phi.shape[0] != self.y.size:
            raise ValueError("phi must have one row per observation")
        self.z = float(z)
        self.gamma = float(gamma)
        self.dim = self.phi.shape[1] + 1
        self.subgradient_hits = 0
        n_pen = self.dim - 1
        self._lik_const = -float(np.sum(gammaln(self.y + 1)))
        self._prior_const = n_pen * (math.log(z / (2 * gamma)) - gammaln(1 / z))
        self._design = np.hstack([np.ones((self.y.size, 1)), self.phi])

    @classmethod
    def from_data(cls, data: RegressionData, z: float = 0.5, gamma: float = 1.0):
        return cls(data.y, data.phi, z=z, gamma=gamma)

    def _prior(self, coef):
        b = coef / self.gamma
        a = np.abs(b)
        logprior = self._prior_const - np.sum(a**self.z, axis=-1)
        if self.z <= 1:
            zero = a == 0
            if zero.any():
                self.subgradient_hits += int(zero.sum())
                a = np.where(zero, 1.0, a)
        return logprior, -(self.z / self.gamma) * np.sign(b) * a ** (self.z - 1)

    def logp_and_grad(self, beta):
        with np.errstate(over="ignore", invalid="ignore"):
            eta = self._design @ beta
            mu = np.exp(eta)
            loglik = float(np.dot(self.y, eta) - np.sum(mu)) + self._lik_const
            grad = self._design.T @ (self.y - mu)
        logprior, gprior = self._prior(beta[1:])
        grad[1:] += gprior
        return loglik + float(logprior), grad

    def logp_and_grad_batch(self, B):
        with np.errstate(over="ignore", invalid="ignore"):
            eta = B @ self._design.T
            mu = np.exp(eta)
            loglik = eta @ self.y - mu.sum(axis=1) + self._lik_const
            grad = (self.y - mu) @ self._design
        logprior, gprior = self._prior(B[:, 1:])
        grad[:, 1:] += gprior
        return loglik + logprior, grad
