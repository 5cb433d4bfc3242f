"""Backward (L-)kernels over the reversed momentum.

Both strategies score ``-p_k`` given the particle's new position ``x_k``:

* ``SymmetricLKernel`` reuses the forward momentum law, ``N(-p_k; 0, M)``.
* ``NearOptimalLKernel`` fits one Gaussian to the stacked ensemble vectors
  ``(-p_k, x_k)`` and conditions it on ``x_k``.

``prepare`` is an ensemble-wide barrier; ``log_density`` is vectorised over
particles and read-only afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .hamiltonian import MassMatrix, momentum_log_density

__all__ = [
    "LKernelError",
    "JointGaussianFit",
    "symmetric_log_density",
    "fit_joint",
    "conditional_params",
    "conditional_log_density",
    "gaussian_log_density",
    "SymmetricLKernel",
    "NearOptimalLKernel",
    "make_lkernel",
]

_LOG_2PI = math.log(2 * math.pi)


class LKernelError(ValueError):
    pass


def symmetric_log_density(p_k, M: MassMatrix):
    """log N(-p_k; 0, M), which equals log N(p_k; 0, M)."""
    return momentum_log_density(-np.asarray(p_k, dtype=float), M)


@dataclass
class JointGaussianFit:
    """Mean and covariance of the stacked vector ``(-p, x)``."""

    mean: np.ndarray
    cov: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.mean.size // 2

    @property
    def mu_p(self):
        return self.mean[: self.dim]

    @property
    def mu_x(self):
        return self.mean[self.dim :]

    @property
    def cov_pp(self):
        return self.cov[: self.dim, : self.dim]

    @property
    def cov_px(self):
        return self.cov[: self.dim, self.dim :]

    @property
    def cov_xp(self):
        return self.cov[self.dim :, : self.dim]

    @property
    def cov_xx(self):
        return self.cov[self.dim :, self.dim :]


def fit_joint(neg_p, x, weights=None, rel_jitter: float = 1e-6, min_jitter: float = 1e-12) -> JointGaussianFit:
    """Fit a Gaussian to the rows of ``[neg_p, x]``.

    Moments use the 1/N convention (or the normalised ``weights``). A jitter
    of ``rel_jitter * mean(diag)``, floored at ``min_jitter``, is added to
    the diagonal so degenerate ensembles still give a usable fit.
    """
    z = np.hstack([np.atleast_2d(neg_p), np.atleast_2d(x)])
    if z.shape[0] < 2:
        raise LKernelError("at least two particles are needed to fit the L-kernel")
    if not np.all(np.isfinite(z)):
        raise LKernelError("non-finite particle state in L-kernel fit")
    if weights is None:
        mean = z.mean(axis=0)
        dz = z - mean
        cov = dz.T @ dz / z.shape[0]
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mean = w @ z
        dz = z - mean
        cov = (dz * w[:, None]).T @ dz
    cov = 0.5 * (cov + cov.T)
    jitter = max(rel_jitter * float(np.mean(np.diag(cov))), min_jitter)
    cov[np.diag_indices_from(cov)] += jitter
    return JointGaussianFit(mean, cov, jitter)


def conditional_params(fit: JointGaussianFit):
    """Return ``(gain, cond_cov)`` with ``gain = S_px S_xx^-1``.

    The conditional mean at ``x`` is ``mu_p + gain @ (x - mu_x)``.
    """
    try:
        cho = linalg.cho_factor(fit.cov_xx, lower=True)
    except linalg.LinAlgError as exc:
        raise LKernelError(
            "position block of the L-kernel covariance is not positive definite; "
            "increase the jitter or the number of particles"
        ) from exc
    gain = linalg.cho_solve(cho, fit.cov_xp).T
    cond_cov = fit.cov_pp - gain @ fit.cov_xp
    return gain, 0.5 * (cond_cov + cond_cov.T)


def gaussian_log_density(z, mean, cov):
    """Row-wise log N(z; mean, cov) through a Cholesky factor."""
    L = _cholesky_or_raise(cov, "covariance is not positive definite")
    return _log_density_chol(np.asarray(z, dtype=float), np.asarray(mean, dtype=float), L)


def conditional_log_density(fit: JointGaussianFit, p_k, x_k):
    """log N(-p_k; mu_{-p|x}, S_{-p|x}) for one or many particles."""
    gain, cond_cov = conditional_params(fit)
    p_k = np.asarray(p_k, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    cond_mean = fit.mu_p + (x_k - fit.mu_x) @ gain.T
    L = _cholesky_or_raise(cond_cov)
    return _log_density_chol(-p_k, cond_mean, L)


def _cholesky_or_raise(cov, msg="conditional L-kernel covariance is not positive definite"):
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise LKernelError(msg) from exc


def _log_density_chol(z, mean, L):
    dz = np.atleast_2d(z - mean)
    sol = linalg.solve_triangular(L, dz.T, lower=True)
    out = -0.5 * L.shape[0] * _LOG_2PI - float(np.sum(np.log(np.diag(L)))) - 0.5 * np.sum(sol * sol, axis=0)
    return out if np.ndim(z) > 1 else float(out[0])


class SymmetricLKernel:
    name = "symmetric"

    def __init__(self, mass: MassMatrix):
        self.mass = mass

    def prepare(self, neg_p, x, weights=None):
        return self

    def log_density(self, neg_p, x):
        return momentum_log_density(neg_p, self.mass)


class NearOptimalLKernel:
    """Gaussian approximation to the variance-minimising backward kernel."""

    name = "near-optimal"

    def __init__(self, weighted: bool = False, rel_jitter: float = 1e-6):
        self.weighted = weighted
        self.rel_jitter = rel_jitter
        self.fit: JointGaussianFit | None = None

    def prepare(self, neg_p, x, weights=None):
        self.fit = fit_joint(neg_p, x, weights if self.weighted else None, rel_jitter=self.rel_jitter)
        self._gain, cond_cov = conditional_params(self.fit)
        self._chol = _cholesky_or_raise(cond_cov)
        self.cond_cov = cond_cov
        return self

    def log_density(self, neg_p, x):
        if self.fit is None:
            raise RuntimeError("prepare() must be called before log_density()")
        cond_mean = self.fit.mu_p + (np.asarray(x) - self.fit.mu_x) @ self._gain.T
        return _log_density_chol(np.asarray(neg_p, dtype=float), cond_mean, self._chol)


def make_lkernel(name: str, mass: MassMatrix, weighted: bool = False):
    if name == "symmetric":
        return SymmetricLKernel(mass)
    if name == "near-optimal":
        return NearOptimalLKernel(weighted=weighted)
    raise ValueError(f"unknown L-kernel {name!r}; expected 'symmetric' or 'near-optimal'")
