"""Leapfrog integration and Gaussian momentum handling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MassMatrix",
    "PhasePoint",
    "Divergence",
    "leapfrog_step",
    "integrate",
    "kinetic_energy",
    "hamiltonian",
    "sample_momentum",
    "momentum_log_density",
    "jacobian_determinant_check",
    "phase_space_jacobian",
]


@dataclass(frozen=True, eq=False)
class MassMatrix:
    """Diagonal mass matrix with cached inverse and square root."""

    diag: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.diag, dtype=float)).copy()
        if d.ndim != 1 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("mass matrix diagonal must be finite and strictly positive")
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)
        inv = 1.0 / d
        sqrt = np.sqrt(d)
        inv.setflags(write=False)
        sqrt.setflags(write=False)
        object.__setattr__(self, "inv", inv)
        object.__setattr__(self, "sqrt", sqrt)
        object.__setattr__(self, "_log_norm", -0.5 * (d.size * math.log(2 * math.pi) + np.sum(np.log(d))))

    @classmethod
    def identity(cls, dim: int) -> "MassMatrix":
        return cls(np.ones(dim))

    @property
    def dim(self) -> int:
        return self.diag.size


@dataclass
class PhasePoint:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.x.shape != self.p.shape:
            raise ValueError("position and momentum must have equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase point must be finite")


class Divergence(ArithmeticError):
    """Raised when a leapfrog step produces a non-finite state or gradient."""

    def __init__(self, position):
        super().__init__("leapfrog step diverged")
        self.position = position


def _leapfrog(model, x, p, grad, h, inv_mass):
    # grad is the cached gradient of log pi at x
    p = p + 0.5 * h * grad
    x = x + h * inv_mass * p
    logp, grad = model.logp_and_grad(x)
    p = p + 0.5 * h * grad
    return x, p, logp, grad


def leapfrog_step(model, s: PhasePoint, h: float, M: MassMatrix, grad=None) -> PhasePoint:
    """One half-kick / drift / half-kick step.

    ``grad`` is the gradient of the log-density at ``s.x`` if already known.
    Raises :class:`Divergence` if the result is not finite.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    if grad is None:
        grad = model.logp_and_grad(s.x)[1]
    x, p, logp, grad = _leapfrog(model, s.x, s.p, grad, h, M.inv)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p)) and np.all(np.isfinite(grad))):
        raise Divergence(x)
    return PhasePoint(x, p)


def integrate(model, s: PhasePoint, h: float, M: MassMatrix, n_steps: int) -> PhasePoint:
    grad = model.logp_and_grad(s.x)[1]
    x, p = s.x, s.p
    for _ in range(n_steps):
        x, p, _, grad = _leapfrog(model, x, p, grad, h, M.inv)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise Divergence(x)
    return PhasePoint(x, p)


def kinetic_energy(p, M: MassMatrix):
    p = np.asarray(p, dtype=float)
    return 0.5 * np.sum(p * p * M.inv, axis=-1)


def hamiltonian(model, s: PhasePoint, M: MassMatrix) -> float:
    return -model.log_density(s.x) + float(kinetic_energy(s.p, M))


def sample_momentum(M: MassMatrix, rng: np.random.Generator) -> np.ndarray:
    return M.sqrt * rng.standard_normal(M.dim)


def momentum_log_density(p, M: MassMatrix):
    """Normalised log N(p; 0, M); accepts a single vector or a stack of rows."""
    return M._log_norm - kinetic_energy(p, M)


def _fd_jacobian(fun, v, eps):
    v = np.asarray(v, dtype=float)
    cols = []
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = eps
        cols.append((fun(v + e) - fun(v - e)) / (2 * eps))
    return np.column_stack(cols)


def jacobian_determinant_check(model, s: PhasePoint, h: float, M: MassMatrix, n_steps: int = 1, eps: float = 1e-6) -> float:
    """Finite-difference ``|det d x_n / d p_0|`` for ``n_steps`` leapfrog steps.

    For one step this equals ``h**D * prod(1 / m_d)``; it is a test aid and
    never enters the weight computation.
    """
    J = _fd_jacobian(lambda p: integrate(model, PhasePoint(s.x, p), h, M, n_steps).x, s.p, eps)
    return abs(float(np.linalg.det(J)))


def phase_space_jacobian(model, s: PhasePoint, h: float, M: MassMatrix, n_steps: int = 1, eps: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian of ``(x, p) -> (x', p')``."""
    D = s.x.size

    def fun(z):
        out = integrate(model, PhasePoint(z[:D], z[D:]), h, M, n_steps)
        return np.concatenate([out.x, out.p])

    return _fd_jacobian(fun, np.concatenate([s.x, s.p]), eps)
