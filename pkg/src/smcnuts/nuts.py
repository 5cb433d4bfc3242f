"""No-U-Turn trajectory builder used as an SMC proposal.

This is the slice-variable NUTS with trajectory doubling: a slice level is
drawn under ``exp(-H(x0, p0))``, the trajectory is doubled forwards or
backwards until it turns back on itself, and the returned state is drawn
uniformly from the slice-admissible leaves.

Unlike an MCMC transition, the outcome also carries the momentum at the
selected leaf so the caller can evaluate a backward kernel at ``-p_new``.
The sign convention is that ``p_new`` points in the direction of travel
away from ``x0``; integrating from ``(x_new, -p_new)`` for ``abs(n_steps)``
leapfrog steps of size ``h`` returns to ``x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import MassMatrix, _leapfrog

__all__ = ["NutsConfig", "NutsOutcome", "NutsBatchOutcome", "nuts_propose", "nuts_propose_batch"]


@dataclass
class NutsConfig:
    step_size: float = 0.1
    max_depth: int = 10
    mass: MassMatrix | None = None
    # energy error beyond which a leaf is treated as divergent
    max_energy_error: float = 1000.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")

    def mass_for(self, dim: int) -> MassMatrix:
        if self.mass is None:
            return MassMatrix.identity(dim)
        if self.mass.dim != dim:
            raise ValueError("mass matrix dimension does not match the target")
        return self.mass


@dataclass
class NutsOutcome:
    x_new: np.ndarray
    p_new: np.ndarray
    tree_depth: int
    n_gradient_evals: int
    divergent: bool
    # signed leapfrog count from x0 to x_new; negative for backward leaves
    n_steps: int = 0
    logp_new: float = field(default=float("nan"), repr=False)
    n_leapfrog: int = 0


class _Trajectory:
    __slots__ = ("model", "h", "inv", "log_u", "H0", "max_err", "rng", "n_grad", "n_leapfrog", "divergent")

    def __init__(self, model, h, inv, log_u, H0, max_err, rng):
        self.model = model
        self.h = h
        self.inv = inv
        self.log_u = log_u
        self.H0 = H0
        self.max_err = max_err
        self.rng = rng
        self.n_grad = 0
        self.n_leapfrog = 0
        self.divergent = False

    def no_uturn(self, minus, plus):
        dx = plus[0] - minus[0]
        return np.sum(dx * (self.inv * minus[1])) >= 0 and np.sum(dx * (self.inv * plus[1])) >= 0

    def build(self, x, p, g, idx, v, depth):
        """Return ``(minus, plus, candidate, n_admissible, keep_going)``.

        Ends are ``(x, p, grad, idx)``; the candidate is ``(x, p, logp, idx)``.
        """
        if depth == 0:
            x1, p1, logp1, g1 = _leapfrog(self.model, x, p, g, v * self.h, self.inv)
            self.n_grad += 1
            self.n_leapfrog += 1
            idx1 = idx + v
            neg_H = logp1 - 0.5 * float(np.sum(p1 * p1 * self.inv))
            leaf = (x1, p1, g1, idx1)
            if not math.isfinite(neg_H) or -neg_H - self.H0 > self.max_err or not np.isfinite(x1).all():
                self.divergent = True
                return leaf, leaf, None, 0, False
            n = 1 if self.log_u <= neg_H else 0
            return leaf, leaf, (x1, p1, logp1, idx1), n, True

        minus, plus, cand, n, s = self.build(x, p, g, idx, v, depth - 1)
        if not s:
            return minus, plus, cand, n, s
        if v < 0:
            minus, _, cand2, n2, s2 = self.build(*minus, v, depth - 1)
        else:
            _, plus, cand2, n2, s2 = self.build(*plus, v, depth - 1)
        if n2 > 0 and self.rng.random() * (n + n2) < n2:
            cand = cand2
        n += n2
        s = s2 and self.no_uturn(minus, plus)
        return minus, plus, cand, n, s


def nuts_propose(model, x0, p0, cfg: NutsConfig, rng: np.random.Generator) -> NutsOutcome:
    """Run one NUTS trajectory from ``(x0, p0)`` and return the selected leaf.

    A divergent leaf anywhere in the trajectory makes the whole proposal fall
    back to ``(x0, p0)`` with ``divergent=True``.
    """
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    M = cfg.mass_for(x0.size)
    inv = M.inv
    logp0, grad0 = model.logp_and_grad(x0)
    if not math.isfinite(logp0):
        raise ValueError("NUTS started from a point with zero target density")
    H0 = -logp0 + 0.5 * float(np.sum(p0 * p0 * inv))
    # log of u ~ Uniform(0, exp(-H0))
    log_u = -H0 - rng.standard_exponential()
    traj = _Trajectory(model, cfg.step_size, inv, log_u, H0, cfg.max_energy_error, rng)

    minus = plus = (x0, p0, grad0, 0)
    cand = (x0, p0, logp0, 0)
    n = 1
    depth = 0
    keep_going = True
    while keep_going and depth < cfg.max_depth:
        v = 1 if rng.random() < 0.5 else -1
        if v < 0:
            minus, _, cand2, n2, s2 = traj.build(*minus, v, depth)
        else:
            _, plus, cand2, n2, s2 = traj.build(*plus, v, depth)
        depth += 1
        if traj.divergent:
            break
        if s2 and n2 > 0 and rng.random() * n < n2:
            cand = cand2
        n += n2
        keep_going = s2 and traj.no_uturn(minus, plus)

    n_grad = traj.n_grad + 1
    if traj.divergent:
        return NutsOutcome(x0.copy(), p0.copy(), depth, n_grad, True, 0, logp0, traj.n_leapfrog)
    x_new, p_leaf, logp_new, idx = cand
    p_new = p_leaf if idx >= 0 else -p_leaf
    return NutsOutcome(x_new, p_new, depth, n_grad, False, idx, logp_new, traj.n_leapfrog)


@dataclass
class NutsBatchOutcome:
    """Row-wise counterpart of :class:`NutsOutcome` for a whole ensemble."""

    x_new: np.ndarray
    p_new: np.ndarray
    logp_new: np.ndarray
    tree_depth: np.ndarray
    n_gradient_evals: np.ndarray
    divergent: np.ndarray
    n_steps: np.ndarray

    def __getitem__(self, i) -> NutsOutcome:
        return NutsOutcome(
            self.x_new[i], self.p_new[i], int(self.tree_depth[i]), int(self.n_gradient_evals[i]),
            bool(self.divergent[i]), int(self.n_steps[i]), float(self.logp_new[i]),
            int(self.n_gradient_evals[i]) - 1,
        )


def _batch_logp_grad(model, X):
    batch = getattr(model, "logp_and_grad_batch", None)
    if batch is not None:
        return batch(X)
    out = [model.logp_and_grad(x) for x in X]
    return np.array([o[0] for o in out], dtype=float), np.array([o[1] for o in out], dtype=float)


def _no_uturn_rows(inner_x, inner_p, outer_x, outer_p, v, inv):
    # orient ends as (minus, plus) according to the travel direction
    dx = v[:, None] * (outer_x - inner_x)
    return (np.sum(dx * (inv * inner_p), axis=1) >= 0) & (np.sum(dx * (inv * outer_p), axis=1) >= 0)


def nuts_propose_batch(model, X0, P0, cfg: NutsConfig, rngs) -> NutsBatchOutcome:
    """Run one NUTS trajectory per row of ``X0``, all trees advancing in lockstep.

    Row ``i`` consumes ``rngs[i]`` in exactly the order :func:`nuts_propose`
    would, so both routines return the same leaf for the same stream. Subtrees
    are built iteratively: within a doubling of depth ``j`` leaf ``t`` closes
    every level ``m`` whose bit ``m`` of ``t`` is set.
    """
    X0 = np.asarray(X0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    N, D = X0.shape
    inv = cfg.mass_for(D).inv
    h = cfg.step_size
    max_err = cfg.max_energy_error

    logp0, grad0 = _batch_logp_grad(model, X0)
    if not np.all(np.isfinite(logp0)):
        raise ValueError("NUTS started from a point with zero target density")
    H0 = -logp0 + 0.5 * np.sum(P0 * P0 * inv, axis=1)
    log_u = -H0 - np.array([r.standard_exponential() for r in rngs])

    mx, mp, mg, midx = X0.copy(), P0.copy(), grad0.copy(), np.zeros(N, dtype=int)
    px, pp, pg, pidx = X0.copy(), P0.copy(), grad0.copy(), np.zeros(N, dtype=int)
    cx, cp, clogp, cidx = X0.copy(), P0.copy(), logp0.copy(), np.zeros(N, dtype=int)
    n_tot = np.ones(N, dtype=int)
    depth = np.zeros(N, dtype=int)
    n_leap = np.zeros(N, dtype=int)
    divergent = np.zeros(N, dtype=bool)
    going = np.ones(N, dtype=bool)

    for j in range(cfg.max_depth):
        act = np.flatnonzero(going)
        if act.size == 0:
            break
        Na = act.size
        v = np.array([1 if rngs[i].random() < 0.5 else -1 for i in act])
        back = (v < 0)[:, None]
        # walking state, starts at the end being extended
        wx = np.where(back, mx[act], px[act])
        wp = np.where(back, mp[act], pp[act])
        wg = np.where(back, mg[act], pg[act])
        widx = np.where(v < 0, midx[act], pidx[act])
        hv = (v * h)[:, None]

        # first halves waiting for their sibling, one slot per level
        st_n = np.zeros((j, Na), dtype=int)
        st_in_x = np.empty((j, Na, D))
        st_in_p = np.empty((j, Na, D))
        st_cx = np.empty((j, Na, D))
        st_cp = np.empty((j, Na, D))
        st_clogp = np.empty((j, Na))
        st_cidx = np.zeros((j, Na), dtype=int)

        res_n = np.zeros(Na, dtype=int)
        res_s = np.zeros(Na, dtype=bool)
        res_cx, res_cp = np.empty((Na, D)), np.empty((Na, D))
        res_clogp, res_cidx = np.empty(Na), np.zeros(Na, dtype=int)
        alive = np.ones(Na, dtype=bool)

        for t in range(1 << j):
            L = np.flatnonzero(alive)
            if L.size == 0:
                break
            hl = hv[L]
            p = wp[L] + 0.5 * hl * wg[L]
            x = wx[L] + hl * inv * p
            logp, g = _batch_logp_grad(model, x)
            p = p + 0.5 * hl * g
            wx[L], wp[L], wg[L] = x, p, g
            widx[L] += v[L]
            n_leap[act[L]] += 1
            with np.errstate(invalid="ignore", over="ignore"):
                neg_H = logp - 0.5 * np.sum(p * p * inv, axis=1)
                div = ~np.isfinite(neg_H) | (-neg_H - H0[act[L]] > max_err) | ~np.isfinite(x).all(axis=1)
            divergent[act[L]] |= div

            c_n = ((log_u[act[L]] <= neg_H) & ~div).astype(int)
            c_s = ~div
            c_cx, c_cp, c_clogp, c_cidx = x.copy(), p.copy(), logp.copy(), widx[L].copy()
            c_in_x, c_in_p = x, p
            climbing = np.ones(L.size, dtype=bool)
            for m in range(j):
                if not climbing.any():
                    break
                if not (t >> m) & 1:
                    push = climbing & c_s
                    rows = L[push]
                    st_n[m, rows] = c_n[push]
                    st_in_x[m, rows], st_in_p[m, rows] = c_in_x[push], c_in_p[push]
                    st_cx[m, rows], st_cp[m, rows] = c_cx[push], c_cp[push]
                    st_clogp[m, rows], st_cidx[m, rows] = c_clogp[push], c_cidx[push]
                    # a failed first half is returned unmerged
                    climbing &= ~c_s
                    continue
                rel = np.flatnonzero(climbing)
                rows = L[rel]
                left_n = st_n[m, rows]
                keep_left = np.ones(rel.size, dtype=bool)
                for k, r in enumerate(rel):
                    if c_n[r] > 0:
                        keep_left[k] = not rngs[act[L[r]]].random() * (left_n[k] + c_n[r]) < c_n[r]
                kl = rel[keep_left]
                c_cx[kl], c_cp[kl] = st_cx[m, L[kl]], st_cp[m, L[kl]]
                c_clogp[kl], c_cidx[kl] = st_clogp[m, L[kl]], st_cidx[m, L[kl]]
                c_n[rel] += left_n
                c_in_x = c_in_x.copy()
                c_in_p = c_in_p.copy()
                c_in_x[rel], c_in_p[rel] = st_in_x[m, rows], st_in_p[m, rows]
                ok = _no_uturn_rows(c_in_x[rel], c_in_p[rel], x[rel], p[rel], v[rows], inv)
                c_s[rel] &= ok
            done = L[climbing]
            res_n[done], res_s[done] = c_n[climbing], c_s[climbing]
            res_cx[done], res_cp[done] = c_cx[climbing], c_cp[climbing]
            res_clogp[done], res_cidx[done] = c_clogp[climbing], c_cidx[climbing]
            alive[done] = False

        depth[act] += 1
        ok_rows = ~divergent[act] & res_s
        for k in np.flatnonzero(ok_rows & (res_n > 0)):
            i = act[k]
            if rngs[i].random() * n_tot[i] < res_n[k]:
                cx[i], cp[i], clogp[i], cidx[i] = res_cx[k], res_cp[k], res_clogp[k], res_cidx[k]
        n_tot[act] += res_n
        bk, fw = act[v < 0], act[v > 0]
        mx[bk], mp[bk], mg[bk], midx[bk] = wx[v < 0], wp[v < 0], wg[v < 0], widx[v < 0]
        px[fw], pp[fw], pg[fw], pidx[fw] = wx[v > 0], wp[v > 0], wg[v > 0], widx[v > 0]
        dx = px[act] - mx[act]
        turn_ok = (np.sum(dx * (inv * mp[act]), axis=1) >= 0) & (np.sum(dx * (inv * pp[act]), axis=1) >= 0)
        going[act] = ok_rows & turn_ok

    cx[divergent], cp[divergent], clogp[divergent], cidx[divergent] = X0[divergent], P0[divergent], logp0[divergent], 0
    p_new = np.where((cidx < 0)[:, None], -cp, cp)
    return NutsBatchOutcome(cx, p_new, clogp, depth, n_leap + 1, divergent, cidx)
