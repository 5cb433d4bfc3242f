"""Acceptance checks, one report line per criterion.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python3 tests/test_acceptance.py``.
Tolerances are the ones the criteria state; nothing is loosened here.
"""

import math
import sys
import time

import numpy as np
import pytest

from smcnuts.cli import ExperimentConfig, run_experiment
from smcnuts.hamiltonian import MassMatrix, PhasePoint, integrate, jacobian_determinant_check, phase_space_jacobian, sample_momentum
from smcnuts.lkernel import JointGaussianFit, conditional_log_density, conditional_params, gaussian_log_density, make_lkernel
from smcnuts.nuts import NutsConfig, nuts_propose
from smcnuts.smc import GaussianInit, SMCConfig, initialize, normalize_and_ess, run, smc_step, systematic_resample
from smcnuts.target import BETA_TRUE, FlatTarget, GaussianTarget, PoissonLassoTarget, StudentTTarget, generate_regression_dataset

RESULTS: list[str] = []
_cache: dict = {}


def report(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num} {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def _poisson(n, t, proposal="nuts", repeats=10):
    key = (n, t, proposal)
    if key not in _cache:
        t0 = time.perf_counter()
        cfg = ExperimentConfig(experiment="poisson-lasso", n=n, t=t, seed=0, repeats=repeats, proposal=proposal)
        _, summary = run_experiment(cfg, write=False)
        summary["elapsed_s"] = time.perf_counter() - t0
        _cache[key] = summary
    return _cache[key]


def test_c1_regression_ordering():
    nuts, rw = _poisson(50, 100), _poisson(50, 100, "random-walk")
    m_nuts, m_rw = nuts["median_final_mse"], rw["median_final_mse"]
    ratio = m_rw / m_nuts
    ok = m_nuts < 1.0 and ratio >= 5.0
    assert report(
        1,
        "regression MSE ordering",
        ok,
        f"median MSE NUTS={m_nuts:.4f} (<1.0: {m_nuts < 1.0}), random walk={m_rw:.4f}, ratio={ratio:.2f} (need >=5), "
        f"{nuts['elapsed_s'] + rw['elapsed_s']:.0f}s",
    )


def test_c2_regression_monotonicity():
    big, small = _poisson(200, 200), _poisson(25, 100)
    a, b = big["median_final_mse"], small["median_final_mse"]
    assert report(
        2,
        "regression MSE monotonicity",
        a < b,
        f"median MSE (N=200,T=200)={a:.4f} vs (N=25,T=100)={b:.4f}, {big['elapsed_s'] + small['elapsed_s']:.0f}s",
    )


def test_c3_student_t_convergence():
    t0 = time.perf_counter()
    rows = {}
    for lk in ("near-optimal", "symmetric"):
        cfg = ExperimentConfig(experiment="student-t", n=200, t=50, seed=0, repeats=10, lkernel=lk, offset=10.0)
        rows[lk], _ = run_experiment(cfg, write=False)

    def err(lk, seed, it):
        r = next(r for r in rows[lk] if r.seed == seed and r.iteration == it)
        return np.asarray(r.abs_error)

    seeds = range(10)
    reached = sum(np.all(err("near-optimal", s, 50) < 0.5) for s in seeds)
    faster = sum(err("near-optimal", s, 10).mean() <= err("symmetric", s, 10).mean() for s in seeds)
    ok = reached >= 8 and faster >= 7
    assert report(
        3,
        "Student-t convergence",
        ok,
        f"near-optimal all dims <0.5 at it 50 in {reached}/10 (need 8), "
        f"it-10 mean error <= symmetric in {faster}/10 (need 7), offset c=10, {time.perf_counter() - t0:.0f}s",
    )


def test_c4_leapfrog_properties():
    rng = np.random.default_rng(4)
    worst_rev = worst_vol = worst_jac = 0.0
    for trial in range(30):
        dim = 1 + trial % 4
        model = StudentTTarget(rng.standard_normal(dim), 5) if trial % 2 else GaussianTarget(rng.standard_normal(dim), rng.uniform(0.5, 2, dim))
        M = MassMatrix(rng.uniform(0.5, 2.0, dim))
        h = rng.uniform(0.01, 0.5)
        s = PhasePoint(rng.standard_normal(dim), rng.standard_normal(dim))
        n = int(rng.integers(1, 6))
        fwd = integrate(model, s, h, M, n)
        back = integrate(model, PhasePoint(fwd.x, -fwd.p), h, M, n)
        worst_rev = max(worst_rev, np.max(np.abs(back.x - s.x)), np.max(np.abs(back.p + s.p)))
        worst_vol = max(worst_vol, abs(np.linalg.det(phase_space_jacobian(model, s, h, M, n)) - 1.0))
        expected = h**dim * np.prod(M.inv)
        worst_jac = max(worst_jac, abs(jacobian_determinant_check(model, s, h, M) / expected - 1.0))
    ok = worst_rev < 1e-10 and worst_vol < 1e-4 and worst_jac < 1e-4
    assert report(
        4,
        "leapfrog properties",
        ok,
        f"reversibility max err={worst_rev:.1e} (<1e-10), |det-1|={worst_vol:.1e} (<1e-4), "
        f"position Jacobian rel err={worst_jac:.1e} (<1e-4)",
    )


def test_c5_nuts_invariant_distribution():
    t0 = time.perf_counter()
    model, cfg, M = GaussianTarget(0.0), NutsConfig(step_size=0.2), MassMatrix.identity(1)
    rng = np.random.default_rng(5)
    x, draws = rng.standard_normal(1), np.empty(10_000)
    for i in range(draws.size):
        x = nuts_propose(model, x, sample_momentum(M, rng), cfg, rng).x_new
        draws[i] = x[0]
    # batch-means standard errors absorb any autocorrelation
    mean, var = draws.mean(), draws.var()
    b = draws.reshape(100, 100)
    se_mean = b.mean(axis=1).std(ddof=1) / 10
    se_var = ((b - mean) ** 2).mean(axis=1).std(ddof=1) / 10
    ok = abs(mean) < 3 * se_mean and abs(var - 1) < 3 * se_var
    assert report(
        5,
        "NUTS statistical correctness",
        ok,
        f"mean={mean:+.4f} (3se={3 * se_mean:.4f}), var={var:.4f} (3se={3 * se_var:.4f}), {time.perf_counter() - t0:.0f}s",
    )


def test_c6_gaussian_conditioning():
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        D = 1 + i % 3
        A = rng.standard_normal((2 * D, 2 * D))
        fit = JointGaussianFit(rng.standard_normal(2 * D), A @ A.T + 0.1 * np.eye(2 * D), 0.0)
        p, x = rng.standard_normal(D), rng.standard_normal(D)
        joint = gaussian_log_density(np.concatenate([-p, x]), fit.mean, fit.cov)
        marg = gaussian_log_density(x, fit.mu_x, fit.cov_xx)
        worst = max(worst, abs(conditional_log_density(fit, p, x) - (joint - marg)))
    hand = JointGaussianFit(np.zeros(2), np.array([[2.0, 1.0], [1.0, 2.0]]), 0.0)
    gain, cov = conditional_params(hand)
    mean, var = float(gain[0, 0] * 1.0), float(cov[0, 0])
    ok = worst < 1e-10 and abs(mean - 0.5) < 1e-12 and abs(var - 1.5) < 1e-12
    assert report(6, "Gaussian conditioning", ok, f"max |cond - (joint - marginal)|={worst:.1e} (<1e-10), hand example mean={mean}, var={var}")


def _flat_spread(lkernel):
    model = FlatTarget(3)
    cfg = SMCConfig(n_particles=40, step_size=0.1, max_depth=5, lkernel=lkernel)
    ens, rng = initialize(model, GaussianInit(), 40, 0, resample_threshold=0.0)
    ens.log_w = np.full(40, -math.log(40))
    lk = make_lkernel(lkernel, cfg.mass(3))
    worst = 0.0
    for _ in range(5):
        info = smc_step(ens, model, cfg, lk, rng)
        worst = max(worst, float(np.max(np.abs(info.weights * 40 - 1))))
    return worst


def test_c7_smc_invariants():
    # flat target: weights stay 1/N
    flat_sym, flat_nopt = _flat_spread("symmetric"), _flat_spread("near-optimal")
    flat_ok = flat_sym < 1e-8 and flat_nopt < 1e-8

    # ESS bounds and resampling threshold over a run
    est = run(StudentTTarget([0.0, 2.0, 4.0], 5), SMCConfig(n_particles=60, n_iterations=20, seed=0, init=GaussianInit(4.0)))
    ess_ok = bool(np.all((est.ess >= 1) & (est.ess <= 60 + 1e-9)) and np.array_equal(est.resampled[1:], est.ess[1:] < 30))

    # offspring unbiasedness
    rng = np.random.default_rng(7)
    w = rng.dirichlet(np.ones(8))
    trials = 100_000
    counts = np.zeros((trials, 8))
    for i in range(trials):
        counts[i] = np.bincount(systematic_resample(w, rng), minlength=8)
    se = counts.std(axis=0) / math.sqrt(trials)
    unbiased = bool(np.all(np.abs(counts.mean(axis=0) - 8 * w) <= 3 * se + 1e-12))

    # closed form of the symmetric kernel ratio
    model = StudentTTarget([0.0, 2.0, 4.0], 5)
    mass = MassMatrix([0.5, 1.0, 2.0])
    cfg = SMCConfig(n_particles=30, step_size=0.2, mass_diag=mass.diag)
    ens, rng = initialize(model, GaussianInit(), 30, 1, resample_threshold=0.0)
    logp_prev = ens.logp.copy()
    info = smc_step(ens, model, cfg, make_lkernel("symmetric", mass), rng)
    closed = 0.5 * np.sum(ens.p_initial**2 * mass.inv, 1) - 0.5 * np.sum(ens.p_final**2 * mass.inv, 1)
    closed_err = float(np.max(np.abs(info.log_increment - (ens.logp - logp_prev) - closed)))

    ok = flat_ok and ess_ok and unbiased and closed_err < 1e-10
    assert report(
        7,
        "SMC invariants",
        ok,
        f"flat-target max |N w - 1|: symmetric={flat_sym:.1e}, near-optimal={flat_nopt:.2e} (<1e-8 each); "
        f"ESS bounds/threshold={ess_ok}; offspring unbiased (1e5 trials)={unbiased}; "
        f"symmetric ratio closed-form err={closed_err:.1e} (<1e-10)",
    )


def _fd_rel_err(model, x, h=1e-5):
    g = model.grad_log_density(x)
    fd = np.array([(model.log_density(x + h * e) - model.log_density(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0))


def test_c8_gradient_checks():
    rng = np.random.default_rng(8)
    data = generate_regression_dataset(0)
    models = {
        "gaussian": GaussianTarget(rng.standard_normal(4), rng.uniform(0.5, 2, 4)),
        "student-t": StudentTTarget([0.0, 2.0, 4.0, 6.0, 8.0], 5),
        "flat": FlatTarget(3),
        "poisson z=0.5": PoissonLassoTarget.from_data(data, z=0.5),
        "poisson z=1.5": PoissonLassoTarget.from_data(data, z=1.5),
    }
    worst = {}
    for name, m in models.items():
        errs = []
        for _ in range(100):
            if isinstance(m, PoissonLassoTarget):
                x = BETA_TRUE + 0.3 * rng.standard_normal(12)
                # subgradient points excluded
                x[1:] = np.where(np.abs(x[1:]) < 0.1, 0.1, x[1:])
            else:
                x = 3 * rng.standard_normal(m.dim)
            errs.append(_fd_rel_err(m, x))
        worst[name] = max(errs)
    ok = all(v < 1e-5 for v in worst.values())
    assert report(8, "gradient checks", ok, ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (<1e-5, 100 points each)")


def test_note_per_iteration_cost():
    nuts, rw = _poisson(50, 100), _poisson(50, 100, "random-walk")
    a, b = nuts["median_runtime_ms"] / 100, rw["median_runtime_ms"] / 100
    assert report("note", "per-iteration cost ordering", a > b, f"NUTS {a:.2f} ms/iter > random walk {b:.2f} ms/iter at N=50, T=100")


if __name__ == "__main__":
    funcs = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    failed = 0
    for f in funcs:
        try:
            f()
        except AssertionError:
            failed += 1
    print("\n".join(["", "summary:"] + RESULTS))
    sys.exit(1 if failed else 0)
