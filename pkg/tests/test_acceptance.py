"""End-to-end acceptance gate.

One test per numbered criterion, so a `pytest -v` run shows one
pass/fail line for each.  Criteria 3, 5, and 6 retrain networks at the
ci preset and together take around fifteen minutes on one core.  Two
variants retrain at the full-scale paper preset and are opt-in:

    HJBOPT_PAPER=1    manufactured-solution error tables (hours)
    HJBOPT_NIGHTLY=1  mixture convergence at full scale (~1 h)

The long-running 2-d and 6-d benchmark configs are covered by smoke
checks against the pretrained checkpoints shipped in assets/.
"""

import dataclasses
import os
import time
from pathlib import Path

import numpy as np
import pytest

import hjbopt.training as training_mod
from hjbopt.autodiff import Tape
from hjbopt.benchmarks import get as get_benchmark
from hjbopt.config import load_config, resolve
from hjbopt.fd_reference import FdGrid, hjb_residual, howard_solve
from hjbopt.langevin import (
    estimate_kappa,
    mirror,
    network_noise_field,
    run_trajectories,
    truncated_noise,
)
from hjbopt.metrics import trajectory_stats
from hjbopt.network import backward, forward_jet, init_network, load_checkpoint
from hjbopt.operators import (
    ControlSet,
    log_partition,
    noise_coeff,
    oracle_partition,
)
from hjbopt.runner import sweep_run
from hjbopt.training import TrainConfig, loss, sample_boundary, sample_interior, train

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"
CHECKPOINTS = REPO / "assets" / "checkpoints"

LAMBDA_LADDER = [0.32, 0.16, 0.08, 0.04, 0.02]


def report(criterion: int, detail: str) -> None:
    # visible with pytest -s; the pass/fail line itself comes from -v
    print(f"[criterion {criterion}] PASS: {detail}")


def plain_value(params, x):
    a = np.asarray(x, dtype=np.float64)[None, :]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if l != last:
            a = np.tanh(a)
    return a[0, 0]


def random_net(rng):
    d = int(rng.integers(1, 4))
    depth = int(rng.integers(1, 4))
    widths = [int(rng.integers(2, 9)) for _ in range(depth)]
    params = init_network(int(rng.integers(0, 2 ** 31)), [d] + widths + [1])
    x = rng.uniform(-1.5, 1.5, size=d)
    return params, x


# -- 1: closed forms against the quadrature oracle --------------------------


def test_criterion_1_stable_operators_match_oracle():
    rng = np.random.default_rng(20260815)
    t0 = time.perf_counter()
    for _ in range(1000):
        u_min = float(rng.uniform(0.0, 2.0))
        ctl = ControlSet(u_min, u_min + float(rng.uniform(0.05, 10.0)))
        lam = float(10.0 ** rng.uniform(-3, 1))
        z = float(rng.uniform(-500.0, 500.0))
        lap = -z * lam / ctl.width
        want = oracle_partition(lap, lam, ctl, nodes=24)
        got_h = log_partition(lap, lam, ctl)
        got_s = noise_coeff(lap, lam, ctl)
        assert abs(got_h - want.log_partition) <= 1e-10 * max(abs(want.log_partition), 1e-300)
        assert abs(got_s - want.noise) <= 1e-10 * want.noise

    # continuity across the series/factored crossover at |z| = eps0
    from hjbopt.operators import BRANCH_EPS

    ctl = ControlSet(0.2, 1.0)
    for lam in (0.02, 0.25, 1.0):
        for z0 in (BRANCH_EPS, -BRANCH_EPS):
            lo = log_partition(-(z0 - 1e-13) * lam / ctl.width, lam, ctl)
            hi = log_partition(-(z0 + 1e-13) * lam / ctl.width, lam, ctl)
            assert abs(lo - hi) <= 1e-12 * (1.0 + abs(lo))
            lo = noise_coeff(-(z0 - 1e-13) * lam / ctl.width, lam, ctl)
            hi = noise_coeff(-(z0 + 1e-13) * lam / ctl.width, lam, ctl)
            assert abs(lo - hi) <= 1e-12 * (1.0 + lo)

    for z in (1e6, -1e6):
        lap = -z * 0.25 / ctl.width
        assert np.isfinite(log_partition(lap, 0.25, ctl))
        assert np.isfinite(noise_coeff(lap, 0.25, ctl))

    dt = time.perf_counter() - t0
    assert dt < 1.0, f"operator oracle suite took {dt:.2f}s, budget 1s"
    report(1, f"1000 oracle triples + branch continuity in {dt:.2f}s")


# -- 2: derivative correctness via finite differences ------------------------


def test_criterion_2_derivatives_match_finite_differences():
    t0 = time.perf_counter()

    rng = np.random.default_rng(101)
    h = 1e-6
    for _ in range(60):
        params, x = random_net(rng)
        jet = forward_jet(params, x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fd = (plain_value(params, x + e) - plain_value(params, x - e)) / (2 * h)
            assert abs(jet.gradient[i] - fd) <= 1e-6 * max(abs(fd), 1e-3)

    rng = np.random.default_rng(202)
    h = 1e-5
    for _ in range(25):
        params, x = random_net(rng)
        jet = forward_jet(params, x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fd_row = (forward_jet(params, x + e).gradient
                      - forward_jet(params, x - e).gradient) / (2 * h)
            scale = np.maximum(np.abs(fd_row), 1e-3)
            assert (np.abs(jet.hessian[i] - fd_row) <= 1e-4 * scale).all()

    rng = np.random.default_rng(7)
    bench = get_benchmark("cosine_d1", rho=1.0, control=ControlSet(0.2, 1.0))
    problem = bench.problem(lam=0.32)
    cfg = TrainConfig(alpha_res=1.0, alpha_bnd=2.0, n_interior=6, n_boundary=3,
                      iterations=1, learning_rate=1e-3, lr_schedule="constant",
                      lr_min=1e-5, beta1=0.9, beta2=0.99, weight_decay=0.0,
                      seed=0, log_every=1)
    h = 1e-6
    for trial in range(6):
        params = init_network(trial, [1, 5, 5, 1])
        interior = sample_interior(problem.domain, cfg.n_interior, rng)
        boundary = sample_boundary(problem.domain, cfg.n_boundary, rng)

        def loss_at(p):
            return loss(p, problem, interior, boundary, cfg, Tape())

        tape = Tape()
        loss(params, problem, interior, boundary, cfg, tape)
        grads = backward(tape)
        for l, (gw, _) in enumerate(grads):
            idx = (int(rng.integers(gw.shape[0])), int(rng.integers(gw.shape[1])))
            pp = params.copy()
            pp.weights[l][idx] += h
            pm = params.copy()
            pm.weights[l][idx] -= h
            fd = (loss_at(pp) - loss_at(pm)) / (2 * h)
            assert abs(gw[idx] - fd) <= 1e-5 * max(abs(fd), 1e-2)

    dt = time.perf_counter() - t0
    assert dt < 30.0, f"derivative suites took {dt:.1f}s, budget 30s"
    report(2, f"gradient/hessian/parameter-gradient suites in {dt:.1f}s")


# -- 3: manufactured-solution convergence at the ci preset -------------------


def test_criterion_3_manufactured_error_decreases_with_lambda(tmp_path):
    cfg = load_config(CONFIGS / "ci" / "cosine_d1.json")
    t0 = time.perf_counter()
    sweep = sweep_run(cfg, tmp_path, "problem.lambda", LAMBDA_LADDER)
    dt = time.perf_counter() - t0

    reports = [run["report"] for run in sweep["runs"]]
    assert all(r is not None for r in reports)
    e_l2 = [r.e_l2_rel for r in reports]
    assert e_l2[-1] <= 0.10, f"e_l2_rel at lambda=0.02 is {e_l2[-1]:.4f}"
    for a, b in zip(e_l2, e_l2[1:]):
        assert b < a, f"error ladder not strictly decreasing: {e_l2}"

    # the first run is the shipped config itself (lambda = 0.32): its
    # interior loss must fall by at least 10x, and the logged total
    # loss median over the last decile must sit below the first decile
    log = sweep["runs"][0]["log"]
    assert log.loss_pde[-1] * 10.0 <= log.loss_pde[0], (
        f"interior loss only fell {log.loss_pde[0] / log.loss_pde[-1]:.1f}x")
    k = max(1, len(log.loss_total) // 10)
    assert np.median(log.loss_total[-k:]) < np.median(log.loss_total[:k])

    assert dt <= 600.0, f"ci sweep took {dt:.0f}s, budget 600s"
    report(3, "e_l2_rel " + " ".join(f"{e:.3f}" for e in e_l2) + f" in {dt:.0f}s")


@pytest.mark.skipif("HJBOPT_PAPER" not in os.environ,
                    reason="full-scale training takes hours; set HJBOPT_PAPER=1")
def test_criterion_3_full_scale_error_tables(tmp_path):
    cfg = load_config(CONFIGS / "paper" / "cosine_d1.json")
    sweep = sweep_run(cfg, tmp_path, "problem.lambda", LAMBDA_LADDER)
    reports = [run["report"] for run in sweep["runs"]]
    e_l2 = np.array([r.e_l2_rel for r in reports])
    e_linf = np.array([r.e_linf for r in reports])
    target = np.array([0.167, 0.134, 0.094, 0.059, 0.036])
    assert (e_l2 >= 0.5 * target).all() and (e_l2 <= 1.5 * target).all(), (
        f"e_l2_rel {e_l2} outside +-50% of {target}")
    ratios = e_linf[:-1] / e_linf[1:]
    assert ((ratios >= 1.0) & (ratios <= 1.7)).all(), f"e_linf ratios {ratios}"
    report(3, f"full scale: e_l2_rel {e_l2}, ratios {ratios}")


# -- 4: classical reference solver -------------------------------------------


def test_criterion_4_howard_reference_converges():
    t0 = time.perf_counter()
    bench = get_benchmark("double_well_1d")
    control = ControlSet(0.2, 142.0)
    grid = FdGrid(-6.0, 6.0, 1001)

    def f(xs):
        return bench.evaluate(xs[:, None])

    def fprime(xs):
        return bench.gradient(xs[:, None])[:, 0]

    result = howard_solve(f=f, fprime=fprime, rho=0.4, control=control, grid=grid)
    assert result.converged and result.iterations < 2000

    xs = grid.xs()
    res = hjb_residual(result.values, f(xs), fprime(xs), 0.4, control, grid)
    worst = float(np.abs(res).max())
    assert worst <= 1e-8, f"discrete residual {worst:.3e}"

    # the optimal noise floor sqrt(2 u_min) is attained on an interval
    # around the global minimizer x = 4
    noise = np.sqrt(2.0 * result.policy)
    floor = np.sqrt(2.0 * control.u_min)
    at_floor = np.abs(noise - floor) <= 1e-12
    lo, hi = np.flatnonzero(at_floor)[[0, -1]]
    assert xs[lo] < 4.0 < xs[hi]
    assert at_floor[lo:hi + 1].all(), "noise floor region is not one interval"

    dt = time.perf_counter() - t0
    assert dt < 5.0, f"reference solve took {dt:.1f}s, budget 5s"
    report(4, f"{result.iterations} iterations, residual {worst:.2e}, "
              f"floor on [{xs[lo]:.2f}, {xs[hi]:.2f}] in {dt:.1f}s")


# -- 5: double-well pipeline end to end ---------------------------------------


def test_criterion_5_double_well_reaches_the_global_minimizer():
    res = resolve(load_config(CONFIGS / "ci" / "double_well_1d.json"))
    assert res.langevin.truncation == pytest.approx(
        0.5 * np.sqrt(2.0 * res.control.u_max))
    params = init_network(res.train.seed, res.layer_sizes)
    params, _ = train(res.problem, params, res.train)
    noise = network_noise_field(params, res.problem.lam, res.problem.control)

    t0 = time.perf_counter()
    log = run_trajectories(res.problem, noise, res.langevin)
    _, err = trajectory_stats(log.objectives, log.states, res.benchmark.minimizers)
    assert (err[500:] <= 0.1).all(), f"max distance after step 500: {err[500:].max():.3f}"

    untruncated = dataclasses.replace(res.langevin, truncation=0.0)
    log0 = run_trajectories(res.problem, noise, untruncated)
    _, err0 = trajectory_stats(log0.objectives, log0.states, res.benchmark.minimizers)
    sim_dt = time.perf_counter() - t0
    assert err0[-1] > err[-1], (
        f"dropping the truncation did not hurt: {err0[-1]:.3f} vs {err[-1]:.3f}")
    assert sim_dt < 30.0, f"simulation took {sim_dt:.1f}s, budget 30s"
    report(5, f"err[500:] max {err[500:].max():.4f}, terminal without truncation "
              f"{err0[-1]:.3f}, simulation {sim_dt:.1f}s")


# -- 6: gaussian mixture convergence ------------------------------------------


def _mixture_error_curve(scale: str):
    res = resolve(load_config(CONFIGS / scale / "gauss_mix_2d.json"))
    assert res.langevin.truncation == 0.0
    params = init_network(res.train.seed, res.layer_sizes)
    params, _ = train(res.problem, params, res.train)
    noise = network_noise_field(params, res.problem.lam, res.problem.control)
    log = run_trajectories(res.problem, noise, res.langevin)
    _, err = trajectory_stats(log.objectives, log.states, res.benchmark.minimizers)
    return err


def test_criterion_6_mixture_reaches_the_heaviest_mode():
    err = _mixture_error_curve("ci")
    assert err[500] <= 0.15, f"mean distance at step 500: {err[500]:.3f}"
    report(6, f"err[500] = {err[500]:.4f}, terminal {err[-1]:.4f}")


@pytest.mark.skipif("HJBOPT_NIGHTLY" not in os.environ,
                    reason="full-scale 2-d training takes ~1h; set HJBOPT_NIGHTLY=1")
def test_criterion_6_mixture_full_scale():
    err = _mixture_error_curve("paper")
    assert err[500] <= 0.15, f"mean distance at step 500: {err[500]:.3f}"
    report(6, f"full scale: err[500] = {err[500]:.4f}")


# -- 7: gradient-bound estimation ---------------------------------------------


def test_criterion_7_kappa_estimates():
    t0 = time.perf_counter()
    dw = get_benchmark("double_well_1d")
    kappa_dw = estimate_kappa(dw.gradient, dw.domain, 2000, 101)
    assert 68.0 <= kappa_dw <= 72.0, f"double-well kappa {kappa_dw:.2f}"
    mix = get_benchmark("gauss_mix_2d")
    kappa_mix = estimate_kappa(mix.gradient, mix.domain, 2000, 101)
    assert 3.7 <= kappa_mix <= 4.5, f"mixture kappa {kappa_mix:.2f}"
    dt = time.perf_counter() - t0
    assert dt < 1.0, f"kappa estimation took {dt:.2f}s, budget 1s"
    report(7, f"double well {kappa_dw:.2f}, mixture {kappa_mix:.2f} in {dt:.2f}s")


# -- 8: training-free property suite ------------------------------------------


def test_criterion_8_zero_training_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)

    # mirror-map laws: containment, idempotence, 2-width periodicity,
    # reflection symmetry across each face
    box = get_benchmark("gauss_mix_2d").domain
    pts = rng.uniform(-40.0, 40.0, size=(500, 2))
    folded = mirror(pts, box)
    assert (folded >= box.lower).all() and (folded <= box.upper).all()
    np.testing.assert_array_equal(mirror(folded, box), folded)
    period = 2.0 * box.widths
    np.testing.assert_allclose(mirror(pts + period, box), folded, atol=1e-9)
    refl = 2.0 * box.upper - pts
    np.testing.assert_allclose(mirror(refl, box), folded, atol=1e-9)

    # noise bounds and monotonicity in the curvature argument
    ctl = ControlSet(0.2, 1.0)
    lo, hi = np.sqrt(2.0 * ctl.u_min), np.sqrt(2.0 * ctl.u_max)
    laps = np.linspace(-80.0, 80.0, 4001)
    sig = noise_coeff(laps, 0.25, ctl)
    assert (sig >= lo - 1e-12).all() and (sig <= hi + 1e-12).all()
    assert (np.diff(sig) <= 1e-12).all(), "noise must not increase with curvature"

    # truncation semantics: inclusive threshold, elementwise
    h = np.array([0.0, 0.4, 0.5, 0.6])
    np.testing.assert_array_equal(truncated_noise(h, 0.5), [0.0, 0.0, 0.5, 0.6])
    np.testing.assert_array_equal(truncated_noise(h, 0.0), h)

    # classical limit: the soft minimum tightens to the hard minimum
    # and the noise to the bang-bang value as lambda drops
    for lap in (2.0, -3.0):
        hard = min(ctl.u_min * lap, ctl.u_max * lap)
        bang = np.sqrt(2.0 * (ctl.u_min if lap > 0 else ctl.u_max))
        gaps_h = [abs(log_partition(lap, lam, ctl) - hard)
                  for lam in (0.1, 0.01, 1e-3, 1e-4)]
        gaps_s = [abs(noise_coeff(lap, lam, ctl) - bang)
                  for lam in (0.1, 0.01, 1e-3, 1e-4)]
        assert all(a > b for a, b in zip(gaps_h, gaps_h[1:]))
        assert all(a > b for a, b in zip(gaps_s, gaps_s[1:]))
        assert gaps_h[-1] < 1e-2 and gaps_s[-1] < 1e-3

    # zero noise reduces the dynamics to mirrored gradient descent
    bench = get_benchmark("double_well_1d")
    problem = bench.problem(lam=0.04)
    from hjbopt.langevin import LangevinConfig

    cfg = LangevinConfig(step_size=0.01, horizon=50, truncation=0.0, n_traj=4, seed=3)
    log = run_trajectories(problem, lambda x: np.zeros(x.shape[0]), cfg)
    x = log.states[:, 0].copy()
    for k in range(cfg.horizon):
        x = mirror(x - cfg.step_size * problem.gradient(x), problem.domain)
        np.testing.assert_array_equal(log.states[:, k + 1], x)

    # determinism across batching: a smaller trajectory batch is a
    # prefix of a larger one, and the loss gradient does not depend on
    # the evaluation chunk size
    big = run_trajectories(problem, lambda x: np.zeros(x.shape[0]), dataclasses.replace(cfg, n_traj=8))
    np.testing.assert_array_equal(big.states[:4], log.states)

    cosine = get_benchmark("cosine_d1", rho=1.0, control=ctl)
    cprob = cosine.problem(lam=0.32)
    params = init_network(0, [1, 6, 6, 1])
    interior = sample_interior(cprob.domain, 96, rng)
    boundary = sample_boundary(cprob.domain, 8, rng)
    tcfg = TrainConfig(alpha_res=1.0, alpha_bnd=2.0, n_interior=96, n_boundary=8,
                       iterations=1, learning_rate=1e-3, lr_schedule="constant",
                       lr_min=1e-5, beta1=0.9, beta2=0.99, weight_decay=0.0,
                       seed=0, log_every=1)
    old_chunk = training_mod._CHUNK
    try:
        training_mod._CHUNK = 4096
        tape = Tape()
        v_one = loss(params, cprob, interior, boundary, tcfg, tape)
        g_one = backward(tape)
        training_mod._CHUNK = 16
        tape = Tape()
        v_many = loss(params, cprob, interior, boundary, tcfg, tape)
        g_many = backward(tape)
    finally:
        training_mod._CHUNK = old_chunk
    assert v_many == pytest.approx(v_one, rel=1e-13)
    for (gw1, gb1), (gw2, gb2) in zip(g_one, g_many):
        np.testing.assert_allclose(gw2, gw1, rtol=1e-11, atol=1e-16)
        np.testing.assert_allclose(gb2, gb1, rtol=1e-11, atol=1e-16)

    dt = time.perf_counter() - t0
    assert dt < 60.0, f"property suite took {dt:.1f}s, budget 60s"
    report(8, f"mirror/noise/truncation/classical-limit/descent/determinism in {dt:.1f}s")


# -- shipped checkpoints for the long-running configs -------------------------


@pytest.mark.parametrize("name", ["easom_2d", "hartmann_6d"])
def test_pretrained_checkpoint_smoke(name):
    """The full-scale 2-d/6-d runs take hours, so the shipped ci
    checkpoints are exercised instead: trajectories stay inside the
    box and the ensemble error trends down over the first 200 steps."""
    res = resolve(load_config(CONFIGS / "ci" / f"{name}.json"))
    params, _ = load_checkpoint(CHECKPOINTS / f"{name}.bin")
    assert params.dimension == res.benchmark.dimension
    noise = network_noise_field(params, res.problem.lam, res.problem.control)
    short = dataclasses.replace(res.langevin, horizon=200)
    log = run_trajectories(res.problem, noise, short)

    lo, hi = res.problem.domain.lower, res.problem.domain.upper
    assert (log.states >= lo).all() and (log.states <= hi).all()

    _, err = trajectory_stats(log.objectives, log.states, res.benchmark.minimizers)
    head = err[:20].mean()
    tail = err[-20:].mean()
    assert tail < 0.8 * head, f"no downward trend: head {head:.3f}, tail {tail:.3f}"

    # training curve shipped with the checkpoint: last-decile median
    # below the first-decile median
    log_csv = np.genfromtxt(CHECKPOINTS / f"{name}_train_log.csv",
                            delimiter=",", names=True)
    total = np.atleast_1d(log_csv["loss_total"])
    k = max(1, len(total) // 10)
    assert np.median(total[-k:]) < np.median(total[:k])
