"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The heavyweight fixtures (the shared 250-trial curve history and
the models built from it) are session-scoped and live in conftest.py.
"""

import functools
import math
import time

import numpy as np
import pytest

from gaitforge import bayesopt as bo
from gaitforge import cpg, experiments as ex, gp, primitives as pr, sim

TWO_PI = 2 * math.pi


def criterion(number, description, budget_s):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.monotonic()
            try:
                fn(*args, **kwargs)
            except Exception:
                print(f"\n[FAIL] criterion {number}: {description}", flush=True)
                raise
            elapsed = time.monotonic() - start
            print(
                f"\n[PASS] criterion {number}: {description} ({elapsed:.1f}s / budget {budget_s}s)",
                flush=True,
            )
            assert elapsed < budget_s, f"criterion {number} exceeded its runtime budget"

        return wrapper

    return deco


@criterion(1, "CPG phase lock for all catalog gaits and frequencies", 5)
def test_criterion_1_phase_lock():
    for name in ("tripod", "ripple", "wave", "four_two"):
        gait = cpg.gait_from_name(name)
        offs = gait.offsets
        for omega in (math.pi, 8 * math.pi, 16 * math.pi):
            net = cpg.build_network(gait, cpg.ControlParams(omega, math.pi / 2, 1.0, 1.0))
            net.rollout(5000, 1e-3)
            for i in range(6):
                for j in range(6):
                    if i == j:
                        continue
                    want = offs[j] - offs[i]
                    err = abs((net.phi[j] - net.phi[i] - want + math.pi) % TWO_PI - math.pi)
                    assert err < 1e-2, (name, omega, i, j, err)


@criterion(2, "CPG amplitude dynamics match the critically damped closed form", 1)
def test_criterion_2_amplitude_closed_form():
    gait = cpg.gait_from_name("tripod")
    net = cpg.build_network(gait, cpg.ControlParams(8 * math.pi, math.pi / 2, 1.0, 1.0))
    traj = net.rollout(1000, 1e-3)
    a = net.config.gain_r
    t = np.arange(1001) * 1e-3
    closed = 1.0 - np.exp(-a * t / 2) * (1 + a * t / 2)
    err = np.max(np.abs(traj["r"] - closed[:, None]))
    assert err < 1e-6, err


@criterion(3, "contact patterns: tripod alternating triples, wave single swing", 10)
def test_criterion_3_contact_patterns():
    params = cpg.ControlParams(8 * math.pi, math.pi / 2, 1.0, 1.0)
    res = sim.run_trial(cpg.gait_from_name("tripod"), params, duration=3.0)
    trace = res.contact_trace[2000:]
    triples = []
    for row in trace:
        s = frozenset(np.flatnonzero(row))
        if len(s) == 3 and (not triples or triples[-1] != s):
            triples.append(s)
    assert set(triples) == {frozenset({0, 2, 4}), frozenset({1, 3, 5})}
    assert all(a != b for a, b in zip(triples, triples[1:]))

    res = sim.run_trial(cpg.gait_from_name("wave"), params, duration=3.0)
    trace = res.contact_trace[2000:]
    swing_counts = 6 - trace.sum(axis=1)
    assert swing_counts.max() <= 1
    swinging = {int(np.flatnonzero(~row)[0]) for row in trace if not row.all()}
    assert swinging == set(range(6))


@criterion(4, "GP log marginal likelihood matches the dense oracle; variance >= 0", 30)
def test_criterion_4_gp_core():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(2, 16))
        d = int(rng.integers(1, 4))
        X = rng.random((n, d))
        y = rng.normal(size=n)
        ds = gp.Dataset(X, y, bounds=[(0.0, 1.0)] * d)
        hp = gp.KernelHyperparams(
            rng.uniform(0.05, 3.0, size=d), rng.uniform(0.1, 5.0), rng.uniform(1e-6, 0.5)
        )
        got = gp.log_marginal_likelihood(ds, hp)
        K = gp.kernel_matrix(hp, ds.X_unit) + hp.noise_variance * np.eye(ds.n)
        sign, logdet = np.linalg.slogdet(K)
        assert sign > 0
        ys = ds.y_standardized
        want = float(-0.5 * ys @ np.linalg.solve(K, ys) - 0.5 * logdet - 0.5 * ds.n * math.log(2 * math.pi))
        assert abs(got - want) < 1e-8

    X = rng.random((40, 3))
    y = np.sin(4 * X[:, 0]) + rng.normal(0, 0.1, size=40)
    model = gp.fit(gp.Dataset(X, y, bounds=[(0, 1)] * 3), restarts=3, seed=0)
    total = 0
    while total < 10_000:
        batch = min(2000, 10_000 - total)
        _, var = model.predict(rng.random((batch, 3)) * 4 - 1.5)
        assert np.all(var >= 0.0)
        total += batch


@criterion(5, "BO learns the bowl and beats random search on the speed task", 300)
def test_criterion_5_bo():
    # (a) 2-D quadratic bowl: within 1% of the optimum value by iteration 30
    space = bo.SearchSpace(("x", "y"), ((0.0, 1.0), (0.0, 1.0)))
    bowl = lambda th: 1.0 + (th[0] - 0.3) ** 2 + (th[1] - 0.7) ** 2
    wins = 0
    for seed in range(20):
        h = bo.bo_run(bowl, space, budget=30, n_init=5, seed=seed)
        if h.best_value() <= 1.01:
            wins += 1
    assert wins >= 18, f"bowl optimum reached on only {wins}/20 seeds"

    # (b) surrogate tripod speed: median optimized speed >= 3x median of
    # 50 purely random evaluations
    gait = cpg.gait_from_name("tripod")
    cspace = ex.control_space()
    best_speeds = []
    for seed in range(20):
        h = bo.bo_run(
            ex.make_walk_evaluator(gait, seed, noise=True),
            cspace, budget=50, n_init=5, seed=seed, objective_name="neg_speed",
        )
        best_speeds.append(-h.best_value())
    rng = np.random.default_rng(7)
    random_thetas = cspace.sample_uniform(rng, 50)
    rand_eval = ex.make_walk_evaluator(gait, 999, noise=True)
    random_speeds = [-rand_eval(th)[0] for th in random_thetas]
    assert np.median(best_speeds) >= 3.0 * np.median(random_speeds), (
        np.median(best_speeds), np.median(random_speeds)
    )


@criterion(6, "ParEGO explores the analytic and surrogate Pareto fronts", 600)
def test_criterion_6_parego():
    # analytic toy: hypervolume >= 95% of truth by iteration 40
    space = bo.SearchSpace(("x",), ((-1.0, 3.0),))
    toy = lambda th: np.array([th[0] ** 2, (th[0] - 2.0) ** 2])
    u = np.linspace(0.0, 4.0, 400001)
    true_hv = float(np.trapezoid(9.0 - (2.0 - np.sqrt(u)) ** 2, u) + 5.0 * 9.0)
    wins = 0
    for seed in range(20):
        res = bo.parego_run(toy, space, budget=40, n_init=5, seed=seed, reference_point=(9.0, 9.0))
        if res.hypervolume_trace[-1] >= 0.95 * true_hv:
            wins += 1
    assert wins >= 16, f"toy front covered on only {wins}/20 seeds"

    # surrogate speed-vs-energy: exported set nondominated, HV trace monotone
    gait = cpg.gait_from_name("tripod")
    res = bo.parego_run(
        ex.make_moo_evaluator(gait, 0, noise=True),
        ex.control_space(), budget=50, n_init=5, seed=0,
        reference_point=ex.MOO_REFERENCE, objective_names=("neg_speed", "energy"),
    )
    res.front.check_invariants(res.history.objectives())
    trace = [v for v in res.hypervolume_trace if v is not None]
    assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))


@criterion(7, "dominance and Pareto filtering agree with brute force", 5)
def test_criterion_7_dominance_oracles():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        a, b = rng.integers(0, 5, size=(2, k)).astype(float)
        want = bool(np.all(a <= b) and np.any(a < b))
        assert bo.dominates(a, b) == want
    for _ in range(200):
        n = int(rng.integers(1, 25))
        Y = rng.integers(0, 8, size=(n, 2)).astype(float)
        got = bo.pareto_front(Y).indices
        brute = []
        for i in range(n):
            dominated = any(bo.dominates(Y[j], Y[i]) for j in range(n) if j != i)
            duplicate = any(np.array_equal(Y[j], Y[i]) for j in range(i))
            if not dominated and not duplicate:
                brute.append(i)
        assert got == brute


@criterion(8, "contextual BO generalizes: quadratic regret and incline policy", 900)
def test_criterion_8_cbo_generalization(recwarn):
    # contextual quadratic: five post-training evaluations at an unseen
    # context beat a fresh five-evaluation run
    space = bo.SearchSpace(("t",), ((0.0, 1.0),))
    quad = lambda th, s: (th[0] - s[0]) ** 2
    train = np.array([[0.2], [0.5], [0.8]])
    target = np.array([0.65])
    cbo_regrets, bo_regrets = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed + 1000)
        schedule = np.vstack([train[rng.integers(0, 3, size=15)], np.tile(target, (5, 1))])
        h = bo.cbo_run(quad, space, schedule, n_init=5, seed=seed, context_bounds=[(0.0, 1.0)])
        cbo_regrets.append(float(np.min(h.objectives()[-5:, 0])))
        h2 = bo.bo_run(lambda th: quad(th, target), space, budget=5, n_init=2, seed=seed)
        bo_regrets.append(h2.best_value())
    assert np.mean(cbo_regrets) < np.mean(bo_regrets), (np.mean(cbo_regrets), np.mean(bo_regrets))

    # incline task: train at {5, 10, 15} deg, then the greedy policy at the
    # intermediate inclines keeps >= 80% of the interpolated neighbors' speed
    gait = cpg.gait_from_name("tripod")
    ispace = ex.incline_space()
    contexts = np.array([[ex.INCLINE_TRAIN_CONTEXTS[i % 3]] for i in range(45)])
    h = bo.cbo_run(
        ex.make_incline_evaluator(gait, 0, noise=True),
        ispace, contexts, n_init=5, seed=0,
        context_bounds=ex.INCLINE_CONTEXT_BOUNDS, context_names=("incline_deg",),
    )
    model = bo.fit_joint_model(h, ex.INCLINE_CONTEXT_BOUNDS, seed=0)

    def policy_speed(deg):
        theta = bo.cbo_policy(model, [deg], ispace, seed=3)
        params = cpg.ControlParams(theta[0], theta[1], theta[2], theta[2])
        return sim.speed_objective(sim.run_trial(gait, params, sim.Context(deg)))

    speeds = {deg: policy_speed(deg) for deg in (5.0, 7.5, 10.0, 12.5, 15.0)}
    assert speeds[7.5] >= 0.8 * 0.5 * (speeds[5.0] + speeds[10.0]), speeds
    assert speeds[12.5] >= 0.8 * 0.5 * (speeds[10.0] + speeds[15.0]), speeds


@criterion(9, "primitive model beats the direct contextual policy on the grid", 1200)
def test_criterion_9_primitive_coverage(curve_history, primitive_model, joint_curve_model):
    gait = cpg.gait_from_name("tripod")
    space = curve_history.space
    prim_errors, policy_errors = [], []
    for k, target in enumerate(ex.displacement_grid()):
        th_prim = pr.solve_primitive(primitive_model, target, n_samples=10_000, seed=k)
        th_pol = bo.cbo_policy(joint_curve_model, target, space, seed=k)
        for th, out in ((th_prim, prim_errors), (th_pol, policy_errors)):
            res = sim.run_trial(
                gait, cpg.ControlParams(*th), duration=sim.CURVE_TRIAL_DURATION,
                seed=7919 + k, noise_std=sim.SIGMA_OBS,
            )
            out.append(sim.target_objective(res, target))
    mean_prim = float(np.mean(prim_errors))
    mean_policy = float(np.mean(policy_errors))
    assert mean_prim <= mean_policy, (mean_prim, mean_policy)


@criterion(10, "shooting planner navigates the two-wall maze open loop", 600)
def test_criterion_10_maze(primitive_model):
    maze = sim.load_maze(ex.default_maze_path())
    reached = 0
    for seed in range(10):
        path = pr.plan_path(primitive_model, maze, n_samples=10_000, seed=seed)
        pose = maze.start_pose
        for step in path.steps:
            assert not sim.segment_collides(pose[:2], step.world_pose[:2], maze)
            pose = step.world_pose
        execution = pr.execute_plan(path, seed=seed * 100, noise_std=sim.SIGMA_OBS)
        if execution.terminal_error <= 1.5 * maze.goal_tolerance:
            reached += 1
    assert reached >= 8, f"goal reached on only {reached}/10 seeds"


@criterion(11, "experiments replay byte-identically from their manifests", 120)
def test_criterion_11_replay(tmp_path):
    from gaitforge import cli

    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "experiment: walk\nbudget: 6\nn_init: 3\nseeds: [0]\nnoise: true\n"
        f"out_dir: {tmp_path / 'a'}\n"
    )
    assert cli.main(["walk", "--config", str(cfg)]) == 0
    assert cli.main(["walk", "--config", str(tmp_path / 'a' / 'manifest.json'), "--out", str(tmp_path / 'b')]) == 0
    a = (tmp_path / "a" / "history.csv").read_bytes()
    b = (tmp_path / "b" / "history.csv").read_bytes()
    assert a == b

    moo_cfg = tmp_path / "moo.yaml"
    moo_cfg.write_text(
        "experiment: moo\nbudget: 8\nn_init: 4\nseeds: [0]\nnoise: true\n"
        f"out_dir: {tmp_path / 'm1'}\n"
    )
    assert cli.main(["moo", "--config", str(moo_cfg)]) == 0
    assert cli.main(["moo", "--config", str(moo_cfg), "--out", str(tmp_path / "m2")]) == 0
    for name in ("history.csv", "pareto.csv"):
        assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()
