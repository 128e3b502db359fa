import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitforge import bayesopt as bo
from gaitforge import gp

UNIT2 = bo.SearchSpace(("x", "y"), ((0.0, 1.0), (0.0, 1.0)))


def bowl(th):
    return 1.0 + (th[0] - 0.3) ** 2 + (th[1] - 0.7) ** 2


class TestSearchSpace:
    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            bo.SearchSpace(("x",), ((1.0, 1.0),))

    def test_contains_and_clip(self):
        assert UNIT2.contains([0.5, 0.5])
        assert not UNIT2.contains([1.5, 0.5])
        assert np.allclose(UNIT2.clip(np.array([[2.0, -1.0]])), [[1.0, 0.0]])


class TestInitialDesign:
    def test_stratification_4x2(self):
        X = bo.initial_design(UNIT2, 4, seed=0)
        for k in range(2):
            strata = np.floor(X[:, k] * 4).astype(int)
            assert sorted(strata) == [0, 1, 2, 3]

    def test_single_point_in_bounds(self):
        space = bo.SearchSpace(("a",), ((-2.0, 6.0),))
        X = bo.initial_design(space, 1, seed=5)
        assert -2.0 <= X[0, 0] <= 6.0

    def test_two_seeds_differ_both_stratified(self):
        a = bo.initial_design(UNIT2, 6, seed=1)
        b = bo.initial_design(UNIT2, 6, seed=2)
        assert not np.array_equal(a, b)
        for X in (a, b):
            for k in range(2):
                assert sorted(np.floor(X[:, k] * 6).astype(int)) == list(range(6))

    @given(n=st.integers(1, 30), seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_stratification_property(self, n, seed):
        X = bo.initial_design(UNIT2, n, seed=seed)
        for k in range(2):
            assert sorted(np.floor(X[:, k] * n).astype(int)) == list(range(n))


class TestExpectedImprovement:
    def _model(self):
        ds = gp.Dataset([[0.0], [0.5], [1.0]], [1.0, 0.0, 1.0], bounds=[(0.0, 1.0)])
        hp = gp.KernelHyperparams(np.array([0.2]), 1.0, gp.NOISE_FLOOR)
        return gp.GpModel(ds, hp)

    def test_zero_when_variance_collapses(self):
        class Interpolator:
            def predict(self, X):
                n = len(np.atleast_2d(X))
                return np.full(n, -5.0), np.zeros(n)  # mean below incumbent, sigma 0

        ei = bo.expected_improvement(Interpolator(), np.array([[0.5]]), incumbent_best=0.0)
        assert ei[0] == 0.0

    def test_small_at_near_noiseless_training_point(self):
        model = self._model()
        ei = bo.expected_improvement(model, np.array([[0.5]]), incumbent_best=0.0)
        assert ei[0] < 1e-3  # residual from the 1e-8 noise floor only

    def test_closed_form_at_z_zero(self):
        # mu == incumbent, sigma = 1 -> EI = phi(0) = 1/sqrt(2 pi)
        ds = gp.Dataset([[0.0], [1.0]], [0.0, 0.0], bounds=[(0.0, 1.0)])
        hp = gp.KernelHyperparams(np.array([0.05]), 1.0, gp.NOISE_FLOOR)
        model = gp.GpModel(ds, hp)
        mean, var = model.predict(np.array([0.5]))
        assert abs(mean - 0.0) < 1e-9 and abs(var - 1.0) < 1e-6  # prior regime
        ei = bo.expected_improvement(model, np.array([[0.5]]), incumbent_best=float(mean))
        assert ei[0] == pytest.approx(1.0 / np.sqrt(2 * np.pi), rel=1e-3)

    def test_tail_bound_far_above_incumbent(self):
        model = self._model()
        mean, var = model.predict(np.array([0.9]))
        sigma = np.sqrt(var)
        ei = bo.expected_improvement(model, np.array([[0.9]]), incumbent_best=float(mean - 10 * sigma))
        assert ei[0] < 1e-6


class TestPropose:
    def test_matches_dense_grid_oracle(self):
        ds = gp.Dataset(
            [[0.0], [0.2], [0.8], [1.0]], [1.0, 0.8, 0.9, 1.1], bounds=[(0.0, 1.0)]
        )
        hp = gp.KernelHyperparams(np.array([0.15]), 1.0, 1e-6)
        model = gp.GpModel(ds, hp)
        space = bo.SearchSpace(("x",), ((0.0, 1.0),))
        incumbent = 0.8
        grid = np.linspace(0.0, 1.0, 100001)[:, None]
        ei = bo.expected_improvement(model, grid, incumbent)
        x_star = grid[int(np.argmax(ei)), 0]
        prop = bo.propose(model, space, incumbent, seed=0)
        assert abs(prop[0] - x_star) <= 0.1 * hp.lengthscales[0]

    def test_flat_model_stays_in_bounds(self):
        ds = gp.Dataset([[0.1, 0.1], [0.9, 0.9]], [1.0, 1.0], bounds=[(0, 1)] * 2)
        hp = gp.KernelHyperparams(np.array([5.0, 5.0]), 1.0, 1e-4)
        model = gp.GpModel(ds, hp)
        prop = bo.propose(model, UNIT2, 1.0, seed=3)
        assert UNIT2.contains(prop)

    def test_deterministic_under_seed(self):
        ds = gp.Dataset([[0.2, 0.3], [0.7, 0.6], [0.4, 0.9]], [3.0, 1.0, 2.0], bounds=[(0, 1)] * 2)
        model = gp.fit(ds, restarts=2, seed=0)
        a = bo.propose(model, UNIT2, 1.0, seed=11)
        b = bo.propose(model, UNIT2, 1.0, seed=11)
        assert np.array_equal(a, b)


class TestBoRun:
    def test_budget_equals_init_is_pure_design(self):
        h = bo.bo_run(bowl, UNIT2, budget=6, n_init=6, seed=0)
        assert len(h) == 6
        X = h.thetas()
        for k in range(2):
            assert sorted(np.floor(X[:, k] * 6).astype(int)) == list(range(6))

    def test_monotone_best_so_far(self):
        h = bo.bo_run(bowl, UNIT2, budget=15, n_init=5, seed=1)
        trace = h.best_so_far_trace()
        assert np.all(np.diff(trace) <= 0)
        assert np.all([r.best_so_far for r in h.records] == trace)

    def test_replay_identical(self):
        h1 = bo.bo_run(bowl, UNIT2, budget=12, n_init=4, seed=7)
        h2 = bo.bo_run(bowl, UNIT2, budget=12, n_init=4, seed=7)
        assert np.array_equal(h1.thetas(), h2.thetas())
        assert np.array_equal(h1.objectives(), h2.objectives())

    def test_proposals_respect_bounds(self):
        h = bo.bo_run(bowl, UNIT2, budget=15, n_init=5, seed=2)
        for r in h.records:
            assert UNIT2.contains(r.theta)

    def test_evaluator_fault_preserves_partial_history(self):
        calls = [0]

        def flaky(th):
            calls[0] += 1
            if calls[0] == 4:
                raise RuntimeError("sensor failure")
            return bowl(th)

        with pytest.raises(bo.EvaluatorError) as exc_info:
            bo.bo_run(flaky, UNIT2, budget=10, n_init=5, seed=0)
        assert len(exc_info.value.history) == 3

    def test_bad_budget_rejected(self):
        with pytest.raises(ValueError):
            bo.bo_run(bowl, UNIT2, budget=3, n_init=4)
        with pytest.raises(ValueError):
            bo.bo_run(bowl, UNIT2, budget=5, n_init=1)

    def test_bowl_reaches_optimum(self):
        h = bo.bo_run(bowl, UNIT2, budget=30, n_init=5, seed=4)
        assert h.best_value() <= 1.01


class TestDominance:
    def test_simple_domination(self):
        assert bo.dominates((1, 1), (2, 2))

    def test_incomparable(self):
        assert not bo.dominates((1, 2), (2, 1))
        assert not bo.dominates((2, 1), (1, 2))

    def test_equal_not_dominating(self):
        assert not bo.dominates((1, 2), (1, 2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bo.dominates((1, 2), (1, 2, 3))

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_relations_on_random_triples(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.integers(0, 4, size=(3, 3)).astype(float)
        assert not bo.dominates(a, a)  # irreflexive
        if bo.dominates(a, b):
            assert not bo.dominates(b, a)  # antisymmetric
        if bo.dominates(a, b) and bo.dominates(b, c):
            assert bo.dominates(a, c)  # transitive


class TestParetoFront:
    def test_example_front(self):
        ps = bo.pareto_front([(1, 2), (2, 1), (3, 3)])
        assert ps.indices == [0, 1]

    def test_singleton(self):
        ps = bo.pareto_front([(5, 5)])
        assert ps.indices == [0]

    def test_duplicate_keeps_earliest(self):
        ps = bo.pareto_front([(1, 2), (1, 2), (0, 3)])
        assert ps.indices == [0, 2]

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            Y = rng.integers(0, 10, size=(rng.integers(1, 40), 2)).astype(float)
            got = bo.pareto_front(Y).indices
            want = []
            for i in range(len(Y)):
                dominated = any(
                    bo.dominates(Y[j], Y[i]) for j in range(len(Y)) if j != i
                ) or any(np.array_equal(Y[j], Y[i]) for j in range(i))
                if not dominated:
                    want.append(i)
            assert got == want

    def test_invariant_checker(self):
        rng = np.random.default_rng(3)
        Y = rng.random((30, 2))
        ps = bo.pareto_front(Y)
        ps.check_invariants(Y)


class TestScalarization:
    def test_degenerate_weight(self):
        w = bo.ScalarizationWeights(np.array([1.0, 0.0]), rho=0.0)
        assert bo.tchebycheff_scalarize((0.3, 0.9), w) == pytest.approx(0.3)

    def test_augmented_formula(self):
        w = bo.ScalarizationWeights(np.array([0.5, 0.5]), rho=0.05)
        assert bo.tchebycheff_scalarize((0.2, 0.4), w) == pytest.approx(0.215)

    def test_zero_vector(self):
        w = bo.ScalarizationWeights(np.array([0.25, 0.75]))
        assert bo.tchebycheff_scalarize((0.0, 0.0), w) == 0.0

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            bo.ScalarizationWeights(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            bo.ScalarizationWeights(np.array([-0.1, 1.1]))

    @given(
        y0=st.floats(0, 1), y1=st.floats(0, 1), i=st.integers(0, 10)
    )
    @settings(max_examples=50, deadline=None)
    def test_formula_property(self, y0, y1, i):
        lam = np.array([i / 10, 1 - i / 10])
        w = bo.ScalarizationWeights(lam, rho=0.05)
        got = bo.tchebycheff_scalarize((y0, y1), w)
        want = max(lam[0] * y0, lam[1] * y1) + 0.05 * (lam[0] * y0 + lam[1] * y1)
        assert got == pytest.approx(want, abs=1e-12)


class TestHypervolume:
    def test_single_point(self):
        assert bo.hypervolume_2d([(0.0, 0.0)], (1.0, 1.0)) == pytest.approx(1.0)

    def test_two_point_inclusion_exclusion(self):
        assert bo.hypervolume_2d([(0.0, 0.5), (0.5, 0.0)], (1.0, 1.0)) == pytest.approx(0.75)

    def test_empty_front(self):
        assert bo.hypervolume_2d(np.empty((0, 2)), (1.0, 1.0)) == 0.0

    def test_point_beyond_reference_rejected(self):
        with pytest.raises(ValueError):
            bo.hypervolume_2d([(2.0, 0.0)], (1.0, 1.0))

    def test_matches_montecarlo_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.random((8, 2)) * 0.9
        hv = bo.hypervolume_2d(pts, (1.0, 1.0))
        samples = rng.random((200_000, 2))
        dominated = np.zeros(len(samples), dtype=bool)
        for p in pts:
            dominated |= np.all(samples >= p, axis=1)
        assert hv == pytest.approx(dominated.mean(), abs=5e-3)


class TestParego:
    def _toy(self):
        space = bo.SearchSpace(("x",), ((-1.0, 3.0),))
        f = lambda th: np.array([th[0] ** 2, (th[0] - 2.0) ** 2])
        return space, f

    def test_front_nondominated_and_traces_monotone(self):
        space, f = self._toy()
        res = bo.parego_run(f, space, budget=18, n_init=5, seed=0, reference_point=(9, 9))
        res.front.check_invariants(res.history.objectives())
        trace = [v for v in res.hypervolume_trace if v is not None]
        assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))

    def test_toy_covers_most_of_true_front(self):
        space, f = self._toy()
        u = np.linspace(0, 4, 200001)
        true_hv = float(np.trapezoid(9.0 - (2 - np.sqrt(u)) ** 2, u) + 5.0 * 9.0)
        res = bo.parego_run(f, space, budget=40, n_init=5, seed=1, reference_point=(9, 9))
        assert res.hypervolume_trace[-1] >= 0.95 * true_hv

    def test_normalized_objectives_in_unit_box(self):
        space, f = self._toy()
        res = bo.parego_run(f, space, budget=12, n_init=5, seed=2)
        Y = res.history.objectives()
        ymin, ymax = Y.min(axis=0), Y.max(axis=0)
        span = np.where(ymax > ymin, ymax - ymin, 1.0)
        Yn = (Y - ymin) / span
        assert np.all(Yn >= -1e-12) and np.all(Yn <= 1 + 1e-12)

    def test_replay_identical(self):
        space, f = self._toy()
        a = bo.parego_run(f, space, budget=12, n_init=5, seed=3)
        b = bo.parego_run(f, space, budget=12, n_init=5, seed=3)
        assert np.array_equal(a.history.objectives(), b.history.objectives())


class TestCbo:
    SPACE = bo.SearchSpace(("t",), ((0.0, 1.0),))

    @staticmethod
    def quad(th, s):
        return (th[0] - s[0]) ** 2

    def _schedule(self, n, seed):
        ctx = np.array([[0.2], [0.5], [0.8]])
        rng = np.random.default_rng(seed + 1000)
        return ctx[rng.integers(0, 3, size=n)]

    def test_degenerate_schedule_equals_bo_run(self):
        sched = np.full((8, 1), 0.5)
        h_cbo = bo.cbo_run(self.quad, self.SPACE, sched, n_init=4, seed=9, context_bounds=[(0, 1)])
        h_bo = bo.bo_run(lambda th: self.quad(th, [0.5]), self.SPACE, budget=12, n_init=4, seed=9)
        assert np.array_equal(h_cbo.thetas(), h_bo.thetas())
        assert np.all(h_cbo.contexts() == 0.5)

    def test_proposal_generalizes_to_unseen_context(self):
        wins = 0
        for s in range(6):
            h = bo.cbo_run(
                self.quad, self.SPACE, self._schedule(15, s), n_init=5, seed=s,
                context_bounds=[(0.0, 1.0)],
            )
            model = bo.fit_joint_model(h, [(0.0, 1.0)], seed=s)
            pol = bo.cbo_policy(model, [0.65], self.SPACE, seed=s)
            if abs(pol[0] - 0.65) <= 0.1:
                wins += 1
        assert wins >= 5

    def test_policy_matches_best_training_theta(self):
        h = bo.cbo_run(
            self.quad, self.SPACE, self._schedule(20, 3), n_init=5, seed=3,
            context_bounds=[(0.0, 1.0)],
        )
        model = bo.fit_joint_model(h, [(0.0, 1.0)], seed=3)
        ctx = h.contexts().ravel()
        obj = h.objectives()[:, 0]
        at_05 = np.flatnonzero(ctx == 0.5)
        best_theta = h.thetas()[at_05[np.argmin(obj[at_05])], 0]
        pol = bo.cbo_policy(model, [0.5], self.SPACE, seed=1)
        assert abs(pol[0] - best_theta) <= 0.05

    def test_policy_deterministic(self):
        h = bo.cbo_run(
            self.quad, self.SPACE, self._schedule(12, 4), n_init=4, seed=4,
            context_bounds=[(0.0, 1.0)],
        )
        model = bo.fit_joint_model(h, [(0.0, 1.0)], seed=4)
        a = bo.cbo_policy(model, [0.4], self.SPACE, seed=8)
        b = bo.cbo_policy(model, [0.4], self.SPACE, seed=8)
        assert np.array_equal(a, b)

    def test_proposals_respect_theta_bounds(self):
        h = bo.cbo_run(
            self.quad, self.SPACE, self._schedule(10, 5), n_init=4, seed=5,
            context_bounds=[(0.0, 1.0)],
        )
        for r in h.records:
            assert self.SPACE.contains(r.theta)

    def test_context_outside_bounds_rejected(self):
        with pytest.raises(ValueError, match="outside declared bounds"):
            bo.cbo_run(
                self.quad, self.SPACE, np.array([[2.0]]), n_init=4, seed=0,
                context_bounds=[(0.0, 1.0)],
            )

    def test_cbo_beats_fresh_bo_at_unseen_context(self):
        # after training, five extra evaluations at the new context reach a
        # lower regret than a from-scratch run with the same five-trial budget
        cbo_regret, bo_regret = [], []
        target = np.array([0.65])
        for s in range(8):
            sched = np.vstack([self._schedule(15, s), np.tile(target, (5, 1))])
            h = bo.cbo_run(self.quad, self.SPACE, sched, n_init=5, seed=s, context_bounds=[(0, 1)])
            tail = h.objectives()[-5:, 0]
            cbo_regret.append(float(np.min(tail)))
            h2 = bo.bo_run(lambda th: self.quad(th, target), self.SPACE, budget=5, n_init=2, seed=s)
            bo_regret.append(h2.best_value())
        assert np.mean(cbo_regret) < np.mean(bo_regret)


class TestHistoryCsv:
    def test_csv_schema(self, tmp_path):
        h = bo.bo_run(bowl, UNIT2, budget=6, n_init=4, seed=0)
        path = tmp_path / "hist.csv"
        h.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,seed,theta_x,theta_y,objective_objective,best_so_far"
        assert len(lines) == 7
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"

    def test_csv_with_context_and_extra(self, tmp_path):
        h = bo.cbo_run(
            lambda th, s: (th[0] - s[0]) ** 2,
            bo.SearchSpace(("t",), ((0.0, 1.0),)),
            np.array([[0.2], [0.8]]),
            n_init=2,
            seed=1,
            context_bounds=[(0, 1)],
            context_names=("incline",),
        )
        path = tmp_path / "hist.csv"
        h.to_csv(path, extra_columns={"on_front": [1.0] * len(h)})
        header = path.read_text().splitlines()[0]
        assert header == "iter,seed,context_incline,theta_t,objective_objective,best_so_far,on_front"
