"""Bayesian optimization: single-objective, multi-objective, contextual.

All optimizers minimize.  The single-objective loop fits a GP surrogate to
past evaluations and proposes the expected-improvement maximizer; the
multi-objective loop randomly scalarizes the objectives each iteration
with the augmented Tchebycheff function and runs the same machinery
(ParEGO); the contextual loop fits one joint model over parameters and
context and optimizes the acquisition over parameters with the context
pinned to whatever the environment supplies.

Determinism: every run consumes a single seeded generator, proposals scan
candidates in a fixed order with first-index tie-breaks, and identical
seeds replay identical histories.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import gp

#: acquisition optimizer: uniform candidates + coordinate refinement
N_CANDIDATES = 2000
REFINE_TOP = 5
REFINE_PASSES = 20
REFINE_STEP0 = 0.1
REFINE_SHRINK = 0.75
#: ParEGO constants
PAREGO_RHO = 0.05
SIMPLEX_DIVISIONS = 10
#: hyperparameters are refit every iteration up to this many points, then
#: every REFIT_EVERY iterations (cost control)
REFIT_FULL_UNTIL = 50
REFIT_EVERY = 5
DEFAULT_N_INIT = 5


class EvaluatorError(RuntimeError):
    """An evaluator fault; the partial history is attached."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class SearchSpace:
    """Box search space with named dimensions."""

    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.names) != len(self.bounds):
            raise ValueError("names and bounds must have the same length")
        for name, (lo, hi) in zip(self.names, self.bounds):
            if not lo < hi:
                raise ValueError(f"dimension {name}: lower bound must be < upper")

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.asarray([b[1] for b in self.bounds])

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.d)) * (self.hi - self.lo)

    def clip(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, self.lo, self.hi)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))


@dataclass
class Record:
    iteration: int
    seed: int
    theta: np.ndarray
    objectives: np.ndarray  # (k,)
    context: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    best_so_far: float | None = None


class History:
    """Append-only evaluation log of one optimizer run."""

    def __init__(self, space: SearchSpace, objective_names=("objective",), context_names=()):
        self.space = space
        self.objective_names = tuple(objective_names)
        self.context_names = tuple(context_names)
        self.records: list[Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: Record) -> None:
        if record.iteration != len(self.records):
            raise ValueError("iteration indices must be contiguous")
        self.records.append(record)

    def thetas(self) -> np.ndarray:
        return np.stack([r.theta for r in self.records])

    def objectives(self) -> np.ndarray:
        return np.stack([r.objectives for r in self.records])

    def contexts(self) -> np.ndarray | None:
        if not self.context_names:
            return None
        return np.stack([r.context for r in self.records])

    def joint_inputs(self) -> np.ndarray:
        if not self.context_names:
            return self.thetas()
        return np.hstack([self.thetas(), self.contexts()])

    def best_value(self) -> float:
        return float(np.min(self.objectives()[:, 0]))

    def best_so_far_trace(self) -> np.ndarray:
        return np.minimum.accumulate(self.objectives()[:, 0])

    def write_csv(self, fh, extra_columns: dict[str, list] | None = None) -> None:
        """Columns: iter,seed,context...,theta...,objective...,best_so_far."""
        cols = ["iter", "seed"]
        cols += [f"context_{n}" for n in self.context_names]
        cols += [f"theta_{n}" for n in self.space.names]
        cols += [f"objective_{n}" for n in self.objective_names]
        cols += ["best_so_far"]
        extra = extra_columns or {}
        cols += list(extra.keys())
        fh.write(",".join(cols) + "\n")
        for i, r in enumerate(self.records):
            row = [str(r.iteration), str(r.seed)]
            if self.context_names:
                row += [repr(float(v)) for v in r.context]
            row += [repr(float(v)) for v in r.theta]
            row += [repr(float(v)) for v in r.objectives]
            row.append("" if r.best_so_far is None else repr(float(r.best_so_far)))
            row += [repr(float(extra[k][i])) for k in extra]
            fh.write(",".join(row) + "\n")

    def to_csv(self, path, extra_columns=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.write_csv(fh, extra_columns)


def _normalize_evaluation(out) -> tuple[np.ndarray, dict]:
    meta: dict = {}
    if isinstance(out, tuple):
        out, meta = out
    y = np.atleast_1d(np.asarray(out, dtype=float))
    return y, meta


# -- design and acquisition ---------------------------------------------------


def initial_design(space: SearchSpace, n: int, seed) -> np.ndarray:
    """Latin hypercube sample: each 1-D projection hits each of the n
    equal-width strata exactly once."""
    if n < 1:
        raise ValueError("need n >= 1 design points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = np.empty((n, space.d))
    for k in range(space.d):
        u[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return space.lo + u * (space.hi - space.lo)


def expected_improvement(model: gp.GpModel, X, incumbent_best: float) -> np.ndarray:
    """EI under minimization; zero wherever predictive std collapses."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean, var = model.predict(X)
    sigma = np.sqrt(var)
    improve = incumbent_best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improve / sigma, 0.0)
    ei = improve * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(sigma < 1e-12, 0.0, np.maximum(ei, 0.0))


def _maximize_acquisition(score_fn, space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    """Candidate scan plus coordinate refinement of the top candidates.

    score_fn maps an (n, d) batch to n scores (to maximize).  The scan and
    the refinement probe points in a fixed order, so the argmax (first
    index on ties) is independent of any evaluation parallelism.
    """
    cands = space.sample_uniform(rng, N_CANDIDATES)
    scores = score_fn(cands)
    top = np.argsort(-scores, kind="stable")[:REFINE_TOP]
    pts = cands[top].copy()
    vals = scores[top].copy()
    span = space.hi - space.lo
    step = REFINE_STEP0
    for _ in range(REFINE_PASSES):
        # probes: every candidate shifted +/- step along every axis
        offsets = np.concatenate([np.eye(space.d), -np.eye(space.d)]) * (step * span)
        probes = space.clip(pts[:, None, :] + offsets[None, :, :])
        flat = probes.reshape(-1, space.d)
        pvals = score_fn(flat).reshape(len(pts), -1)
        best_idx = np.argmax(pvals, axis=1)
        best_val = pvals[np.arange(len(pts)), best_idx]
        improved = best_val > vals
        pts[improved] = probes[np.arange(len(pts)), best_idx][improved]
        vals[improved] = best_val[improved]
        step *= REFINE_SHRINK
    winner = int(np.argmax(vals))
    return pts[winner]


def propose(model: gp.GpModel, space: SearchSpace, incumbent_best: float, seed) -> np.ndarray:
    """Maximize expected improvement over the space."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _maximize_acquisition(
        lambda X: expected_improvement(model, X, incumbent_best), space, rng
    )


# -- single-objective loop ----------------------------------------------------


def _fit_or_rebuild(history_X, history_y, bounds, iteration, n, prev_hp, rng, restarts):
    dataset = gp.Dataset(history_X, history_y, bounds=bounds)
    if n <= REFIT_FULL_UNTIL or iteration % REFIT_EVERY == 0:
        return gp.fit(
            dataset,
            restarts=restarts,
            seed=int(rng.integers(2**31)),
            warm_start=prev_hp,
        )
    # off-schedule: keep hyperparameters, refresh the factorization
    return gp.GpModel(dataset, prev_hp)


def bo_run(
    evaluator,
    space: SearchSpace,
    budget: int,
    n_init: int = DEFAULT_N_INIT,
    seed: int = 0,
    restarts: int = gp.DEFAULT_RESTARTS,
    objective_name: str = "objective",
    _context_for_records=None,
    _context_names=(),
) -> History:
    """Minimize a scalar evaluator within an evaluation budget.

    Runs an n_init-point Latin hypercube, then fit/propose/evaluate
    iterations.  The evaluator may return a float or (float, metadata
    dict).  An evaluator exception aborts the run and raises
    EvaluatorError carrying the partial history.
    """
    if not (budget >= n_init >= 2):
        raise ValueError("need budget >= n_init >= 2")
    rng = np.random.default_rng(seed)
    history = History(space, (objective_name,), _context_names)

    def run_one(iteration, theta):
        try:
            y, meta = _normalize_evaluation(evaluator(theta))
        except Exception as exc:
            raise EvaluatorError(f"evaluator failed at iteration {iteration}: {exc}", history) from exc
        best = min(float(y[0]), history.records[-1].best_so_far) if history.records else float(y[0])
        history.append(
            Record(
                iteration=iteration,
                seed=seed,
                theta=np.asarray(theta, dtype=float),
                objectives=y,
                context=None if _context_for_records is None else np.asarray(_context_for_records, dtype=float),
                metadata=meta,
                best_so_far=best,
            )
        )

    for i, theta in enumerate(initial_design(space, n_init, rng)):
        run_one(i, theta)

    model_hp = None
    for it in range(n_init, budget):
        model = _fit_or_rebuild(
            history.thetas(),
            history.objectives()[:, 0],
            list(space.bounds),
            it,
            len(history),
            model_hp,
            rng,
            restarts,
        )
        model_hp = model.hp
        incumbent = history.best_value()
        theta = _maximize_acquisition(
            lambda X: expected_improvement(model, X, incumbent), space, rng
        )
        run_one(it, theta)
    return history


# -- Pareto machinery ---------------------------------------------------------


def dominates(y1, y2) -> bool:
    """True iff y1 is no worse in every objective and better in one."""
    a = np.asarray(y1, dtype=float)
    b = np.asarray(y2, dtype=float)
    if a.shape != b.shape:
        raise ValueError("objective vectors must have equal length")
    return bool(np.all(a <= b) and np.any(a < b))


@dataclass
class ParetoSet:
    """Nondominated subset of evaluated points, in insertion order."""

    indices: list[int]
    objectives: np.ndarray  # (m, k)

    def check_invariants(self, all_points: np.ndarray | None = None) -> None:
        m = len(self.indices)
        for i in range(m):
            for j in range(m):
                if i != j and dominates(self.objectives[i], self.objectives[j]):
                    raise AssertionError("Pareto set contains a dominated member")
        if all_points is not None:
            kept = set(self.indices)
            for idx, y in enumerate(all_points):
                if idx in kept:
                    continue
                covered = any(
                    dominates(self.objectives[i], y) or np.array_equal(self.objectives[i], y)
                    for i in range(m)
                )
                if not covered:
                    raise AssertionError(f"excluded point {idx} is not dominated")


def pareto_front(points) -> ParetoSet:
    """Exact nondominated filter; duplicates keep their earliest instance."""
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    if Y.size == 0:
        return ParetoSet([], Y.reshape(0, 0))
    n = Y.shape[0]
    # pairwise dominance via broadcasting; dom[j, i]: j dominates i
    le = np.all(Y[:, None, :] <= Y[None, :, :], axis=2)
    lt = np.any(Y[:, None, :] < Y[None, :, :], axis=2)
    dominated = np.any(le & lt, axis=0)
    # exact duplicates: only the earliest instance survives
    eq = le & le.T
    earlier_dup = np.any(eq & (np.arange(n)[:, None] < np.arange(n)[None, :]), axis=0)
    keep = np.flatnonzero(~dominated & ~earlier_dup)
    return ParetoSet(list(map(int, keep)), Y[keep])


@dataclass(frozen=True)
class ScalarizationWeights:
    """Simplex weights and the augmentation constant for Tchebycheff."""

    lam: np.ndarray
    rho: float = PAREGO_RHO

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0) or abs(float(np.sum(lam)) - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "lam", lam)


def tchebycheff_scalarize(y_norm, weights: ScalarizationWeights) -> float:
    """Augmented Tchebycheff value of objectives normalized to [0, 1]^k."""
    y = np.asarray(y_norm, dtype=float)
    w = weights.lam * y
    return float(np.max(w) + weights.rho * np.sum(w))


def _simplex_grid(k: int, divisions: int) -> np.ndarray:
    combos = [
        np.asarray(c, dtype=float) / divisions
        for c in itertools.product(range(divisions + 1), repeat=k)
        if sum(c) == divisions
    ]
    return np.stack(combos)


def hypervolume_2d(front, reference) -> float:
    """Exact dominated area of a 2-D front relative to a reference point."""
    ref = np.asarray(reference, dtype=float)
    Y = np.atleast_2d(np.asarray(front, dtype=float))
    if Y.size == 0:
        return 0.0
    if Y.shape[1] != 2:
        raise ValueError("hypervolume_2d needs 2-D objectives")
    if np.any(Y > ref + 1e-12):
        raise ValueError("front point lies beyond the reference point")
    nd = pareto_front(Y)
    pts = nd.objectives[np.argsort(nd.objectives[:, 0], kind="stable")]
    area = 0.0
    prev_y = ref[1]
    for x, y in pts:
        area += (ref[0] - x) * (prev_y - y)
        prev_y = y
    return float(area)


@dataclass
class ParegoResult:
    history: History
    front: ParetoSet
    front_trace: list[tuple[int, ...]]
    hypervolume_trace: list[float | None]


def parego_run(
    evaluator,
    space: SearchSpace,
    budget: int,
    n_init: int = DEFAULT_N_INIT,
    seed: int = 0,
    reference_point=None,
    simplex_divisions: int = SIMPLEX_DIVISIONS,
    rho: float = PAREGO_RHO,
    restarts: int = gp.DEFAULT_RESTARTS,
    objective_names=("f1", "f2"),
) -> ParegoResult:
    """ParEGO: random augmented-Tchebycheff scalarization per iteration.

    Objectives are normalized to [0, 1] with the running min/max over the
    history before scalarizing.  The hypervolume trace (when a reference
    point is given) ignores points that do not dominate the reference.
    """
    if not (budget >= n_init >= 2):
        raise ValueError("need budget >= n_init >= 2")
    k = len(objective_names)
    rng = np.random.default_rng(seed)
    history = History(space, objective_names)
    grid = _simplex_grid(k, simplex_divisions)
    ref = None if reference_point is None else np.asarray(reference_point, dtype=float)
    front_trace: list[tuple[int, ...]] = []
    hv_trace: list[float | None] = []

    def hv_now() -> float | None:
        if ref is None:
            return None
        Y = history.objectives()
        ok = np.all(Y <= ref, axis=1)
        return hypervolume_2d(Y[ok], ref) if np.any(ok) else 0.0

    def run_one(iteration, theta):
        try:
            y, meta = _normalize_evaluation(evaluator(theta))
        except Exception as exc:
            raise EvaluatorError(f"evaluator failed at iteration {iteration}: {exc}", history) from exc
        if y.shape != (k,):
            raise EvaluatorError(
                f"expected {k} objectives, got shape {y.shape}", history
            )
        history.append(
            Record(iteration, seed, np.asarray(theta, dtype=float), y, None, meta, None)
        )
        front_trace.append(tuple(pareto_front(history.objectives()).indices))
        hv = hv_now()
        hv_trace.append(hv)
        history.records[-1].best_so_far = hv

    for i, theta in enumerate(initial_design(space, n_init, rng)):
        run_one(i, theta)

    model_hp = None
    for it in range(n_init, budget):
        lam = grid[int(rng.integers(len(grid)))]
        weights = ScalarizationWeights(lam, rho)
        Y = history.objectives()
        ymin, ymax = Y.min(axis=0), Y.max(axis=0)
        span = np.where(ymax > ymin, ymax - ymin, 1.0)
        Yn = (Y - ymin) / span
        scalars = np.array([tchebycheff_scalarize(row, weights) for row in Yn])
        model = _fit_or_rebuild(
            history.thetas(), scalars, list(space.bounds), it, len(history), model_hp, rng, restarts
        )
        model_hp = model.hp
        incumbent = float(np.min(scalars))
        theta = _maximize_acquisition(
            lambda X: expected_improvement(model, X, incumbent), space, rng
        )
        run_one(it, theta)

    front = pareto_front(history.objectives())
    return ParegoResult(history, front, front_trace, hv_trace)


# -- contextual optimization --------------------------------------------------


def _joint_bounds(space: SearchSpace, context_bounds) -> list[tuple[float, float]]:
    return list(space.bounds) + [tuple(b) for b in context_bounds]


def fit_joint_model(
    history: History, context_bounds, restarts: int = gp.DEFAULT_RESTARTS, seed: int = 0
) -> gp.GpModel:
    """Fit the joint (parameters, context) -> objective model of a run."""
    dataset = gp.Dataset(
        history.joint_inputs(),
        history.objectives()[:, 0],
        bounds=_joint_bounds(history.space, context_bounds),
    )
    return gp.fit(dataset, restarts=restarts, seed=seed)


def _incumbent_near_context(model, history: History, s: np.ndarray, space: SearchSpace, rng) -> float:
    """Best observed value among evaluations within one context-lengthscale
    of s; falls back to the minimum posterior mean at context s."""
    d = space.d
    ls = model.hp.lengthscales[d:]
    ctx = history.contexts()
    ctx_n = (ctx - model.dataset.lo[d:]) / model.dataset.span[d:]
    s_n = (np.asarray(s, dtype=float) - model.dataset.lo[d:]) / model.dataset.span[d:]
    dist = np.sqrt(np.sum(((ctx_n - s_n) / ls) ** 2, axis=1))
    near = dist <= 1.0
    if np.any(near):
        return float(np.min(history.objectives()[near, 0]))
    cands = space.sample_uniform(rng, N_CANDIDATES)
    joint = np.hstack([cands, np.tile(s, (len(cands), 1))])
    mean, _ = model.predict(joint)
    return float(np.min(mean))


def cbo_run(
    evaluator,
    space: SearchSpace,
    context_schedule,
    n_init: int = DEFAULT_N_INIT,
    seed: int = 0,
    context_bounds=None,
    context_names=("context",),
    restarts: int = gp.DEFAULT_RESTARTS,
    objective_name: str = "objective",
) -> History:
    """Contextual BO over a joint (parameters, context) model.

    The environment supplies one context per iteration via
    context_schedule; the acquisition is optimized over parameters only,
    with the context held fixed.  Total budget = n_init + schedule length;
    initial-design evaluations cycle through the schedule's distinct
    contexts.  A schedule that never changes context reduces to bo_run
    (bit-identical proposals for the same seed).
    """
    schedule = np.atleast_2d(np.asarray(context_schedule, dtype=float))
    if schedule.shape[0] == 0:
        raise ValueError("context schedule must not be empty")
    c_dim = schedule.shape[1]
    if len(context_names) != c_dim:
        raise ValueError("context_names must match context dimension")
    if context_bounds is None:
        lo, hi = schedule.min(axis=0), schedule.max(axis=0)
        pad = np.where(hi > lo, 0.0, 0.5)
        context_bounds = list(zip(lo - pad, hi + pad))
    for s in schedule:
        for v, (lo, hi) in zip(s, context_bounds):
            if not (lo <= v <= hi):
                raise ValueError(f"context {s} outside declared bounds")

    if np.all(schedule == schedule[0]):
        # constant context: the joint model degenerates to a plain model
        # over parameters, so run the standard loop (identical proposals)
        s0 = schedule[0]
        history = bo_run(
            lambda th: evaluator(th, s0),
            space,
            budget=n_init + len(schedule),
            n_init=n_init,
            seed=seed,
            restarts=restarts,
            objective_name=objective_name,
            _context_for_records=s0,
            _context_names=tuple(context_names),
        )
        return history

    rng = np.random.default_rng(seed)
    history = History(space, (objective_name,), tuple(context_names))
    uniq = []
    for s in schedule:
        if not any(np.array_equal(s, u) for u in uniq):
            uniq.append(s)

    def run_one(iteration, theta, s):
        try:
            y, meta = _normalize_evaluation(evaluator(theta, s))
        except Exception as exc:
            raise EvaluatorError(f"evaluator failed at iteration {iteration}: {exc}", history) from exc
        best = min(float(y[0]), history.records[-1].best_so_far) if history.records else float(y[0])
        history.append(
            Record(iteration, seed, np.asarray(theta, dtype=float), y, np.asarray(s, dtype=float), meta, best)
        )

    for i, theta in enumerate(initial_design(space, n_init, rng)):
        run_one(i, theta, uniq[i % len(uniq)])

    bounds = _joint_bounds(space, context_bounds)
    model_hp = None
    for j, s in enumerate(schedule):
        it = n_init + j
        dataset_X = history.joint_inputs()
        model = _fit_or_rebuild(
            dataset_X, history.objectives()[:, 0], bounds, it, len(history), model_hp, rng, restarts
        )
        model_hp = model.hp
        incumbent = _incumbent_near_context(model, history, s, space, rng)

        def score(X):
            joint = np.hstack([X, np.tile(s, (len(X), 1))])
            return expected_improvement(model, joint, incumbent)

        theta = _maximize_acquisition(score, space, rng)
        run_one(it, theta, s)
    return history


def cbo_policy(model: gp.GpModel, s, space: SearchSpace, seed: int = 0) -> np.ndarray:
    """Greedy policy: parameters minimizing the posterior mean at context s."""
    rng = np.random.default_rng(seed)
    s = np.atleast_1d(np.asarray(s, dtype=float))

    def score(X):
        joint = np.hstack([X, np.tile(s, (len(X), 1))])
        mean, _ = model.predict(joint)
        return -mean

    return _maximize_acquisition(score, space, rng)


def constants() -> dict:
    return {
        "n_candidates": N_CANDIDATES,
        "refine_top": REFINE_TOP,
        "refine_passes": REFINE_PASSES,
        "refine_step0": REFINE_STEP0,
        "refine_shrink": REFINE_SHRINK,
        "parego_rho": PAREGO_RHO,
        "simplex_divisions": SIMPLEX_DIVISIONS,
        "refit_full_until": REFIT_FULL_UNTIL,
        "refit_every": REFIT_EVERY,
        "default_n_init": DEFAULT_N_INIT,
    }
