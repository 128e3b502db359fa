"""Motor primitives: displacement prediction, inversion, path planning.

A primitive model maps controller parameters straight to the body-frame
displacement (dx, dy, dpsi) one trial produces, learned from the
evaluation history of a contextual target-reaching run.  Inverting the
model (pure model-space search, no simulator calls) yields parameters for
arbitrary displacement targets; chaining such steps with a shooting
planner navigates a maze.

Heading note: the displacement model learns dpsi as a third output so
that consecutive primitives can be composed as planar rigid transforms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bayesopt, cpg, gp, sim

#: shooting-planner defaults
N_SHOOTING_SAMPLES = 10_000
STEP_BUDGET = 25
SOLVE_REFINE_TOP = 10
#: waypoints farther than this multiple of the largest training
#: displacement get split with an intermediate waypoint
SPLIT_FACTOR = 1.2
MIN_TRAINING_RECORDS = 20
#: planned steps never rotate more than this (rad): spinning primitives
#: land wherever their (badly extrapolated) total spin angle says, and a
#: waypoint never needs more than half a turn to face
MAX_STEP_ROTATION = math.pi
#: variance multiplier in the planner's expected-error score (pessimistic
#: 2-sigma accounting of model uncertainty)
VARIANCE_PESSIMISM = 4.0


class PlannerError(RuntimeError):
    """Base planner failure; carries the partial path."""

    def __init__(self, message, path):
        super().__init__(message)
        self.path = path


class BlockedSegmentError(PlannerError):
    """Every sampled candidate for one step collided with a wall."""

    def __init__(self, message, path, step_index):
        super().__init__(message, path)
        self.step_index = step_index


class IncompletePathError(PlannerError):
    """Step budget exhausted before the final waypoint was reached."""


def compose_pose(pose, displacement):
    """Apply a body-frame displacement (dx, dy, dpsi) to a world pose."""
    x, y, psi = pose
    dx, dy, dpsi = displacement
    c, s = math.cos(psi), math.sin(psi)
    return (x + c * dx - s * dy, y + s * dx + c * dy, psi + dpsi)


def compose_displacements(a, b):
    """The single displacement equivalent to applying a then b."""
    ax, ay, apsi = a
    bx, by, bpsi = b
    c, s = math.cos(apsi), math.sin(apsi)
    return (ax + c * bx - s * by, ay + s * bx + c * by, apsi + bpsi)


@dataclass
class PrimitiveModel:
    """Three single-output GPs over a shared parameter space."""

    g_x: gp.GpModel
    g_y: gp.GpModel
    g_psi: gp.GpModel
    space: bayesopt.SearchSpace
    max_training_displacement: float
    provenance: dict = field(default_factory=dict)

    def predict_batch(self, thetas: np.ndarray):
        """Means and variances per output for an (n, d) parameter batch."""
        mx, vx = self.g_x.predict(thetas)
        my, vy = self.g_y.predict(thetas)
        mp, vp = self.g_psi.predict(thetas)
        return np.column_stack([mx, my, mp]), np.column_stack([vx, vy, vp])


def build_primitive_model(
    history: bayesopt.History,
    restarts: int = gp.DEFAULT_RESTARTS,
    seed: int = 0,
) -> PrimitiveModel:
    """Fit the displacement model from a run's recorded observations.

    Uses each record's observed (dx_obs, dy_obs, dpsi_obs) metadata;
    contexts are dropped, making the model context-free by construction.
    """
    if len(history) < MIN_TRAINING_RECORDS:
        raise ValueError(
            f"need at least {MIN_TRAINING_RECORDS} records, got {len(history)}"
        )
    for r in history.records:
        if not {"dx_obs", "dy_obs", "dpsi_obs"} <= r.metadata.keys():
            raise ValueError(
                f"record {r.iteration} lacks observed-displacement metadata"
            )
    thetas = history.thetas()
    obs = np.array(
        [[r.metadata["dx_obs"], r.metadata["dy_obs"], r.metadata["dpsi_obs"]] for r in history.records]
    )
    bounds = list(history.space.bounds)
    models = []
    for k in range(3):
        ds = gp.Dataset(thetas, obs[:, k], bounds=bounds)
        models.append(gp.fit(ds, restarts=restarts, seed=seed + k))
    reach = float(np.max(np.hypot(obs[:, 0], obs[:, 1])))
    return PrimitiveModel(
        g_x=models[0],
        g_y=models[1],
        g_psi=models[2],
        space=history.space,
        max_training_displacement=reach,
        provenance={
            "source_history": getattr(history, "run_id", None),
            "n_records": len(history),
        },
    )


def predict_displacement(model: PrimitiveModel, theta):
    """Componentwise posterior means and variances for one parameter set."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.space.d,):
        raise ValueError(f"expected {model.space.d}-dimensional parameters")
    if not model.space.contains(theta):
        warnings.warn("parameters outside the training bounds; extrapolating")
    mean, var = model.predict_batch(theta[None, :])
    return float(mean[0, 0]), float(mean[0, 1]), float(mean[0, 2]), tuple(var[0])


def solve_error(model: PrimitiveModel, thetas: np.ndarray, target) -> np.ndarray:
    """RMS displacement error under the model posterior.

    sqrt(E ||G(theta) - target||^2) = sqrt(miss^2 + var_x + var_y): the
    scalarization the solver minimizes.  Folding the posterior variance in
    keeps the inversion away from parameters the model only guesses at;
    a plain point-prediction distance actively seeks out such regions,
    because among many candidates the most confidently wrong one wins.
    """
    mean, var = model.predict_batch(np.atleast_2d(thetas))
    miss2 = (mean[:, 0] - target[0]) ** 2 + (mean[:, 1] - target[1]) ** 2
    return np.sqrt(miss2 + var[:, 0] + var[:, 1])


def solve_primitive(model: PrimitiveModel, target, n_samples: int = N_SHOOTING_SAMPLES, seed: int = 0) -> np.ndarray:
    """Parameters whose predicted displacement best matches the target.

    Pure model-space search: uniform parameter draws scored by the
    posterior RMS distance to the target (solve_error), with coordinate
    refinement of the best few.  Never touches the simulator.
    """
    if n_samples < 1:
        raise ValueError("need n_samples >= 1")
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=float)

    def score(X):
        return -solve_error(model, X, target)

    cands = model.space.sample_uniform(rng, n_samples)
    scores = score(cands)
    top = np.argsort(-scores, kind="stable")[:SOLVE_REFINE_TOP]
    pts = cands[top].copy()
    vals = scores[top].copy()
    span = model.space.hi - model.space.lo
    step = bayesopt.REFINE_STEP0
    for _ in range(bayesopt.REFINE_PASSES):
        offsets = np.concatenate([np.eye(model.space.d), -np.eye(model.space.d)]) * (step * span)
        probes = model.space.clip(pts[:, None, :] + offsets[None, :, :])
        flat = probes.reshape(-1, model.space.d)
        pvals = score(flat).reshape(len(pts), -1)
        best_idx = np.argmax(pvals, axis=1)
        best_val = pvals[np.arange(len(pts)), best_idx]
        improved = best_val > vals
        pts[improved] = probes[np.arange(len(pts)), best_idx][improved]
        vals[improved] = best_val[improved]
        step *= bayesopt.REFINE_SHRINK
    return pts[int(np.argmax(vals))]


@dataclass
class PlanStep:
    theta: np.ndarray
    predicted: tuple[float, float, float]  # body-frame (dx, dy, dpsi)
    variances: tuple[float, float, float]
    world_pose: tuple[float, float, float]  # pose after the step


@dataclass
class Path:
    start_pose: tuple[float, float, float]
    steps: list[PlanStep]
    goal: tuple[float, float]
    goal_tolerance: float
    expected_error: float  # terminal miss with model uncertainty folded in

    @property
    def end_pose(self):
        return self.steps[-1].world_pose if self.steps else self.start_pose

    def check_chaining(self, atol: float = 1e-9) -> None:
        pose = self.start_pose
        for s in self.steps:
            pose = compose_pose(pose, s.predicted)
            if not np.allclose(pose, s.world_pose, atol=atol):
                raise AssertionError("plan poses do not chain by rigid transforms")

    def write_csv(self, fh, names) -> None:
        cols = ["step"] + [f"theta_{n}" for n in names]
        cols += ["pred_dx", "pred_dy", "pred_dpsi", "world_x", "world_y", "world_psi"]
        fh.write(",".join(cols) + "\n")
        for i, s in enumerate(self.steps):
            row = [str(i)]
            row += [repr(float(v)) for v in s.theta]
            row += [repr(float(v)) for v in s.predicted]
            row += [repr(float(v)) for v in s.world_pose]
            fh.write(",".join(row) + "\n")


def plan_path(
    model: PrimitiveModel,
    maze: sim.Maze,
    waypoints=None,
    n_samples: int = N_SHOOTING_SAMPLES,
    seed: int = 0,
    step_budget: int = STEP_BUDGET,
) -> Path:
    """Greedy per-segment shooting through the maze waypoints.

    From the current pose the planner draws n_samples parameter sets, maps
    each predicted body-frame displacement into the world through the
    current heading, discards candidates whose motion segment collides
    with a wall, and commits the one landing closest to the active
    waypoint.  Waypoints (the goal last) are consumed once the predicted
    pose is within goal_tolerance; waypoints beyond reach are split by an
    intermediate waypoint at the model's maximum training displacement
    along the bearing.
    """
    rng = np.random.default_rng(seed)
    if waypoints is None:
        waypoints = list(maze.waypoints)
    queue = [np.asarray(w, dtype=float) for w in waypoints]
    if not queue or not np.allclose(queue[-1], maze.goal):
        queue.append(np.asarray(maze.goal, dtype=float))
    tol = maze.goal_tolerance
    reach = model.max_training_displacement
    pose = tuple(map(float, maze.start_pose))
    steps: list[PlanStep] = []

    def partial_path():
        return Path(tuple(map(float, maze.start_pose)), steps, tuple(maze.goal), tol, math.inf)

    while queue:
        pos = np.array(pose[:2])
        w = queue[0]
        dist = float(np.linalg.norm(w - pos))
        if dist <= tol:
            queue.pop(0)
            continue
        if len(steps) >= step_budget:
            raise IncompletePathError(
                f"step budget {step_budget} exhausted {dist:.2f} mm from the next waypoint",
                partial_path(),
            )
        target = w
        if dist > SPLIT_FACTOR * reach:
            bearing = (w - pos) / dist
            target = pos + bearing * reach
        thetas = model.space.sample_uniform(rng, n_samples)
        mean, var = model.predict_batch(thetas)
        c, s = math.cos(pose[2]), math.sin(pose[2])
        end_x = pos[0] + c * mean[:, 0] - s * mean[:, 1]
        end_y = pos[1] + s * mean[:, 0] + c * mean[:, 1]
        ends = np.column_stack([end_x, end_y])
        collides = sim.segments_collide_batch(pos, ends, maze)
        if np.all(collides):
            raise BlockedSegmentError(
                f"all {n_samples} candidates collide at step {len(steps)}",
                partial_path(),
                step_index=len(steps),
            )
        # expected error folds the model's own uncertainty into the miss
        # distance, steering the plan through well-modeled regions
        miss = np.hypot(ends[:, 0] - target[0], ends[:, 1] - target[1])
        expected = np.sqrt(miss**2 + VARIANCE_PESSIMISM * (var[:, 0] + var[:, 1]))
        expected[collides] = np.inf
        expected[np.abs(mean[:, 2]) > MAX_STEP_ROTATION] = np.inf
        if not np.any(np.isfinite(expected)):
            raise BlockedSegmentError(
                f"all {n_samples} candidates collide at step {len(steps)}",
                partial_path(),
                step_index=len(steps),
            )
        best = int(np.argmin(expected))
        displacement = (float(mean[best, 0]), float(mean[best, 1]), float(mean[best, 2]))
        pose = compose_pose(pose, displacement)
        steps.append(
            PlanStep(
                theta=thetas[best],
                predicted=displacement,
                variances=(float(var[best, 0]), float(var[best, 1]), float(var[best, 2])),
                world_pose=pose,
            )
        )

    end = np.array(pose[:2])
    terminal_miss = float(np.linalg.norm(np.asarray(maze.goal) - end))
    var_xy = (steps[-1].variances[0] + steps[-1].variances[1]) if steps else 0.0
    expected_error = math.sqrt(terminal_miss**2 + var_xy)
    return Path(tuple(map(float, maze.start_pose)), steps, tuple(maze.goal), tol, expected_error)


@dataclass
class ExecutionResult:
    poses: list[tuple[float, float, float]]  # realized, incl. start
    step_errors: list[float]  # |realized - predicted| displacement per step
    terminal_error: float  # realized distance to the plan's goal
    goal_reached: bool


def execute_plan(
    path: Path,
    context: sim.Context = sim.FLAT,
    seed: int = 0,
    gait: cpg.GaitSpec | None = None,
    duration: float = sim.CURVE_TRIAL_DURATION,
    noise_std: float = 0.0,
) -> ExecutionResult:
    """Run each planned step on the simulator and chain the realized poses."""
    if gait is None:
        gait = cpg.gait_from_name("tripod")
    pose = path.start_pose
    poses = [pose]
    step_errors = []
    for i, step in enumerate(path.steps):
        params = cpg.ControlParams(*step.theta)
        res = sim.run_trial(
            gait, params, context, duration=duration, seed=seed + i, noise_std=noise_std
        )
        realized = (res.dx, res.dy, res.dpsi)
        pose = compose_pose(pose, realized)
        poses.append(pose)
        step_errors.append(
            float(np.linalg.norm(np.subtract(realized[:2], step.predicted[:2])))
        )
    terminal = float(np.linalg.norm(np.subtract(pose[:2], path.goal)))
    return ExecutionResult(
        poses=poses,
        step_errors=step_errors,
        terminal_error=terminal,
        goal_reached=terminal <= path.goal_tolerance,
    )


def constants() -> dict:
    return {
        "n_shooting_samples": N_SHOOTING_SAMPLES,
        "step_budget": STEP_BUDGET,
        "solve_refine_top": SOLVE_REFINE_TOP,
        "split_factor": SPLIT_FACTOR,
        "min_training_records": MIN_TRAINING_RECORDS,
        "max_step_rotation": MAX_STEP_ROTATION,
    }
