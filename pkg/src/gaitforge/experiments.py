"""Experiment runner: file-driven, seeded, reproducible.

Each experiment writes a manifest (full config echo plus every tunable
constant of the library) and per-iteration CSVs into its output
directory.  Rerunning with the same configuration reproduces the CSVs
byte for byte; the manifest itself can be fed back as the config file.
"""

from __future__ import annotations

import json
import math
import os
import platform
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import __version__, bayesopt, cpg, gp, primitives, sim

EXPERIMENTS = ("walk", "moo", "discover", "incline", "curve", "primitives", "plan")

#: reference point for speed/energy hypervolume traces: (negated speed
#: floor just above "standing still", energy ceiling with margin)
MOO_REFERENCE = (1.0, 400.0)
#: inclines (deg) used for contextual training and the evaluation sweep
INCLINE_TRAIN_CONTEXTS = (5.0, 10.0, 15.0)
INCLINE_SWEEP = tuple(float(v) for v in np.arange(0.0, 20.01, 2.5))
INCLINE_CONTEXT_BOUNDS = ((0.0, 20.0),)
#: curve task: five targets evenly spaced along the front-quadrant arc
CURVE_TARGET_RADIUS = 6.0
CURVE_TARGET_BEARINGS = (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2)
CURVE_CONTEXT_BOUNDS = ((0.0, 30.0), (0.0, 30.0))
#: displacement-target grid for the primitive-vs-policy comparison
GRID_MIN, GRID_MAX, GRID_N = 1.0, 7.0, 7

DEFAULT_BUDGETS = {
    "walk": 50,
    "moo": 50,
    "discover": 250,
    "incline": 50,
    "curve": 250,
}
DEFAULT_SEEDS = {
    "walk": 20,
    "moo": 1,
    "discover": 5,
    "incline": 1,
    "curve": 1,
    "primitives": 1,
    "plan": 10,
}


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every problem found."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ExperimentConfig:
    experiment: str
    gait: str = "tripod"
    budget: int | None = None
    n_init: int = bayesopt.DEFAULT_N_INIT
    seeds: list[int] = field(default_factory=list)
    noise: bool = True
    out_dir: str = "runs/out"
    maze: str | None = None
    history: str | None = None
    restarts: int = gp.DEFAULT_RESTARTS
    n_shooting_samples: int = primitives.N_SHOOTING_SAMPLES

    def normalized(self) -> "ExperimentConfig":
        cfg = ExperimentConfig(**asdict(self))
        if cfg.budget is None:
            cfg.budget = DEFAULT_BUDGETS.get(cfg.experiment, 50)
        if not cfg.seeds:
            cfg.seeds = list(range(DEFAULT_SEEDS.get(cfg.experiment, 1)))
        return cfg

    def validate(self) -> list[str]:
        errors = []
        if self.experiment not in EXPERIMENTS:
            errors.append(f"unknown experiment {self.experiment!r}")
        try:
            cpg.gait_from_name(self.gait)
        except ValueError as exc:
            errors.append(str(exc))
        if self.budget is not None and self.budget < self.n_init:
            errors.append(f"budget {self.budget} < n_init {self.n_init}")
        if self.n_init < 2:
            errors.append("n_init must be >= 2")
        if self.seeds is not None and len(self.seeds) == 0:
            errors.append("seeds must be nonempty")
        if self.experiment in ("primitives", "plan"):
            if not self.history:
                errors.append(f"experiment {self.experiment!r} needs a curve history directory")
            elif not os.path.isdir(self.history):
                errors.append(f"history directory {self.history!r} does not exist")
        if self.experiment == "plan" and self.maze and not os.path.isfile(self.maze):
            errors.append(f"maze file {self.maze!r} does not exist")
        return errors


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config file: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"cannot parse config file: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config file must hold a mapping"])
    if "config" in doc and "constants" in doc:
        doc = doc["config"]  # a manifest was passed back in
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
    return ExperimentConfig(**doc)


def all_constants() -> dict:
    return {
        "cpg": cpg.constants(),
        "sim": sim.constants(),
        "gp": gp.constants(),
        "bayesopt": bayesopt.constants(),
        "primitives": primitives.constants(),
        "experiments": {
            "moo_reference": list(MOO_REFERENCE),
            "incline_train_contexts": list(INCLINE_TRAIN_CONTEXTS),
            "incline_sweep": list(INCLINE_SWEEP),
            "curve_target_radius": CURVE_TARGET_RADIUS,
            "curve_target_bearings": list(CURVE_TARGET_BEARINGS),
            "curve_context_bounds": [list(b) for b in CURVE_CONTEXT_BOUNDS],
            "grid": [GRID_MIN, GRID_MAX, GRID_N],
            "default_budgets": dict(DEFAULT_BUDGETS),
            "default_seeds": dict(DEFAULT_SEEDS),
        },
    }


def write_manifest(cfg: ExperimentConfig, out_dir) -> None:
    doc = {
        "package": "gaitforge",
        "version": __version__,
        "python": platform.python_version(),
        "config": asdict(cfg),
        "constants": all_constants(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- search spaces and evaluators ---------------------------------------------


def control_space() -> bayesopt.SearchSpace:
    names = ("omega", "vh_phase_diff", "amp_left", "amp_right")
    return bayesopt.SearchSpace(names, tuple(cpg.PARAM_BOUNDS[n] for n in names))


def incline_space() -> bayesopt.SearchSpace:
    return bayesopt.SearchSpace(
        ("omega", "vh_phase_diff", "amp"),
        (cpg.PARAM_BOUNDS["omega"], cpg.PARAM_BOUNDS["vh_phase_diff"], (0.0, 1.0)),
    )


def schedule_space() -> bayesopt.SearchSpace:
    # 8 parameters: frequency, vertical-horizontal phase difference, and
    # one step-start fraction per leg (amplitudes pinned at maximum)
    names = ("omega", "vh_phase_diff") + tuple(f"step_start_{k}" for k in range(6))
    bounds = (cpg.PARAM_BOUNDS["omega"], cpg.PARAM_BOUNDS["vh_phase_diff"]) + ((0.0, 0.999),) * 6
    return bayesopt.SearchSpace(names, bounds)


def curve_targets() -> np.ndarray:
    return np.array(
        [
            [CURVE_TARGET_RADIUS * math.cos(b), CURVE_TARGET_RADIUS * math.sin(b)]
            for b in CURVE_TARGET_BEARINGS
        ]
    )


class TrialCounter:
    """Deterministic per-evaluation seeds for observation noise."""

    def __init__(self, seed: int):
        self.base = int(seed) * 1_000_003
        self.count = 0

    def next(self) -> int:
        self.count += 1
        return self.base + self.count


def make_walk_evaluator(gait: cpg.GaitSpec, seed: int, noise: bool):
    counter = TrialCounter(seed)
    sigma = sim.SIGMA_OBS if noise else 0.0

    def evaluate(theta):
        params = cpg.ControlParams(*theta)
        res = sim.run_trial(gait, params, seed=counter.next(), noise_std=sigma)
        return -sim.speed_objective(res), {
            "dx_obs": res.dx, "dy_obs": res.dy, "dpsi_obs": res.dpsi,
            "drift": res.drift, "energy": res.energy,
        }

    return evaluate


def make_moo_evaluator(gait: cpg.GaitSpec, seed: int, noise: bool):
    counter = TrialCounter(seed)
    sigma = sim.SIGMA_OBS if noise else 0.0

    def evaluate(theta):
        params = cpg.ControlParams(*theta)
        res = sim.run_trial(gait, params, seed=counter.next(), noise_std=sigma)
        return np.array([-sim.speed_objective(res), sim.energy_objective(res)]), {
            "dx_obs": res.dx, "dy_obs": res.dy, "dpsi_obs": res.dpsi,
        }

    return evaluate


def make_discover_evaluator(seed: int, noise: bool):
    counter = TrialCounter(seed)
    sigma = sim.SIGMA_OBS if noise else 0.0

    def evaluate(theta):
        gait, params = cpg.gait_from_schedule(theta[2:], theta[0], theta[1])
        res = sim.run_trial(gait, params, seed=counter.next(), noise_std=sigma)
        return np.array([-sim.speed_objective(res), sim.energy_objective(res)]), {}

    return evaluate


def make_incline_evaluator(gait: cpg.GaitSpec, seed: int, noise: bool):
    counter = TrialCounter(seed)
    sigma = sim.SIGMA_OBS if noise else 0.0

    def evaluate(theta, context):
        params = cpg.ControlParams(theta[0], theta[1], theta[2], theta[2])
        res = sim.run_trial(
            gait, params, sim.Context(float(context[0])), seed=counter.next(), noise_std=sigma
        )
        return -sim.speed_objective(res), {"dx_obs": res.dx, "dy_obs": res.dy, "dpsi_obs": res.dpsi}

    return evaluate


def make_curve_evaluator(gait: cpg.GaitSpec, seed: int, noise: bool):
    counter = TrialCounter(seed)
    sigma = sim.SIGMA_OBS if noise else 0.0

    def evaluate(theta, target):
        params = cpg.ControlParams(*theta)
        res = sim.run_trial(
            gait, params, duration=sim.CURVE_TRIAL_DURATION,
            seed=counter.next(), noise_std=sigma,
        )
        return sim.target_objective(res, target), {
            "dx_obs": res.dx, "dy_obs": res.dy, "dpsi_obs": res.dpsi,
        }

    return evaluate


# -- experiment bodies --------------------------------------------------------


def _merged_history_csv(path, histories, extra_columns=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, h in enumerate(histories):
            import io

            buf = io.StringIO()
            h.write_csv(buf, (extra_columns or {}).get(i))
            text = buf.getvalue()
            if i > 0:  # keep a single header
                text = text.split("\n", 1)[1]
            fh.write(text)


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_walk(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    space = control_space()
    histories, best = [], {}
    for seed in cfg.seeds:
        h = bayesopt.bo_run(
            make_walk_evaluator(gait, seed, cfg.noise),
            space, budget=cfg.budget, n_init=cfg.n_init, seed=seed,
            restarts=cfg.restarts, objective_name="neg_speed",
        )
        histories.append(h)
        best[str(seed)] = -h.best_value()
    _merged_history_csv(os.path.join(out_dir, "history.csv"), histories)
    summary = {"experiment": "walk", "gait": cfg.gait, "best_speed_mm_s": best}
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _run_parego(cfg: ExperimentConfig, out_dir: str, space, evaluator_factory, label):
    histories, extras, summaries = [], {}, {}
    for i, seed in enumerate(cfg.seeds):
        res = bayesopt.parego_run(
            evaluator_factory(seed),
            space, budget=cfg.budget, n_init=cfg.n_init, seed=seed,
            reference_point=MOO_REFERENCE, restarts=cfg.restarts,
            objective_names=("neg_speed", "energy"),
        )
        histories.append(res.history)
        on_front = [1.0 if k in res.front.indices else 0.0 for k in range(len(res.history))]
        extras[i] = {"on_front": on_front}
        res.front.check_invariants(res.history.objectives())
        summaries[str(seed)] = {
            "front_size": len(res.front.indices),
            "hypervolume": res.hypervolume_trace[-1],
        }
    _merged_history_csv(os.path.join(out_dir, "history.csv"), histories, extras)
    with open(os.path.join(out_dir, "pareto.csv"), "w", encoding="utf-8") as fh:
        import io

        for i, h in enumerate(histories):
            buf = io.StringIO()
            h.write_csv(buf, extras[i])
            lines = buf.getvalue().splitlines()
            if i == 0:
                fh.write(lines[0] + "\n")
            for j, line in enumerate(lines[1:]):
                if extras[i]["on_front"][j] == 1.0:
                    fh.write(line + "\n")
    summary = {"experiment": label, "reference_point": list(MOO_REFERENCE), "runs": summaries}
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def run_moo(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    return _run_parego(
        cfg, out_dir, control_space(),
        lambda seed: make_moo_evaluator(gait, seed, cfg.noise),
        "moo",
    )


def run_discover(cfg: ExperimentConfig, out_dir: str) -> dict:
    return _run_parego(
        cfg, out_dir, schedule_space(),
        lambda seed: make_discover_evaluator(seed, cfg.noise),
        "discover",
    )


def run_incline(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    space = incline_space()
    seed = cfg.seeds[0]
    n_sched = cfg.budget - cfg.n_init
    contexts = np.array([[INCLINE_TRAIN_CONTEXTS[i % len(INCLINE_TRAIN_CONTEXTS)]] for i in range(n_sched)])
    history = bayesopt.cbo_run(
        make_incline_evaluator(gait, seed, cfg.noise),
        space, contexts, n_init=cfg.n_init, seed=seed,
        context_bounds=INCLINE_CONTEXT_BOUNDS, context_names=("incline_deg",),
        restarts=cfg.restarts, objective_name="neg_speed",
    )
    history.to_csv(os.path.join(out_dir, "history.csv"))
    model = bayesopt.fit_joint_model(history, INCLINE_CONTEXT_BOUNDS, restarts=cfg.restarts, seed=seed)
    rows = []
    for s in INCLINE_SWEEP:
        theta = bayesopt.cbo_policy(model, [s], space, seed=seed)
        params = cpg.ControlParams(theta[0], theta[1], theta[2], theta[2])
        res = sim.run_trial(gait, params, sim.Context(s))
        rows.append((s, theta, sim.speed_objective(res)))
    with open(os.path.join(out_dir, "policy.csv"), "w", encoding="utf-8") as fh:
        fh.write("incline_deg," + ",".join(f"theta_{n}" for n in space.names) + ",speed\n")
        for s, theta, speed in rows:
            fh.write(
                ",".join([repr(float(s))] + [repr(float(v)) for v in theta] + [repr(float(speed))])
                + "\n"
            )
    summary = {
        "experiment": "incline",
        "policy_speed_by_incline": {repr(float(s)): speed for s, _, speed in rows},
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def run_curve(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    space = control_space()
    seed = cfg.seeds[0]
    targets = curve_targets()
    n_sched = cfg.budget - cfg.n_init
    schedule = targets[[i % len(targets) for i in range(n_sched)]]
    history = bayesopt.cbo_run(
        make_curve_evaluator(gait, seed, cfg.noise),
        space, schedule, n_init=cfg.n_init, seed=seed,
        context_bounds=CURVE_CONTEXT_BOUNDS, context_names=("target_x", "target_y"),
        restarts=cfg.restarts, objective_name="target_distance",
    )
    history.to_csv(os.path.join(out_dir, "history.csv"))
    with open(os.path.join(out_dir, "trials_meta.csv"), "w", encoding="utf-8") as fh:
        fh.write("iter,dx_obs,dy_obs,dpsi_obs\n")
        for r in history.records:
            fh.write(
                f"{r.iteration},{r.metadata['dx_obs']!r},{r.metadata['dy_obs']!r},"
                f"{r.metadata['dpsi_obs']!r}\n"
            )
    per_target = {}
    ctx = history.contexts()
    obj = history.objectives()[:, 0]
    for t in targets:
        mask = np.all(ctx == t, axis=1)
        per_target[f"({t[0]:.3f},{t[1]:.3f})"] = float(obj[mask].min()) if mask.any() else None
    summary = {"experiment": "curve", "best_distance_by_target": per_target}
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def load_curve_history(run_dir) -> bayesopt.History:
    """Rebuild a curve run's History from its history.csv + trials_meta.csv."""
    space = control_space()
    hist_path = os.path.join(run_dir, "history.csv")
    meta_path = os.path.join(run_dir, "trials_meta.csv")
    history = bayesopt.History(space, ("target_distance",), ("target_x", "target_y"))
    with open(hist_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        idx = {name: k for k, name in enumerate(header)}
        rows = [line.strip().split(",") for line in fh if line.strip()]
    with open(meta_path, "r", encoding="utf-8") as fh:
        fh.readline()
        meta_rows = [line.strip().split(",") for line in fh if line.strip()]
    if len(rows) != len(meta_rows):
        raise ConfigError(["history.csv and trials_meta.csv row counts differ"])
    for row, meta in zip(rows, meta_rows):
        theta = np.array([float(row[idx[f"theta_{n}"]]) for n in space.names])
        ctx = np.array([float(row[idx["context_target_x"]]), float(row[idx["context_target_y"]])])
        y = np.array([float(row[idx["objective_target_distance"]])])
        history.append(
            bayesopt.Record(
                iteration=int(row[idx["iter"]]),
                seed=int(row[idx["seed"]]),
                theta=theta,
                objectives=y,
                context=ctx,
                metadata={
                    "dx_obs": float(meta[1]), "dy_obs": float(meta[2]), "dpsi_obs": float(meta[3]),
                },
                best_so_far=float(row[idx["best_so_far"]]) if row[idx["best_so_far"]] else None,
            )
        )
    return history


def displacement_grid() -> np.ndarray:
    xs = np.linspace(GRID_MIN, GRID_MAX, GRID_N)
    return np.array([[x, y] for x in xs for y in xs])


def run_primitives(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    history = load_curve_history(cfg.history)
    seed = cfg.seeds[0]
    model = primitives.build_primitive_model(history, restarts=cfg.restarts, seed=seed)
    joint = bayesopt.fit_joint_model(history, CURVE_CONTEXT_BOUNDS, restarts=cfg.restarts, seed=seed)
    space = history.space
    sigma = sim.SIGMA_OBS if cfg.noise else 0.0
    rows = []
    for k, target in enumerate(displacement_grid()):
        th_prim = primitives.solve_primitive(model, target, cfg.n_shooting_samples, seed=seed + k)
        th_cbo = bayesopt.cbo_policy(joint, target, space, seed=seed + k)
        errs = []
        for th in (th_prim, th_cbo):
            res = sim.run_trial(
                gait, cpg.ControlParams(*th), duration=sim.CURVE_TRIAL_DURATION,
                seed=seed * 7919 + k, noise_std=sigma,
            )
            errs.append(sim.target_objective(res, target))
        rows.append((target, th_prim, th_cbo, errs[0], errs[1]))
    with open(os.path.join(out_dir, "grid.csv"), "w", encoding="utf-8") as fh:
        fh.write("target_x,target_y,primitive_error,policy_error\n")
        for target, _, _, pe, ce in rows:
            fh.write(f"{target[0]!r},{target[1]!r},{pe!r},{ce!r}\n")
    summary = {
        "experiment": "primitives",
        "mean_primitive_error": float(np.mean([r[3] for r in rows])),
        "mean_policy_error": float(np.mean([r[4] for r in rows])),
        "n_targets": len(rows),
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    with open(os.path.join(out_dir, "primitive_model.json"), "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {
                    "g_x": json.loads(model.g_x.to_json()),
                    "g_y": json.loads(model.g_y.to_json()),
                    "g_psi": json.loads(model.g_psi.to_json()),
                    "max_training_displacement": model.max_training_displacement,
                    "provenance": model.provenance,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    return summary


def default_maze_path() -> str:
    from importlib import resources

    return str(resources.files("gaitforge.data").joinpath("maze_two_wall.txt"))


def run_plan(cfg: ExperimentConfig, out_dir: str) -> dict:
    gait = cpg.gait_from_name(cfg.gait)
    history = load_curve_history(cfg.history)
    model = primitives.build_primitive_model(history, restarts=cfg.restarts, seed=cfg.seeds[0])
    maze = sim.load_maze(cfg.maze or default_maze_path())
    sigma = sim.SIGMA_OBS if cfg.noise else 0.0
    per_seed = {}
    for seed in cfg.seeds:
        path = primitives.plan_path(model, maze, n_samples=cfg.n_shooting_samples, seed=seed)
        with open(os.path.join(out_dir, f"plan_{seed}.csv"), "w", encoding="utf-8") as fh:
            path.write_csv(fh, history.space.names)
        execution = primitives.execute_plan(path, seed=seed * 101, gait=gait, noise_std=sigma)
        with open(os.path.join(out_dir, f"execution_{seed}.csv"), "w", encoding="utf-8") as fh:
            fh.write("step,world_x,world_y,world_psi,step_error\n")
            for i, pose in enumerate(execution.poses):
                err = execution.step_errors[i - 1] if i > 0 else 0.0
                fh.write(
                    f"{i},{pose[0]!r},{pose[1]!r},{pose[2]!r},{err!r}\n"
                )
        per_seed[str(seed)] = {
            "steps": len(path.steps),
            "expected_error": path.expected_error,
            "terminal_error": execution.terminal_error,
            "goal_reached": bool(execution.terminal_error <= 1.5 * maze.goal_tolerance),
        }
    summary = {
        "experiment": "plan",
        "maze": cfg.maze or "builtin:maze_two_wall",
        "goal_tolerance": maze.goal_tolerance,
        "runs": per_seed,
        "reached": sum(1 for v in per_seed.values() if v["goal_reached"]),
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


_RUNNERS = {
    "walk": run_walk,
    "moo": run_moo,
    "discover": run_discover,
    "incline": run_incline,
    "curve": run_curve,
    "primitives": run_primitives,
    "plan": run_plan,
}


def run_experiment(config: ExperimentConfig) -> dict:
    """Validate, write the manifest, dispatch, and return the summary."""
    cfg = config.normalized()
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_manifest(cfg, cfg.out_dir)
    return _RUNNERS[cfg.experiment](cfg, cfg.out_dir)
