"""Planar surrogate hexapod simulator, objectives, and maze geometry.

The simulator is a documented kinematic stand-in for a physics engine: the
oscillator network is integrated at a fixed step, legs whose vertical
output sits high in its envelope count as stance, and the body advances
with the mean backward (extension) speed of the stance feet.  Yaw follows
the left/right imbalance of stance propulsion, inclines scale propulsion
by cos(angle) and add a gravity-slip term whenever fewer than three legs
support the body.  All outputs are in real-robot units (mm, radians, uJ).

The dynamics are exactly left/right symmetric by construction: a trial
with amp_right > amp_left is computed as the mirror image of the swapped
trial, so swapping the side amplitudes negates dy and dpsi bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import cpg

# -- surrogate constants (every tunable in one block) -------------------------

#: body speed per unit mean stance-foot extension speed
TRACTION = 1.0
#: stance when the vertical output is at least this fraction of the leg's
#: envelope above the envelope minimum (cos(phi) >= 2*frac - 1)
CONTACT_ENVELOPE_FRACTION = 0.2
#: below this oscillator amplitude a leg can never be in stance
MIN_STANCE_AMPLITUDE = 1e-9
#: gravity slip speed (mm/s) scaled by sin(incline), active only while
#: fewer than MIN_SUPPORT_LEGS legs are in stance
G_SLIP = 25.0
MIN_SUPPORT_LEGS = 3
#: per-step horizontal jumps larger than this fraction of the raw range
#: are actuator snaps (instantaneous retraction/reset): no traction
SNAP_FRACTION = 0.5
#: constant per-motor extension force (mN); extension work only, since
#: retraction is spring powered
F_MOTOR = 1.0
#: observation noise (mm std) on (dx, dy) when enabled
SIGMA_OBS = 0.2
#: trial lengths: short tasks (straight walking, MOO, inclines) and long
#: tasks (curve targets, primitives, planning)
TRIAL_DURATION = 1.0
CURVE_TRIAL_DURATION = 5.0
#: drift penalty weight in the straight-walking objective
LAMBDA_DRIFT = 1.0


@dataclass(frozen=True)
class RobotGeometry:
    """Microwalker geometry; lengths in mm, mass in mg."""

    body_length: float = 13.0
    body_width: float = 9.6
    mass: float = 200.0
    vertical_stroke: float = 0.6
    horizontal_stroke: float = 2.0

    def __post_init__(self):
        for name in ("body_length", "body_width", "mass", "vertical_stroke", "horizontal_stroke"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def leg_positions(self) -> np.ndarray:
        """Six planar anchor points (x forward, y left), mirror-symmetric."""
        xs = np.array([0.5, 0.0, -0.5]) * self.body_length
        half = 0.5 * self.body_width
        left = np.column_stack([xs, np.full(3, half)])
        right = np.column_stack([xs, np.full(3, -half)])
        return np.vstack([left, right])


GEOMETRY = RobotGeometry()


@dataclass(frozen=True)
class Context:
    """Environment context: slope pitch in degrees, uphill along +x."""

    incline_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.incline_deg <= 25.0):
            raise ValueError("incline must lie in [0, 25] degrees")


FLAT = Context(0.0)


@dataclass
class TrialResult:
    """Outcome of one simulated rollout.

    dx, dy are the body displacement in the initial body frame (mm), dpsi
    the heading change (rad), drift the largest lateral deviation from the
    initial heading axis (mm), energy the extension-only motor work (uJ).
    contact_trace holds one stance boolean per leg per step.
    """

    dx: float
    dy: float
    dpsi: float
    drift: float
    energy: float
    contact_trace: np.ndarray

    def __post_init__(self):
        if self.energy < -1e-12 or self.drift < -1e-12:
            raise ValueError("energy and drift must be nonnegative")

    CSV_HEADER = "dx,dy,dpsi,drift,energy"

    def to_csv_row(self) -> str:
        return f"{self.dx!r},{self.dy!r},{self.dpsi!r},{self.drift!r},{self.energy!r}"


def _mirror_result(res: TrialResult) -> TrialResult:
    trace = res.contact_trace[:, list(cpg.MIRROR_LEG)] if res.contact_trace.size else res.contact_trace
    return TrialResult(
        dx=res.dx,
        dy=-res.dy,
        dpsi=-res.dpsi,
        drift=res.drift,
        energy=res.energy,
        contact_trace=trace,
    )


def _simulate(
    gait: cpg.GaitSpec,
    params: cpg.ControlParams,
    context: Context,
    duration: float,
    dt: float,
    gains,
    collect_trace: bool,
):
    geom = GEOMETRY
    net = cpg.build_network(gait, params, gains)
    n_steps = int(round(duration / dt))
    traj = net.rollout(n_steps, dt)
    v_raw, h_raw = cpg.motor_outputs_from_trajectory(traj["phi"], traj["r"], traj["x"])

    r_v = traj["r"][:, : cpg.N_LEGS]
    x_v = traj["x"][:, : cpg.N_LEGS]
    stance_all = ((v_raw - x_v) >= (2.0 * CONTACT_ENVELOPE_FRACTION - 1.0) * r_v) & (
        r_v > MIN_STANCE_AMPLITUDE
    )
    stance = stance_all[1:]  # one entry per step

    # per-step foot extension speed (mm/s); extension pushes the foot
    # backward, so a planted foot propels the body forward at this rate
    d_raw = np.diff(h_raw, axis=0)
    ext_speed = d_raw * (0.5 * geom.horizontal_stroke / dt)
    ext_speed = np.where(np.abs(d_raw) > SNAP_FRACTION, 0.0, ext_speed)

    left = ext_speed[:, [0, 1, 2]] * stance[:, [0, 1, 2]]
    right = ext_speed[:, [3, 4, 5]] * stance[:, [3, 4, 5]]
    n_left = np.sum(stance[:, [0, 1, 2]], axis=1)
    n_right = np.sum(stance[:, [3, 4, 5]], axis=1)
    m_left = np.where(n_left > 0, np.sum(left, axis=1) / np.maximum(n_left, 1), 0.0)
    m_right = np.where(n_right > 0, np.sum(right, axis=1) / np.maximum(n_right, 1), 0.0)

    v_fwd = TRACTION * 0.5 * (m_left + m_right)
    alpha = math.radians(context.incline_deg)
    if alpha != 0.0:
        slipping = (n_left + n_right) < MIN_SUPPORT_LEGS
        v_fwd = v_fwd * math.cos(alpha) - G_SLIP * math.sin(alpha) * slipping
    yaw_rate = (m_right - m_left) / (0.5 * geom.body_width)

    # forward-Euler pose integration; psi[t] is the heading entering step t
    psi = np.concatenate([[0.0], np.cumsum(yaw_rate * dt)])
    step_dx = v_fwd * np.cos(psi[:-1]) * dt
    step_dy = v_fwd * np.sin(psi[:-1]) * dt
    x_w = np.concatenate([[0.0], np.cumsum(step_dx)])
    y_w = np.concatenate([[0.0], np.cumsum(step_dy)])

    # extension-only work: F * stroke * positive fraction increments
    d_frac_v = 0.5 * np.diff(v_raw, axis=0)
    d_frac_h = 0.5 * d_raw
    energy = F_MOTOR * (
        geom.vertical_stroke * float(np.sum(np.maximum(d_frac_v, 0.0)))
        + geom.horizontal_stroke * float(np.sum(np.maximum(d_frac_h, 0.0)))
    )

    result = TrialResult(
        dx=float(x_w[-1]),
        dy=float(y_w[-1]),
        dpsi=float(psi[-1]),
        drift=float(np.max(np.abs(y_w))),
        energy=energy,
        contact_trace=stance,
    )
    trace = None
    if collect_trace:
        trace = {
            "t": np.arange(n_steps + 1) * dt,
            "v_frac": 0.5 * (v_raw + 1.0),
            "h_frac": 0.5 * (h_raw + 1.0),
            "v_fwd": v_fwd,
            "yaw_rate": yaw_rate,
            "psi": psi,
            "x": x_w,
            "y": y_w,
            "step_energy": F_MOTOR
            * (
                geom.vertical_stroke * np.sum(np.maximum(d_frac_v, 0.0), axis=1)
                + geom.horizontal_stroke * np.sum(np.maximum(d_frac_h, 0.0), axis=1)
            ),
        }
    return result, trace


def run_trial(
    gait: cpg.GaitSpec,
    params: cpg.ControlParams,
    context: Context = FLAT,
    duration: float = TRIAL_DURATION,
    seed: int = 0,
    noise_std: float = 0.0,
    dt: float = cpg.DT_DEFAULT,
    gains=(cpg.DEFAULT_GAIN, cpg.DEFAULT_GAIN),
    full_trace: bool = False,
) -> TrialResult:
    """Simulate one rollout and return displacement, energy, and contacts.

    Deterministic given the seed; observation noise (std noise_std, mm) is
    added to dx and dy only.  Pure function: safe to call from worker
    processes with distinct arguments.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    params.validate()
    if params.amp_right > params.amp_left:
        result, trace = _simulate(
            gait, params.mirrored(), context, duration, dt, gains, full_trace
        )
        result = _mirror_result(result)
        if trace is not None:
            trace = dict(trace, y=-trace["y"], psi=-trace["psi"], yaw_rate=-trace["yaw_rate"])
    else:
        result, trace = _simulate(gait, params, context, duration, dt, gains, full_trace)
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        eps = rng.normal(0.0, noise_std, size=2)
        result = replace(
            result, dx=float(result.dx + eps[0]), dy=float(result.dy + eps[1])
        )
    if full_trace:
        result.trace = trace  # diagnostic attachment, not part of the record
    return result


# -- objectives ---------------------------------------------------------------


def speed_objective(result: TrialResult, lambda_drift: float = LAMBDA_DRIFT) -> float:
    """Forward progress minus the drift penalty (mm; mm/s for 1 s trials)."""
    return result.dx - lambda_drift * result.drift


def energy_objective(result: TrialResult) -> float:
    """Extension-only motor work accumulated over the trial (uJ)."""
    return result.energy


def target_objective(result: TrialResult, target) -> float:
    """Euclidean distance between desired and observed displacement (mm)."""
    tx, ty = float(target[0]), float(target[1])
    return math.hypot(tx - result.dx, ty - result.dy)


# -- maze geometry ------------------------------------------------------------


@dataclass
class Maze:
    """Planar walls plus a start pose and goal; units mm.

    Collision queries inflate walls by half the body width, so paths keep
    at least that clearance.  Waypoints, when present, are the suggested
    route for planners.
    """

    walls: np.ndarray  # (m, 4): x0, y0, x1, y1
    start_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal: tuple[float, float] = (0.0, 0.0)
    goal_tolerance: float = 1.0
    waypoints: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=float).reshape(-1, 4)
        if self.goal_tolerance <= 0:
            raise ValueError("goal tolerance must be positive")
        g = np.asarray(self.goal, dtype=float)
        if self.walls.size and bool(
            np.any(_point_segment_distance(g, self.walls) <= inflation_margin())
        ):
            raise ValueError("goal lies inside an (inflated) wall")


def inflation_margin() -> float:
    return 0.5 * GEOMETRY.body_width


def _point_segment_distance(p: np.ndarray, walls: np.ndarray) -> np.ndarray:
    a = walls[:, 0:2]
    b = walls[:, 2:4]
    ab = b - a
    denom = np.sum(ab * ab, axis=1)
    t = np.clip(
        np.divide(
            np.sum((p - a) * ab, axis=1), denom, out=np.zeros_like(denom), where=denom > 0
        ),
        0.0,
        1.0,
    )
    proj = a + t[:, None] * ab
    return np.linalg.norm(p - proj, axis=1)


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
        b[..., 1] - a[..., 1]
    ) * (c[..., 0] - a[..., 0])


def _segments_distance_batch(p0: np.ndarray, p1: np.ndarray, wall: np.ndarray) -> np.ndarray:
    """Distance from each segment (p0, p1[i]) to one wall segment."""
    n = p1.shape[0]
    a = np.broadcast_to(p0, (n, 2))
    b = p1
    c = np.broadcast_to(wall[0:2], (n, 2))
    d = np.broadcast_to(wall[2:4], (n, 2))

    d1 = _orient(c, d, a)
    d2 = _orient(c, d, b)
    d3 = _orient(a, b, c)
    d4 = _orient(a, b, d)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))

    def pt_seg(p, s0, s1):
        ab = s1 - s0
        denom = np.sum(ab * ab, axis=-1)
        t = np.clip(
            np.divide(
                np.sum((p - s0) * ab, axis=-1),
                denom,
                out=np.zeros_like(denom),
                where=denom > 0,
            ),
            0.0,
            1.0,
        )
        proj = s0 + t[..., None] * ab
        return np.linalg.norm(p - proj, axis=-1)

    dist = np.minimum.reduce(
        [pt_seg(a, c, d), pt_seg(b, c, d), pt_seg(c, a, b), pt_seg(d, a, b)]
    )
    return np.where(proper, 0.0, dist)


def segments_collide_batch(p0, p1_batch, maze: Maze) -> np.ndarray:
    """Vectorized collision test for segments sharing a start point."""
    p0 = np.asarray(p0, dtype=float)
    p1_batch = np.atleast_2d(np.asarray(p1_batch, dtype=float))
    hit = np.zeros(p1_batch.shape[0], dtype=bool)
    margin = inflation_margin()
    for wall in maze.walls:
        hit |= _segments_distance_batch(p0, p1_batch, wall) <= margin
    return hit


def segment_collides(p0, p1, maze: Maze) -> bool:
    """True iff the segment comes within half a body width of any wall.

    The inflated boundary is closed: touching it exactly counts as a
    collision.
    """
    return bool(segments_collide_batch(p0, np.asarray(p1, dtype=float)[None, :], maze)[0])


def load_maze(path) -> Maze:
    """Parse the line-oriented maze format.

    Lines: ``wall x0 y0 x1 y1``, ``start x y psi``, ``goal x y tol``,
    ``waypoint x y``; '#' starts a comment.  Units mm.
    """
    walls = []
    start = (0.0, 0.0, 0.0)
    goal = (0.0, 0.0)
    tol = 1.0
    waypoints: list[tuple[float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind, vals = parts[0], [float(v) for v in parts[1:]]
            if kind == "wall" and len(vals) == 4:
                walls.append(vals)
            elif kind == "start" and len(vals) == 3:
                start = (vals[0], vals[1], vals[2])
            elif kind == "goal" and len(vals) == 3:
                goal = (vals[0], vals[1])
                tol = vals[2]
            elif kind == "waypoint" and len(vals) == 2:
                waypoints.append((vals[0], vals[1]))
            else:
                raise ValueError(f"{path}:{lineno}: cannot parse maze line {line!r}")
    return Maze(
        walls=np.asarray(walls, dtype=float).reshape(-1, 4),
        start_pose=start,
        goal=goal,
        goal_tolerance=tol,
        waypoints=waypoints,
    )


def save_maze(maze: Maze, path) -> None:
    def f(v) -> str:
        return repr(float(v))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"start {f(maze.start_pose[0])} {f(maze.start_pose[1])} {f(maze.start_pose[2])}\n")
        fh.write(f"goal {f(maze.goal[0])} {f(maze.goal[1])} {f(maze.goal_tolerance)}\n")
        for w in maze.walls:
            fh.write(f"wall {f(w[0])} {f(w[1])} {f(w[2])} {f(w[3])}\n")
        for wp in maze.waypoints:
            fh.write(f"waypoint {f(wp[0])} {f(wp[1])}\n")


def constants() -> dict:
    return {
        "traction": TRACTION,
        "contact_envelope_fraction": CONTACT_ENVELOPE_FRACTION,
        "min_stance_amplitude": MIN_STANCE_AMPLITUDE,
        "g_slip": G_SLIP,
        "min_support_legs": MIN_SUPPORT_LEGS,
        "snap_fraction": SNAP_FRACTION,
        "f_motor": F_MOTOR,
        "sigma_obs": SIGMA_OBS,
        "trial_duration": TRIAL_DURATION,
        "curve_trial_duration": CURVE_TRIAL_DURATION,
        "lambda_drift": LAMBDA_DRIFT,
        "body_length": GEOMETRY.body_length,
        "body_width": GEOMETRY.body_width,
        "vertical_stroke": GEOMETRY.vertical_stroke,
        "horizontal_stroke": GEOMETRY.horizontal_stroke,
    }
