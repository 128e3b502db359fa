"""Coupled phase-oscillator locomotion controller for a 12-motor hexapod.

The controller is a network of 12 oscillators, one per motor: each of the
six legs has a vertical (lift) motor and a horizontal (stride) motor.
Oscillator phases evolve under diffusive sine coupling toward configured
phase biases, while per-oscillator amplitude and offset follow critically
damped second-order dynamics toward their targets.  A four-case output map
converts oscillator state into motor stroke fractions, discarding motions
the leg hardware cannot realize (the actuators cannot partially retract,
so retraction is instantaneous).

Leg indexing: legs 0-2 are the left side front-to-back, legs 3-5 the right
side front-to-back.  Oscillator k (k < 6) drives leg k's vertical motor;
oscillator 6 + k drives leg k's horizontal motor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

try:  # optional JIT for the integrator hot loop; numpy fallback below
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

TWO_PI = 2.0 * math.pi

N_LEGS = 6
N_OSC = 12

LEFT_LEGS = (0, 1, 2)
RIGHT_LEGS = (3, 4, 5)
#: index of the contralateral leg (mirror image across the body axis)
MIRROR_LEG = (3, 4, 5, 0, 1, 2)

#: mutual coupling weight between the six vertical oscillators and between
#: each vertical-horizontal pair; strong coupling keeps the network locked
#: on its limit cycle.
COUPLING_WEIGHT = 4.0

#: amplitude/offset convergence gains a_r = a_x (1/s); ~0.35 s settling.
DEFAULT_GAIN = 20.0

#: fixed integration step (s) and the largest step the RK4 scheme accepts.
DT_DEFAULT = 1e-3
DT_MAX = 5e-3

#: search-space bounds for the four control parameters.
PARAM_BOUNDS = {
    "omega": (math.pi, 16.0 * math.pi),  # rad/s (0.5 - 8 Hz)
    "vh_phase_diff": (0.0, math.pi),
    "amp_left": (0.0, 1.0),
    "amp_right": (0.0, 1.0),
}


class IntegrationFault(RuntimeError):
    """Raised when the oscillator state stops being finite."""


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _rhs_kernel(y, out, W, B, omega, R, X, ar, ax):  # pragma: no cover
        n = 12
        for i in range(n):
            acc = omega
            for j in range(n):
                w = W[i, j]
                if w != 0.0:
                    acc += w * y[12 + j] * math.sin(y[j] - y[i] - B[i, j])
            out[i] = acc
        for i in range(n):
            out[12 + i] = y[24 + i]
            out[24 + i] = ar * (0.25 * ar * (R[i] - y[12 + i]) - y[24 + i])
            out[36 + i] = y[48 + i]
            out[48 + i] = ax * (0.25 * ax * (X[i] - y[36 + i]) - y[48 + i])

    @numba.njit(cache=True)
    def _rk4_kernel(y, W, B, omega, R, X, ar, ax, dt, n_steps, phi, r, x):  # pragma: no cover
        two_pi = 2.0 * math.pi
        k1 = np.empty(60)
        k2 = np.empty(60)
        k3 = np.empty(60)
        k4 = np.empty(60)
        yt = np.empty(60)
        for s in range(n_steps):
            _rhs_kernel(y, k1, W, B, omega, R, X, ar, ax)
            for i in range(60):
                yt[i] = y[i] + 0.5 * dt * k1[i]
            _rhs_kernel(yt, k2, W, B, omega, R, X, ar, ax)
            for i in range(60):
                yt[i] = y[i] + 0.5 * dt * k2[i]
            _rhs_kernel(yt, k3, W, B, omega, R, X, ar, ax)
            for i in range(60):
                yt[i] = y[i] + dt * k3[i]
            _rhs_kernel(yt, k4, W, B, omega, R, X, ar, ax)
            for i in range(60):
                y[i] = y[i] + (dt / 6.0) * (
                    k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]
                )
                if not math.isfinite(y[i]):
                    return s + 1
            for i in range(12):
                y[i] = y[i] % two_pi
            for i in range(12):
                phi[s, i] = y[i]
                r[s, i] = y[12 + i]
                x[s, i] = y[36 + i]
        return 0


class GaitName(str, enum.Enum):
    TRIPOD = "tripod"
    RIPPLE = "ripple"
    WAVE = "wave"
    FOUR_TWO = "four_two"
    CUSTOM = "custom"


def wrap_phase(phi):
    """Wrap phases into [0, 2*pi)."""
    return np.mod(phi, TWO_PI)


def _catalog_offsets() -> dict[GaitName, tuple[float, ...]]:
    third = TWO_PI / 3.0
    sixth = TWO_PI / 6.0
    return {
        # two alternating diagonal groups {L1, L3, R2} / {L2, R1, R3}
        GaitName.TRIPOD: (0.0, math.pi, 0.0, math.pi, 0.0, math.pi),
        # diagonal two-leg pairs spaced a third of a cycle apart, with
        # contralateral pairs half a cycle out of phase
        GaitName.RIPPLE: (
            0.0,
            third,
            2.0 * third,
            math.pi,
            wrap_phase(math.pi + third),
            wrap_phase(math.pi + 2.0 * third),
        ),
        # one leg steps at a time, evenly spaced around the cycle
        GaitName.WAVE: tuple(k * sixth for k in range(6)),
        # a group of four (front/back pairs) against the middle pair
        GaitName.FOUR_TWO: (0.0, math.pi, 0.0, 0.0, math.pi, 0.0),
    }


GAIT_CATALOG = _catalog_offsets()


@dataclass(frozen=True)
class GaitSpec:
    """A gait as per-leg phase offsets of the vertical oscillators.

    Offsets are relative to leg 0 and canonical: offset[0] == 0, all
    offsets in [0, 2*pi).
    """

    name: GaitName
    leg_phase_offsets: tuple[float, ...]

    def __post_init__(self):
        offs = tuple(float(v) for v in self.leg_phase_offsets)
        if len(offs) != N_LEGS:
            raise ValueError(f"expected {N_LEGS} leg offsets, got {len(offs)}")
        if any(v < 0.0 or v >= TWO_PI for v in offs):
            raise ValueError("leg phase offsets must lie in [0, 2*pi)")
        if offs[0] != 0.0:
            raise ValueError("gait is not canonical: leg 0 offset must be 0")
        object.__setattr__(self, "leg_phase_offsets", offs)

    @property
    def offsets(self) -> np.ndarray:
        return np.asarray(self.leg_phase_offsets, dtype=float)


@dataclass(frozen=True)
class ControlParams:
    """The four searched controller parameters.

    omega is shared by all oscillators; vh_phase_diff is the target phase
    of each horizontal oscillator relative to its leg's vertical one;
    amp_left / amp_right drive the target amplitudes of all oscillators on
    the corresponding side.
    """

    omega: float
    vh_phase_diff: float
    amp_left: float
    amp_right: float

    def validate(self) -> None:
        for field_name, (lo, hi) in PARAM_BOUNDS.items():
            v = getattr(self, field_name)
            if not (lo <= v <= hi) or not math.isfinite(v):
                raise ValueError(
                    f"{field_name}={v!r} outside bounds [{lo:.6g}, {hi:.6g}]"
                )

    def mirrored(self) -> "ControlParams":
        return replace(self, amp_left=self.amp_right, amp_right=self.amp_left)


@dataclass(frozen=True)
class CpgConfig:
    """Full network configuration: coupling topology plus targets."""

    coupling_weights: np.ndarray  # (12, 12)
    phase_biases: np.ndarray  # (12, 12), antisymmetric on coupled pairs
    omega: float  # shared target frequency, rad/s
    target_amplitudes: np.ndarray  # (12,)
    target_offsets: np.ndarray  # (12,)
    gain_r: float = DEFAULT_GAIN
    gain_x: float = DEFAULT_GAIN

    def __post_init__(self):
        w = np.asarray(self.coupling_weights, dtype=float)
        b = np.asarray(self.phase_biases, dtype=float)
        if w.shape != (N_OSC, N_OSC) or b.shape != (N_OSC, N_OSC):
            raise ValueError("coupling and bias matrices must be 12x12")
        if not np.array_equal(w != 0.0, w.T != 0.0):
            raise ValueError("coupling sparsity pattern must be symmetric")
        coupled = w != 0.0
        if not np.allclose(b[coupled], -b.T[coupled], atol=1e-12):
            raise ValueError("phase biases must be antisymmetric on coupled pairs")
        if self.gain_r <= 0.0 or self.gain_x <= 0.0:
            raise ValueError("gains must be positive")
        object.__setattr__(self, "coupling_weights", w)
        object.__setattr__(self, "phase_biases", b)
        object.__setattr__(
            self, "target_amplitudes", np.asarray(self.target_amplitudes, dtype=float)
        )
        object.__setattr__(
            self, "target_offsets", np.asarray(self.target_offsets, dtype=float)
        )


@dataclass
class OscillatorState:
    """State of a single oscillator (a view, handy for inspection/dumps)."""

    phase: float
    amplitude: float
    amplitude_rate: float
    offset: float
    offset_rate: float


class MotorCommand:
    """Per-leg motor stroke fractions, both normalized to [0, 1].

    The raw oscillator outputs live inside the amplitude envelope
    [x - r, x + r] (vertical in [-1, 1], horizontal in [-1, 1]); the
    affine map (raw + 1) / 2 converts them to stroke fractions.
    """

    __slots__ = ("vertical", "horizontal")

    def __init__(self, vertical: np.ndarray, horizontal: np.ndarray):
        self.vertical = vertical
        self.horizontal = horizontal


def gait_from_name(name: str | GaitName) -> GaitSpec:
    """Look up one of the four catalog gaits by name."""
    try:
        gait_name = GaitName(name.lower() if isinstance(name, str) else name)
    except ValueError:
        raise ValueError(f"unknown gait name: {name!r}") from None
    if gait_name not in GAIT_CATALOG:
        raise ValueError(f"gait {gait_name.value!r} has no catalog entry")
    return GaitSpec(gait_name, GAIT_CATALOG[gait_name])


def gait_from_schedule(
    step_starts, omega: float, vh_phase_diff: float
) -> tuple[GaitSpec, ControlParams]:
    """Build a custom gait from per-leg step-start fractions.

    Each leg is assigned the point in the unit cycle where it begins
    stepping; fractions map to phase offsets 2*pi*fraction, canonicalized
    so leg 0 sits at zero.  Amplitudes are pinned at maximum, which is the
    regime used when searching over the 8-dimensional schedule space
    (omega, vh_phase_diff, six fractions).
    """
    starts = np.asarray(step_starts, dtype=float)
    if starts.shape != (N_LEGS,):
        raise ValueError(f"expected {N_LEGS} step-start fractions")
    if np.any(starts < 0.0) or np.any(starts >= 1.0):
        raise ValueError("step-start fractions must lie in [0, 1)")
    offsets = wrap_phase(TWO_PI * (starts - starts[0]))
    offsets[0] = 0.0
    gait = GaitSpec(GaitName.CUSTOM, tuple(offsets))
    params = ControlParams(omega, vh_phase_diff, 1.0, 1.0)
    return gait, params


def build_network(
    gait: GaitSpec,
    params: ControlParams,
    gains: tuple[float, float] = (DEFAULT_GAIN, DEFAULT_GAIN),
) -> "CpgNetwork":
    """Assemble the 12-oscillator network for a gait and parameter set.

    The six vertical oscillators are mutually coupled with pairwise phase
    biases equal to the gait's offset differences; each horizontal
    oscillator couples only to its leg's vertical oscillator with bias
    vh_phase_diff.  Left-side oscillators target amplitude amp_left,
    right-side amp_right.  Amplitude/offset states start at rest; phases
    start at the gait offsets (the locked configuration), horizontals at
    their vertical's offset plus vh_phase_diff.
    """
    params.validate()
    offsets = gait.offsets
    if offsets[0] != 0.0:
        raise ValueError("gait is not canonical: leg 0 offset must be 0")

    weights = np.zeros((N_OSC, N_OSC))
    biases = np.zeros((N_OSC, N_OSC))
    for i in range(N_LEGS):
        for j in range(N_LEGS):
            if i != j:
                weights[i, j] = COUPLING_WEIGHT
                biases[i, j] = offsets[j] - offsets[i]
    for leg in range(N_LEGS):
        v, h = leg, N_LEGS + leg
        weights[v, h] = weights[h, v] = COUPLING_WEIGHT
        biases[v, h] = params.vh_phase_diff
        biases[h, v] = -params.vh_phase_diff

    amps = np.empty(N_OSC)
    for leg in range(N_LEGS):
        a = params.amp_left if leg in LEFT_LEGS else params.amp_right
        amps[leg] = a
        amps[N_LEGS + leg] = a

    config = CpgConfig(
        coupling_weights=weights,
        phase_biases=biases,
        omega=params.omega,
        target_amplitudes=amps,
        target_offsets=np.zeros(N_OSC),
        gain_r=gains[0],
        gain_x=gains[1],
    )
    phases = np.concatenate([offsets, wrap_phase(offsets + params.vh_phase_diff)])
    return CpgNetwork(config, initial_phases=phases)


class CpgNetwork:
    """Mutable oscillator network advanced by fixed-step RK4.

    A network instance is single-owner state: step() mutates it and must
    not be called concurrently.  Distinct instances are independent.
    """

    def __init__(self, config: CpgConfig, initial_phases=None):
        self.config = config
        self.t = 0.0
        self._y = np.zeros(5 * N_OSC)
        if initial_phases is not None:
            phases = np.asarray(initial_phases, dtype=float)
            if phases.shape != (N_OSC,):
                raise ValueError("initial phases must have length 12")
            self._y[0:12] = wrap_phase(phases)
        # scratch buffers reused across steps (the integrator is the hot
        # path of every simulated trial)
        self._k = [np.empty(5 * N_OSC) for _ in range(4)]
        self._ytmp = np.empty(5 * N_OSC)
        self._diff = np.empty((N_OSC, N_OSC))
        self._wsin = np.empty((N_OSC, N_OSC))

    @property
    def phi(self) -> np.ndarray:
        return self._y[0:12]

    @property
    def r(self) -> np.ndarray:
        return self._y[12:24]

    @property
    def rdot(self) -> np.ndarray:
        return self._y[24:36]

    @property
    def x(self) -> np.ndarray:
        return self._y[36:48]

    @property
    def xdot(self) -> np.ndarray:
        return self._y[48:60]

    def _rhs(self, y: np.ndarray, out: np.ndarray) -> None:
        cfg = self.config
        phi = y[0:12]
        r = y[12:24]
        rdot = y[24:36]
        x = y[36:48]
        xdot = y[48:60]
        diff = np.subtract(phi[None, :], phi[:, None], out=self._diff)
        diff -= cfg.phase_biases
        np.sin(diff, out=diff)
        np.multiply(cfg.coupling_weights, diff, out=self._wsin)
        np.matmul(self._wsin, r, out=out[0:12])
        out[0:12] += cfg.omega
        out[12:24] = rdot
        np.subtract(cfg.target_amplitudes, r, out=out[24:36])
        out[24:36] *= 0.25 * cfg.gain_r
        out[24:36] -= rdot
        out[24:36] *= cfg.gain_r
        out[36:48] = xdot
        np.subtract(cfg.target_offsets, x, out=out[48:60])
        out[48:60] *= 0.25 * cfg.gain_x
        out[48:60] -= xdot
        out[48:60] *= cfg.gain_x

    def _step_numpy(self, dt: float) -> None:
        y = self._y
        k1, k2, k3, k4 = self._k
        ytmp = self._ytmp
        self._rhs(y, k1)
        np.multiply(k1, 0.5 * dt, out=ytmp)
        ytmp += y
        self._rhs(ytmp, k2)
        np.multiply(k2, 0.5 * dt, out=ytmp)
        ytmp += y
        self._rhs(ytmp, k3)
        np.multiply(k3, dt, out=ytmp)
        ytmp += y
        self._rhs(ytmp, k4)
        k2 += k3
        k2 *= 2.0
        k2 += k1
        k2 += k4
        k2 *= dt / 6.0
        y += k2
        y[0:12] = wrap_phase(y[0:12])
        if not np.all(np.isfinite(y)):
            raise IntegrationFault(f"non-finite oscillator state at t={self.t + dt}")

    def _advance(self, n_steps: int, dt: float, record=None) -> None:
        cfg = self.config
        if _HAVE_NUMBA:
            if record is None:
                phi = np.empty((n_steps, N_OSC))
                r = np.empty((n_steps, N_OSC))
                x = np.empty((n_steps, N_OSC))
            else:
                phi, r, x = record
            bad = _rk4_kernel(
                self._y,
                cfg.coupling_weights,
                cfg.phase_biases,
                cfg.omega,
                cfg.target_amplitudes,
                cfg.target_offsets,
                cfg.gain_r,
                cfg.gain_x,
                dt,
                n_steps,
                phi,
                r,
                x,
            )
            if bad:
                raise IntegrationFault(
                    f"non-finite oscillator state at t={self.t + bad * dt}"
                )
            self.t += n_steps * dt
        else:
            for k in range(n_steps):
                self._step_numpy(dt)
                self.t += dt
                if record is not None:
                    record[0][k] = self.phi
                    record[1][k] = self.r
                    record[2][k] = self.x

    def step(self, dt: float = DT_DEFAULT) -> "CpgNetwork":
        """Advance every oscillator by one classical RK4 step of size dt."""
        if not (0.0 < dt <= DT_MAX):
            raise ValueError(f"dt must lie in (0, {DT_MAX}]")
        self._advance(1, dt)
        return self

    def rollout(self, n_steps: int, dt: float = DT_DEFAULT) -> dict[str, np.ndarray]:
        """Integrate n_steps and return state trajectories incl. t = 0.

        Returned arrays have shape (n_steps + 1, 12).
        """
        if not (0.0 < dt <= DT_MAX):
            raise ValueError(f"dt must lie in (0, {DT_MAX}]")
        phi = np.empty((n_steps + 1, N_OSC))
        r = np.empty((n_steps + 1, N_OSC))
        x = np.empty((n_steps + 1, N_OSC))
        phi[0], r[0], x[0] = self.phi, self.r, self.x
        self._advance(n_steps, dt, record=(phi[1:], r[1:], x[1:]))
        return {"phi": phi, "r": r, "x": x}

    def state(self, osc_id: int) -> OscillatorState:
        return OscillatorState(
            phase=float(self.phi[osc_id]),
            amplitude=float(self.r[osc_id]),
            amplitude_rate=float(self.rdot[osc_id]),
            offset=float(self.x[osc_id]),
            offset_rate=float(self.xdot[osc_id]),
        )

    def motor_output(self) -> MotorCommand:
        v, h = piecewise_outputs(
            self.phi[:N_LEGS],
            self.phi[N_LEGS:],
            self.r[:N_LEGS],
            self.r[N_LEGS:],
            self.x[:N_LEGS],
            self.x[N_LEGS:],
        )
        return MotorCommand(vertical=0.5 * (v + 1.0), horizontal=0.5 * (h + 1.0))


def piecewise_outputs(phi_v, phi_h, r_v, r_h, x_v, x_h):
    """Raw (unnormalized) outputs of each vertical-horizontal pair.

    Four cases by which half-cycle each oscillator is in (i = vertical,
    j = horizontal):

        phi_i > pi,  phi_j > pi   ->  x_i + r_i cos(phi_i), x_j + r_j cos(phi_j)
        phi_i <= pi, phi_j > pi   ->  x_i + r_i,            x_j + r_j cos(phi_j)
        phi_i <= pi, phi_j <= pi  ->  x_i + r_i,            x_j + r_j
        phi_i > pi,  phi_j <= pi  ->  x_i + r_i cos(phi_i), x_j - r_j

    The saturated branches hold a motor at full extension; the last case
    parks the horizontal motor fully retracted (retraction is a snap, the
    actuator cannot follow a partial-retraction trajectory).
    """
    phi_v = np.asarray(phi_v)
    phi_h = np.asarray(phi_h)
    v_active = phi_v > math.pi
    h_active = phi_h > math.pi
    vert = np.where(v_active, x_v + r_v * np.cos(phi_v), x_v + r_v)
    horiz = np.where(
        h_active,
        x_h + r_h * np.cos(phi_h),
        np.where(v_active, x_h - r_h, x_h + r_h),
    )
    return vert, horiz


def motor_output(network: CpgNetwork) -> MotorCommand:
    """Current motor command of a network (stroke fractions in [0, 1])."""
    return network.motor_output()


def motor_outputs_from_trajectory(
    phi: np.ndarray, r: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized raw outputs over a (T, 12) state trajectory.

    Returns (vertical_raw, horizontal_raw), each (T, 6).
    """
    return piecewise_outputs(
        phi[:, :N_LEGS],
        phi[:, N_LEGS:],
        r[:, :N_LEGS],
        r[:, N_LEGS:],
        x[:, :N_LEGS],
        x[:, N_LEGS:],
    )


# -- configuration serialization ---------------------------------------------


def config_to_yaml(gait: GaitSpec, params: ControlParams, gains=(DEFAULT_GAIN, DEFAULT_GAIN), dt: float = DT_DEFAULT) -> str:
    """Human-readable network configuration."""
    doc = {
        "gait": gait.name.value,
        "omega": float(params.omega),
        "vh_phase_diff": float(params.vh_phase_diff),
        "amp_left": float(params.amp_left),
        "amp_right": float(params.amp_right),
        "a_r": float(gains[0]),
        "a_x": float(gains[1]),
        "dt": float(dt),
    }
    if gait.name is GaitName.CUSTOM:
        doc["leg_phase_offsets"] = [float(v) for v in gait.leg_phase_offsets]
    return yaml.safe_dump(doc, sort_keys=False)


def config_from_yaml(text: str) -> tuple[GaitSpec, ControlParams, tuple[float, float], float]:
    doc = yaml.safe_load(text)
    name = GaitName(doc["gait"])
    if name is GaitName.CUSTOM:
        gait = GaitSpec(name, tuple(float(v) for v in doc["leg_phase_offsets"]))
    else:
        gait = gait_from_name(name)
    params = ControlParams(
        omega=float(doc["omega"]),
        vh_phase_diff=float(doc["vh_phase_diff"]),
        amp_left=float(doc["amp_left"]),
        amp_right=float(doc["amp_right"]),
    )
    gains = (float(doc.get("a_r", DEFAULT_GAIN)), float(doc.get("a_x", DEFAULT_GAIN)))
    dt = float(doc.get("dt", DT_DEFAULT))
    return gait, params, gains, dt


def dump_trajectory_csv(
    gait: GaitSpec,
    params: ControlParams,
    duration: float,
    path,
    dt: float = DT_DEFAULT,
    gains=(DEFAULT_GAIN, DEFAULT_GAIN),
) -> None:
    """Integrate a fresh network and dump per-oscillator trajectories.

    CSV header: t,osc_id,phi,r,x,output  (output is the raw piecewise
    value for that oscillator's motor, before stroke normalization).
    """
    net = build_network(gait, params, gains)
    n_steps = int(round(duration / dt))
    traj = net.rollout(n_steps, dt)
    v_raw, h_raw = motor_outputs_from_trajectory(traj["phi"], traj["r"], traj["x"])
    out = np.concatenate([v_raw, h_raw], axis=1)  # (T+1, 12)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,osc_id,phi,r,x,output\n")
        for k in range(n_steps + 1):
            t = k * dt
            for osc in range(N_OSC):
                fh.write(
                    f"{t!r},{osc},{traj['phi'][k, osc]!r},{traj['r'][k, osc]!r},"
                    f"{traj['x'][k, osc]!r},{out[k, osc]!r}\n"
                )


def constants() -> dict:
    """Tunable constants of this module (recorded in run manifests)."""
    return {
        "coupling_weight": COUPLING_WEIGHT,
        "default_gain": DEFAULT_GAIN,
        "dt_default": DT_DEFAULT,
        "dt_max": DT_MAX,
        "param_bounds": {k: list(v) for k, v in PARAM_BOUNDS.items()},
    }
