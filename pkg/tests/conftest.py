import math

import numpy as np
import pytest

from gaitforge import bayesopt as bo
from gaitforge import cpg, experiments as ex, primitives as pr, sim

#: the curve-learning budget used for the shared acceptance fixture
CURVE_BUDGET = 250
CURVE_N_INIT = 5
CURVE_SEED = 0


@pytest.fixture(scope="session", autouse=True)
def warm_integrator():
    """Compile/load the integrator JIT once, outside any timed assertions."""
    g = cpg.gait_from_name("tripod")
    p = cpg.ControlParams(8 * math.pi, math.pi / 2, 1.0, 1.0)
    sim.run_trial(g, p, duration=0.01)


@pytest.fixture(scope="session")
def curve_history():
    """One 250-trial curve-learning run shared by the primitive criteria."""
    gait = cpg.gait_from_name("tripod")
    space = ex.control_space()
    targets = ex.curve_targets()
    schedule = targets[[i % len(targets) for i in range(CURVE_BUDGET - CURVE_N_INIT)]]
    return bo.cbo_run(
        ex.make_curve_evaluator(gait, CURVE_SEED, noise=True),
        space,
        schedule,
        n_init=CURVE_N_INIT,
        seed=CURVE_SEED,
        context_bounds=ex.CURVE_CONTEXT_BOUNDS,
        context_names=("target_x", "target_y"),
        objective_name="target_distance",
    )


@pytest.fixture(scope="session")
def primitive_model(curve_history):
    return pr.build_primitive_model(curve_history, seed=CURVE_SEED)


@pytest.fixture(scope="session")
def joint_curve_model(curve_history):
    return bo.fit_joint_model(curve_history, ex.CURVE_CONTEXT_BOUNDS, seed=CURVE_SEED)
