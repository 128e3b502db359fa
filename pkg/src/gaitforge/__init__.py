"""gaitforge: gait learning for a simulated hexapod microrobot.

Submodules
----------
cpg         coupled-oscillator locomotion controller and gait catalog
sim         planar surrogate simulator, objectives, maze geometry
gp          Gaussian-process regression used by the optimizers
bayesopt    single-objective, multi-objective (ParEGO) and contextual BO
primitives  displacement-prediction model and shooting path planner
experiments experiment runner behind the ``gaitforge`` CLI
"""

__version__ = "0.1.0"

from . import bayesopt, cpg, gp, primitives, sim  # noqa: E402,F401

__all__ = ["bayesopt", "cpg", "gp", "primitives", "sim", "__version__"]
