"""Differentiable rigid-body contact simulation at desk scale.

Three contact models share one generalized-coordinate core:

* ``soft``: penalty spring-damper forces with semi-implicit Euler,
* ``hard``: Moreau midpoint stepping with a projected Gauss-Seidel solve,
* ``smoothed``: the same solve with sigmoid-weighted contact activation.

Gradients flow through everything via the scalar tape in :mod:`.autodiff`.
"""

from .autodiff import DVar, Tape, finite_diff_gradient
from .config import ConfigError, SimConfig, parse_config
from .dynamics import GeneralizedState, Trajectory, rollout
from .scenarios import builtin_scenarios, get_scenario

__all__ = [
    "ConfigError",
    "DVar",
    "GeneralizedState",
    "SimConfig",
    "Tape",
    "Trajectory",
    "builtin_scenarios",
    "finite_diff_gradient",
    "get_scenario",
    "parse_config",
    "rollout",
]

__version__ = "0.1.0"
