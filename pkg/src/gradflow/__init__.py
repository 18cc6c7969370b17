"""Energy-stable, high-order semi-implicit multistage integrators for
gradient flows, including flows under solution-dependent inner products."""

from .grids import Grid, StateField
from .integrator import (
    FrozenMetric,
    GradientFlowProblem,
    StepRecord,
    linearized_energy,
    ms_step,
    run,
)
from .metric import FluxMetric, ScalarMetric, step2, step2_fi, step3, step3_fi
from .problems import PROBLEM_NAMES, make_problem
from .tableau import BUILTIN_NAMES, Tableau, builtin, load, save
from .verify import (
    compute_beta,
    compute_gamma_tilde,
    order_of,
    polish,
    polished_builtin,
    stability_threshold,
)

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "StateField",
    "GradientFlowProblem",
    "FrozenMetric",
    "StepRecord",
    "Tableau",
    "BUILTIN_NAMES",
    "PROBLEM_NAMES",
    "builtin",
    "load",
    "save",
    "make_problem",
    "ms_step",
    "run",
    "linearized_energy",
    "step2",
    "step3",
    "step2_fi",
    "step3_fi",
    "FluxMetric",
    "ScalarMetric",
    "compute_beta",
    "compute_gamma_tilde",
    "order_of",
    "polish",
    "polished_builtin",
    "stability_threshold",
]
