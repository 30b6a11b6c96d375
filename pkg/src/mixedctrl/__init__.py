"""Mixed-strategy solver for chance-constrained stochastic optimal control.

A pure policy that must respect a risk bound usually leaves slack; this
package closes the resulting duality gap by randomizing once, at time
zero, over at most K+1 pure policies found through Lagrangian duality.
Backends answer multiplier queries (finite candidate sets, finite-horizon
MDPs via dynamic programming, and linear-Gaussian obstacle avoidance via
a mixed-binary program); the dual layer is backend-agnostic.
"""

from .core import (
    Bounds,
    CostVector,
    DualVector,
    InfeasibleProblemError,
    InvalidInputError,
    LagrangianOracle,
    MixedControlError,
    MixedSolution,
    PureCandidate,
    lagrangian_value,
    mix_costs,
    wilson_ci_99,
)
from .dual import (
    OptimalityReport,
    ScalarDualResult,
    ScalarSolveConfig,
    check_optimality,
    recover_mixture_scalar,
    solve_dual_scalar,
    solve_mixed_scalar,
)

__all__ = [
    "Bounds",
    "CostVector",
    "DualVector",
    "InfeasibleProblemError",
    "InvalidInputError",
    "LagrangianOracle",
    "MixedControlError",
    "MixedSolution",
    "OptimalityReport",
    "PureCandidate",
    "ScalarDualResult",
    "ScalarSolveConfig",
    "check_optimality",
    "lagrangian_value",
    "mix_costs",
    "recover_mixture_scalar",
    "solve_dual_scalar",
    "solve_mixed_scalar",
    "wilson_ci_99",
]

__version__ = "0.1.0"
