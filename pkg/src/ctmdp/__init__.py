"""Average-cost continuous-time Markov decision processes on truncated state spaces.

The package builds finite truncations of countable-state CTMDPs, solves the
discounted problems, passes to the average-cost limit by vanishing discount,
and checks the boundedness, Lyapunov and optimality-equation conditions along
the way. A Monte Carlo simulator cross-checks the analytic numbers.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CtmdpModel,
    GeneratorRow,
    InfeasiblePolicyError,
    LumpCosts,
    StationaryPolicy,
    cost_vector,
    induced_generator,
    validate,
)
from .models import (  # noqa: E402
    UpgradeQueueParams,
    build_mm1,
    build_upgrade_queue,
    ps_policy,
    threshold_policy,
    upgrade_queue_lyapunov,
)
from .discounted import evaluate_policy, solve_optimal  # noqa: E402
from .average import vanishing_discount  # noqa: E402

__all__ = [
    "CtmdpModel",
    "GeneratorRow",
    "InfeasiblePolicyError",
    "LumpCosts",
    "StationaryPolicy",
    "UpgradeQueueParams",
    "build_mm1",
    "build_upgrade_queue",
    "cost_vector",
    "evaluate_policy",
    "induced_generator",
    "ps_policy",
    "solve_optimal",
    "threshold_policy",
    "upgrade_queue_lyapunov",
    "validate",
    "vanishing_discount",
]
