"""Numerical toolkit for backward stochastic evolution inclusions.

Solves dY + A Y dt in G(t, Y, Z) dt + Z dW with terminal data Y_T at desk
scale in Euclidean state space, and ships the validation machinery for the
underlying stochastic-integration identities (Gaussian-sum norms, the Ito
isometry, martingale representation).
"""

from .errors import (
    AdaptednessError,
    BseiError,
    ConfigError,
    NonConvergenceError,
    ProjectionError,
    RegressionError,
)
from .gamma import (
    FiniteRankOperator,
    GammaNormEstimate,
    IsomorphismReport,
    bounded_operator_pushthrough,
    gamma_norm,
    ito_isomorphism_report,
    kw_integral,
)
from .geometry import (
    Ball,
    ConvexCompactSet,
    Polytope,
    SetValuedSpec,
    Singleton,
    direction_net,
    distance_to,
    hausdorff,
    magnitude,
    probe_lipschitz,
    project,
    support,
    support_gap,
)
from .paths import (
    BrownianEnsemble,
    KernelEnsemble,
    MartingaleRepresentation,
    PolynomialRegression,
    ProcessEnsemble,
    RegressionFit,
    TimeGrid,
    conditional_expectation,
    from_function,
    ito_integral,
    lp_l2_norm,
    martingale_representation,
    regress,
    simulate_brownian,
)
from .semigroup import SemigroupCache, apply, gamma_bound, matrix_exponential
from .solver import (
    BSEIProblem,
    PicardSchedule,
    ResidualReport,
    Solution,
    SolveReport,
    SolverConfig,
    TerminalSpec,
    compute_schedule,
    picard_solve_interval,
    schedule_from_constants,
    select_generator,
    solve,
    solve_linear_bsee,
    verify_solution,
)

__version__ = "0.1.0"
