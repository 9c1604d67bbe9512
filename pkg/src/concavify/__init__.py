"""Concavification duality for non-concave expected-utility maximization.

Library layout:

- :mod:`concavify.utility`:   piecewise utilities, growth check, concave envelope
- :mod:`concavify.transform`: conjugates, subdifferentials, elasticity diagnostics
- :mod:`concavify.market`:    finite markets, event trees, consistent price systems
- :mod:`concavify.solver`:    multiplier search, value/dual curves, brute-force oracle
- :mod:`concavify.cli`:       batch front door (``concavify <subcommand> --config ...``)
"""

from .market import (
    CPSCandidate,
    EventTree,
    FiniteMarket,
    TradingStrategy,
    TreeNode,
    budget_check,
    check_admissible,
    check_cps,
    check_self_financing,
    liquidation_value,
    terminal_density,
)
from .solver import (
    BruteForceResult,
    BudgetEnvelope,
    budget_envelope,
    SolverError,
    SolverResult,
    ValueCurve,
    brute_force,
    check_assumption_vfinite,
    default_envelope_grid,
    dual_function,
    duality_check,
    foc_check,
    pointwise_argmax,
    solve,
    value_function,
)
from .tolerances import DEFAULT as DEFAULT_TOLERANCES
from .tolerances import Tolerances
from .transform import (
    ConvexConjugate,
    SubdifferentialInterval,
    biconjugate,
    check_eae_inequality,
    check_envelope_domination,
    conjugate,
    estimate_eae,
    fenchel_young_check,
    find_eae_gamma,
    grid_sup_conjugate,
    subdifferential_Uc,
    subdifferential_V,
)
from .utility import (
    ConcaveEnvelope,
    DomainError,
    GridSpec,
    PiecewiseUtility,
    UtilityPiece,
    check_growth,
    compute_envelope,
    envelope_components,
    eval_utility,
)

__version__ = "0.1.0"
