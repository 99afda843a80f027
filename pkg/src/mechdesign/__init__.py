"""Auction and pricing mechanisms for shared-resource games, with
independent welfare oracles and strategy-proofness checks."""

from .auction_interference import AuctionB, AuctionBParams, alloc_mb, solve_global_mb
from .auction_separable import AuctionA, AuctionAParams, min_feasible_omega, solve_ne_ma
from .core import (
    AdditiveSharing,
    GeneralConcave,
    Interference,
    IterationTrace,
    MechanismOutcome,
    WeightedLog,
)
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    MechanismError,
    NoSolutionError,
    SingularMatrixError,
)
from .oracle import deviation_oracle, solve_interference_welfare, solve_separable_welfare
from .pricing_interference import IterativeInterferencePricing, MpParams, run_mp
from .pricing_separable import (
    IterativePricing,
    IterativePricingParams,
    run_continuous_approx,
    run_iterative_pricing,
)

__version__ = "0.1.0"

__all__ = [
    "AdditiveSharing", "AuctionA", "AuctionAParams", "AuctionB", "AuctionBParams",
    "ConfigurationError", "ConvergenceError", "DomainError", "GeneralConcave", "Interference",
    "IterationTrace", "IterativeInterferencePricing", "IterativePricing",
    "IterativePricingParams", "MechanismError", "MechanismOutcome", "MpParams",
    "NoSolutionError", "SingularMatrixError", "WeightedLog", "alloc_mb", "deviation_oracle",
    "min_feasible_omega", "run_continuous_approx", "run_iterative_pricing", "run_mp",
    "solve_global_mb", "solve_interference_welfare", "solve_ne_ma", "solve_separable_welfare",
]
