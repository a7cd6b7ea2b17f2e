"""Pure differential privacy for combinatorial optimization.

One-sided (add) DP mechanisms become two-sided pure DP after Poisson
subsampling. The package provides the two generic engines (repeated
exponential mechanism and repeated above-threshold), solvers built on them,
an exact auditor and an experiment harness.
"""

from privsub.core import (
    LN2,
    CapacityError,
    ContractViolation,
    Dataset,
    ParameterError,
    PrivacyParams,
    RandomSource,
    amplification_epsilon,
    exp_mech,
    exp_mech_distribution,
    poisson_subsample,
    rate_for_target,
)
from privsub.mechanisms import (
    AtRound,
    EmRound,
    ScoringOracle,
    ThresholdOracle,
    run_repeated_at,
    run_repeated_em,
    run_subsampled,
)

__all__ = [
    "LN2",
    "AtRound",
    "CapacityError",
    "ContractViolation",
    "Dataset",
    "EmRound",
    "ParameterError",
    "PrivacyParams",
    "RandomSource",
    "ScoringOracle",
    "ThresholdOracle",
    "amplification_epsilon",
    "exp_mech",
    "exp_mech_distribution",
    "poisson_subsample",
    "rate_for_target",
    "run_repeated_at",
    "run_repeated_em",
    "run_subsampled",
]

__version__ = "0.1.0"
