"""Joint and individual low-rank structure of two exponential-family data blocks."""
from .expfam import DomainError, Family
from .model import (
    DataBlock,
    FitResult,
    GasParams,
    Ranks,
    identifiability_report,
    joint_log_likelihood,
    natural_parameters,
    normalize,
)
from .fitter import FitConfig, SparsityRule, fit, initialize
from .association import association_coefficient, permutation_test

__version__ = "0.1.0"
