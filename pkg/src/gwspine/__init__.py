"""Continuous-time branching particle systems and their spine (many-to-one) identities.

The hot loops run in a compiled extension when it is available and in
pure Python otherwise; :data:`BACKEND` names the one in use.
"""

from ._backend import NAME as BACKEND
from .auxiliary import (
    StationaryLaw,
    apply_j1,
    apply_j2,
    estimate_semigroup,
    estimate_stationary,
    simulate_auxiliary,
)
from .branching import BranchingModel, Population, estimate_W, replica_statistics, simulate_population
from .errors import GWSpineError
from .gw_tree import GWTree, expected_moments, simulate_tree, tree_counts
from .models import build as build_model
from .offspring import OffspringDistribution, validate, yule
from .stats import McEstimate, two_sample_z
from .verify import CheckReport

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BranchingModel",
    "CheckReport",
    "GWSpineError",
    "GWTree",
    "McEstimate",
    "OffspringDistribution",
    "Population",
    "StationaryLaw",
    "apply_j1",
    "apply_j2",
    "build_model",
    "estimate_W",
    "estimate_semigroup",
    "estimate_stationary",
    "expected_moments",
    "replica_statistics",
    "simulate_auxiliary",
    "simulate_population",
    "simulate_tree",
    "tree_counts",
    "two_sample_z",
    "validate",
    "yule",
]
