"""Multicast loss tomography: simulation, sufficient statistics, path-rate
estimators and their finite-sample variance analysis."""

from .errors import CapacityError, LossTomoError, SingularityError, TreeSpecError
from .estimators import (
    Estimate,
    EstimateSet,
    Flag,
    Method,
    bwe,
    estimate_tree,
    ibe,
    merged_mle,
    mle_original,
    rse,
)
from .simulator import HiddenState, ObservationMatrix, exact_outcome_distribution, simulate
from .statistics import SubtreeStatistics
from .tree_model import (
    LossModel,
    Tree,
    TrueRates,
    descendant_subsets,
    dump_tree,
    binary15_tree,
    parse_tree,
    parse_tree_spec,
    star_tree,
    true_rates,
)

__version__ = "0.1.0"
