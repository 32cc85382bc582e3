"""Demand and logging-policy nuisance models, plus cross-fitting folds."""

from .demand import (
    BoostedLearner,
    BoostedTreesDemand,
    DemandModel,
    FixedDemand,
    FunctionDemand,
    LinearDemand,
    LinearLearner,
    TableDemand,
    demand_from_dict,
    fit_demand_boosted,
    fit_demand_linear,
)
from .folds import FoldAssignment, make_folds
from .propensity import (
    CLIP_FLOOR,
    BinnedKDELearner,
    BinnedKDEPropensity,
    EmpiricalCDF,
    FixedPropensity,
    GaussianLearner,
    GaussianPropensity,
    KDELearner,
    KDEPropensity,
    KnownPropensity,
    PropensityModel,
    fit_propensity_binned,
    fit_propensity_gaussian,
    fit_propensity_kde,
    propensity_from_dict,
    silverman_bandwidth,
)

__all__ = [
    "BinnedKDELearner",
    "BinnedKDEPropensity",
    "BoostedLearner",
    "BoostedTreesDemand",
    "CLIP_FLOOR",
    "DemandModel",
    "EmpiricalCDF",
    "FixedDemand",
    "FixedPropensity",
    "FoldAssignment",
    "FunctionDemand",
    "GaussianLearner",
    "GaussianPropensity",
    "KDELearner",
    "KDEPropensity",
    "KnownPropensity",
    "LinearDemand",
    "LinearLearner",
    "PropensityModel",
    "TableDemand",
    "demand_from_dict",
    "fit_demand_boosted",
    "fit_demand_linear",
    "fit_propensity_binned",
    "fit_propensity_gaussian",
    "fit_propensity_kde",
    "make_folds",
    "propensity_from_dict",
    "silverman_bandwidth",
]
