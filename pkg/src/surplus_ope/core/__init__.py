"""Data model, pricing policies and price-grid integration."""

from .data import InequalityParams, ObservationSet, load_csv, write_csv
from .policies import (
    DiscreteGrid,
    DiscretePolicy,
    PiecewiseUniform,
    PricingPolicy,
    SoftmaxRevenue,
    UniformInterval,
    policy_cdf,
    policy_from_dict,
    sample_policy,
)
from .quadrature import (
    PriceGrid,
    clamp_unit,
    integrate_cells,
    policy_surplus_integral,
    policy_surplus_integrals,
    tail_integral,
    tail_integrals,
)

TargetPolicy = PricingPolicy

__all__ = [
    "DiscreteGrid",
    "DiscretePolicy",
    "InequalityParams",
    "ObservationSet",
    "PiecewiseUniform",
    "PriceGrid",
    "PricingPolicy",
    "SoftmaxRevenue",
    "TargetPolicy",
    "UniformInterval",
    "clamp_unit",
    "integrate_cells",
    "load_csv",
    "policy_cdf",
    "policy_from_dict",
    "policy_surplus_integral",
    "policy_surplus_integrals",
    "sample_policy",
    "tail_integral",
    "tail_integrals",
    "write_csv",
]
