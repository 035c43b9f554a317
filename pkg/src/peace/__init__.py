"""Degree-d probabilistic variational causal effects for structural models."""

from .continuous import PeaceResult, affine_pullback, change_of_variables, peace, peace_r, piev, signed_peace, signed_piev
from .discrete import discrete_piev, flux_tv, grid_refine_peace, peace_discrete, phi_oracle_discrete, tv_ani, tv_classic
from .domain import DomainBox
from .estimation import EstimationError, SampleTable, identifiable_piev, peace_from_data, sweep_from_data
from .expr import differentiate, evaluate, parse_expression, to_string
from .model import (
    ConditionalDensity,
    DiscreteGrid,
    ModelError,
    StructuralModel,
    ValidationReport,
    ZDistribution,
    load_model,
    model_from_dict,
    validate_model,
)
from .oracle import variational_oracle
from .quadrature import QuadratureSpec, TruncationPolicy, expect_over_z, integrate_box, truncate_domain

__version__ = "0.1.0"
