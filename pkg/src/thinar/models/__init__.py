"""Model specification, design matrices, transforms and log-densities."""

from .approx import ApproxModel, log_posterior_approx, transform_params
from .design import build_design
from .exact import ExactPriors, log_joint_exact
from .priors import Prior
from .spec import AuxSpec, ModelSpec, Term, canonical_spec
from .transforms import ParamLayout

__all__ = [
    "ApproxModel", "AuxSpec", "ExactPriors", "ModelSpec", "ParamLayout", "Prior", "Term",
    "build_design", "canonical_spec", "log_joint_exact", "log_posterior_approx", "transform_params",
]
