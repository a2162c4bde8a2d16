"""Numerical laboratory for linear hyperkähler actions and their moment-map flows."""

__version__ = "0.1.0"

from .core import EPSILON, ComplexStructureLabel, DomainError, Frame, State, Tangent
from .models import MomentValue, build_model, eval_moment, infinitesimal_action, moment_jacobian

__all__ = [
    "EPSILON",
    "ComplexStructureLabel",
    "DomainError",
    "Frame",
    "State",
    "Tangent",
    "MomentValue",
    "build_model",
    "eval_moment",
    "infinitesimal_action",
    "moment_jacobian",
]
