"""Smoothing spline ANOVA for very large samples via predictor rounding."""

from .design import CONTRAST, OMIT, ModelSpec, TermDef, select_knots_binsample
from .kernel import KernelSpec
from .rounding import Continuous, Nominal, RoundingSpec, UniqueDesign, compress, u_upper_bound
from .solver import FitResult, NumericalError, bayes_interval, fit, predict

__all__ = [
    "CONTRAST",
    "OMIT",
    "Continuous",
    "FitResult",
    "KernelSpec",
    "ModelSpec",
    "Nominal",
    "NumericalError",
    "RoundingSpec",
    "TermDef",
    "UniqueDesign",
    "bayes_interval",
    "compress",
    "fit",
    "predict",
    "select_knots_binsample",
    "u_upper_bound",
]

__version__ = "0.1.0"
