"""Certified mean-field approximations of strongly log-concave Gibbs measures."""
from .certify import Certificate
from .errors import MfcertError
from .grid1d import Grid, GridDensity, ProductMeasure
from .mfsolver import SolveOptions, SolveResult, cavi_solve, tilt_solve
from .models import BayesLinReg, PairwiseGibbs, QuadraticModel

__version__ = "0.1.0"

__all__ = [
    "BayesLinReg",
    "Certificate",
    "Grid",
    "GridDensity",
    "MfcertError",
    "PairwiseGibbs",
    "ProductMeasure",
    "QuadraticModel",
    "SolveOptions",
    "SolveResult",
    "cavi_solve",
    "tilt_solve",
    "__version__",
]
