"""Hyperfine spin Hamiltonians of rare-earth ions: levels, spectra, fitting and branching ratios."""

__version__ = "0.1.0"

from .exceptions import (
    DegeneracyAmbiguous,
    FitStageError,
    HyperspinError,
    IllConditioned,
    InsufficientCoincidences,
    ModelEvaluationFailed,
    NyquistViolation,
    SingularNormalMatrix,
)
from .models import C2Axis, SiteModel, StateModel
from .observations import ObservationSet
from .spinops import EulerAngles, QuadrupoleParams, SymmetricTensor3, ZeemanParams

__all__ = [
    "C2Axis",
    "DegeneracyAmbiguous",
    "EulerAngles",
    "FitStageError",
    "HyperspinError",
    "IllConditioned",
    "InsufficientCoincidences",
    "ModelEvaluationFailed",
    "NyquistViolation",
    "ObservationSet",
    "QuadrupoleParams",
    "SingularNormalMatrix",
    "SiteModel",
    "StateModel",
    "SymmetricTensor3",
    "ZeemanParams",
    "__version__",
]
