"""Relativistic diffusions on Lorentzian model spacetimes and expanding
warped products: phase-space simulation, isometry-group lifts, Iwasawa
boundary coordinates, and statistical verdicts on the asymptotic claims.
"""

__version__ = "0.1.0"

from .errors import (Error, DimensionError, DomainError, StateInvalid,
                     StepRejected, PathAborted, UnsupportedGroup,
                     DecompositionOutOfDomain, ExtractionDegenerate,
                     ClassificationAmbiguous, InsufficientData, ConfigError)
from .spacetime import (QuadraticForm, WarpFunction, SpaceTimeSpec,
                        RegimeReport, eval_q, metric_at, christoffel,
                        classify_regime)
from .iwasawa import (IwasawaCoords, decompose, decompose_ensemble,
                      decompose_newton, extract_theta, weyl_stats,
                      ads_boundary)

__all__ = [
    "Error", "DimensionError", "DomainError", "StateInvalid",
    "StepRejected", "PathAborted", "UnsupportedGroup",
    "DecompositionOutOfDomain", "ExtractionDegenerate",
    "ClassificationAmbiguous", "InsufficientData", "ConfigError",
    "QuadraticForm", "WarpFunction", "SpaceTimeSpec", "RegimeReport",
    "eval_q", "metric_at", "christoffel", "classify_regime",
    "IwasawaCoords", "decompose", "decompose_ensemble", "decompose_newton",
    "extract_theta", "weyl_stats", "ads_boundary",
]
