"""Ellipsoidal reachable-set bounds and safe actuator-bound synthesis for LTI systems."""

__version__ = "0.1.0"

from .analysis import AllInfeasible, AnalysisResult, common_bound_analysis, grid_search  # noqa: E402
from .model import (  # noqa: E402
    DangerSet,
    Ellipsoid,
    InputBounds,
    LtiSystem,
    ModelError,
    boundedness_diagnostic,
    ellipsoid_volume,
    hyperplane_distance,
    input_weight,
    normalize_halfspace,
)
from .montecarlo import SampleConfig, containment, danger_violations, sample, validate  # noqa: E402
from .synthesis import SynthesisResult, equal_bound_synthesis, synthesize  # noqa: E402

__all__ = [
    "AllInfeasible", "AnalysisResult", "DangerSet", "Ellipsoid", "InputBounds", "LtiSystem",
    "ModelError", "SampleConfig", "SynthesisResult", "boundedness_diagnostic",
    "common_bound_analysis", "containment", "danger_violations", "ellipsoid_volume",
    "equal_bound_synthesis", "grid_search", "hyperplane_distance", "input_weight",
    "normalize_halfspace", "sample", "synthesize", "validate",
]
