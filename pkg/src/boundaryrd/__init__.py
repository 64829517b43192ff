"""Estimation and inference for boundary discontinuity designs.

Two estimation paths are provided: a location path that fits bivariate
local polynomials on each side of the boundary, and a distance path that
fits univariate local polynomials in signed distance to each cutoff. Both
report pointwise robust bias-corrected intervals and uniform bands.
"""

from .bandwidth import BandwidthError, select_bandwidths
from .core import (
    AATERow,
    BandwidthSet,
    CutoffGrid,
    Dataset,
    EstimationConfig,
    InferenceTable,
    NumericalError,
    SingularGramError,
    ValidationError,
    validate_inputs,
)
from .distance import DistanceMatrix, DistanceResult, build_distances, estimate_distance, select_bandwidths_distance
from .inference import LocationResult, estimate_location
from .io import export_plotdata, load_csv, render_report, write_csv
from .simulate import DGPSpec, generate, lshaped_grid, run_mc, true_tau

__version__ = "0.1.0"

__all__ = [
    "AATERow",
    "BandwidthError",
    "BandwidthSet",
    "CutoffGrid",
    "DGPSpec",
    "Dataset",
    "DistanceMatrix",
    "DistanceResult",
    "EstimationConfig",
    "InferenceTable",
    "LocationResult",
    "NumericalError",
    "SingularGramError",
    "ValidationError",
    "build_distances",
    "estimate_distance",
    "estimate_location",
    "export_plotdata",
    "generate",
    "load_csv",
    "lshaped_grid",
    "render_report",
    "run_mc",
    "select_bandwidths",
    "select_bandwidths_distance",
    "true_tau",
    "validate_inputs",
    "write_csv",
]
