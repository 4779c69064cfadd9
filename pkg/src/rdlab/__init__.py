"""Regression discontinuity toolkit: estimation, diagnostics, simulation, reports."""

__version__ = "0.1.0"

from .data import ColumnMapping, RdDataset, RdDesign, load_dataset, validate_design  # noqa: E402
from .estimation import RdEstimate, estimate, estimate_fuzzy, estimate_kink, estimate_sharp  # noqa: E402

__all__ = [
    "ColumnMapping",
    "RdDataset",
    "RdDesign",
    "RdEstimate",
    "__version__",
    "estimate",
    "estimate_fuzzy",
    "estimate_kink",
    "estimate_sharp",
    "load_dataset",
    "validate_design",
]
