"""Predict HPC system power from the job workload.

A first layer models each job's power from its resources and co-located
jobs; a second layer maps total component power to whole-system power.
"""

from .exceptions import (
    ConfigurationError,
    ConsistencyError,
    DegenerateFitError,
    ParseError,
    PowercastError,
    PreconditionError,
    RangeError,
    UndefinedMetricError,
    UsageError,
)
from .ingest import ReconciledDataset, load_dataset, reconcile
from .metrics import nrmse, pearson, r_squared
from .pipeline import TwoLayerPowerModel
from .syslayer import SystemLinearModel, fit_linear, predict_system

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ConsistencyError", "DegenerateFitError", "ParseError",
    "PowercastError", "PreconditionError", "RangeError", "ReconciledDataset",
    "SystemLinearModel", "TwoLayerPowerModel", "UndefinedMetricError", "UsageError",
    "fit_linear", "load_dataset", "nrmse", "pearson", "predict_system", "r_squared",
    "reconcile",
]
