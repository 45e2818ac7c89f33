"""Multiscale test for constant volatility from discrete high-frequency data."""

from .errors import (
    ConfigurationError,
    ConstructionError,
    DegenerateObservationError,
    InvalidParameterError,
    NoRootError,
    SchemaError,
    VolscanError,
)
from .kernel import Kernel, kernel_constants, validate_kernel
from .model import ObservationIncrements, RngStream, VolatilityFunction, simulate_increments
from .statistic import Scale, ScaleGrid, detection_set, multiscale_stat
from .calibration import QuantileTable, calibrate_kappa, load_table, store_table, test_decision

__all__ = [
    "ConfigurationError", "ConstructionError", "DegenerateObservationError",
    "InvalidParameterError", "NoRootError", "SchemaError", "VolscanError",
    "Kernel", "kernel_constants", "validate_kernel",
    "ObservationIncrements", "RngStream", "VolatilityFunction", "simulate_increments",
    "Scale", "ScaleGrid", "detection_set", "multiscale_stat",
    "QuantileTable", "calibrate_kappa", "load_table", "store_table", "test_decision",
]
