"""Graph classifier training, topology-aware confidence calibration, metrics,
and calibrated self-training for small undirected attributed graphs."""

from . import calibration, datasets, graphcore, metrics, nn, selftrain
from ._kernels import BACKEND
from .errors import GraphcalError, InputError, NumericalError

__all__ = [
    "BACKEND",
    "GraphcalError",
    "InputError",
    "NumericalError",
    "calibration",
    "datasets",
    "graphcore",
    "metrics",
    "nn",
    "selftrain",
]

__version__ = "0.1.0"
