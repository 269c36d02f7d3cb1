"""Anomaly detection for directed attributed multi-graphs with metadata."""

from .data import Database, DataError, Edge, MultiGraph, Sample, Schema, load_database, write_database
from .estimator import AdammDetector, DivergenceError

__version__ = "0.1.0"

__all__ = [
    "AdammDetector",
    "Database",
    "DataError",
    "DivergenceError",
    "Edge",
    "MultiGraph",
    "Sample",
    "Schema",
    "load_database",
    "write_database",
    "__version__",
]
