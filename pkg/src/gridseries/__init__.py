"""Component-level power-system time series from a network snapshot and regional aggregates."""

from .errors import (
    DegenerateRegionError,
    GridSeriesError,
    InfeasibleError,
    ParseError,
    SizeLimitError,
    SolverError,
    ValidationError,
)
from .grid_model import NetworkSnapshot, RegionalSeries, contribution_vectors, load_snapshot

__version__ = "0.1.0"

__all__ = [
    "DegenerateRegionError",
    "GridSeriesError",
    "InfeasibleError",
    "NetworkSnapshot",
    "ParseError",
    "RegionalSeries",
    "SizeLimitError",
    "SolverError",
    "ValidationError",
    "contribution_vectors",
    "load_snapshot",
]
