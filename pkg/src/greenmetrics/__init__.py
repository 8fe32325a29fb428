"""Carbon, energy and quality metrics for language-model test generation runs."""

__version__ = "0.1.0"

from .core import (
    AnalysisConfig,
    Cell,
    MetricSet,
    NormalizationContext,
    RunRecord,
    Stats,
    UndefinedMetricError,
    ValidationError,
    population_stats,
    to_grams,
)
from .metrics import AnalysisResult, compute_all

__all__ = [
    "AnalysisConfig",
    "AnalysisResult",
    "Cell",
    "MetricSet",
    "NormalizationContext",
    "RunRecord",
    "Stats",
    "UndefinedMetricError",
    "ValidationError",
    "__version__",
    "compute_all",
    "population_stats",
    "to_grams",
]
