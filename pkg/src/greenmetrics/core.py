"""Domain types, unit conversion and run statistics.

Everything here is an immutable value; nothing in this module touches the
filesystem.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Mapping, Optional, Sequence

PROMPT_VARIANTS: tuple[str, ...] = ("V0", "V1", "V2", "V3")
DEFAULT_BETAS: tuple[float, ...] = (0.3, 0.6, 0.9, 1.2, 1.5, 1.8)
DEFAULT_RUNS_PER_BATCH = 5


class GreenMetricsError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(GreenMetricsError, ValueError):
    pass


class UndefinedMetricError(GreenMetricsError, ArithmeticError):
    """A metric has no finite value for its inputs (e.g. division by zero)."""


class NormalizationScope(str, Enum):
    ALL_CELLS = "all_cells"
    PER_PROMPT_VARIANT = "per_prompt_variant"


class GqiEnergyMode(str, Enum):
    RAW_ENERGY_KWH = "raw_energy_kwh"
    NORMALIZED_EFFICIENCY = "normalized_efficiency"


class SiAggregation(str, Enum):
    MEAN_OVER_PRIMARY_METRICS = "mean"
    PER_METRIC = "per_metric"


class EmissionBasis(str, Enum):
    # per-run emission = batch emission / R
    PER_RUN = "per_run"
    RAW_BATCH = "raw_batch"


class CoverageMode(str, Enum):
    AS_PROVIDED = "as_provided"
    MODEL_MEAN = "model_mean"


def variant_sort_key(variant: str) -> tuple:
    """Natural ordering so that V2 < V10."""
    parts = re.split(r"(\d+)", variant)
    return tuple(int(p) if p.isdigit() else p for p in parts)


def cell_id(model_id: str, prompt_variant: str) -> str:
    return f"{model_id}:{prompt_variant}"


def to_grams(emissions_kg: float) -> float:
    if not math.isfinite(emissions_kg) or emissions_kg < 0:
        raise ValidationError(f"emissions must be a finite non-negative kg value, got {emissions_kg!r}")
    return emissions_kg * 1000.0


@dataclass(frozen=True)
class Stats:
    mean: float
    std_dev: float
    n: int


def population_stats(values: Sequence[float], *, sample: bool = False) -> Stats:
    """Mean and standard deviation of ``values``.

    The population form (divide by n) is the default. ``sample=True`` gives
    the n-1 form and needs at least two values.
    """
    values = list(values)
    if not values:
        raise ValidationError("cannot compute statistics of an empty series")
    if sample:
        if len(values) < 2:
            raise ValidationError("sample standard deviation needs at least two values")
        return Stats(statistics.mean(values), statistics.stdev(values), len(values))
    n = len(values)
    first = values[0]
    if all(v == first for v in values):
        # exact: no rounding in the mean can leak into sigma
        return Stats(float(first), 0.0, n)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) * (v - mean) for v in values) / n
    return Stats(mean, math.sqrt(var), n)


@dataclass(frozen=True)
class RunRecord:
    """One logged batch execution. Emissions are held in grams."""

    model_id: str
    prompt_variant: str
    batch_index: int
    duration_s: float
    energy_kwh: float
    emissions_g: float
    timestamp: Optional[datetime] = None
    source_file: Optional[str] = None
    failed: bool = False

    def __post_init__(self) -> None:
        if self.batch_index < 0:
            raise ValidationError(f"batch_index must be >= 0, got {self.batch_index}")
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValidationError(f"duration_s must be > 0, got {self.duration_s!r}")
        if not (math.isfinite(self.energy_kwh) and self.energy_kwh >= 0):
            raise ValidationError(f"energy_kwh must be >= 0, got {self.energy_kwh!r}")
        if not (math.isfinite(self.emissions_g) and self.emissions_g >= 0):
            raise ValidationError(f"emissions_g must be >= 0, got {self.emissions_g!r}")

    @property
    def emissions_kg(self) -> float:
        return self.emissions_g / 1000.0


@dataclass(frozen=True)
class Cell:
    """All runs of one (model, prompt variant) pair.

    ``coverage_pct`` is ``None`` when no coverage figure was supplied; such
    cells get no coverage-dependent metrics.
    """

    model_id: str
    prompt_variant: str
    runs: tuple[RunRecord, ...]
    coverage_pct: Optional[float] = None
    per_run_metrics: Optional[tuple[tuple[float, Optional[float], Optional[float]], ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(self.runs))
        for run in self.runs:
            if (run.model_id, run.prompt_variant) != (self.model_id, self.prompt_variant):
                raise ValidationError(
                    f"run for {cell_id(run.model_id, run.prompt_variant)} placed in cell {self.cell_id}"
                )
        if self.coverage_pct is not None and not (0.0 <= self.coverage_pct <= 100.0):
            raise ValidationError(f"coverage_pct must be in [0, 100], got {self.coverage_pct!r}")

    @property
    def cell_id(self) -> str:
        return cell_id(self.model_id, self.prompt_variant)

    @property
    def has_coverage(self) -> bool:
        return self.coverage_pct is not None


@dataclass(frozen=True)
class AnalysisConfig:
    grid_intensity_g_per_kwh: float
    runs_per_batch: int = DEFAULT_RUNS_PER_BATCH
    betas: tuple[float, ...] = DEFAULT_BETAS
    normalization_scope: NormalizationScope = NormalizationScope.ALL_CELLS
    gqi_energy_mode: GqiEnergyMode = GqiEnergyMode.RAW_ENERGY_KWH
    si_aggregation: SiAggregation = SiAggregation.MEAN_OVER_PRIMARY_METRICS
    emission_basis: EmissionBasis = EmissionBasis.PER_RUN
    coverage_mode: CoverageMode = CoverageMode.AS_PROVIDED
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "normalization_scope", NormalizationScope(self.normalization_scope))
        object.__setattr__(self, "gqi_energy_mode", GqiEnergyMode(self.gqi_energy_mode))
        object.__setattr__(self, "si_aggregation", SiAggregation(self.si_aggregation))
        object.__setattr__(self, "emission_basis", EmissionBasis(self.emission_basis))
        object.__setattr__(self, "coverage_mode", CoverageMode(self.coverage_mode))
        if not (math.isfinite(self.grid_intensity_g_per_kwh) and self.grid_intensity_g_per_kwh > 0):
            raise ValidationError("grid intensity I must be > 0 gCO2e/kWh")
        if isinstance(self.runs_per_batch, bool) or int(self.runs_per_batch) != self.runs_per_batch or self.runs_per_batch < 1:
            raise ValidationError("runs_per_batch R must be a positive integer")
        if not self.betas:
            raise ValidationError("betas must not be empty")
        if any(not (math.isfinite(b) and b > 0) for b in self.betas):
            raise ValidationError(f"every beta must be > 0, got {self.betas}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")

    @property
    def k(self) -> float:
        """Carbon per kWh per functional run, I / R."""
        return self.grid_intensity_g_per_kwh / self.runs_per_batch

    def as_dict(self) -> dict:
        return {
            "grid_intensity_g_per_kwh": self.grid_intensity_g_per_kwh,
            "runs_per_batch": self.runs_per_batch,
            "betas": list(self.betas),
            "normalization_scope": self.normalization_scope.value,
            "gqi_energy_mode": self.gqi_energy_mode.value,
            "si_aggregation": self.si_aggregation.value,
            "emission_basis": self.emission_basis.value,
            "coverage_mode": self.coverage_mode.value,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnalysisConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown analysis settings: {sorted(unknown)}")
        if "grid_intensity_g_per_kwh" not in data:
            raise ValidationError("grid_intensity_g_per_kwh is required (no default)")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(str(exc)) from exc


@dataclass(frozen=True)
class NormalizationContext:
    """Per-quantity (min, max) over a population, supplying the hat transform."""

    quantity_bounds: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.quantity_bounds.items():
            if lo > hi:
                raise ValidationError(f"bounds for {name} have min > max")

    @classmethod
    def from_values(cls, values: Mapping[str, Sequence[float]]) -> "NormalizationContext":
        bounds = {}
        for name, xs in values.items():
            xs = list(xs)
            if not xs:
                raise ValidationError(f"empty population for {name}")
            bounds[name] = (min(xs), max(xs))
        return cls(bounds)

    def hat(self, quantity: str, x: float) -> float:
        try:
            lo, hi = self.quantity_bounds[quantity]
        except KeyError:
            raise ValidationError(f"no normalization bounds for {quantity!r}") from None
        if hi == lo:
            # no spread in the population: nobody is penalised
            return 0.0
        return (x - lo) / (hi - lo)


@dataclass(frozen=True)
class MetricSet:
    """Every metric for one cell. ``None`` marks an undefined value; the
    reason is kept in ``undefined``."""

    sci: Optional[float] = None
    sei: Optional[float] = None
    cer: Optional[float] = None
    si: Optional[float] = None
    gqi: Optional[float] = None
    scv_c: Optional[float] = None
    scv_e: Optional[float] = None
    svi: Optional[float] = None
    eco: Optional[float] = None
    gf_beta: Mapping[float, Optional[float]] = field(default_factory=dict)
    si_components: Mapping[str, Optional[float]] = field(default_factory=dict)
    undefined: Mapping[str, str] = field(default_factory=dict)


SCALAR_METRICS: tuple[str, ...] = ("sci", "sei", "cer", "si", "gqi", "scv_c", "scv_e", "svi")
