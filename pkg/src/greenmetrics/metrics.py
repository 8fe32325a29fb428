"""Carbon, energy and quality metrics for (model, prompt variant) cells.

Units: energy in kWh, emissions in grams CO2e, durations in seconds, coverage
in percent unless a parameter says ``fraction``.

Cell-level inputs are run means: mean batch energy, mean per-run emission and
mean batch duration. Per-run series feed the stability figures.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

from .core import (
    AnalysisConfig,
    Cell,
    CoverageMode,
    EmissionBasis,
    GqiEnergyMode,
    MetricSet,
    NormalizationContext,
    NormalizationScope,
    SiAggregation,
    UndefinedMetricError,
    ValidationError,
    cell_id,
    population_stats,
)

logger = logging.getLogger(__name__)

CellKey = tuple[str, str]
PRIMARY_SERIES: tuple[str, ...] = ("SCI", "SEI", "CER")


def _check_unit_interval(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


def _check_coverage(coverage_pct: float) -> None:
    if not (0.0 <= coverage_pct <= 100.0):
        raise ValidationError(f"coverage must lie in [0, 100], got {coverage_pct!r}")


# -- primary metrics ---------------------------------------------------------


def compute_sci(energy_kwh: float, config: AnalysisConfig) -> float:
    """Grams CO2e per functional run: (I / R) * E."""
    if energy_kwh < 0:
        raise ValidationError(f"energy must be >= 0, got {energy_kwh!r}")
    return config.k * energy_kwh


def compute_sei(sci: float, eps: float = 0.0) -> float:
    if sci <= eps:
        raise UndefinedMetricError(f"SEI undefined for SCI = {sci!r}")
    return 1.0 / sci


def compute_cer(coverage_pct: Optional[float], emissions_g_per_run: float, eps: float = 0.0) -> float:
    if coverage_pct is None:
        raise UndefinedMetricError("CER skipped: coverage absent")
    _check_coverage(coverage_pct)
    if emissions_g_per_run <= eps:
        raise UndefinedMetricError(f"CER undefined for emissions = {emissions_g_per_run!r} g")
    return coverage_pct / emissions_g_per_run


# -- stability ---------------------------------------------------------------


def compute_si(series: Sequence[float], config: Optional[AnalysisConfig] = None) -> float:
    """1 - sigma / mu with the population standard deviation. Can be negative."""
    stats = population_stats(series)
    eps = config.epsilon if config is not None else 0.0
    if abs(stats.mean) <= eps:
        raise UndefinedMetricError("SI undefined: series mean is zero")
    return 1.0 - stats.std_dev / stats.mean


def aggregate_si(
    series: Mapping[str, Optional[Sequence[float]]],
    config: AnalysisConfig,
) -> Union[float, dict[str, float]]:
    """SI over the per-run SCI, SEI and CER series.

    ``None`` entries are series that do not apply (CER without coverage) and
    are left out. Returns the mean of the per-series SIs, or the per-series
    values themselves in per-metric mode.
    """
    values = {name: compute_si(xs, config) for name, xs in series.items() if xs is not None}
    if not values:
        raise ValidationError("SI needs at least one metric series")
    if config.si_aggregation is SiAggregation.PER_METRIC:
        return values
    return statistics.fmean(values.values())


# -- derived metrics ---------------------------------------------------------


def compute_gqi(
    coverage_pct: float,
    energy_kwh: float,
    config: Optional[AnalysisConfig] = None,
    *,
    normalized_efficiency: Optional[float] = None,
) -> float:
    """Harmonic combination of coverage (as a fraction) and an energy term.

    The energy term is the raw energy in kWh by default. In normalized mode
    the caller supplies ``normalized_efficiency`` (1 - normalized energy).
    """
    _check_coverage(coverage_pct)
    q = coverage_pct / 100.0
    mode = config.gqi_energy_mode if config is not None else GqiEnergyMode.RAW_ENERGY_KWH
    if mode is GqiEnergyMode.NORMALIZED_EFFICIENCY:
        if normalized_efficiency is None:
            raise ValidationError("normalized-efficiency GQI needs a normalized efficiency value")
        _check_unit_interval("normalized efficiency", normalized_efficiency)
        term = normalized_efficiency
    else:
        if energy_kwh < 0:
            raise ValidationError(f"energy must be >= 0, got {energy_kwh!r}")
        term = energy_kwh
    denom = q + term
    if denom <= 0:
        raise UndefinedMetricError("GQI undefined: both terms are zero")
    return 2.0 * q * term / denom


def compute_scv_c(coverage_pct: float, duration_s: float, emissions_g: float, eps: float = 0.0) -> float:
    denom = duration_s * emissions_g
    if denom <= eps:
        raise UndefinedMetricError("SCV_C undefined: zero time or emissions")
    return coverage_pct / denom


def compute_scv_e(coverage_pct: float, duration_s: float, energy_kwh: float, eps: float = 0.0) -> float:
    denom = duration_s * energy_kwh
    if denom <= eps:
        raise UndefinedMetricError("SCV_E undefined: zero time or energy")
    return coverage_pct / denom


def compute_scv(
    coverage_pct: float, duration_s: float, emissions_g: float, energy_kwh: float
) -> tuple[Optional[float], Optional[float]]:
    """(SCV_C, SCV_E). A zero denominator leaves only that variant as ``None``."""
    _check_coverage(coverage_pct)
    if duration_s <= 0:
        raise ValidationError(f"duration must be > 0, got {duration_s!r}")
    out: list[Optional[float]] = []
    for fn, resource in ((compute_scv_c, emissions_g), (compute_scv_e, energy_kwh)):
        try:
            out.append(fn(coverage_pct, duration_s, resource))
        except UndefinedMetricError:
            out.append(None)
    return out[0], out[1]


def compute_svi(coverage_pct: float, sci_hat: float, t_hat: float, sigma_hat: float) -> float:
    _check_coverage(coverage_pct)
    for name, value in (("sci_hat", sci_hat), ("t_hat", t_hat), ("sigma_hat", sigma_hat)):
        _check_unit_interval(name, value)
    return (coverage_pct / 100.0) * (1.0 / (1.0 + sci_hat)) * (1.0 / (1.0 + t_hat)) * (1.0 - sigma_hat)


def compute_eco(sci_hat: float, t_hat: float) -> float:
    _check_unit_interval("sci_hat", sci_hat)
    _check_unit_interval("t_hat", t_hat)
    return 1.0 / ((1.0 + sci_hat) * (1.0 + t_hat))


def compute_gf_beta(q_fraction: float, eco: float, beta: float) -> float:
    """Weighted harmonic combination of coverage fraction and ECO.

    Small beta pulls the score toward ``q_fraction``, large beta toward ``eco``.
    """
    _check_unit_interval("coverage fraction", q_fraction)
    if not (0.0 < eco <= 1.0):
        raise ValidationError(f"eco must lie in (0, 1], got {eco!r}")
    if not beta > 0:
        raise ValidationError(f"beta must be > 0, got {beta!r}")
    b2 = beta * beta
    denom = b2 * q_fraction + eco
    if denom <= 0:
        raise UndefinedMetricError("GF_beta undefined: zero denominator")
    # (1 + b2) q eco / denom, rewritten as q plus a correction that vanishes
    # exactly when q == eco; the clamp absorbs last-ulp overshoot.
    value = q_fraction + q_fraction * b2 * (eco - q_fraction) / denom
    return min(max(value, min(q_fraction, eco)), max(q_fraction, eco))


# -- normalization -----------------------------------------------------------


@dataclass(frozen=True)
class CellSummary:
    """Run-level reduction of one cell, the input to every cell metric."""

    model_id: str
    prompt_variant: str
    coverage_pct: Optional[float]
    n_runs: int
    mean_duration_s: float
    mean_energy_kwh: float
    mean_emissions_g: float  # per functional run, or per batch in raw-batch mode
    sci_series: tuple[float, ...]
    sei_series: Optional[tuple[float, ...]]
    cer_series: Optional[tuple[float, ...]]
    avg_std: Optional[float]
    undefined: Mapping[str, str] = field(default_factory=dict)

    @property
    def key(self) -> CellKey:
        return (self.model_id, self.prompt_variant)

    @property
    def sci(self) -> float:
        return statistics.fmean(self.sci_series)


def summarize_cell(cell: Cell, config: AnalysisConfig) -> CellSummary:
    runs = [r for r in cell.runs if not r.failed]
    if not runs:
        raise ValidationError(f"{cell.cell_id}: no successful runs")
    eps = config.epsilon
    divisor = config.runs_per_batch if config.emission_basis is EmissionBasis.PER_RUN else 1
    undefined: dict[str, str] = {}

    sci_series = tuple(compute_sci(r.energy_kwh, config) for r in runs)
    emissions = [r.emissions_g / divisor for r in runs]

    sei_series: Optional[tuple[float, ...]]
    try:
        sei_series = tuple(compute_sei(s, eps) for s in sci_series)
    except UndefinedMetricError as exc:
        sei_series = None
        undefined["SEI series"] = f"a run has zero SCI ({exc})"

    cer_series: Optional[tuple[float, ...]] = None
    if cell.coverage_pct is not None:
        try:
            cer_series = tuple(compute_cer(cell.coverage_pct, c, eps) for c in emissions)
        except UndefinedMetricError as exc:
            undefined["CER series"] = f"a run has zero emissions ({exc})"

    avg_std = None
    if sei_series is not None and cer_series is not None:
        avg_std = statistics.fmean(population_stats(s).std_dev for s in (sci_series, sei_series, cer_series))

    return CellSummary(
        model_id=cell.model_id,
        prompt_variant=cell.prompt_variant,
        coverage_pct=cell.coverage_pct,
        n_runs=len(runs),
        mean_duration_s=statistics.fmean(r.duration_s for r in runs),
        mean_energy_kwh=statistics.fmean(r.energy_kwh for r in runs),
        mean_emissions_g=statistics.fmean(emissions),
        sci_series=sci_series,
        sei_series=sei_series,
        cer_series=cer_series,
        avg_std=avg_std,
        undefined=undefined,
    )


def _scope_key(summary: CellSummary, scope: NormalizationScope) -> Optional[str]:
    return summary.prompt_variant if scope is NormalizationScope.PER_PROMPT_VARIANT else None


def build_normalization(
    summaries: Sequence[CellSummary],
    scope: NormalizationScope = NormalizationScope.ALL_CELLS,
) -> dict[Optional[str], NormalizationContext]:
    """Min/max bounds of SCI, T, avg_std and E for each population in scope.

    The result is keyed by prompt variant for per-variant scope and by
    ``None`` for the whole session. ``avg_std`` is bounded over the cells
    where it is defined.
    """
    scope = NormalizationScope(scope)
    if not summaries:
        raise ValidationError("cannot normalize an empty population")
    groups: dict[Optional[str], list[CellSummary]] = {}
    for s in summaries:
        groups.setdefault(_scope_key(s, scope), []).append(s)
    contexts = {}
    for key, members in groups.items():
        values: dict[str, list[float]] = {
            "SCI": [m.sci for m in members],
            "T": [m.mean_duration_s for m in members],
            "E": [m.mean_energy_kwh for m in members],
        }
        stds = [m.avg_std for m in members if m.avg_std is not None]
        if stds:
            values["avg_std"] = stds
        contexts[key] = NormalizationContext.from_values(values)
    return contexts


# -- beta sweep --------------------------------------------------------------


@dataclass(frozen=True)
class BetaRegimes:
    """Mean GF_beta over cells, split at beta = 1.

    The formula weights ECO more as beta grows; the two domain names are the
    conventional labels for beta < 1 and beta > 1 and are only group names.
    """

    eco_domain: tuple[tuple[float, float], ...]
    quality_domain: tuple[tuple[float, float], ...]
    balanced: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if any(b >= 1 for b, _ in self.eco_domain) or any(b <= 1 for b, _ in self.quality_domain):
            raise ValidationError("beta regime membership violated")


def group_regimes(means: Mapping[float, float]) -> BetaRegimes:
    ordered = sorted(means.items())
    return BetaRegimes(
        eco_domain=tuple((b, m) for b, m in ordered if b < 1),
        quality_domain=tuple((b, m) for b, m in ordered if b > 1),
        balanced=tuple((b, m) for b, m in ordered if b == 1),
    )


def gf_beta_sweep(
    inputs: Mapping[CellKey, tuple[Optional[float], Optional[float]]],
    betas: Sequence[float],
) -> tuple[dict[CellKey, dict[float, Optional[float]]], BetaRegimes]:
    """GF_beta for every cell and beta, plus regime means.

    ``inputs`` maps a cell to ``(coverage fraction, eco)``; either may be
    ``None``, in which case the cell is left out of the means.
    """
    per_cell: dict[CellKey, dict[float, Optional[float]]] = {}
    sums = {b: [] for b in betas}
    for key in sorted(inputs):
        q, eco = inputs[key]
        row: dict[float, Optional[float]] = {}
        for b in betas:
            value = None
            if q is not None and eco is not None:
                try:
                    value = compute_gf_beta(q, eco, b)
                except UndefinedMetricError as exc:
                    logger.warning("GF_beta for %s at beta=%s: %s", cell_id(*key), b, exc)
            else:
                logger.warning("GF_beta for %s excluded: coverage or ECO missing", cell_id(*key))
            row[b] = value
            if value is not None:
                sums[b].append(value)
        per_cell[key] = row
    means = {b: statistics.fmean(v) for b, v in sums.items() if v}
    return per_cell, group_regimes(means)


# -- whole analysis ----------------------------------------------------------


@dataclass
class AnalysisResult:
    config: AnalysisConfig
    metrics: dict[CellKey, MetricSet]
    regimes: BetaRegimes
    errors: dict[str, list[str]] = field(default_factory=dict)
    cells: dict[CellKey, Cell] = field(default_factory=dict)
    normalization: dict[Optional[str], NormalizationContext] = field(default_factory=dict)
    inputs: dict[CellKey, dict] = field(default_factory=dict)  # coverage_pct, n_runs per cell

    @property
    def ok(self) -> bool:
        return bool(self.metrics)


def average_coverage_by_model(cells: Sequence[Cell]) -> list[Cell]:
    """Replace each cell's coverage with its model's mean over variants that have one."""
    per_model: dict[str, list[float]] = {}
    for c in cells:
        if c.coverage_pct is not None:
            per_model.setdefault(c.model_id, []).append(c.coverage_pct)
    out = []
    for c in cells:
        qs = per_model.get(c.model_id)
        out.append(replace(c, coverage_pct=statistics.fmean(qs) if qs else None))
    return out


def _try(undefined: dict[str, str], name: str, fn, *args, **kwargs) -> Optional[float]:
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError as exc:
        undefined[name] = str(exc)
        return None


def compute_all(cells: Sequence[Cell], config: AnalysisConfig) -> AnalysisResult:
    """Every metric for every cell.

    A cell that cannot be summarised is reported in ``errors`` and skipped;
    an individual undefined metric is ``None`` in that cell's MetricSet.
    """
    errors: dict[str, list[str]] = {}
    if config.coverage_mode is CoverageMode.MODEL_MEAN:
        cells = average_coverage_by_model(cells)

    summaries: list[CellSummary] = []
    seen: set[CellKey] = set()
    for cell in cells:
        key = (cell.model_id, cell.prompt_variant)
        if key in seen:
            raise ValidationError(f"duplicate cell {cell.cell_id}")
        seen.add(key)
        try:
            summaries.append(summarize_cell(cell, config))
        except (ValidationError, UndefinedMetricError) as exc:
            errors.setdefault(cell.cell_id, []).append(f"excluded: {exc}")

    if not summaries:
        return AnalysisResult(config, {}, BetaRegimes((), ()), errors)

    contexts = build_normalization(summaries, config.normalization_scope)
    eps = config.epsilon
    metrics: dict[CellKey, MetricSet] = {}
    gf_inputs: dict[CellKey, tuple[Optional[float], Optional[float]]] = {}
    annotated: dict[CellKey, Cell] = {}
    by_key = {(c.model_id, c.prompt_variant): c for c in cells}

    for s in summaries:
        undefined: dict[str, str] = dict(s.undefined)
        ctx = contexts[_scope_key(s, config.normalization_scope)]
        Q = s.coverage_pct
        has_q = Q is not None

        sci = s.sci
        sei = _try(undefined, "sei", compute_sei, sci, eps)
        cer = _try(undefined, "cer", compute_cer, Q, s.mean_emissions_g, eps)

        si = None
        si_components: dict[str, Optional[float]] = {}
        series = {"SCI": s.sci_series, "SEI": s.sei_series, "CER": s.cer_series}
        for name, xs in series.items():
            if xs is None:
                if name == "CER" and not has_q:
                    continue
                undefined[f"si_{name.lower()}"] = "series undefined"
                si_components[name] = None
                continue
            si_components[name] = _try(undefined, f"si_{name.lower()}", compute_si, xs, config)
        if config.si_aggregation is SiAggregation.MEAN_OVER_PRIMARY_METRICS:
            if si_components and all(v is not None for v in si_components.values()):
                si = statistics.fmean(si_components.values())  # type: ignore[arg-type]
            else:
                undefined["si"] = "a primary-metric series has no defined SI"
        else:
            undefined["si"] = "per-metric SI mode: see si_components"

        sci_hat = ctx.hat("SCI", sci)
        t_hat = ctx.hat("T", s.mean_duration_s)
        eco = compute_eco(sci_hat, t_hat)

        gqi = scv_c = scv_e = svi = None
        if has_q:
            eff = None
            if config.gqi_energy_mode is GqiEnergyMode.NORMALIZED_EFFICIENCY:
                eff = 1.0 - ctx.hat("E", s.mean_energy_kwh)
            gqi = _try(undefined, "gqi", compute_gqi, Q, s.mean_energy_kwh, config, normalized_efficiency=eff)
            scv_c = _try(undefined, "scv_c", compute_scv_c, Q, s.mean_duration_s, s.mean_emissions_g, eps)
            scv_e = _try(undefined, "scv_e", compute_scv_e, Q, s.mean_duration_s, s.mean_energy_kwh, eps)
            if s.avg_std is not None:
                svi = compute_svi(Q, sci_hat, t_hat, ctx.hat("avg_std", s.avg_std))
            else:
                undefined["svi"] = "instability term undefined"
        else:
            for name in ("cer", "gqi", "scv_c", "scv_e", "svi", "gf_beta"):
                undefined[name] = "coverage absent"

        gf_inputs[s.key] = ((Q / 100.0) if has_q else None, eco)
        metrics[s.key] = MetricSet(
            sci=sci,
            sei=sei,
            cer=cer,
            si=si,
            gqi=gqi,
            scv_c=scv_c,
            scv_e=scv_e,
            svi=svi,
            eco=eco,
            si_components=si_components,
            undefined=undefined,
        )
        per_run = tuple(
            (
                s.sci_series[i],
                s.sei_series[i] if s.sei_series is not None else None,
                s.cer_series[i] if s.cer_series is not None else None,
            )
            for i in range(s.n_runs)
        )
        annotated[s.key] = replace(by_key[s.key], per_run_metrics=per_run)

    gf, regimes = gf_beta_sweep(gf_inputs, config.betas)
    for key, row in gf.items():
        metrics[key] = replace(metrics[key], gf_beta=row)

    for key, ms in metrics.items():
        for name, reason in sorted(ms.undefined.items()):
            errors.setdefault(cell_id(*key), []).append(f"{name}: {reason}")

    return AnalysisResult(
        config=config,
        metrics=dict(sorted(metrics.items())),
        regimes=regimes,
        errors=dict(sorted(errors.items())),
        cells=annotated,
        normalization=contexts,
        inputs={s.key: {"coverage_pct": s.coverage_pct, "n_runs": s.n_runs} for s in sorted(summaries, key=lambda x: x.key)},
    )


def model_level_mean(result: AnalysisResult, metric: str) -> dict[str, float]:
    """Mean of a scalar metric over each model's prompt variants (defined cells only)."""
    acc: dict[str, list[float]] = {}
    for (model, _), ms in result.metrics.items():
        value = getattr(ms, metric)
        if value is not None and math.isfinite(value):
            acc.setdefault(model, []).append(value)
    return {m: statistics.fmean(v) for m, v in sorted(acc.items())}
