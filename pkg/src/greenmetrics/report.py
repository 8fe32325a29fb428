"""Rankings, cross-variant comparison and serialized outputs."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .core import (
    PROMPT_VARIANTS,
    SCALAR_METRICS,
    AnalysisConfig,
    GreenMetricsError,
    MetricSet,
    SiAggregation,
    ValidationError,
    cell_id,
    variant_sort_key,
)
from .metrics import AnalysisResult, BetaRegimes, CellKey, group_regimes, model_level_mean

ARTIFACT_FORMAT = "greenmetrics.metrics/1"
FORMATS = ("csv", "json", "markdown")
CSV_HEADER = ("model_id", "prompt_variant", "metric", "beta", "value", "note")


class Direction(str, Enum):
    LOWER_BETTER = "lower_better"
    HIGHER_BETTER = "higher_better"


DIRECTIONS: dict[str, Direction] = {name: Direction.HIGHER_BETTER for name in SCALAR_METRICS}
DIRECTIONS["sci"] = Direction.LOWER_BETTER
DIRECTIONS.update(
    {
        "gf_beta": Direction.HIGHER_BETTER,
        "gf_beta_eco": Direction.HIGHER_BETTER,
        "gf_beta_quality": Direction.HIGHER_BETTER,
        "eco": Direction.HIGHER_BETTER,
    }
)

# one ranking table (and one chart) per metric family
RANKED_METRICS: tuple[str, ...] = SCALAR_METRICS + ("gf_beta",)
COMPARISON_METRICS: tuple[str, ...] = SCALAR_METRICS + ("gf_beta_eco", "gf_beta_quality")


class EmptyTableError(GreenMetricsError):
    pass


class UsageError(ValidationError):
    pass


def _gf_mean(ms: MetricSet, keep) -> Optional[float]:
    values = [v for b, v in ms.gf_beta.items() if keep(b)]
    if not values or any(v is None for v in values):
        return None
    return statistics.fmean(values)  # type: ignore[arg-type]


def metric_value(ms: MetricSet, name: str) -> Optional[float]:
    """Scalar value of ``name`` for one cell; GF families are means over beta."""
    if name == "gf_beta":
        return _gf_mean(ms, lambda b: True)
    if name == "gf_beta_eco":
        return _gf_mean(ms, lambda b: b < 1)
    if name == "gf_beta_quality":
        return _gf_mean(ms, lambda b: b > 1)
    if name.startswith("si_") and name[3:].upper() in ms.si_components:
        return ms.si_components[name[3:].upper()]
    try:
        return getattr(ms, name)
    except AttributeError:
        raise UsageError(f"unknown metric {name!r}") from None


# -- rankings ----------------------------------------------------------------


@dataclass(frozen=True)
class RankRow:
    cell_id: str
    value: float
    rank: int


@dataclass(frozen=True)
class RankingTable:
    metric_name: str
    direction: Direction
    rows: tuple[RankRow, ...]
    excluded: tuple[str, ...] = ()

    @property
    def leaders(self) -> tuple[str, ...]:
        return tuple(r.cell_id for r in self.rows if r.rank == 1)


def rank(
    metrics: Mapping[CellKey, MetricSet],
    metric_name: str,
    direction: Optional[Direction] = None,
) -> RankingTable:
    """Competition ranking (1, 1, 3) of the cells that define ``metric_name``.

    Row order among equal values follows the cell id; tied cells share a rank.
    """
    direction = Direction(direction) if direction is not None else DIRECTIONS.get(metric_name)
    if direction is None:
        raise UsageError(f"no ranking direction known for {metric_name!r}")
    defined, excluded = [], []
    for key, ms in metrics.items():
        value = metric_value(ms, metric_name)
        if value is None or not math.isfinite(value):
            excluded.append(cell_id(*key))
        else:
            defined.append((cell_id(*key), value))
    if not defined:
        raise EmptyTableError(f"{metric_name} is undefined for every cell")
    sign = 1.0 if direction is Direction.LOWER_BETTER else -1.0
    defined.sort(key=lambda item: (sign * item[1], item[0]))
    rows = []
    for i, (cid, value) in enumerate(defined):
        if i > 0 and value == defined[i - 1][1]:
            r = rows[-1].rank
        else:
            r = i + 1
        rows.append(RankRow(cid, value, r))
    return RankingTable(metric_name, direction, tuple(rows), tuple(sorted(excluded)))


# -- comparison --------------------------------------------------------------


class Trend(str, Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"
    FLAT = "flat"
    MIXED = "mixed"


def trend_of(values: Sequence[float], threshold: float = 0.02) -> Trend:
    """Classify a sequence by its consecutive relative changes.

    A step counts as a move only if its relative change exceeds ``threshold``.
    """
    ups = downs = 0
    for prev, cur in zip(values, values[1:]):
        if prev == 0:
            change = 0.0 if cur == 0 else math.copysign(math.inf, cur)
        else:
            change = (cur - prev) / abs(prev)
        if change > threshold:
            ups += 1
        elif change < -threshold:
            downs += 1
    if ups and downs:
        return Trend.MIXED
    if downs:
        return Trend.DECREASING
    if ups:
        return Trend.INCREASING
    return Trend.FLAT


@dataclass(frozen=True)
class ComparisonRow:
    metric: str
    direction: Direction
    dominant: Mapping[str, tuple[str, ...]]  # variant -> leading model ids
    variant_means: Mapping[str, float]
    trend: Trend
    partial: bool = False


@dataclass(frozen=True)
class ComparisonSummary:
    rows: tuple[ComparisonRow, ...]
    variants: tuple[str, ...]
    threshold: float


def build_comparison(
    metrics: Mapping[CellKey, MetricSet],
    *,
    threshold: float = 0.02,
    expected_variants: Sequence[str] = PROMPT_VARIANTS,
    metric_names: Sequence[str] = COMPARISON_METRICS,
) -> ComparisonSummary:
    variants = tuple(sorted({v for _, v in metrics}, key=variant_sort_key))
    if len(variants) < 2:
        raise ValidationError("comparison needs at least two prompt variants")
    rows = []
    for name in metric_names:
        dominant: dict[str, tuple[str, ...]] = {}
        means: dict[str, float] = {}
        for variant in variants:
            subset = {k: ms for k, ms in metrics.items() if k[1] == variant}
            try:
                table = rank(subset, name)
            except EmptyTableError:
                continue
            dominant[variant] = tuple(cid.rsplit(":", 1)[0] for cid in table.leaders)
            means[variant] = statistics.fmean(r.value for r in table.rows)
        partial = any(v not in means for v in set(expected_variants) | set(variants))
        ordered = [means[v] for v in variants if v in means]
        rows.append(
            ComparisonRow(
                metric=name,
                direction=DIRECTIONS[name],
                dominant=dominant,
                variant_means=means,
                trend=trend_of(ordered, threshold),
                partial=partial,
            )
        )
    return ComparisonSummary(tuple(rows), variants, threshold)


# -- serialization -----------------------------------------------------------


def _num(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _scalar_names(config: AnalysisConfig) -> tuple[str, ...]:
    if config.si_aggregation is SiAggregation.PER_METRIC:
        return tuple(
            n for name in SCALAR_METRICS for n in (("si_sci", "si_sei", "si_cer") if name == "si" else (name,))
        )
    return SCALAR_METRICS


def csv_rows(result: AnalysisResult) -> list[tuple[str, ...]]:
    """One row per (cell, metric), with one GF_beta row per beta."""
    rows = []
    for (model, variant), ms in result.metrics.items():
        for name in _scalar_names(result.config):
            value = metric_value(ms, name)
            note = ms.undefined.get(name, "") if value is None else ""
            rows.append((model, variant, name, "", _num(value), note))
        for beta in result.config.betas:
            value = ms.gf_beta.get(beta)
            note = ms.undefined.get("gf_beta", "undefined") if value is None else ""
            rows.append((model, variant, "gf_beta", repr(beta), _num(value), note))
    return rows


def _write_csv(rows: Iterable[Sequence[str]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _metricset_dict(ms: MetricSet) -> dict:
    out: dict[str, object] = {name: getattr(ms, name) for name in SCALAR_METRICS}
    out["eco"] = ms.eco
    out["gf_beta"] = {repr(b): v for b, v in ms.gf_beta.items()}
    out["si_components"] = dict(ms.si_components)
    out["undefined"] = dict(ms.undefined)
    return out


def _regimes_dict(regimes: BetaRegimes) -> dict:
    return {
        "eco_domain": [[b, m] for b, m in regimes.eco_domain],
        "quality_domain": [[b, m] for b, m in regimes.quality_domain],
        "balanced": [[b, m] for b, m in regimes.balanced],
    }


def artifact_dict(result: AnalysisResult) -> dict:
    cells: dict[str, dict[str, dict]] = {}
    for (model, variant), ms in result.metrics.items():
        entry = _metricset_dict(ms)
        entry.update(result.inputs.get((model, variant), {}))
        cells.setdefault(model, {})[variant] = entry
    return {
        "format": ARTIFACT_FORMAT,
        "config": result.config.as_dict(),
        "cells": cells,
        "regimes": _regimes_dict(result.regimes),
        "errors": result.errors,
    }


def _json_bytes(payload: object) -> bytes:
    return (json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def load_artifact(source: Union[str, Path, bytes, Mapping]) -> AnalysisResult:
    """Rebuild an :class:`AnalysisResult` from a JSON metrics artifact."""
    if isinstance(source, Mapping):
        data = source
    else:
        raw = source if isinstance(source, bytes) else Path(source).read_bytes()
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"metrics artifact is not valid JSON: {exc}") from None
    if not isinstance(data, Mapping) or data.get("format") != ARTIFACT_FORMAT:
        raise ValidationError(f"not a {ARTIFACT_FORMAT} artifact")
    config = AnalysisConfig.from_dict(data["config"])
    metrics: dict[CellKey, MetricSet] = {}
    inputs: dict[CellKey, dict] = {}
    for model, by_variant in data["cells"].items():
        for variant, entry in by_variant.items():
            metrics[(model, variant)] = MetricSet(
                **{name: entry[name] for name in SCALAR_METRICS},
                eco=entry["eco"],
                gf_beta={float(b): v for b, v in entry["gf_beta"].items()},
                si_components=entry.get("si_components", {}),
                undefined=entry.get("undefined", {}),
            )
            inputs[(model, variant)] = {k: entry[k] for k in ("coverage_pct", "n_runs") if k in entry}
    means = {}
    reg = data.get("regimes", {})
    for group in ("eco_domain", "quality_domain", "balanced"):
        for b, m in reg.get(group, []):
            means[float(b)] = m
    return AnalysisResult(
        config=config,
        metrics=dict(sorted(metrics.items())),
        regimes=group_regimes(means),
        errors={k: list(v) for k, v in data.get("errors", {}).items()},
        inputs=dict(sorted(inputs.items())),
    )


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def render_markdown(result: AnalysisResult, *, threshold: float = 0.02) -> str:
    cfg = result.config
    lines = [
        "# Sustainability metrics report",
        "",
        f"- grid intensity I: {cfg.grid_intensity_g_per_kwh:g} gCO2e/kWh",
        f"- runs per batch R: {cfg.runs_per_batch}",
        f"- betas: {', '.join(f'{b:g}' for b in cfg.betas)}",
        f"- normalization scope: {cfg.normalization_scope.value}",
        f"- GQI energy mode: {cfg.gqi_energy_mode.value}",
        f"- SI aggregation: {cfg.si_aggregation.value}",
        f"- emission basis: {cfg.emission_basis.value}",
        f"- coverage mode: {cfg.coverage_mode.value}",
        f"- cells: {len(result.metrics)}",
        "",
        "## Rankings",
    ]
    for name in RANKED_METRICS:
        arrow = "lower is better" if DIRECTIONS[name] is Direction.LOWER_BETTER else "higher is better"
        title = "gf_beta (mean over betas)" if name == "gf_beta" else name
        lines += ["", f"### {title} ({arrow})", ""]
        try:
            table = rank(result.metrics, name)
        except EmptyTableError:
            lines.append("_undefined for every cell_")
            continue
        lines += ["| rank | cell | value |", "|---:|---|---:|"]
        lines += [f"| {r.rank} | {r.cell_id} | {_fmt(r.value)} |" for r in table.rows]
        if table.excluded:
            lines += ["", f"Undefined for: {', '.join(table.excluded)}"]

    lines += ["", "## Comparison across prompt variants", ""]
    try:
        summary = build_comparison(result.metrics, threshold=threshold)
    except ValidationError as exc:
        lines.append(f"_not available: {exc}_")
    else:
        head = " | ".join(summary.variants)
        lines += [
            f"Trend threshold: {summary.threshold:.0%} relative change between consecutive variants.",
            "",
            f"| metric | {head} | trend | dominant model(s) per variant |",
            "|---|" + "---:|" * len(summary.variants) + "---|---|",
        ]
        for row in summary.rows:
            means = " | ".join(_fmt(row.variant_means.get(v)) for v in summary.variants)
            leaders = "; ".join(f"{v}: {', '.join(row.dominant[v])}" for v in summary.variants if v in row.dominant)
            tag = row.trend.value + (" (partial)" if row.partial else "")
            lines.append(f"| {row.metric} | {means} | {tag} | {leaders} |")

    lines += ["", "## GF_beta regimes", "", "| group | beta | mean GF_beta |", "|---|---:|---:|"]
    for group, entries in (
        ("eco-efficiency (beta < 1)", result.regimes.eco_domain),
        ("balanced (beta = 1)", result.regimes.balanced),
        ("quality-oriented (beta > 1)", result.regimes.quality_domain),
    ):
        lines += [f"| {group} | {b:g} | {_fmt(m)} |" for b, m in entries]
    lines += [
        "",
        "Note: in the GF_beta formula a larger beta shifts weight toward ECO, not toward coverage. "
        "The group names follow the usual labelling and are kept as names only.",
    ]

    model_si = model_level_mean(result, "si")
    if model_si:
        lines += ["", "## Model-level SI (mean over prompt variants)", "", "| model | SI |", "|---|---:|"]
        lines += [f"| {m} | {_fmt(v)} |" for m, v in model_si.items()]

    if result.errors:
        lines += ["", "## Undefined metrics and excluded cells", ""]
        for cid, msgs in result.errors.items():
            lines += [f"- {cid}: {m}" for m in msgs]
    return "\n".join(lines) + "\n"


def serialize(result: AnalysisResult, fmt: str) -> bytes:
    """Render ``result`` as csv, json or markdown; identical input gives identical bytes."""
    if fmt == "csv":
        return _write_csv(csv_rows(result))
    if fmt == "json":
        return _json_bytes(artifact_dict(result))
    if fmt in ("markdown", "md"):
        return render_markdown(result).encode("utf-8")
    raise UsageError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")


REPORT_FILENAMES = {"csv": "metrics.csv", "json": "report.json", "markdown": "report.md"}


# -- charts ------------------------------------------------------------------


def chart_rows(result: AnalysisResult, metric: str) -> list[tuple[str, ...]]:
    """The plotted data: serialized CSV rows for scalars, beta-means for GF."""
    if metric != "gf_beta":
        return [row for row in csv_rows(result) if row[2] == metric]
    rows = []
    for (model, variant), ms in result.metrics.items():
        rows.append((model, variant, "gf_beta", "mean", _num(metric_value(ms, "gf_beta")), ""))
    return rows


def emit_charts(result: AnalysisResult, out_dir: Union[str, Path]) -> list[Path]:
    """One SVG bar chart per metric family (models grouped, one series per
    variant) and a sidecar CSV of the plotted values."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create chart directory {out_dir}: {exc}") from exc
    models = sorted({m for m, _ in result.metrics})
    variants = sorted({v for _, v in result.metrics}, key=variant_sort_key)
    written: list[Path] = []
    with matplotlib.rc_context({"svg.hashsalt": "greenmetrics", "svg.fonttype": "none"}):
        for metric in RANKED_METRICS:
            rows = chart_rows(result, metric)
            values = {(r[0], r[1]): float(r[4]) for r in rows if r[4] != ""}
            fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(models)), 3.2))
            width = 0.8 / max(1, len(variants))
            for j, variant in enumerate(variants):
                xs = [i + j * width for i, m in enumerate(models) if (m, variant) in values]
                ys = [values[(m, variant)] for m in models if (m, variant) in values]
                if xs:
                    ax.bar(xs, ys, width=width, label=variant)
            ax.set_xticks([i + width * (len(variants) - 1) / 2 for i in range(len(models))])
            ax.set_xticklabels(models, rotation=20, ha="right")
            label = "GF_beta (mean over betas)" if metric == "gf_beta" else metric.upper()
            ax.set_title(label)
            if len(variants) > 1:
                ax.legend(fontsize="small")
            fig.tight_layout()
            svg = out_dir / f"{metric}.svg"
            fig.savefig(svg, format="svg", metadata={"Date": None})
            plt.close(fig)
            sidecar = out_dir / f"{metric}.csv"
            sidecar.write_bytes(_write_csv(rows))
            written += [svg, sidecar]
    return written
