"""Emission-log and coverage parsing, and consolidation into cells."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from ..core import Cell, RunRecord, ValidationError, cell_id, to_grams

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REQUIRED_COLUMNS: tuple[str, ...] = ("duration", "emissions", "energy_consumed")
OPTIONAL_ENERGY_COLUMNS: tuple[str, ...] = ("cpu_energy", "gpu_energy", "ram_energy")
STATUS_COLUMN = "run_status"

# column order used when writing logs; anything else is appended sorted
LOG_COLUMNS: tuple[str, ...] = (
    "timestamp",
    "project_name",
    "run_id",
    "duration",
    "emissions",
    "energy_consumed",
    "cpu_energy",
    "gpu_energy",
    "ram_energy",
    "model_id",
    "prompt_variant",
    "batch_index",
    "n_inputs",
    STATUS_COLUMN,
)


class SchemaError(ValidationError):
    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class RowError(ValidationError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConflictError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


@dataclass(frozen=True)
class EmissionLogRow:
    timestamp: str
    project_name: str
    duration: float
    emissions: float
    energy_consumed: float
    cpu_energy: Optional[float] = None
    gpu_energy: Optional[float] = None
    ram_energy: Optional[float] = None
    extra: Mapping[str, str] = field(default_factory=dict)
    line: int = 0


def _parse_float(raw: Optional[str], column: str, line: int, *, optional: bool = False) -> Optional[float]:
    if raw is None or raw.strip() == "":
        if optional:
            return None
        raise RowError(f"missing value for {column!r}", line)
    try:
        value = float(raw)
    except ValueError:
        raise RowError(f"cannot parse {column!r} value {raw!r} as a number", line) from None
    if not math.isfinite(value) or value < 0:
        raise RowError(f"{column!r} must be finite and non-negative, got {raw!r}", line)
    return value


def _read_log(path: Path) -> tuple[list[str], list[tuple[int, dict]]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise ValidationError(f"{path}: empty emission log")
        header = [h.strip() for h in header]
        reader.fieldnames = header
        rows = []
        for row in reader:
            rows.append((reader.line_num, row))
    return header, rows


def _check_header(path: Path, header: Sequence[str]) -> list[SchemaError]:
    return [
        SchemaError(f"{path}: missing required column {col!r}", column=col)
        for col in REQUIRED_COLUMNS
        if col not in header
    ]


def _to_row(line: int, row: dict) -> EmissionLogRow:
    if None in row:
        raise RowError("more fields than header columns", line)
    known = set(REQUIRED_COLUMNS) | set(OPTIONAL_ENERGY_COLUMNS) | {"timestamp", "project_name"}
    return EmissionLogRow(
        timestamp=(row.get("timestamp") or "").strip(),
        project_name=(row.get("project_name") or "").strip(),
        duration=_parse_float(row.get("duration"), "duration", line),
        emissions=_parse_float(row.get("emissions"), "emissions", line),
        energy_consumed=_parse_float(row.get("energy_consumed"), "energy_consumed", line),
        cpu_energy=_parse_float(row.get("cpu_energy"), "cpu_energy", line, optional=True),
        gpu_energy=_parse_float(row.get("gpu_energy"), "gpu_energy", line, optional=True),
        ram_energy=_parse_float(row.get("ram_energy"), "ram_energy", line, optional=True),
        extra={k: (v or "") for k, v in row.items() if k not in known},
        line=line,
    )


def parse_emission_rows(path: PathLike) -> list[EmissionLogRow]:
    """Parse a CodeCarbon-style CSV into rows, failing on the first problem."""
    path = Path(path)
    header, rows = _read_log(path)
    problems = _check_header(path, header)
    if problems:
        raise problems[0]
    if not rows:
        raise ValidationError(f"{path}: emission log has a header but no data rows")
    return [_to_row(line, row) for line, row in rows]


def check_emission_log(path: PathLike) -> list[str]:
    """Every schema or row problem in a log, without stopping at the first."""
    path = Path(path)
    try:
        header, rows = _read_log(path)
    except (OSError, UnicodeDecodeError, csv.Error, ValidationError) as exc:
        return [str(exc)]
    findings = [str(e) for e in _check_header(path, header)]
    if findings:
        return findings
    if not rows:
        return [f"{path}: emission log has a header but no data rows"]
    for line, row in rows:
        try:
            parsed = _to_row(line, row)
            if parsed.duration <= 0:
                raise RowError("'duration' must be > 0", line)
        except RowError as exc:
            findings.append(f"{path}: {exc}")
    return findings


def _parse_timestamp(raw: str) -> Optional[datetime]:
    if not raw:
        return None
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError:
        return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_emission_log(path: PathLike, model_id: str, prompt_variant: str) -> list[RunRecord]:
    """One :class:`RunRecord` per data row, in file order, emissions in grams."""
    records = []
    for index, row in enumerate(parse_emission_rows(path)):
        if row.duration <= 0:
            raise RowError("'duration' must be > 0", row.line)
        status = row.extra.get(STATUS_COLUMN, "").strip().lower()
        records.append(
            RunRecord(
                model_id=model_id,
                prompt_variant=prompt_variant,
                batch_index=index,
                duration_s=row.duration,
                energy_kwh=row.energy_consumed,
                emissions_g=to_grams(row.emissions),
                timestamp=_parse_timestamp(row.timestamp),
                source_file=str(path),
                failed=status == "failed",
            )
        )
    return records


def write_emission_log(
    path: PathLike,
    records: Sequence[RunRecord],
    extra: Optional[Sequence[Mapping[str, object]]] = None,
) -> Path:
    """Write records in the schema :func:`parse_emission_log` reads.

    Floats are written with ``repr`` so a parse round-trip is lossless.
    ``extra`` is an optional per-record mapping of additional columns.
    """
    path = Path(path)
    rows = []
    for i, rec in enumerate(records):
        row: dict[str, object] = {
            "timestamp": rec.timestamp.isoformat() if rec.timestamp else "",
            "project_name": f"{rec.model_id}_{rec.prompt_variant}",
            "duration": repr(float(rec.duration_s)),
            "emissions": repr(rec.emissions_kg),
            "energy_consumed": repr(float(rec.energy_kwh)),
            "model_id": rec.model_id,
            "prompt_variant": rec.prompt_variant,
            "batch_index": rec.batch_index,
            STATUS_COLUMN: "failed" if rec.failed else "ok",
        }
        if extra is not None:
            row.update(extra[i])
        rows.append(row)
    seen = set(LOG_COLUMNS)
    columns = [c for c in LOG_COLUMNS if any(c in r for r in rows) or c in REQUIRED_COLUMNS]
    columns += sorted({k for r in rows for k in r} - seen)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _coverage_value(raw: object, where: str) -> float:
    try:
        value = float(raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: coverage {raw!r} is not a number") from None
    if not (math.isfinite(value) and 0.0 <= value <= 100.0):
        raise ValidationError(f"{where}: coverage {raw!r} outside [0, 100]")
    return value


def parse_coverage(path: PathLike) -> dict[str, float]:
    """Coverage percentages keyed by task or cell id.

    Accepts a two-column CSV ``id,coverage_percent`` (header optional) or a
    coverage.py JSON report with ``totals.percent_covered``. A JSON report
    is keyed by its ``id`` field if present, otherwise by the file stem.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        totals = data.get("totals") if isinstance(data, dict) else None
        if not isinstance(totals, dict):
            raise FormatError(f"{path}: JSON coverage must contain a 'totals' object")
        for key in ("percent_covered", "percent_covered_display", "percent"):
            if key in totals:
                key_id = str(data.get("id") or path.stem)
                return {key_id: _coverage_value(totals[key], str(path))}
        raise FormatError(f"{path}: 'totals' has no percent-covered figure")
    if suffix not in (".csv", ".txt"):
        raise FormatError(f"{path}: unknown coverage format {suffix!r}")

    result: dict[str, float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise FormatError(f"{path}: line {i}: expected 2 columns, got {len(row)}")
            key, raw = row[0].strip(), row[1].strip()
            if i == 1 and raw.lower() in ("coverage_percent", "coverage", "percent"):
                continue
            if key in result:
                raise ConflictError(f"{path}: line {i}: duplicate coverage id {key!r}")
            result[key] = _coverage_value(raw, f"{path}: line {i}")
    if not result:
        logger.warning("coverage file %s has no entries", path)
    return result


def coverage_for(coverage: Mapping[str, float], model_id: str, prompt_variant: str) -> Optional[float]:
    """Exact cell id first, then the model id (a per-model figure)."""
    key = cell_id(model_id, prompt_variant)
    if key in coverage:
        return coverage[key]
    return coverage.get(model_id)


def consolidate(
    logs: Iterable[tuple[PathLike, str, str]],
    coverage: Mapping[str, float],
) -> list[Cell]:
    """Merge parsed logs into one cell per (model, variant), attaching coverage."""
    cells: dict[tuple[str, str], Cell] = {}
    for path, model_id, variant in logs:
        key = (model_id, variant)
        if key in cells:
            raise ConflictError(f"duplicate log for {cell_id(model_id, variant)}: {path}")
        runs = parse_emission_log(path, model_id, variant)
        q = coverage_for(coverage, model_id, variant)
        if q is None:
            logger.warning("no coverage for %s; coverage-dependent metrics will be skipped", cell_id(*key))
        cells[key] = Cell(model_id, variant, tuple(runs), coverage_pct=q)
    return list(cells.values())
