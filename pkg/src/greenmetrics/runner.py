"""Batched execution of an external generation command with energy metering.

Batches run strictly one after another so a shared meter attributes energy to
one batch at a time. Each batch produces one emission-log row.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .core import GreenMetricsError, RunRecord, ValidationError
from .ingest.logs import write_emission_log

logger = logging.getLogger(__name__)

JOULES_PER_KWH = 3.6e6
PathLike = Union[str, Path]


class MeterError(GreenMetricsError):
    """The energy meter could not produce a reading; the run is aborted."""


class CommandNotFoundError(ValidationError):
    pass


class MeterKind(str, Enum):
    CONSTANT_POWER = "constant_power"
    REPLAY_FILE = "replay_file"
    SAMPLER_COMMAND = "sampler_command"


@dataclass(frozen=True)
class MeterSpec:
    kind: MeterKind
    grid_intensity_g_per_kwh: float
    watts: Optional[float] = None
    path: Optional[Path] = None
    command: Optional[str] = None
    poll_interval_s: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MeterKind(self.kind))
        if not self.grid_intensity_g_per_kwh > 0:
            raise ValidationError("grid intensity must be > 0")
        if self.kind is MeterKind.CONSTANT_POWER and not (self.watts is not None and self.watts > 0):
            raise ValidationError("constant-power meter needs watts > 0")
        if self.kind is MeterKind.REPLAY_FILE and self.path is None:
            raise ValidationError("replay meter needs a path")
        if self.kind is MeterKind.SAMPLER_COMMAND:
            if not self.command:
                raise ValidationError("sampler meter needs a command")
            if not self.poll_interval_s > 0:
                raise ValidationError("poll_interval_s must be > 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MeterSpec":
        data = dict(data)
        if "path" in data and data["path"] is not None:
            data["path"] = Path(data["path"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"bad meter configuration: {exc}") from None


@dataclass(frozen=True)
class RunPlan:
    command_template: str
    inputs: tuple[Path, ...]
    model_id: str
    prompt_variant: str
    runs_per_batch: int = 5
    generation_params: Mapping[str, Any] = field(default_factory=dict)
    output_dir: Path = Path("runs")
    prompt_files: Optional[tuple[Path, ...]] = None  # aligned with inputs

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.prompt_files is not None:
            object.__setattr__(self, "prompt_files", tuple(Path(p) for p in self.prompt_files))
            if len(self.prompt_files) != len(self.inputs):
                raise ValidationError("prompt_files must align with inputs")
        if not self.inputs:
            raise ValidationError("run plan has no inputs")
        if self.runs_per_batch < 1:
            raise ValidationError("runs_per_batch must be >= 1")
        if "{input_file}" not in self.command_template:
            raise ValidationError("command_template must contain {input_file}")

    @property
    def log_path(self) -> Path:
        return self.output_dir / f"emissions_{self.model_id}_{self.prompt_variant}.csv"


def partition(items: Sequence, size: int) -> list[list]:
    """Consecutive batches of ``size``; the last one may be shorter."""
    if size < 1:
        raise ValidationError("batch size must be >= 1")
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


# -- meters ------------------------------------------------------------------


def trapezoid_kwh(times_s: Sequence[float], watts: Sequence[float]) -> float:
    if len(times_s) < 2:
        return 0.0
    return float(np.trapezoid(np.asarray(watts, dtype=float), np.asarray(times_s, dtype=float))) / JOULES_PER_KWH


def read_power_trace(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``timestamp_s,watts`` CSV (header optional), checking it is sorted."""
    times, watts = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                t, w = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 1:
                    continue
                raise MeterError(f"{path}: line {i}: bad power sample {row!r}") from None
            times.append(t)
            watts.append(w)
    if len(times) < 2:
        raise MeterError(f"{path}: power trace needs at least two samples")
    t_arr = np.asarray(times)
    if np.any(np.diff(t_arr) < 0):
        raise MeterError(f"{path}: power trace is not sorted by time")
    return t_arr, np.asarray(watts)


def window_energy_kwh(times: np.ndarray, watts: np.ndarray, t_start: float, t_end: float) -> float:
    """Trapezoidal energy over ``[t_start, t_end]``, interpolating at the edges."""
    if t_end < t_start:
        raise ValidationError("window end precedes start")
    if t_start < times[0] or t_end > times[-1]:
        raise ValidationError(
            f"window [{t_start}, {t_end}] outside trace span [{times[0]}, {times[-1]}]"
        )
    if t_end == t_start:
        return 0.0
    inside = (times > t_start) & (times < t_end)
    ts = np.concatenate(([t_start], times[inside], [t_end]))
    ws = np.concatenate(([np.interp(t_start, times, watts)], watts[inside], [np.interp(t_end, times, watts)]))
    return trapezoid_kwh(ts, ws)


def replay_meter_energy(path: PathLike, t_start: float, t_end: float) -> float:
    times, watts = read_power_trace(path)
    return window_energy_kwh(times, watts, t_start, t_end)


class _ConstantMeter:
    def __init__(self, watts: float):
        self.watts = watts
        self._t0 = 0.0

    def start(self, t: float) -> None:
        self._t0 = t

    def stop(self, t: float) -> float:
        return self.watts * (t - self._t0) / JOULES_PER_KWH


class _ReplayMeter:
    """Batch times are mapped onto the trace relative to the plan start."""

    def __init__(self, path: Path):
        self.times, self.watts = read_power_trace(path)
        self._origin: Optional[float] = None
        self._t0 = 0.0

    def start(self, t: float) -> None:
        if self._origin is None:
            self._origin = t
        self._t0 = t

    def stop(self, t: float) -> float:
        assert self._origin is not None
        offset = self.times[0] - self._origin
        try:
            return window_energy_kwh(self.times, self.watts, self._t0 + offset, t + offset)
        except ValidationError as exc:
            raise MeterError(f"replay trace too short: {exc}") from None


class _SamplerMeter:
    """Polls an external command that prints one watts value per call."""

    def __init__(self, command: str, poll_interval_s: float):
        self.argv = shlex.split(command)
        self.poll_interval_s = poll_interval_s
        self._samples: list[tuple[float, float]] = []
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._error: Optional[BaseException] = None

    def _sample(self) -> float:
        try:
            proc = subprocess.run(self.argv, capture_output=True, text=True, timeout=30)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise MeterError(f"sampler command failed: {exc}") from None
        if proc.returncode != 0:
            raise MeterError(f"sampler command exited {proc.returncode}: {proc.stderr.strip()}")
        try:
            value = float(proc.stdout.strip())
        except ValueError:
            raise MeterError(f"sampler printed non-numeric output {proc.stdout.strip()!r}") from None
        if not (math.isfinite(value) and value >= 0):
            raise MeterError(f"sampler printed invalid watts {value!r}")
        return value

    def _loop(self) -> None:
        while not self._stop.wait(self.poll_interval_s):
            try:
                w = self._sample()
            except MeterError as exc:
                self._error = exc
                return
            self._samples.append((time.perf_counter(), w))

    def start(self, t: float) -> None:
        self._samples = [(t, self._sample())]
        self._stop.clear()
        self._error = None
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self, t: float) -> float:
        last = self._sample()
        self._stop.set()
        assert self._thread is not None
        self._thread.join()
        if self._error is not None:
            raise self._error
        samples = [s for s in self._samples if s[0] < t] + [(t, last)]
        return trapezoid_kwh([s[0] for s in samples], [s[1] for s in samples])


def make_meter(spec: MeterSpec):
    if spec.kind is MeterKind.CONSTANT_POWER:
        return _ConstantMeter(float(spec.watts))  # type: ignore[arg-type]
    if spec.kind is MeterKind.REPLAY_FILE:
        return _ReplayMeter(Path(spec.path))  # type: ignore[arg-type]
    return _SamplerMeter(spec.command, spec.poll_interval_s)  # type: ignore[arg-type]


# -- execution ---------------------------------------------------------------


def generation_env(plan: RunPlan) -> dict[str, str]:
    """Environment for the child: recorded generation settings, uninterpreted."""
    env = dict(os.environ)
    for key, value in plan.generation_params.items():
        env[f"GEN_{str(key).upper()}"] = str(value)
    env["GEN_MODEL_ID"] = plan.model_id
    env["GEN_PROMPT_VARIANT"] = plan.prompt_variant
    return env


def build_command(plan: RunPlan, index: int) -> list[str]:
    prompt = plan.prompt_files[index] if plan.prompt_files is not None else ""
    text = plan.command_template.format(
        input_file=shlex.quote(str(plan.inputs[index])),
        prompt_file=shlex.quote(str(prompt)) if prompt else "''",
        output_dir=shlex.quote(str(plan.output_dir)),
        model_id=shlex.quote(plan.model_id),
        prompt_variant=shlex.quote(plan.prompt_variant),
    )
    return shlex.split(text)


def resolve_command(plan: RunPlan) -> str:
    argv = build_command(plan, 0)
    if not argv:
        raise ValidationError("command_template expands to an empty command")
    found = shutil.which(argv[0])
    if found is None:
        raise CommandNotFoundError(f"command not found: {argv[0]!r}")
    return found


def execute_plan(plan: RunPlan, meter: MeterSpec) -> tuple[list[RunRecord], Path]:
    """Run every batch, meter it, and write the emission log.

    A batch whose command exits non-zero is kept and flagged failed. A meter
    failure aborts the whole plan.
    """
    resolve_command(plan)
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    env = generation_env(plan)
    device = make_meter(meter)
    indices = partition(list(range(len(plan.inputs))), plan.runs_per_batch)
    records: list[RunRecord] = []
    extra: list[dict[str, object]] = []

    for batch_index, batch in enumerate(indices):
        failed = False
        stamp = datetime.now(timezone.utc)
        t_start = time.perf_counter()
        device.start(t_start)
        for i in batch:
            argv = build_command(plan, i)
            try:
                proc = subprocess.run(argv, env=env, capture_output=True, text=True)
            except OSError as exc:
                logger.error("batch %d: %s failed to start: %s", batch_index, argv[0], exc)
                failed = True
                continue
            if proc.returncode != 0:
                logger.error(
                    "batch %d: %s exited %d: %s",
                    batch_index,
                    plan.inputs[i],
                    proc.returncode,
                    proc.stderr.strip()[:500],
                )
                failed = True
        t_end = time.perf_counter()
        energy = device.stop(t_end)
        duration = t_end - t_start
        records.append(
            RunRecord(
                model_id=plan.model_id,
                prompt_variant=plan.prompt_variant,
                batch_index=batch_index,
                duration_s=duration,
                energy_kwh=energy,
                emissions_g=energy * meter.grid_intensity_g_per_kwh,
                timestamp=stamp,
                source_file=str(plan.log_path),
                failed=failed,
            )
        )
        extra.append({"run_id": f"{plan.model_id}_{plan.prompt_variant}_{batch_index}", "n_inputs": len(batch)})
        logger.info("batch %d/%d: %.3f s, %.3g kWh%s", batch_index + 1, len(indices), duration, energy,
                    " (failed)" if failed else "")

    path = write_emission_log(plan.log_path, records, extra)
    return records, path
