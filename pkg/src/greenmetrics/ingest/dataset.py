"""Benchmark dataset records and their conversion into runnable modules."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Union

from ..core import ValidationError

logger = logging.getLogger(__name__)

DATASET_KEYS: tuple[str, ...] = ("task_id", "prompt", "canonical_solution", "test", "entry_point")


class DatasetError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class DatasetRecord:
    task_id: str
    prompt: str
    canonical_solution: str
    test: str
    entry_point: str

    def __post_init__(self) -> None:
        # a blank solution is tolerated here and skipped by prepare_modules
        for name in ("task_id", "prompt", "test", "entry_point"):
            if not str(getattr(self, name)).strip():
                raise ValidationError(f"dataset record field {name!r} is empty")


class PreparedModule(NamedTuple):
    task_id: str
    runnable_source: str
    baseline_tests: str


def read_dataset(path: Union[str, Path]) -> list[DatasetRecord]:
    """Read a JSON-lines dataset. Blank lines are ignored."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise DatasetError("expected a JSON object", lineno)
            missing = [k for k in DATASET_KEYS if k not in obj]
            if missing:
                raise DatasetError(f"missing keys {missing}", lineno)
            try:
                records.append(DatasetRecord(**{k: str(obj[k]) for k in DATASET_KEYS}))
            except ValidationError as exc:
                raise DatasetError(str(exc), lineno) from None
    if not records:
        raise DatasetError(f"{path}: dataset is empty")
    return records


def prepare_modules(records: Iterable[DatasetRecord]) -> list[PreparedModule]:
    """Merge each prompt (signature + docstring) with its reference body.

    The prompt comes first and the solution body is appended beneath it, giving
    a module that imports and runs on its own.
    """
    out = []
    for rec in records:
        if not rec.canonical_solution.strip():
            logger.warning("skipping %s: canonical_solution is blank", rec.task_id)
            continue
        prompt = rec.prompt if rec.prompt.endswith("\n") else rec.prompt + "\n"
        out.append(PreparedModule(rec.task_id, prompt + rec.canonical_solution, rec.test))
    return out


def module_filename(task_id: str) -> str:
    """``HumanEval/0`` -> ``HumanEval_0.py``."""
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", task_id).strip("_") + ".py"
