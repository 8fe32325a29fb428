from __future__ import annotations

import random
from pathlib import Path

import pytest

from greenmetrics.core import AnalysisConfig, Cell, RunRecord

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): exit criterion, summarised at the end of the run")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    crit_id, title = marker
    previous = _acceptance.get(crit_id, ("PASS", title))[0]
    outcome = "PASS" if report.passed and previous == "PASS" else "FAIL"
    _acceptance[crit_id] = (outcome, title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report._acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for crit_id in sorted(_acceptance, key=lambda c: int(c.split("-")[1])):
        outcome, title = _acceptance[crit_id]
        terminalreporter.write_line(f"{crit_id:6} {outcome}  {title}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def config() -> AnalysisConfig:
    return AnalysisConfig(grid_intensity_g_per_kwh=500.0)


def make_cell(model, variant, runs, coverage=None):
    """``runs`` is a list of (duration_s, energy_kwh, emissions_kg)."""
    records = tuple(
        RunRecord(model, variant, i, t, e, c * 1000.0) for i, (t, e, c) in enumerate(runs)
    )
    return Cell(model, variant, records, coverage_pct=coverage)


def random_raw(rng: random.Random, models, variants, n_runs, coverage_missing=()):
    """Synthetic population in the oracle's raw layout."""
    raw = {}
    for m in models:
        for v in variants:
            runs = []
            for _ in range(n_runs):
                e = rng.uniform(0.0005, 0.004)
                runs.append((rng.uniform(30.0, 300.0), e, e * rng.uniform(0.2, 0.7)))
            q = None if (m, v) in coverage_missing else rng.uniform(40.0, 100.0)
            raw[(m, v)] = {"Q": q, "runs": runs}
    return raw


def cells_from_raw(raw):
    return [make_cell(m, v, entry["runs"], entry["Q"]) for (m, v), entry in sorted(raw.items())]
