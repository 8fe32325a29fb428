"""Regenerate the bundled fixture set.

    python tests/fixtures/make_fixtures.py

Deterministic: the same seed always yields the same bytes. Logs follow the
CodeCarbon column layout (extra columns included on purpose).
"""

import csv
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
MODELS = ["tiny-1.5b", "mini-3.8b", "coder-7b", "instruct-7b", "chat-8b"]
VARIANTS = ["V0", "V1", "V2", "V3"]
ROWS_PER_LOG = 33
GRID_INTENSITY = 500.0
SEED = 20240917

LOG_HEADER = [
    "timestamp", "project_name", "run_id", "duration", "emissions", "emissions_rate",
    "cpu_power", "gpu_power", "ram_power", "cpu_energy", "gpu_energy", "ram_energy",
    "energy_consumed", "country_name", "region", "os", "python_version", "tracking_mode",
]


def make_logs(rng):
    (HERE / "logs").mkdir(exist_ok=True)
    manifest = []
    for mi, model in enumerate(MODELS):
        base_energy = 0.0016 + 0.0003 * mi
        base_duration = 110.0 + 15.0 * mi
        for vi, variant in enumerate(VARIANTS):
            name = f"emissions_{model}_{variant}.csv"
            path = HERE / "logs" / name
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(LOG_HEADER)
                for r in range(ROWS_PER_LOG):
                    energy = base_energy * (1.0 - 0.06 * vi) * rng.uniform(0.85, 1.15)
                    duration = base_duration * (1.0 - 0.04 * vi) * rng.uniform(0.9, 1.1)
                    emissions_kg = energy * GRID_INTENSITY / 1000.0 * rng.uniform(0.98, 1.02)
                    cpu = energy * 0.2
                    gpu = energy * 0.7
                    ram = energy - cpu - gpu
                    w.writerow([
                        f"2025-03-{1 + vi:02d}T{10 + mi:02d}:{r:02d}:00",
                        f"{model}_{variant}", f"run-{mi}{vi}{r:02d}",
                        f"{duration:.6f}", f"{emissions_kg:.9e}", f"{emissions_kg / duration:.9e}",
                        "42.5", "61.0", "5.9", f"{cpu:.9e}", f"{gpu:.9e}", f"{ram:.9e}",
                        f"{energy:.9e}", "Canada", "alberta", "Linux", "3.10.12", "machine",
                    ])
            manifest.append({"path": f"logs/{name}", "model_id": model, "prompt_variant": variant})
    return manifest


def make_coverage(rng):
    lines = ["id,coverage_percent"]
    for model in MODELS:
        for variant in VARIANTS:
            lines.append(f"{model}:{variant},{rng.uniform(84.0, 96.0):.2f}")
    (HERE / "coverage.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_dataset(n=164):
    with (HERE / "dataset.jsonl").open("w", encoding="utf-8") as fh:
        for i in range(n):
            rec = {
                "task_id": f"Synth/{i}",
                "prompt": f'def add_{i}(x):\n    """Return x plus {i}."""\n',
                "canonical_solution": f"    return x + {i}\n",
                "test": f"def check(candidate):\n    assert candidate(1) == {i + 1}\n",
                "entry_point": f"add_{i}",
            }
            fh.write(json.dumps(rec) + "\n")


def main():
    rng = random.Random(SEED)
    manifest = make_logs(rng)
    make_coverage(rng)
    make_dataset()
    config = {
        "grid_intensity_g_per_kwh": GRID_INTENSITY,
        "runs_per_batch": 5,
        "betas": [0.3, 0.6, 0.9, 1.2, 1.5, 1.8],
        "normalization_scope": "all_cells",
        "gqi_energy_mode": "raw_energy_kwh",
        "si_aggregation": "mean",
        "logs": manifest,
        "coverage": "coverage.csv",
        "output_dir": "out",
        "formats": ["json"],
    }
    (HERE / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
