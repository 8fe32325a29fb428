"""Command-line entry point: prepare, run, compute, report, validate.

Exit codes: 0 success, 1 partial failure, 2 invalid input or usage.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .core import AnalysisConfig, GreenMetricsError, ValidationError, cell_id
from .ingest import (
    VARIANT_SPECS,
    ConflictError,
    DatasetError,
    check_emission_log,
    compose_prompt,
    consolidate,
    load_templates,
    module_filename,
    parse_coverage,
    prepare_modules,
    read_dataset,
)
from .metrics import compute_all
from .report import FORMATS, REPORT_FILENAMES, UsageError, emit_charts, load_artifact, serialize
from .runner import CommandNotFoundError, MeterError, MeterSpec, RunPlan, execute_plan, resolve_command

logger = logging.getLogger("greenmetrics")

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2
ANALYSIS_KEYS = (
    "grid_intensity_g_per_kwh",
    "runs_per_batch",
    "betas",
    "normalization_scope",
    "gqi_energy_mode",
    "si_aggregation",
    "emission_basis",
    "coverage_mode",
    "epsilon",
)


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _parse_formats(values: Optional[Sequence[str]]) -> list[str]:
    out: list[str] = []
    for v in values or []:
        for part in v.split(","):
            part = part.strip().lower()
            if part == "md":
                part = "markdown"
            if part not in FORMATS:
                raise UsageError(f"unknown report format {part!r}; choose from {', '.join(FORMATS)}")
            if part not in out:
                out.append(part)
    return out


def _parse_betas(text: str) -> list[float]:
    try:
        return [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"--betas expects comma-separated numbers, got {text!r}") from None


# -- prepare -----------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> int:
    records = read_dataset(args.dataset)
    modules = prepare_modules(records)
    out = Path(args.out)
    tests_dir = out / "baseline_tests"
    tests_dir.mkdir(parents=True, exist_ok=True)
    for mod in modules:
        name = module_filename(mod.task_id)
        (out / name).write_text(mod.runnable_source, encoding="utf-8")
        (tests_dir / f"test_{name}").write_text(mod.baseline_tests, encoding="utf-8")
    print(f"wrote {len(modules)} modules to {out} ({len(records) - len(modules)} skipped)")
    return EXIT_OK


# -- run ---------------------------------------------------------------------


def _plan_inputs(base: Path, cfg: dict) -> list[Path]:
    patterns = cfg.get("inputs")
    if patterns is None and "inputs_dir" in cfg:
        patterns = [str(Path(cfg["inputs_dir"]) / "*.py")]
    if isinstance(patterns, str):
        patterns = [patterns]
    if not patterns:
        raise ValidationError("run config needs 'inputs' (paths or globs) or 'inputs_dir'")
    found: list[Path] = []
    for pattern in patterns:
        matches = sorted(glob.glob(str(_resolve(base, pattern))))
        if not matches:
            raise ValidationError(f"no input files match {pattern!r}")
        found += [Path(m) for m in matches]
    return found


def _build_plans(args: argparse.Namespace) -> tuple[list[RunPlan], MeterSpec]:
    config_path = Path(args.config)
    cfg = _load_json(config_path)
    base = config_path.parent
    inputs = _plan_inputs(base, cfg)
    out = Path(args.out) if args.out else _resolve(base, cfg.get("output_dir", "runs"))
    runs_per_batch = args.runs_per_batch or cfg.get("runs_per_batch", 5)

    meter_cfg = _load_json(Path(args.meter)) if args.meter else cfg.get("meter")
    if meter_cfg is None:
        raise ValidationError("no meter configured (use --meter or a 'meter' entry)")
    meter_cfg = dict(meter_cfg)
    if args.grid_intensity is not None:
        meter_cfg["grid_intensity_g_per_kwh"] = args.grid_intensity
    if "path" in meter_cfg:
        meter_cfg["path"] = str(_resolve(base, meter_cfg["path"]))
    meter = MeterSpec.from_dict(meter_cfg)

    models = cfg.get("models") or ([cfg["model_id"]] if "model_id" in cfg else [])
    variants = cfg.get("variants") or ([cfg["prompt_variant"]] if "prompt_variant" in cfg else [])
    if not models or not variants:
        raise ValidationError("run config needs 'models' and 'variants'")
    if "command_template" not in cfg:
        raise ValidationError("run config needs 'command_template'")

    prompt_sets: dict[str, Optional[tuple[Path, ...]]] = {}
    for variant in variants:
        prompt_sets[variant] = None
        if cfg.get("compose_prompts"):
            if variant not in VARIANT_SPECS:
                raise ValidationError(f"no feature ladder entry for variant {variant!r}")
            prompt_sets[variant] = tuple(out / "prompts" / variant / f"{p.stem}.txt" for p in inputs)
        elif "prompt_files" in cfg and variant in cfg["prompt_files"]:
            shared = _resolve(base, cfg["prompt_files"][variant])
            prompt_sets[variant] = tuple(shared for _ in inputs)

    plans = [
        RunPlan(
            command_template=cfg["command_template"],
            inputs=tuple(inputs),
            model_id=model,
            prompt_variant=variant,
            runs_per_batch=int(runs_per_batch),
            generation_params=cfg.get("generation_params", {}),
            output_dir=out,
            prompt_files=prompt_sets[variant],
        )
        for model in models
        for variant in variants
    ]
    return plans, meter


def _write_prompts(plans: Sequence[RunPlan], template_dir: Optional[str]) -> None:
    templates = load_templates(template_dir) if template_dir else None
    done: set[str] = set()
    for plan in plans:
        if plan.prompt_files is None or plan.prompt_variant in done:
            continue
        done.add(plan.prompt_variant)
        spec = VARIANT_SPECS[plan.prompt_variant]
        for src, dest in zip(plan.inputs, plan.prompt_files):
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(compose_prompt(spec, src.read_text(encoding="utf-8"), templates), encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    plans, meter = _build_plans(args)
    if args.dry_run:
        echo = {
            "meter": {k: (str(v) if v is not None else None) for k, v in vars(meter).items()},
            "plans": [
                {
                    "model_id": p.model_id,
                    "prompt_variant": p.prompt_variant,
                    "inputs": len(p.inputs),
                    "runs_per_batch": p.runs_per_batch,
                    "batches": -(-len(p.inputs) // p.runs_per_batch),
                    "command_template": p.command_template,
                    "generation_params": dict(p.generation_params),
                    "log": str(p.log_path),
                }
                for p in plans
            ],
        }
        print(json.dumps(echo, indent=2, sort_keys=True))
        return EXIT_OK
    for plan in plans:
        resolve_command(plan)
    cfg = _load_json(Path(args.config))
    template_dir = cfg.get("template_dir")
    _write_prompts(plans, str(_resolve(Path(args.config).parent, template_dir)) if template_dir else None)
    any_failed = False
    for plan in plans:
        records, path = execute_plan(plan, meter)
        failed = sum(r.failed for r in records)
        any_failed |= failed > 0
        print(f"{cell_id(plan.model_id, plan.prompt_variant)}: {len(records)} batches, {failed} failed -> {path}")
    return EXIT_PARTIAL if any_failed else EXIT_OK


# -- compute -----------------------------------------------------------------


def _analysis_config(cfg: dict, args: argparse.Namespace) -> AnalysisConfig:
    settings = {k: cfg[k] for k in ANALYSIS_KEYS if k in cfg}
    overrides = {
        "grid_intensity_g_per_kwh": args.grid_intensity,
        "runs_per_batch": args.runs_per_batch,
        "betas": _parse_betas(args.betas) if args.betas else None,
        "gqi_energy_mode": args.gqi_mode,
        "si_aggregation": args.si_aggregation,
        "normalization_scope": args.norm_scope,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return AnalysisConfig.from_dict(settings)


def _manifest(cfg: dict) -> list[tuple[str, str, str]]:
    logs = cfg.get("logs")
    if not logs:
        raise ValidationError("config has no 'logs' manifest")
    out = []
    for i, entry in enumerate(logs):
        try:
            out.append((str(entry["path"]), str(entry["model_id"]), str(entry["prompt_variant"])))
        except (KeyError, TypeError):
            raise ValidationError(f"logs[{i}] needs path, model_id and prompt_variant") from None
    return out


def run_manifest(config: AnalysisConfig, manifest, coverage: Optional[str]) -> dict:
    return {
        "tool": "greenmetrics",
        "version": __version__,
        "analysis": config.as_dict(),
        "decisions": {
            "sigma": "population standard deviation",
            "per_run_emission": (
                "batch emission / runs_per_batch"
                if config.emission_basis.value == "per_run"
                else "raw batch emission"
            ),
            "gqi_energy_term": config.gqi_energy_mode.value,
            "gf_beta_coverage": "fraction (Q / 100)",
            "si_aggregation": config.si_aggregation.value,
            "normalization_scope": config.normalization_scope.value,
            "degenerate_normalization": "max == min maps every value to 0",
            "sei_cell_level": "1 / cell SCI",
        },
        "inputs": {
            "logs": [{"path": p, "model_id": m, "prompt_variant": v} for p, m, v in manifest],
            "coverage": coverage,
        },
    }


def cmd_compute(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    cfg = _load_json(config_path)
    base = config_path.parent
    config = _analysis_config(cfg, args)
    manifest = _manifest(cfg)
    for path, _, _ in manifest:
        if not _resolve(base, path).is_file():
            raise ValidationError(f"log file not found: {path}")
    coverage: dict[str, float] = {}
    if cfg.get("coverage"):
        cov_path = _resolve(base, cfg["coverage"])
        if not cov_path.is_file():
            raise ValidationError(f"coverage file not found: {cfg['coverage']}")
        coverage = parse_coverage(cov_path)
    formats = _parse_formats(args.format if args.format else cfg.get("formats", []))
    out = Path(args.out) if args.out else _resolve(base, cfg.get("output_dir", "out"))

    cells = consolidate([(_resolve(base, p), m, v) for p, m, v in manifest], coverage)
    result = compute_all(cells, config)

    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_bytes(serialize(result, "json"))
    manifest_doc = run_manifest(config, manifest, cfg.get("coverage"))
    (out / "run_manifest.json").write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for fmt in formats:
        (out / REPORT_FILENAMES[fmt]).write_bytes(serialize(result, fmt))

    for cid, messages in result.errors.items():
        for m in messages:
            logger.warning("%s: %s", cid, m)
    print(f"computed {len(result.metrics)} of {len(cells)} cells -> {out / 'metrics.json'}")
    return EXIT_OK if result.ok else EXIT_PARTIAL


# -- report ------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    formats = _parse_formats(args.format or ["markdown"])
    artifact = Path(args.artifact)
    if not artifact.is_file():
        raise ValidationError(f"artifact not found: {artifact}")
    result = load_artifact(artifact)
    out = Path(args.out) if args.out else artifact.parent
    out.mkdir(parents=True, exist_ok=True)
    for fmt in formats:
        path = out / REPORT_FILENAMES[fmt]
        path.write_bytes(serialize(result, fmt))
        print(f"wrote {path}")
    if args.charts:
        files = emit_charts(result, out / "charts")
        print(f"wrote {len(files)} chart files to {out / 'charts'}")
    return EXIT_OK


# -- validate ----------------------------------------------------------------


def _sniff_csv(path: Path) -> str:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
    cols = {c.strip() for c in header.split(",")}
    if cols & {"duration", "emissions", "energy_consumed", "timestamp", "project_name"}:
        return "log"
    return "coverage"


def _validate_coverage(path: Path) -> list[str]:
    try:
        parse_coverage(path)
    except (GreenMetricsError, OSError, UnicodeDecodeError) as exc:
        return [str(exc)]
    return []


def _validate_config(path: Path) -> list[str]:
    findings: list[str] = []
    try:
        cfg = _load_json(path)
    except ValidationError as exc:
        return [str(exc)]
    if not isinstance(cfg, dict):
        return [f"{path}: config must be a JSON object"]
    base = path.parent
    try:
        AnalysisConfig.from_dict({k: cfg[k] for k in ANALYSIS_KEYS if k in cfg})
    except ValidationError as exc:
        findings.append(f"{path}: {exc}")
    try:
        manifest = _manifest(cfg)
    except ValidationError as exc:
        return findings + [f"{path}: {exc}"]
    seen = set()
    for p, m, v in manifest:
        if (m, v) in seen:
            findings.append(f"{path}: duplicate log entry for {cell_id(m, v)}")
        seen.add((m, v))
        resolved = _resolve(base, p)
        if not resolved.is_file():
            findings.append(f"{path}: log file not found: {p}")
        else:
            findings += check_emission_log(resolved)
    if cfg.get("coverage"):
        cov = _resolve(base, cfg["coverage"])
        if not cov.is_file():
            findings.append(f"{path}: coverage file not found: {cfg['coverage']}")
        else:
            findings += _validate_coverage(cov)
    if "formats" in cfg:
        try:
            _parse_formats(cfg["formats"])
        except UsageError as exc:
            findings.append(f"{path}: {exc}")
    return findings


def validate_paths(paths: Sequence[str]) -> list[str]:
    findings: list[str] = []
    for raw in paths:
        path = Path(raw)
        if not path.is_file():
            findings.append(f"{path}: file not found")
            continue
        suffix = path.suffix.lower()
        if suffix == ".csv":
            findings += check_emission_log(path) if _sniff_csv(path) == "log" else _validate_coverage(path)
        elif suffix == ".jsonl":
            try:
                read_dataset(path)
            except (GreenMetricsError, OSError) as exc:
                findings.append(f"{path}: {exc}")
        elif suffix == ".json":
            try:
                data = _load_json(path)
            except ValidationError as exc:
                findings.append(str(exc))
                continue
            if isinstance(data, dict) and "totals" in data:
                findings += _validate_coverage(path)
            else:
                findings += _validate_config(path)
        else:
            findings.append(f"{path}: unrecognised file type {suffix!r}")
    return findings


def cmd_validate(args: argparse.Namespace) -> int:
    findings = validate_paths(args.paths)
    for f in findings:
        print(f)
    print(f"{len(findings)} finding(s)")
    return EXIT_OK if not findings else EXIT_INVALID


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenmetrics", description="Carbon and energy metrics for test-generation runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="merge dataset prompts and solutions into runnable modules")
    p.add_argument("dataset", help="JSON-lines dataset")
    p.add_argument("--out", required=True, help="directory for module files")
    p.set_defaults(func=cmd_prepare)

    def analysis_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--grid-intensity", type=float, help="grid carbon intensity I in gCO2e/kWh")
        sp.add_argument("--runs-per-batch", type=int, help="functional runs per logged batch (R)")

    p = sub.add_parser("run", help="execute batched generation under an energy meter")
    p.add_argument("--config", required=True, help="run plan JSON")
    p.add_argument("--meter", help="meter JSON (overrides the plan's 'meter' entry)")
    p.add_argument("--out", help="output directory for logs")
    p.add_argument("--dry-run", action="store_true", help="print the plan without executing")
    analysis_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compute", help="compute every metric from emission logs and coverage")
    p.add_argument("--config", required=True, help="analysis config JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", action="append", help="also write reports: csv, json, markdown")
    p.add_argument("--betas", help="comma-separated beta values")
    p.add_argument("--gqi-mode", choices=["raw_energy_kwh", "normalized_efficiency"])
    p.add_argument("--si-aggregation", choices=["mean", "per_metric"])
    p.add_argument("--norm-scope", choices=["all_cells", "per_prompt_variant"])
    analysis_flags(p)
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("report", help="render rankings and comparisons from a metrics artifact")
    p.add_argument("artifact", help="metrics.json written by compute")
    p.add_argument("--format", action="append", help="csv, json, markdown (default markdown)")
    p.add_argument("--out", help="output directory (default: next to the artifact)")
    p.add_argument("--charts", action="store_true", help="also write SVG charts with sidecar CSVs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="schema-check logs, coverage files, datasets and configs")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CommandNotFoundError, DatasetError, ConflictError, ValidationError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except MeterError as exc:
        _err(f"meter failure, run aborted: {exc}")
        return EXIT_PARTIAL
    except OSError as exc:
        _err(str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
