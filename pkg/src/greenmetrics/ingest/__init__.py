from .dataset import (
    DatasetError,
    DatasetRecord,
    PreparedModule,
    module_filename,
    prepare_modules,
    read_dataset,
)
from .logs import (
    ConflictError,
    EmissionLogRow,
    FormatError,
    RowError,
    SchemaError,
    check_emission_log,
    consolidate,
    coverage_for,
    parse_coverage,
    parse_emission_log,
    parse_emission_rows,
    write_emission_log,
)
from .prompts import (
    FEATURE_ORDER,
    VARIANT_SPECS,
    Feature,
    PromptVariantSpec,
    check_nesting,
    compose_prompt,
    feature_blocks,
    load_templates,
)

__all__ = [
    "ConflictError",
    "DatasetError",
    "DatasetRecord",
    "EmissionLogRow",
    "FEATURE_ORDER",
    "Feature",
    "FormatError",
    "PreparedModule",
    "PromptVariantSpec",
    "RowError",
    "SchemaError",
    "VARIANT_SPECS",
    "check_emission_log",
    "check_nesting",
    "compose_prompt",
    "consolidate",
    "coverage_for",
    "feature_blocks",
    "load_templates",
    "module_filename",
    "parse_coverage",
    "parse_emission_log",
    "parse_emission_rows",
    "prepare_modules",
    "read_dataset",
    "write_emission_log",
]
