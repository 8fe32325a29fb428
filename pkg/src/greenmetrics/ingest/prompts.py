"""Prompt-variant feature ladder and template composition.

Block texts live in editable files (one per feature); only the feature
structure is fixed in code.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Mapping, Optional, Union

from ..core import ValidationError

SOURCE_PLACEHOLDER = "$source"


class Feature(str, Enum):
    # declaration order is the composition order
    MINIMAL_TEMPLATE = "minimal_template"
    EXPERT_PERSONA = "expert_persona"
    STRUCTURED_RULES = "structured_rules"
    ROLE_SPLIT = "role_split"
    REQUIRED_TEST_METHODS = "required_test_methods"
    TONE_FORMAT_CONSTRAINTS = "tone_format_constraints"
    EXAMPLE_BLOCK = "example_block"


FEATURE_ORDER: tuple[Feature, ...] = tuple(Feature)


@dataclass(frozen=True)
class PromptVariantSpec:
    variant: str
    features: frozenset[Feature]

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", frozenset(Feature(f) for f in self.features))
        if Feature.MINIMAL_TEMPLATE not in self.features:
            raise ValidationError(f"{self.variant}: every variant must include the minimal template")


VARIANT_SPECS: dict[str, PromptVariantSpec] = {
    "V0": PromptVariantSpec("V0", frozenset({Feature.MINIMAL_TEMPLATE})),
    "V1": PromptVariantSpec("V1", frozenset({Feature.MINIMAL_TEMPLATE, Feature.EXPERT_PERSONA})),
    "V2": PromptVariantSpec(
        "V2",
        frozenset(
            {
                Feature.MINIMAL_TEMPLATE,
                Feature.EXPERT_PERSONA,
                Feature.STRUCTURED_RULES,
                Feature.ROLE_SPLIT,
            }
        ),
    ),
    "V3": PromptVariantSpec("V3", frozenset(Feature)),
}


def check_nesting(specs: Mapping[str, PromptVariantSpec]) -> None:
    """Each variant's features must strictly contain the previous variant's."""
    ordered = list(specs.values())
    for lower, upper in zip(ordered, ordered[1:]):
        if not lower.features < upper.features:
            raise ValidationError(f"features of {lower.variant} are not a strict subset of {upper.variant}")


def load_templates(directory: Optional[Union[str, Path]] = None) -> dict[Feature, str]:
    """Read ``<feature>.txt`` for every feature, from ``directory`` or the
    bundled defaults."""
    texts = {}
    for feature in FEATURE_ORDER:
        name = f"{feature.value}.txt"
        if directory is None:
            text = resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")
        else:
            path = Path(directory) / name
            if not path.is_file():
                raise ValidationError(f"template file missing: {path}")
            text = path.read_text(encoding="utf-8")
        texts[feature] = text.strip("\n")
    if texts[Feature.MINIMAL_TEMPLATE].count(SOURCE_PLACEHOLDER) != 1:
        raise ValidationError(f"minimal template must contain {SOURCE_PLACEHOLDER} exactly once")
    for feature, text in texts.items():
        if feature is not Feature.MINIMAL_TEMPLATE and SOURCE_PLACEHOLDER in text:
            raise ValidationError(f"only the minimal template may reference {SOURCE_PLACEHOLDER}")
    return texts


_DEFAULT_TEMPLATES: Optional[dict[Feature, str]] = None


def feature_blocks(
    spec: PromptVariantSpec,
    runnable_source: str,
    templates: Optional[Mapping[Feature, str]] = None,
) -> list[tuple[Feature, str]]:
    global _DEFAULT_TEMPLATES
    if templates is None:
        if _DEFAULT_TEMPLATES is None:
            _DEFAULT_TEMPLATES = load_templates()
        templates = _DEFAULT_TEMPLATES
    blocks = []
    for feature in FEATURE_ORDER:
        if feature not in spec.features:
            continue
        text = templates[feature]
        if feature is Feature.MINIMAL_TEMPLATE:
            text = Template(text).safe_substitute(source=runnable_source.rstrip("\n"))
        blocks.append((feature, text))
    return blocks


def compose_prompt(
    spec: PromptVariantSpec,
    runnable_source: str,
    templates: Optional[Mapping[Feature, str]] = None,
) -> str:
    """One block per enabled feature, in ladder order, separated by blank lines."""
    return "\n\n".join(text for _, text in feature_blocks(spec, runnable_source, templates)) + "\n"
