"""Parsing and validation of raw model completions.

Completions are first parsed strictly; when that fails, the first
balanced ``{...}`` region that parses is extracted instead (status
"recovered").  Inbound numbers, booleans, and null are coerced to their
literal string spellings so every parsed node lives in the three-kind
universe.  Failure is a status, never an exception, so whole corpora
can be scanned and their invalid proportions reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from .core import ControlSchema, JsonNode, LabelSpace, coerce_scalars

VALID = "valid"
RECOVERED = "recovered"
INVALID = "invalid"

MISSING_PROPERTY = "missing_property"
UNEXPECTED_PROPERTY = "unexpected_property"
KIND_MISMATCH = "kind_mismatch"
LABEL_NOT_IN_SPACE = "label_not_in_space"


class ElementNotString(ValueError):
    def __init__(self, element: str):
        super().__init__(f"element {element!r} is present but not string-kind")
        self.element = element


@dataclass(frozen=True)
class ParseOutcome:
    status: str
    node: JsonNode | None
    raw: str
    note: str | None = None


class Violation(NamedTuple):
    path: str
    kind: str


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    violations: tuple[Violation, ...]


def _loads(text: str) -> JsonNode:
    value = json.loads(text, parse_int=str, parse_float=str, parse_constant=str)
    return coerce_scalars(value)


def _balanced_region(raw: str, start: int) -> str | None:
    """Return raw[start:close+1] for the balanced object opening at start.

    Braces inside JSON string literals do not count toward nesting.
    Returns None when the region never closes.
    """
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(raw)):
        ch = raw[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return raw[start : i + 1]
    return None


def parse_model_output(raw: str) -> ParseOutcome:
    """Parse a raw completion, recovering from surrounding noise.

    A whole-string parse yields "valid".  Otherwise the first balanced
    top-level object region that parses yields "recovered"; if nothing
    parses the status is "invalid" and no node is attached.
    """
    try:
        node = _loads(raw)
    except ValueError:
        pass
    else:
        return ParseOutcome(VALID, node, raw)
    for start, ch in enumerate(raw):
        if ch != "{":
            continue
        region = _balanced_region(raw, start)
        if region is None:
            continue
        try:
            node = _loads(region)
        except ValueError:
            continue
        note = f"extracted {len(region)} of {len(raw)} characters"
        return ParseOutcome(RECOVERED, node, raw, note)
    return ParseOutcome(INVALID, None, raw, "no parseable JSON document")


def _kind_of(node: JsonNode) -> str:
    if isinstance(node, str):
        return "string"
    if isinstance(node, list):
        return "array"
    return "object"


def _check(node: JsonNode, schema: ControlSchema, path: str,
           out: list[Violation]) -> None:
    if _kind_of(node) != schema.kind:
        out.append(Violation(path, KIND_MISMATCH))
        return
    if schema.kind == "array":
        for i, item in enumerate(node):
            _check(item, schema.items, f"{path}/{i}", out)
    elif schema.kind == "object":
        for name in schema.properties:
            if name not in node:
                out.append(Violation(f"{path}/{name}", MISSING_PROPERTY))
        for key in node:
            if key not in schema.properties:
                out.append(Violation(f"{path}/{key}", UNEXPECTED_PROPERTY))
        for name, sub in schema.properties.items():
            if name in node:
                _check(node[name], sub, f"{path}/{name}", out)


def validate(node: JsonNode, control: Mapping[str, ControlSchema]) -> ValidationReport:
    """Check a parsed output object against its control schemas.

    The top-level key set must equal the control key set exactly; object
    schemas require exactly their declared properties; array schemas
    check every item.  Paths join keys and array indices with "/".
    """
    violations: list[Violation] = []
    if not isinstance(node, dict):
        violations.append(Violation("", KIND_MISMATCH))
    else:
        for name in control:
            if name not in node:
                violations.append(Violation(name, MISSING_PROPERTY))
        for key in node:
            if key not in control:
                violations.append(Violation(key, UNEXPECTED_PROPERTY))
        for name, schema in control.items():
            if name in node:
                _check(node[name], schema, name, violations)
    return ValidationReport(not violations, tuple(violations))


def check_label(node: JsonNode, element: str, space: LabelSpace) -> ValidationReport:
    """Check that an element's value appears verbatim in the label space."""
    if not isinstance(node, dict) or element not in node:
        return ValidationReport(False, (Violation(element, MISSING_PROPERTY),))
    value = node[element]
    if not isinstance(value, str):
        raise ElementNotString(element)
    if value in space.labels:
        return ValidationReport(True, ())
    return ValidationReport(False, (Violation(element, LABEL_NOT_IN_SPACE),))


def extract_text_answer(raw: str) -> str:
    """Trim and collapse whitespace runs for text-mode comparison."""
    return " ".join(raw.split())


def invalid_rate(outcomes: Iterable[ParseOutcome]) -> float:
    """Fraction of completions from which no document could be parsed.

    Recovered completions count as parseable; they are tracked separately
    by recovered_rate.
    """
    outcomes = list(outcomes)
    if not outcomes:
        return 0.0
    return sum(1 for o in outcomes if o.status == INVALID) / len(outcomes)


def recovered_rate(outcomes: Iterable[ParseOutcome]) -> float:
    outcomes = list(outcomes)
    if not outcomes:
        return 0.0
    return sum(1 for o in outcomes if o.status == RECOVERED) / len(outcomes)
