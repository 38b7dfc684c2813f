"""Shared value universe and task data model.

All task values live in a restricted JSON universe with exactly three
kinds: string, array, and ordered object.  Numbers, booleans, and null
never occur; inbound scalars are coerced to their literal string
spellings when parsed.  Object key order is preserved and significant
for serialization.

Every type here is treated as an immutable value after construction;
operations are pure and safe to use concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

from . import templates

JsonNode = Union[str, list["JsonNode"], dict[str, "JsonNode"]]

SCHEMA_KINDS = ("string", "object", "array")

# The only JSON Schema keywords ever emitted for output control.
SCHEMA_KEYWORDS = ("type", "description", "items", "properties")


def _require_node(value: object, path: str) -> None:
    if isinstance(value, str):
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            _require_node(item, f"{path}/{i}")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"non-string object key {key!r} at {path}")
            _require_node(item, f"{path}/{key}")
        return
    raise TypeError(f"value of kind {type(value).__name__} at {path}; "
                    "only string, array, and object are allowed")


def is_node(value: object) -> bool:
    """True iff the value lives entirely in the three-kind universe."""
    try:
        _require_node(value, "")
    except TypeError:
        return False
    return True


def ensure_node(value: object) -> JsonNode:
    """Return the value unchanged, raising TypeError for foreign kinds."""
    _require_node(value, "")
    return value  # type: ignore[return-value]


def coerce_scalars(value: object) -> JsonNode:
    """Map an arbitrary parsed JSON value into the three-kind universe.

    Booleans and null become their JSON spellings; stray numbers become
    their repr.  Strings, arrays, and objects pass through recursively.
    """
    if value is True:
        return "true"
    if value is False:
        return "false"
    if value is None:
        return "null"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        return [coerce_scalars(item) for item in value]
    if isinstance(value, dict):
        return {str(key): coerce_scalars(item) for key, item in value.items()}
    raise TypeError(f"cannot represent {type(value).__name__} as a node")


def parse_node(text: str) -> JsonNode:
    """Strictly parse a JSON document into the three-kind universe.

    Numeric literals keep their source spelling ("0.98" stays "0.98");
    true/false/null become the strings "true"/"false"/"null".
    """
    value = json.loads(text, parse_int=str, parse_float=str, parse_constant=str)
    return coerce_scalars(value)


def canonical_serialize(node: JsonNode, pretty: bool = False) -> str:
    """Deterministic serialization preserving object key order.

    Compact mode (the canonical form used for datasets and golden files)
    separates items with ", " and keys with ": ".  Non-ASCII characters
    are emitted verbatim; only control characters are escaped.
    """
    _require_node(node, "")
    if pretty:
        return json.dumps(node, ensure_ascii=False, indent=2)
    return json.dumps(node, ensure_ascii=False, separators=(", ", ": "))


def deep_equal(a: JsonNode, b: JsonNode) -> bool:
    """Structural equality: object keys unordered, array items ordered."""
    return a == b


def map_strings(node: JsonNode, fn: Callable[[str], str]) -> JsonNode:
    """Apply fn to every string leaf, rebuilding arrays and objects."""
    if isinstance(node, str):
        return fn(node)
    if isinstance(node, list):
        return [map_strings(item, fn) for item in node]
    return {key: map_strings(item, fn) for key, item in node.items()}


@dataclass(frozen=True)
class PromptTemplate:
    """An input template plus an output template with {name} holes."""

    input_template: str
    output_template: str


@dataclass(frozen=True)
class LabelSpace:
    """Closed set of admissible outputs, keyed for the input structure."""

    key: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.key:
            raise ValueError("label space key must be nonempty")
        if not self.labels:
            raise ValueError("label space must contain at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label space entries must be unique")


@dataclass(frozen=True)
class ControlSchema:
    """Output-control schema node restricted to the four keywords
    type/description/items/properties."""

    kind: str
    description: str | None = None
    properties: Mapping[str, "ControlSchema"] | None = None
    items: "ControlSchema | None" = None

    def __post_init__(self):
        if self.kind not in SCHEMA_KINDS:
            raise ValueError(f"unknown schema kind {self.kind!r}")
        if (self.properties is not None) != (self.kind == "object"):
            raise ValueError("properties present iff kind is object")
        if (self.items is not None) != (self.kind == "array"):
            raise ValueError("items present iff kind is array")
        if self.properties is not None:
            object.__setattr__(self, "properties", dict(self.properties))

    def to_node(self) -> JsonNode:
        node: dict[str, JsonNode] = {"type": self.kind}
        if self.description is not None:
            node["description"] = self.description
        if self.items is not None:
            node["items"] = self.items.to_node()
        if self.properties is not None:
            node["properties"] = {
                name: schema.to_node() for name, schema in self.properties.items()
            }
        return node

    @classmethod
    def from_node(cls, node: JsonNode) -> "ControlSchema":
        problems: list[tuple[str, str]] = []
        schema = parse_control_schema(node, "", problems)
        if problems:
            raise ValueError("; ".join(f"{path}: {msg}" for path, msg in problems))
        assert schema is not None
        return schema


def parse_control_schema(
    node: JsonNode, path: str, problems: list[tuple[str, str]]
) -> ControlSchema | None:
    """Parse one schema node, appending (path, message) for each violation."""
    before = len(problems)
    if not isinstance(node, dict):
        problems.append((path, "schema must be an object"))
        return None
    for key in node:
        if key not in SCHEMA_KEYWORDS:
            problems.append((path, f"unknown schema keyword {key!r}"))
    kind = node.get("type")
    if kind not in SCHEMA_KINDS:
        problems.append((path, f"type must be one of {SCHEMA_KINDS}, got {kind!r}"))
        return None
    description = node.get("description")
    if description is not None and not isinstance(description, str):
        problems.append((path, "description must be a string"))
        description = None
    items = None
    properties = None
    if kind == "array":
        if "items" not in node:
            problems.append((path, "array schema requires items"))
        else:
            items = parse_control_schema(node["items"], f"{path}/items", problems)
        if "properties" in node:
            problems.append((path, "properties is only valid for object schemas"))
    elif kind == "object":
        if "properties" not in node or not isinstance(node.get("properties"), dict):
            problems.append((path, "object schema requires a properties object"))
        else:
            properties = {}
            for name, sub in node["properties"].items():
                parsed = parse_control_schema(
                    sub, f"{path}/properties/{name}", problems
                )
                if parsed is not None:
                    properties[name] = parsed
        if "items" in node:
            problems.append((path, "items is only valid for array schemas"))
    else:
        for key in ("items", "properties"):
            if key in node:
                problems.append((path, f"{key} is not valid for string schemas"))
    if len(problems) > before:
        return None
    if kind == "array":
        return ControlSchema("array", description=description, items=items)
    if kind == "object":
        return ControlSchema("object", description=description, properties=properties)
    return ControlSchema("string", description=description)


@dataclass(frozen=True)
class TaskSpec:
    """A task's declared elements, prompts, label space, and output control."""

    name: str
    input_elements: tuple[str, ...]
    output_elements: tuple[str, ...]
    prompts: tuple[PromptTemplate, ...]
    control: Mapping[str, ControlSchema]
    label_space: LabelSpace | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_elements", tuple(self.input_elements))
        object.__setattr__(self, "output_elements", tuple(self.output_elements))
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "control", dict(self.control))
        if not self.name:
            raise ValueError("task name must be nonempty")
        names = list(self.input_elements) + list(self.output_elements)
        if any(not n for n in names):
            raise ValueError("element names must be nonempty")
        if len(set(names)) != len(names):
            raise ValueError("input and output element names must be disjoint and unique")
        if not self.output_elements:
            raise ValueError("at least one output element is required")
        if not self.prompts:
            raise ValueError("at least one prompt is required")
        if set(self.control) != set(self.output_elements):
            raise ValueError("control key set must equal the output elements")
        if self.label_space is not None:
            _check_label_key(self.label_space.key, names)
        allowed_inputs = set(self.input_elements)
        if self.label_space is not None:
            allowed_inputs.add(self.label_space.key)
        for i, prompt in enumerate(self.prompts):
            in_tokens = templates.parse_template(prompt.input_template)
            out_tokens = templates.parse_template(prompt.output_template)
            for name in templates.placeholder_names(in_tokens):
                if name not in allowed_inputs:
                    raise ValueError(
                        f"prompt {i} input template references unknown element {name!r}"
                    )
            for name in templates.placeholder_names(out_tokens):
                if name not in self.output_elements:
                    raise ValueError(
                        f"prompt {i} output template references unknown element {name!r}"
                    )


def _check_label_key(key: str, element_names: list[str]) -> None:
    if key in element_names:
        raise ValueError(f"label space key {key!r} collides with an element name")
    if key == "instruction":
        raise ValueError('label space key must not be "instruction"')


@dataclass(frozen=True)
class TaskInstance:
    """One concrete example of a task with bound input and output values."""

    spec: TaskSpec
    id: str
    input_values: Mapping[str, JsonNode]
    output_values: Mapping[str, JsonNode]
    label_space: LabelSpace | None = None
    prompt_index: int = 0
    text_values: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_values", dict(self.input_values))
        object.__setattr__(self, "output_values", dict(self.output_values))
        object.__setattr__(self, "text_values", dict(self.text_values))
        if set(self.input_values) != set(self.spec.input_elements):
            raise ValueError("input value keys must equal the declared input elements")
        if set(self.output_values) != set(self.spec.output_elements):
            raise ValueError("output value keys must equal the declared output elements")
        for value in self.input_values.values():
            _require_node(value, "")
        for value in self.output_values.values():
            _require_node(value, "")
        if not 0 <= self.prompt_index < len(self.spec.prompts):
            raise ValueError(f"prompt index {self.prompt_index} out of range")
        if self.label_space is not None:
            names = list(self.spec.input_elements) + list(self.spec.output_elements)
            _check_label_key(self.label_space.key, names)
        for name in self.text_values:
            if name not in self.spec.input_elements:
                raise ValueError(f"text override for unknown input element {name!r}")

    @property
    def effective_label_space(self) -> LabelSpace | None:
        return self.label_space if self.label_space is not None else self.spec.label_space

    @property
    def prompt(self) -> PromptTemplate:
        return self.spec.prompts[self.prompt_index]
