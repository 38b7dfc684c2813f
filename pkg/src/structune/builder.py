"""Builds the paired structured/plain-text representations of task instances.

Two rendering modes share one instance:

* json mode emits an input object ``{"input": {...}, "output control": {...}}``
  and an output object mapping each output element to its gold value;
* text mode emits flat strings produced by substituting element values
  into the prompt templates.

Both modes support the same two ablation switches (label space on/off,
control information on/off), giving four variants whose renderings
differ only in the presence of the label-space entry/sentence and the
control key/sentence.

Text-mode conventions not determined by the structured form are fixed
here so downstream golden files stay stable:

* array-of-string input values render comma-joined; other structured
  inputs fall back to their compact serialization unless the instance
  carries an explicit per-element text override;
* structured output values render as nested arrays with object keys
  dropped (values keep declaration order), serialized compactly;
* the label sentence reads ``. <Key Title>: <comma-joined labels>`` and
  is inserted directly after the last input-element placeholder, unless
  the input template already references the label-space key;
* the control sentence grammar is ``The output consists of a(n) <name>,
  which is <kind phrase>.`` with the article dropped for names ending
  in "s"; object kinds list ``<property> (<kind>)`` pairs and array
  kinds read ``an array of <kind> items``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import templates
from .core import (
    ControlSchema,
    JsonNode,
    TaskInstance,
    canonical_serialize,
)

MODES = ("json", "text")


@dataclass(frozen=True)
class BuildConfig:
    """Rendering mode plus the two ablation switches."""

    mode: str = "json"
    include_label_space: bool = True
    include_control_info: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class EncodedExample:
    """One training/eval pair in either mode, ready for JSONL emission."""

    id: str
    task: str
    input_repr: str
    output_repr: str
    mode: str
    prompt_index: int


def build_input_structure(instance: TaskInstance, config: BuildConfig) -> JsonNode:
    """Construct the json-mode input object for one instance.

    The inner "input" object lists input elements in declaration order,
    then the label-space key (when included and present), then the
    unsubstituted instruction.  "output control" is omitted entirely,
    not emptied, when control information is excluded.
    """
    if config.mode != "json":
        raise ValueError("build_input_structure requires json mode")
    spec = instance.spec
    inner: dict[str, JsonNode] = {}
    for name in spec.input_elements:
        inner[name] = instance.input_values[name]
    space = instance.effective_label_space
    if config.include_label_space and space is not None:
        inner[space.key] = list(space.labels)
    inner["instruction"] = templates.assemble_instruction(instance.prompt)
    top: dict[str, JsonNode] = {"input": inner}
    if config.include_control_info:
        top["output control"] = {
            name: spec.control[name].to_node() for name in spec.output_elements
        }
    return top


def build_output_structure(instance: TaskInstance) -> JsonNode:
    """Object mapping each output element to its value, declaration order."""
    return {
        name: instance.output_values[name]
        for name in instance.spec.output_elements
    }


def _article(name: str) -> str:
    # "entities" and friends read better bare; Table-style singulars get a/an.
    if name.endswith("s"):
        return name
    if name[:1].lower() in "aeiou":
        return "an " + name
    return "a " + name


def _kind_phrase(schema: ControlSchema) -> str:
    if schema.kind == "string":
        return "a string"
    if schema.kind == "array":
        return f"an array of {_inner_kind(schema.items)} items"
    pairs = ", ".join(
        f"{name} ({_inner_kind(sub)})" for name, sub in schema.properties.items()
    )
    return f"an object with properties {pairs}"


def _inner_kind(schema: ControlSchema) -> str:
    if schema.kind == "string":
        return "string"
    if schema.kind == "array":
        return f"array of {_inner_kind(schema.items)} items"
    pairs = ", ".join(
        f"{name} ({_inner_kind(sub)})" for name, sub in schema.properties.items()
    )
    return f"object with properties {pairs}"


def render_control_text(control: Mapping[str, ControlSchema]) -> str:
    """Render output control as the text-mode sentence prefix."""
    if not control:
        return ""
    sentences = [
        f"The output consists of {_article(name)}, which is {_kind_phrase(schema)}."
        for name, schema in control.items()
    ]
    return "Output Control: " + " ".join(sentences)


def strip_object_keys(node: JsonNode) -> JsonNode:
    """Project objects onto arrays of their values, recursively.

    This is the text-mode rendering of structured outputs: an entity
    ``{"entity category": "song", "entity span": "Posible"}`` becomes
    ``["song", "Posible"]``.
    """
    if isinstance(node, str):
        return node
    if isinstance(node, list):
        return [strip_object_keys(item) for item in node]
    return [strip_object_keys(value) for value in node.values()]


def _input_text_value(instance: TaskInstance, name: str) -> str:
    if name in instance.text_values:
        return instance.text_values[name]
    value = instance.input_values[name]
    if isinstance(value, str):
        return value
    if isinstance(value, list) and all(isinstance(item, str) for item in value):
        return ", ".join(value)
    return canonical_serialize(value)


def _output_text_value(value: JsonNode) -> str:
    if isinstance(value, str):
        return value
    return canonical_serialize(strip_object_keys(value))


def _title(key: str) -> str:
    return " ".join(word[:1].upper() + word[1:] for word in key.split(" "))


def build_text_pair(instance: TaskInstance, config: BuildConfig) -> tuple[str, str]:
    """Render the text-mode (input, output) strings for one instance."""
    if config.mode != "text":
        raise ValueError("build_text_pair requires text mode")
    spec = instance.spec
    prompt = instance.prompt
    in_tokens = templates.parse_template(prompt.input_template)
    out_tokens = templates.parse_template(prompt.output_template)

    space = instance.effective_label_space
    bindings = {name: _input_text_value(instance, name) for name in spec.input_elements}
    if space is not None:
        bindings.setdefault(space.key, ", ".join(space.labels))

    parts: list[str] = []
    label_insert_at: int | None = None
    for kind, value in in_tokens.tokens:
        if kind == templates.TEXT:
            parts.append(value)
        else:
            if value not in bindings:
                raise templates.MissingBinding(value)
            parts.append(bindings[value])
            if value in spec.input_elements:
                label_insert_at = len(parts)

    referenced = set(templates.placeholder_names(in_tokens))
    if (
        config.include_label_space
        and space is not None
        and space.key not in referenced
    ):
        sentence = ". " + _title(space.key) + ": " + ", ".join(space.labels)
        if label_insert_at is None:
            parts.append(sentence)
        else:
            parts.insert(label_insert_at, sentence)
    input_text = "".join(parts)

    if config.include_control_info:
        control_text = render_control_text(
            {name: spec.control[name] for name in spec.output_elements}
        )
        if control_text:
            input_text = control_text + " " + input_text

    out_bindings = {
        name: _output_text_value(instance.output_values[name])
        for name in spec.output_elements
    }
    output_text = templates.substitute(out_tokens, out_bindings)
    return input_text, output_text


def build_example(instance: TaskInstance, config: BuildConfig) -> EncodedExample:
    """Encode one instance under the given mode and ablation switches."""
    if config.mode == "json":
        input_repr = canonical_serialize(build_input_structure(instance, config))
        output_repr = canonical_serialize(build_output_structure(instance))
    else:
        input_repr, output_repr = build_text_pair(instance, config)
    return EncodedExample(
        id=instance.id,
        task=instance.spec.name,
        input_repr=input_repr,
        output_repr=output_repr,
        mode=config.mode,
        prompt_index=instance.prompt_index,
    )
