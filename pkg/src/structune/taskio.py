"""Task-spec ingestion, mixture sampling, and JSONL dataset files.

Task specs are JSON documents with top-level keys name, input_elements,
output_elements, prompts (a list of [input, output] template pairs),
control (output element name to schema), and optionally label_space
({"key", "labels"}).  Instance records are JSONL objects carrying one
field per element plus the reserved fields id, label_space,
prompt_index, and text_values.

Mixture sampling is deterministic and documented: each dataset draws
from a Mersenne Twister (random.Random) seeded with the string
"<seed>:<source>:<dataset filename>" (CPython's version-2 string
seeding, stable across platforms), and selection without replacement
uses Random.sample over record indices.  A source's quota is split
across its datasets as evenly as possible, earlier datasets taking the
remainder, so per-dataset counts differ by at most one.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .builder import BuildConfig, EncodedExample, build_example
from .core import (
    ControlSchema,
    LabelSpace,
    PromptTemplate,
    TaskInstance,
    TaskSpec,
    coerce_scalars,
    parse_control_schema,
)
from . import templates

RESERVED_FIELDS = ("id", "label_space", "prompt_index", "text_values")

ROTATIONS = ("round_robin", "random")

SPEC_KEYS = ("name", "input_elements", "output_elements", "prompts", "control",
             "label_space")


class SpecError(ValueError):
    """Batched task-spec violations: every problem found, not just the first."""

    def __init__(self, source: str, problems: list[tuple[str, str]]):
        self.source = source
        self.problems = problems
        lines = "\n".join(f"  {path or '<root>'}: {message}" for path, message in problems)
        super().__init__(f"invalid task spec {source}:\n{lines}")


class MalformedLine(ValueError):
    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


class SourceTooSmallWarning(UserWarning):
    pass


def _loads(text: str):
    return json.loads(text, parse_int=str, parse_float=str, parse_constant=str)


def _string_list(raw, path: str, problems: list) -> list[str]:
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        problems.append((path, "must be a list of strings"))
        return []
    return raw


def load_task_spec(path) -> TaskSpec:
    """Load and fully validate a task spec file.

    All violations are collected into one SpecError rather than failing
    on the first.
    """
    path = Path(path)
    problems: list[tuple[str, str]] = []
    try:
        raw = _loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SpecError(str(path), [("", f"unreadable spec file: {exc}")])
    if not isinstance(raw, dict):
        raise SpecError(str(path), [("", "spec must be a JSON object")])

    for key in raw:
        if key not in SPEC_KEYS:
            problems.append((key, "unknown spec key"))

    name = raw.get("name")
    if not isinstance(name, str) or not name:
        problems.append(("name", "must be a nonempty string"))
        name = "<unnamed>"
    input_elements = _string_list(raw.get("input_elements", []), "input_elements", problems)
    output_elements = _string_list(raw.get("output_elements"), "output_elements", problems)
    names = input_elements + output_elements
    if len(set(names)) != len(names):
        problems.append(("input_elements", "element names must be unique and disjoint"))
    if not output_elements:
        problems.append(("output_elements", "at least one output element is required"))
    for reserved in RESERVED_FIELDS:
        if reserved in names:
            problems.append((f"input_elements.{reserved}",
                             "element name collides with a reserved record field"))

    label_space = None
    label_key = None
    raw_space = raw.get("label_space")
    if raw_space is not None:
        if not isinstance(raw_space, dict):
            problems.append(("label_space", "must be an object with key and labels"))
        else:
            key = raw_space.get("key")
            labels = raw_space.get("labels")
            if not isinstance(key, str) or not key:
                problems.append(("label_space.key", "must be a nonempty string"))
            elif key in names or key == "instruction":
                problems.append(("label_space.key",
                                 "collides with an element name or 'instruction'"))
            else:
                label_key = key
            labels = _string_list(labels, "label_space.labels", problems)
            if labels and len(set(labels)) != len(labels):
                problems.append(("label_space.labels", "labels must be unique"))
            if label_key and labels:
                label_space = LabelSpace(label_key, tuple(labels))
            elif label_key:
                problems.append(("label_space.labels", "must be nonempty"))

    prompts: list[PromptTemplate] = []
    raw_prompts = raw.get("prompts")
    if not isinstance(raw_prompts, list) or not raw_prompts:
        problems.append(("prompts", "must be a nonempty list of template pairs"))
    else:
        allowed_inputs = set(input_elements)
        if label_key:
            allowed_inputs.add(label_key)
        for i, pair in enumerate(raw_prompts):
            where = f"prompts[{i}]"
            if isinstance(pair, dict):
                pair = [pair.get("input"), pair.get("output")]
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(t, str) for t in pair)):
                problems.append((where, "must be an [input, output] pair of strings"))
                continue
            ok = True
            for side, template, allowed in (
                ("input", pair[0], allowed_inputs),
                ("output", pair[1], set(output_elements)),
            ):
                try:
                    tokens = templates.parse_template(template)
                except templates.TemplateError as exc:
                    problems.append((f"{where}.{side}", str(exc)))
                    ok = False
                    continue
                for placeholder in templates.placeholder_names(tokens):
                    if placeholder not in allowed:
                        problems.append((
                            f"{where}.{side}",
                            f"placeholder {{{placeholder}}} names no declared element",
                        ))
                        ok = False
            if ok:
                prompts.append(PromptTemplate(pair[0], pair[1]))

    control: dict[str, ControlSchema] = {}
    raw_control = raw.get("control")
    if not isinstance(raw_control, dict):
        problems.append(("control", "must map each output element to a schema"))
    else:
        if set(raw_control) != set(output_elements):
            problems.append(("control", "key set must equal the output elements"))
        for element, node in raw_control.items():
            parsed = parse_control_schema(node, f"control.{element}", problems)
            if parsed is not None:
                control[element] = parsed

    if problems:
        raise SpecError(str(path), problems)
    try:
        return TaskSpec(
            name=name,
            input_elements=tuple(input_elements),
            output_elements=tuple(output_elements),
            prompts=tuple(prompts),
            control={name_: control[name_] for name_ in output_elements},
            label_space=label_space,
        )
    except ValueError as exc:
        raise SpecError(str(path), [("", str(exc))])


def _instance_from_record(record: dict, spec: TaskSpec, default_id: str) -> TaskInstance:
    label_space = None
    raw_space = record.get("label_space")
    if raw_space is not None:
        if isinstance(raw_space, list):
            if spec.label_space is None:
                raise ValueError("record gives bare labels but the spec declares no key")
            label_space = LabelSpace(spec.label_space.key, tuple(raw_space))
        else:
            label_space = LabelSpace(raw_space["key"], tuple(raw_space["labels"]))
    input_values = {}
    output_values = {}
    for name in spec.input_elements:
        if name not in record:
            raise ValueError(f"missing input element {name!r}")
        input_values[name] = coerce_scalars(record[name])
    for name in spec.output_elements:
        if name not in record:
            raise ValueError(f"missing output element {name!r}")
        output_values[name] = coerce_scalars(record[name])
    return TaskInstance(
        spec=spec,
        id=str(record.get("id", default_id)),
        input_values=input_values,
        output_values=output_values,
        label_space=label_space,
        prompt_index=int(record.get("prompt_index", 0)),
        text_values=dict(record.get("text_values", {})),
    )


def load_instances(path, spec: TaskSpec) -> list[TaskInstance]:
    """Read instance records (JSONL, one object per line) for a spec."""
    path = Path(path)
    instances = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = _loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record must be a JSON object")
                instances.append(
                    _instance_from_record(record, spec, f"{spec.name}-{line_number - 1}")
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedLine(path, line_number, str(exc))
    return instances


@dataclass(frozen=True)
class SourceQuota:
    source_name: str
    quota: int
    spec_path: str
    dataset_paths: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dataset_paths", tuple(self.dataset_paths))
        if self.quota < 0:
            raise ValueError("quota must be non-negative")
        if not self.dataset_paths:
            raise ValueError("a source needs at least one dataset")


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    quotas: tuple[SourceQuota, ...]
    config: BuildConfig = field(default_factory=BuildConfig)
    prompt_rotation: str = "round_robin"

    def __post_init__(self):
        object.__setattr__(self, "quotas", tuple(self.quotas))
        if self.prompt_rotation not in ROTATIONS:
            raise ValueError(f"prompt_rotation must be one of {ROTATIONS}")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        config = raw.get("config", {})
        return cls(
            seed=int(raw["seed"]),
            quotas=tuple(
                SourceQuota(
                    source_name=src["name"],
                    quota=int(src["quota"]),
                    spec_path=src["spec"],
                    dataset_paths=tuple(src["datasets"]),
                )
                for src in raw.get("sources", [])
            ),
            config=BuildConfig(
                mode="json",
                include_label_space=bool(config.get("include_label_space", True)),
                include_control_info=bool(config.get("include_control_info", True)),
            ),
            prompt_rotation=raw.get("prompt_rotation", "round_robin"),
        )


def _split_quota(quota: int, parts: int) -> list[int]:
    base, remainder = divmod(quota, parts)
    return [base + (1 if i < remainder else 0) for i in range(parts)]


def sample_mixture(manifest: DatasetManifest, base_dir=".") -> list[TaskInstance]:
    """Draw the mixture deterministically from the manifest's sources.

    Oversized quotas emit everything available with a SourceTooSmall
    warning.  Prompt assignment follows the manifest's rotation policy:
    round_robin cycles prompts by position within each dataset's draw,
    random draws from the same per-dataset generator.
    """
    base = Path(base_dir)
    out: list[TaskInstance] = []
    for source in manifest.quotas:
        spec = load_task_spec(base / source.spec_path)
        shares = _split_quota(source.quota, len(source.dataset_paths))
        for share, dataset_path in zip(shares, source.dataset_paths):
            records = load_instances(base / dataset_path, spec)
            rng = random.Random(f"{manifest.seed}:{source.source_name}:{Path(dataset_path).name}")
            if share > len(records):
                warnings.warn(
                    f"source {source.source_name}: dataset {dataset_path} has "
                    f"{len(records)} records, wanted {share}; emitting all",
                    SourceTooSmallWarning,
                )
                share = len(records)
            chosen = rng.sample(range(len(records)), share)
            for position, record_index in enumerate(chosen):
                instance = records[record_index]
                if manifest.prompt_rotation == "round_robin":
                    prompt_index = position % len(spec.prompts)
                else:
                    prompt_index = rng.randrange(len(spec.prompts))
                out.append(replace(
                    instance,
                    id=f"{source.source_name}:{Path(dataset_path).stem}:{record_index}",
                    prompt_index=prompt_index,
                ))
    return out


def emit_jsonl(examples: Iterable[EncodedExample], path) -> None:
    """Write encoded examples as one compact JSON object per line."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for example in examples:
            line = json.dumps(
                {
                    "id": example.id,
                    "task": example.task,
                    "mode": example.mode,
                    "prompt_index": example.prompt_index,
                    "input": example.input_repr,
                    "output": example.output_repr,
                },
                ensure_ascii=False,
                separators=(", ", ": "),
            )
            handle.write(line + "\n")


def read_jsonl(path) -> list[EncodedExample]:
    """Exact inverse of emit_jsonl."""
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                examples.append(EncodedExample(
                    id=record["id"],
                    task=record["task"],
                    input_repr=record["input"],
                    output_repr=record["output"],
                    mode=record["mode"],
                    prompt_index=int(record["prompt_index"]),
                ))
            except (ValueError, KeyError) as exc:
                raise MalformedLine(path, line_number, str(exc))
    return examples


def build_dataset(manifest: DatasetManifest, base_dir, out_json, out_text) -> int:
    """Sample the mixture once and emit the paired json/text JSONL files."""
    instances = sample_mixture(manifest, base_dir)
    for mode, out_path in (("json", out_json), ("text", out_text)):
        config = replace(manifest.config, mode=mode)
        emit_jsonl((build_example(inst, config) for inst in instances), out_path)
    return len(instances)
