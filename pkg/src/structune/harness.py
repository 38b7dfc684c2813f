"""End-to-end evaluation against completion endpoints.

The harness builds each instance's input representation, sends it to a
backend (HTTP, OpenAI-compatible, or an in-process mock keyed by example
id), parses and scores the completions, and aggregates micro-counts into
a report.  Requests always use temperature 0; a bounded thread pool
issues them concurrently and results are re-sequenced into input order
before aggregation.

Inputs longer than the length budget (counted by a pluggable callback,
whitespace tokens by default) are flagged and skipped rather than
truncated: a truncated structured input would be guaranteed-invalid and
would pollute the invalid-rate measurement.
"""

from __future__ import annotations

import json
import os
import random
import re
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import metrics as metrics_mod
from . import parsing
from .builder import BuildConfig, build_example, build_output_structure
from .core import LabelSpace, TaskInstance, deep_equal, map_strings

API_KEY_ENV = "STRUCTUNE_API_KEY"

METRICS = ("accuracy", "ner", "re", "ee", "sql")

PRIMARY_SCORE = {
    "accuracy": "accuracy",
    "ner": "entity_f1",
    "re": "relation_f1",
    "ee": "trigger_f1",
    "sql": "execution_accuracy",
}


class TransportError(RuntimeError):
    def __init__(self, status: int | None, body: str):
        super().__init__(f"transport failure (status={status}): {body[:200]}")
        self.status = status
        self.body = body


class CompletionTimeout(TransportError):
    def __init__(self, message: str = "request timed out"):
        RuntimeError.__init__(self, message)
        self.status = None
        self.body = message


class RetriesExhausted(TransportError):
    def __init__(self, attempts: int, last: Exception):
        RuntimeError.__init__(self, f"gave up after {attempts} attempts: {last}")
        self.status = getattr(last, "status", None)
        self.body = str(last)
        self.attempts = attempts


class ArityMismatch(ValueError):
    pass


class MissingLabelSpace(ValueError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    max_new_tokens: int = 512
    temperature: float = 0.0
    stop: tuple[str, ...] | None = None


def _is_transient(status: int | None) -> bool:
    return status is None or status >= 500 or status == 429


class HttpBackend:
    """POSTs {"prompt", "max_tokens", "temperature", "stop"} and reads
    {"text": ...}; transient failures retry with exponential backoff."""

    def __init__(self, url: str, *, max_attempts: int = 3, backoff: float = 0.5,
                 timeout: float = 120.0, post=None, sleep=time.sleep):
        self.url = url
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self._post = post
        self._sleep = sleep

    def _body(self, request: CompletionRequest) -> dict:
        return {
            "prompt": request.prompt_text,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "stop": list(request.stop) if request.stop else [],
        }

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _extract(self, payload: dict) -> str:
        text = payload.get("text")
        if not isinstance(text, str):
            raise TransportError(200, f"response missing text field: {payload!r}")
        return text

    def complete(self, request: CompletionRequest, example_id: str | None = None) -> str:
        import requests

        post = self._post or requests.post
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = post(self.url, json=self._body(request),
                                headers=self._headers(), timeout=self.timeout)
            except requests.Timeout as exc:
                last = CompletionTimeout(str(exc))
                continue
            except requests.RequestException as exc:
                last = TransportError(None, str(exc))
                continue
            status = getattr(response, "status_code", 200)
            if status >= 400:
                error = TransportError(status, getattr(response, "text", ""))
                if not _is_transient(status):
                    raise error
                last = error
                continue
            return self._extract(response.json())
        assert last is not None
        raise RetriesExhausted(self.max_attempts, last)


class OpenAIBackend(HttpBackend):
    """Adapter for OpenAI-compatible /completions endpoints: same request
    fields, completion text read from choices[0].text."""

    def __init__(self, url: str, model: str, **kwargs):
        super().__init__(url, **kwargs)
        self.model = model

    def _body(self, request: CompletionRequest) -> dict:
        body = super()._body(request)
        body["model"] = self.model
        return body

    def _extract(self, payload: dict) -> str:
        choices = payload.get("choices") or []
        if choices and isinstance(choices[0].get("text"), str):
            return choices[0]["text"]
        raise TransportError(200, f"response missing choices[0].text: {payload!r}")


class MockBackend:
    """Replays a transcript mapping example id to completion text."""

    def __init__(self, responses: Mapping[str, str], default: str | None = None):
        self.responses = dict(responses)
        self.default = default
        self.calls = 0

    def complete(self, request: CompletionRequest, example_id: str | None = None) -> str:
        self.calls += 1
        if example_id in self.responses:
            return self.responses[example_id]
        if self.default is not None:
            return self.default
        raise TransportError(None, f"no transcript entry for example {example_id!r}")


def echo_gold_backend(instances: Sequence[TaskInstance], config: BuildConfig) -> MockBackend:
    """Backend that answers every example with its gold representation."""
    return MockBackend({
        inst.id: build_example(inst, config).output_repr for inst in instances
    })


def load_transcript(path) -> dict[str, str]:
    """Read a mock transcript: JSONL of {"id": ..., "text": ...}."""
    responses = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                record = json.loads(line)
                responses[record["id"]] = record["text"]
    return responses


def resolve_backend(endpoint):
    if isinstance(endpoint, str):
        return HttpBackend(endpoint)
    return endpoint


def complete(endpoint, request: CompletionRequest, example_id: str | None = None) -> str:
    """Send one completion request to an endpoint (URL or backend object)."""
    return resolve_backend(endpoint).complete(request, example_id)


@dataclass(frozen=True)
class EvalReport:
    task: str
    mode: str
    metric: str
    n_examples: int
    n_skipped: int
    scores: Mapping[str, float]
    invalid_rate: float
    recovered_rate: float
    per_example: tuple[Mapping, ...]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "mode": self.mode,
            "metric": self.metric,
            "n_examples": self.n_examples,
            "n_skipped": self.n_skipped,
            "scores": dict(self.scores),
            "invalid_rate": self.invalid_rate,
            "recovered_rate": self.recovered_rate,
            "per_example": [dict(r) for r in self.per_example],
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )


@dataclass(frozen=True)
class PromptSuiteResult:
    per_prompt: tuple[tuple[int, float], ...]
    mean: float
    std: float

    def to_json(self) -> dict:
        return {
            "per_prompt": [
                {"prompt_index": i, "score": s} for i, s in self.per_prompt
            ],
            "mean": self.mean,
            "std": self.std,
        }


def whitespace_length(text: str) -> int:
    return len(text.split())


def _write_checkpoint(path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def _parse_for_metric(completion: str, mode: str, metric: str) -> parsing.ParseOutcome | None:
    """Parse a completion when the metric needs a structured value.

    json mode always parses; text mode parses only for the IE metrics,
    whose text outputs are nested arrays.
    """
    if mode == "json" or metric in ("ner", "re", "ee"):
        return parsing.parse_model_output(completion)
    return None


def evaluate(
    instances: Sequence[TaskInstance],
    config: BuildConfig,
    endpoint,
    metric: str,
    *,
    max_examples: int = 500,
    seed: int = 0,
    length_budget: int = 2048,
    length_fn: Callable[[str], int] | None = None,
    concurrency: int = 4,
    max_new_tokens: int = 512,
    stop: tuple[str, ...] | None = None,
    executor: metrics_mod.Executor | None = None,
    checkpoint_path=None,
) -> EvalReport:
    """Run one evaluation pass and aggregate scores.

    Completions are requested concurrently (bounded, default 4 in
    flight) but scored and reported in input order.  Transport failures
    abort the run after writing completed per-example records to the
    checkpoint path, when one is configured.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if not instances:
        raise ValueError("no instances to evaluate")
    spec = instances[0].spec
    if any(inst.spec is not spec and inst.spec != spec for inst in instances):
        raise ValueError("all instances must share one task spec")

    selected = list(instances)
    if len(selected) > max_examples:
        rng = random.Random(seed)
        keep = sorted(rng.sample(range(len(selected)), max_examples))
        selected = [selected[i] for i in keep]

    length_fn = length_fn or whitespace_length
    encoded = [build_example(inst, config) for inst in selected]
    skipped = [length_fn(ex.input_repr) > length_budget for ex in encoded]

    backend = resolve_backend(endpoint)
    completions: list[str | None] = [None] * len(selected)

    def fetch(index: int) -> tuple[int, str]:
        request = CompletionRequest(
            prompt_text=encoded[index].input_repr,
            max_new_tokens=max_new_tokens,
            temperature=0.0,
            stop=stop,
        )
        return index, backend.complete(request, encoded[index].id)

    pending = [i for i in range(len(selected)) if not skipped[i]]
    failure: Exception | None = None
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        futures = [pool.submit(fetch, i) for i in pending]
        for future in futures:
            try:
                index, text = future.result()
            except TransportError as exc:
                failure = failure or exc
            else:
                completions[index] = text

    records: list[dict] = []
    outcomes: list[parsing.ParseOutcome] = []
    n_correct = 0
    n_scored = 0
    n_fallback = 0
    counts = {"trigger": metrics_mod.PRF.from_counts(0, 0, 0),
              "argument": metrics_mod.PRF.from_counts(0, 0, 0),
              "set": metrics_mod.PRF.from_counts(0, 0, 0)}

    for index, (inst, ex) in enumerate(zip(selected, encoded)):
        record: dict = {"id": ex.id, "prompt_index": ex.prompt_index}
        if skipped[index]:
            record["skipped"] = True
            record["note"] = "input longer than the length budget"
            records.append(record)
            continue
        completion = completions[index]
        if completion is None:
            continue  # lost to the transport failure; reported via checkpoint
        record["skipped"] = False
        outcome = _parse_for_metric(completion, config.mode, metric)
        if outcome is not None:
            outcomes.append(outcome)
            record["parse_status"] = outcome.status

        if metric == "accuracy":
            if config.mode == "json":
                gold = build_output_structure(inst)
                correct = outcome.node is not None and deep_equal(outcome.node, gold)
            else:
                correct = metrics_mod.exact_match(completion, ex.output_repr)
            record["correct"] = bool(correct)
            n_scored += 1
            n_correct += bool(correct)
        elif metric in ("ner", "re", "ee"):
            gold_node = build_output_structure(inst)
            pred_node = outcome.node if outcome and outcome.node is not None else []
            pred = metrics_mod.structures_from_output(pred_node, metric, strict=False)
            gold = metrics_mod.structures_from_output(gold_node, metric, strict=True)
            if metric == "ee":
                trigger, argument = metrics_mod.event_scores(pred, gold)
                counts["trigger"] += trigger
                counts["argument"] += argument
                record["trigger_counts"] = [trigger.tp, trigger.pred_count, trigger.gold_count]
                record["argument_counts"] = [argument.tp, argument.pred_count, argument.gold_count]
            else:
                scorer = metrics_mod.entity_f1 if metric == "ner" else metrics_mod.relation_f1
                prf = scorer(pred, gold)
                counts["set"] += prf
                record["counts"] = [prf.tp, prf.pred_count, prf.gold_count]
        else:  # sql
            element = spec.output_elements[0]
            if config.mode == "json":
                node = outcome.node if outcome else None
                pred_sql = node.get(element, "") if isinstance(node, dict) else ""
                if not isinstance(pred_sql, str):
                    pred_sql = ""
            else:
                pred_sql = parsing.extract_text_answer(completion)
            gold_sql = inst.output_values[element]
            result = metrics_mod.execution_accuracy(pred_sql, gold_sql, executor)
            record["correct"] = result.correct
            record["fallback_scored"] = result.fallback
            n_scored += 1
            n_correct += result.correct
            n_fallback += result.fallback
        records.append(record)

    if failure is not None:
        if checkpoint_path is not None:
            _write_checkpoint(checkpoint_path, records)
        raise failure

    scores: dict[str, float] = {}
    if metric == "accuracy":
        scores["accuracy"] = n_correct / n_scored if n_scored else 0.0
    elif metric == "ner":
        prf = counts["set"]
        scores.update(entity_f1=prf.f1, precision=prf.precision, recall=prf.recall)
    elif metric == "re":
        prf = counts["set"]
        scores.update(relation_f1=prf.f1, precision=prf.precision, recall=prf.recall)
    elif metric == "ee":
        scores.update(trigger_f1=counts["trigger"].f1, argument_f1=counts["argument"].f1)
    else:
        scores["execution_accuracy"] = n_correct / n_scored if n_scored else 0.0
        scores["fallback_fraction"] = n_fallback / n_scored if n_scored else 0.0

    return EvalReport(
        task=spec.name,
        mode=config.mode,
        metric=metric,
        n_examples=len(selected),
        n_skipped=sum(skipped),
        scores=scores,
        invalid_rate=parsing.invalid_rate(outcomes),
        recovered_rate=parsing.recovered_rate(outcomes),
        per_example=tuple(records),
    )


def run_prompt_suite(
    instances: Sequence[TaskInstance],
    prompts: Sequence,
    config: BuildConfig,
    endpoint,
    metric: str,
    **eval_kwargs,
) -> PromptSuiteResult:
    """Evaluate the same examples once per prompt and summarize.

    The summary deviation is the population standard deviation: the
    prompt set is the whole population of interest, not a sample.
    """
    if not prompts:
        raise ValueError("prompt suite requires at least one prompt")
    spec = instances[0].spec
    primary = PRIMARY_SCORE[metric]
    per_prompt = []
    for index, prompt in enumerate(prompts):
        variant_spec = replace(spec, prompts=(prompt,))
        variant = [
            replace(inst, spec=variant_spec, prompt_index=0) for inst in instances
        ]
        report = evaluate(variant, config, endpoint, metric, **eval_kwargs)
        per_prompt.append((index, report.scores[primary]))
    values = [score for _, score in per_prompt]
    return PromptSuiteResult(
        per_prompt=tuple(per_prompt),
        mean=statistics.fmean(values),
        std=statistics.pstdev(values),
    )


def _token_remapper(mapping: Mapping[str, str]) -> Callable[[str], str]:
    """Single-pass whole-token replacement of every old label at once.

    Simultaneous replacement keeps permuted label sets (for example
    swapping (A) and (B)) from double-shifting; the longest alternative
    wins when labels share prefixes.
    """
    keys = sorted(mapping, key=len, reverse=True)
    pattern = re.compile(
        r"(?<!\w)(?:" + "|".join(re.escape(k) for k in keys) + r")(?!\w)"
    )
    return lambda text: pattern.sub(lambda m: mapping[m.group(0)], text)


def substitute_label_space(
    instances: Sequence[TaskInstance], new_labels: Sequence[str]
) -> list[TaskInstance]:
    """Positionally remap every instance's label space to new labels.

    The label at index i becomes new_labels[i] in the label space itself,
    in every input value (whole-token occurrences inside strings), and in
    the gold outputs.
    """
    new_labels = tuple(new_labels)
    remapped_specs: dict[int, object] = {}
    out = []
    for inst in instances:
        space = inst.effective_label_space
        if space is None:
            raise MissingLabelSpace(f"instance {inst.id} has no label space")
        if len(space.labels) != len(new_labels):
            raise ArityMismatch(
                f"instance {inst.id}: {len(space.labels)} labels cannot be "
                f"remapped to {len(new_labels)}"
            )
        remap = _token_remapper(dict(zip(space.labels, new_labels)))
        if inst.label_space is not None:
            new_spec = inst.spec
            override: LabelSpace | None = LabelSpace(space.key, new_labels)
        else:
            key = id(inst.spec)
            if key not in remapped_specs:
                remapped_specs[key] = replace(
                    inst.spec, label_space=LabelSpace(space.key, new_labels)
                )
            new_spec = remapped_specs[key]
            override = None
        out.append(replace(
            inst,
            spec=new_spec,
            label_space=override,
            input_values={k: map_strings(v, remap) for k, v in inst.input_values.items()},
            output_values={k: map_strings(v, remap) for k, v in inst.output_values.items()},
            text_values={k: remap(v) for k, v in inst.text_values.items()},
        ))
    return out
