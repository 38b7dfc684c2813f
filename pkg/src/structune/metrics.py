"""Scoring: exact match, IE set F1s, and SQL execution accuracy.

All F1 scores are micro-counted: each example contributes raw
(tp, predicted, gold) counts and the corpus score is computed from the
summed counts, never from per-example averages.  Predictions and gold
records are deduplicated to sets before counting so repeated generations
cannot farm precision.  Span matching is exact string equality after
trimming and collapsing internal whitespace.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable

from .core import JsonNode

Executor = Callable[[str], "list[list[str]]"]

TASK_KINDS = ("ner", "re", "ee")

_WS = re.compile(r"\s+")


def _norm(text: str) -> str:
    return _WS.sub(" ", text).strip()


class ShapeMismatch(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ExecutorFailure(RuntimeError):
    """The gold query could not be executed by the backend."""


@dataclass(frozen=True)
class Entity:
    category: str
    span: str

    def __post_init__(self):
        if not _norm(self.category) or not _norm(self.span):
            raise ValueError("entity category and span must be nonempty")


@dataclass(frozen=True)
class RelationTriplet:
    head_span: str
    relation: str
    tail_span: str
    head_category: str | None = None
    tail_category: str | None = None

    def __post_init__(self):
        if not (_norm(self.head_span) and _norm(self.relation) and _norm(self.tail_span)):
            raise ValueError("triplet spans and relation must be nonempty")


@dataclass(frozen=True)
class EventRecord:
    category: str
    trigger: str
    arguments: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "arguments", tuple(tuple(a) for a in self.arguments))
        if not _norm(self.category) or not _norm(self.trigger):
            raise ValueError("event category and trigger must be nonempty")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    pred_count: int
    gold_count: int

    @classmethod
    def from_counts(cls, tp: int, pred_count: int, gold_count: int) -> "PRF":
        precision = 1.0 if pred_count == 0 else tp / pred_count
        recall = 1.0 if gold_count == 0 else tp / gold_count
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        return cls(precision, recall, f1, tp, pred_count, gold_count)

    def __add__(self, other: "PRF") -> "PRF":
        """Micro-aggregate by summing raw counts."""
        return PRF.from_counts(
            self.tp + other.tp,
            self.pred_count + other.pred_count,
            self.gold_count + other.gold_count,
        )


def exact_match(pred: str, gold: str) -> bool:
    """Case-sensitive equality after whitespace normalization."""
    from .parsing import extract_text_answer

    return extract_text_answer(pred) == extract_text_answer(gold)


def _set_prf(pred_keys: set, gold_keys: set) -> PRF:
    return PRF.from_counts(len(pred_keys & gold_keys), len(pred_keys), len(gold_keys))


def entity_f1(pred: Iterable[Entity], gold: Iterable[Entity]) -> PRF:
    """Set F1 on (category, span) pairs."""
    key = lambda e: (_norm(e.category), _norm(e.span))
    return _set_prf({key(e) for e in pred}, {key(e) for e in gold})


def relation_f1(pred: Iterable[RelationTriplet], gold: Iterable[RelationTriplet]) -> PRF:
    """Boundary F1: matches on (head span, relation, tail span) only,
    ignoring entity categories."""
    key = lambda t: (_norm(t.head_span), _norm(t.relation), _norm(t.tail_span))
    return _set_prf({key(t) for t in pred}, {key(t) for t in gold})


def event_scores(
    pred: Iterable[EventRecord],
    gold: Iterable[EventRecord],
    *,
    condition_on_event_category: bool = True,
) -> tuple[PRF, PRF]:
    """(trigger, argument) F1 pair.

    Triggers match on (event category, trigger span).  Arguments are
    pooled across events and match on (event category, argument category,
    argument span); the event-category component can be switched off.
    """
    pred = list(pred)
    gold = list(gold)
    trig_key = lambda e: (_norm(e.category), _norm(e.trigger))
    trigger = _set_prf({trig_key(e) for e in pred}, {trig_key(e) for e in gold})

    def arg_keys(events: list[EventRecord]) -> set:
        keys = set()
        for event in events:
            for category, span in event.arguments:
                key = (_norm(category), _norm(span))
                if condition_on_event_category:
                    key = (_norm(event.category),) + key
                keys.add(key)
        return keys

    argument = _set_prf(arg_keys(pred), arg_keys(gold))
    return trigger, argument


@dataclass(frozen=True)
class ExecutionOutcome:
    correct: bool
    fallback: bool

    def __bool__(self) -> bool:
        return self.correct


def execution_accuracy(
    pred_sql: str, gold_sql: str, executor: Executor | None = None
) -> ExecutionOutcome:
    """Compare two queries by their execution results.

    With an executor, both queries run and the result multisets are
    compared; a prediction that fails to execute scores wrong, while a
    gold query failure raises ExecutorFailure.  Without an executor the
    comparison falls back to normalized string equality and the outcome
    is flagged as fallback-scored.
    """
    if executor is None:
        same = _norm(pred_sql).lower() == _norm(gold_sql).lower()
        return ExecutionOutcome(same, fallback=True)
    try:
        gold_rows = executor(gold_sql)
    except Exception as exc:
        raise ExecutorFailure(f"gold query failed: {exc}") from exc
    try:
        pred_rows = executor(pred_sql)
    except Exception:
        return ExecutionOutcome(False, fallback=False)
    same = Counter(map(tuple, pred_rows)) == Counter(map(tuple, gold_rows))
    return ExecutionOutcome(same, fallback=False)


def make_sqlite_executor(connection) -> Executor:
    """Wrap a sqlite3 connection as the executor contract: one query in,
    a list of rows of strings out."""

    def run(sql: str) -> list[list[str]]:
        cursor = connection.execute(sql)
        return [["" if cell is None else str(cell) for cell in row]
                for row in cursor.fetchall()]

    return run


def _as_string(value: JsonNode, path: str, strict: bool) -> str | None:
    if isinstance(value, str):
        return value
    if strict:
        raise ShapeMismatch(path, f"expected a string, got {type(value).__name__}")
    return None


def _record_values(item: JsonNode, names: tuple[str, ...], path: str,
                   strict: bool) -> list[JsonNode] | None:
    """Pull record fields from either the keyed-object form or the
    key-less array form used by text-mode outputs."""
    if isinstance(item, dict):
        missing = [n for n in names if n not in item]
        if missing:
            if strict:
                raise ShapeMismatch(path, f"missing fields {missing}")
            return None
        return [item[n] for n in names]
    if isinstance(item, list):
        if len(item) != len(names):
            if strict:
                raise ShapeMismatch(path, f"expected {len(names)} fields, got {len(item)}")
            return None
        return list(item)
    if strict:
        raise ShapeMismatch(path, "expected an object or array record")
    return None


def _unwrap(node: JsonNode, key: str, path: str, strict: bool) -> list[JsonNode]:
    if isinstance(node, dict):
        inner = node.get(key)
        if inner is None:
            if strict:
                raise ShapeMismatch(path, f"missing {key!r} element")
            return []
        node = inner
        path = f"{path}/{key}" if path else key
    if not isinstance(node, list):
        if strict:
            raise ShapeMismatch(path, "expected an array of records")
        return []
    return node


def structures_from_output(node: JsonNode, task_kind: str, strict: bool = True):
    """Extract typed records from a parsed output node.

    Accepts the structured object form ({"entities": [{...}]}) and the
    text-mode nested-array form ([["song", "Posible"]]).  In strict mode
    malformed records raise ShapeMismatch with the offending path; in
    tolerant mode they are skipped, which suits recovered or free-form
    model outputs.
    """
    if task_kind == "ner":
        return _extract_entities(node, strict)
    if task_kind == "re":
        return _extract_triplets(node, strict)
    if task_kind == "ee":
        return _extract_events(node, strict)
    raise ValueError(f"task kind must be one of {TASK_KINDS}, got {task_kind!r}")


def _extract_entities(node: JsonNode, strict: bool) -> set[Entity]:
    records = _unwrap(node, "entities", "", strict)
    out: set[Entity] = set()
    for i, item in enumerate(records):
        path = f"entities/{i}"
        values = _record_values(item, ("entity category", "entity span"), path, strict)
        if values is None:
            continue
        category = _as_string(values[0], f"{path}/entity category", strict)
        span = _as_string(values[1], f"{path}/entity span", strict)
        if category is None or span is None:
            continue
        try:
            out.add(Entity(category, span))
        except ValueError as exc:
            if strict:
                raise ShapeMismatch(path, str(exc)) from exc
    return out


def _extract_triplets(node: JsonNode, strict: bool) -> set[RelationTriplet]:
    records = _unwrap(node, "relational triplets", "", strict)
    out: set[RelationTriplet] = set()
    with_categories = (
        "head entity category", "head entity span", "relation",
        "tail entity category", "tail entity span",
    )
    without_categories = ("head entity span", "relation", "tail entity span")
    for i, item in enumerate(records):
        path = f"relational triplets/{i}"
        if isinstance(item, dict):
            names = with_categories if "head entity category" in item else without_categories
        elif isinstance(item, list):
            names = with_categories if len(item) == 5 else without_categories
        else:
            if strict:
                raise ShapeMismatch(path, "expected an object or array record")
            continue
        values = _record_values(item, names, path, strict)
        if values is None:
            continue
        strings = [_as_string(v, f"{path}/{n}", strict) for v, n in zip(values, names)]
        if any(s is None for s in strings):
            continue
        try:
            if len(names) == 5:
                hcat, hspan, rel, tcat, tspan = strings
                out.add(RelationTriplet(hspan, rel, tspan, hcat, tcat))
            else:
                hspan, rel, tspan = strings
                out.add(RelationTriplet(hspan, rel, tspan))
        except ValueError as exc:
            if strict:
                raise ShapeMismatch(path, str(exc)) from exc
    return out


def _extract_events(node: JsonNode, strict: bool) -> set[EventRecord]:
    records = _unwrap(node, "events", "", strict)
    out: set[EventRecord] = set()
    for i, item in enumerate(records):
        path = f"events/{i}"
        if not strict and isinstance(item, dict) and "arguments" not in item:
            # a bare trigger prediction still counts toward trigger F1
            item = {**item, "arguments": []}
        values = _record_values(
            item, ("event category", "event trigger", "arguments"), path, strict
        )
        if values is None:
            continue
        category = _as_string(values[0], f"{path}/event category", strict)
        trigger = _as_string(values[1], f"{path}/event trigger", strict)
        if category is None or trigger is None:
            continue
        raw_args = values[2]
        if not isinstance(raw_args, list):
            if strict:
                raise ShapeMismatch(f"{path}/arguments", "expected an array")
            continue
        arguments = []
        for j, arg in enumerate(raw_args):
            arg_path = f"{path}/arguments/{j}"
            arg_values = _record_values(
                arg, ("argument category", "argument span"), arg_path, strict
            )
            if arg_values is None:
                continue
            acat = _as_string(arg_values[0], f"{arg_path}/argument category", strict)
            aspan = _as_string(arg_values[1], f"{arg_path}/argument span", strict)
            if acat is None or aspan is None:
                continue
            arguments.append((acat, aspan))
        try:
            out.add(EventRecord(category, trigger, tuple(arguments)))
        except ValueError as exc:
            if strict:
                raise ShapeMismatch(path, str(exc)) from exc
    return out
