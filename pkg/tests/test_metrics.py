from __future__ import annotations

import random
import re
import sqlite3

import pytest
from hypothesis import given, strategies as st

from structune.metrics import (
    PRF,
    Entity,
    EventRecord,
    ExecutorFailure,
    RelationTriplet,
    ShapeMismatch,
    entity_f1,
    event_scores,
    exact_match,
    execution_accuracy,
    make_sqlite_executor,
    relation_f1,
    structures_from_output,
)


def test_exact_match_cases():
    assert exact_match("(C)", "(C)")
    assert exact_match("", "")
    assert exact_match(" 24 ", "24")
    assert not exact_match("(C)", "(c)")


APPENDIX_ENTITIES = [
    Entity("song", "Posible"),
    Entity("event", "2005 Southeast Asian Games"),
]


def test_entity_f1_perfect():
    prf = entity_f1(APPENDIX_ENTITIES, APPENDIX_ENTITIES)
    assert prf.f1 == 1.0 and prf.tp == 2


def test_entity_f1_empty_prediction():
    prf = entity_f1([], APPENDIX_ENTITIES)
    assert prf.f1 == 0.0
    assert prf.precision == 1.0  # vacuous: nothing predicted
    assert prf.recall == 0.0


def test_entity_f1_partial():
    prf = entity_f1([Entity("song", "Posible")], APPENDIX_ENTITIES)
    assert prf.precision == 1.0
    assert prf.recall == 0.5
    assert prf.f1 == pytest.approx(2 / 3)


def test_entity_f1_normalizes_whitespace_and_dedupes():
    pred = [Entity("song", "Posible "), Entity("song", " Posible")]
    prf = entity_f1(pred, [Entity("song", "Posible")])
    assert prf.pred_count == 1
    assert prf.f1 == 1.0


APPENDIX_TRIPLET = RelationTriplet(
    "Rutherford B. Hayes", "Live in", "Delaware, Ohio", "People", "Location"
)


def test_relation_f1_perfect():
    assert relation_f1([APPENDIX_TRIPLET], [APPENDIX_TRIPLET]).f1 == 1.0


def test_relation_f1_ignores_categories():
    flipped = RelationTriplet(
        "Rutherford B. Hayes", "Live in", "Delaware, Ohio", "Location", "People"
    )
    assert relation_f1([flipped], [APPENDIX_TRIPLET]).f1 == 1.0
    bare = RelationTriplet("Rutherford B. Hayes", "Live in", "Delaware, Ohio")
    assert relation_f1([bare], [APPENDIX_TRIPLET]).f1 == 1.0


def test_relation_f1_half_match():
    gold = [
        RelationTriplet("a", "r1", "b"),
        RelationTriplet("c", "r2", "d"),
    ]
    pred = [
        RelationTriplet("a", "r1", "b"),
        RelationTriplet("c", "wrong", "d"),
    ]
    assert relation_f1(pred, gold).f1 == 0.5


APPENDIX_EVENT = EventRecord(
    "attack", "seized", (("attacker", "troops"), ("place", "Umm Qasr"))
)


def test_event_scores_perfect():
    trigger, argument = event_scores([APPENDIX_EVENT], [APPENDIX_EVENT])
    assert trigger.f1 == 1.0 and argument.f1 == 1.0


def test_event_scores_trigger_only():
    pred = [EventRecord("attack", "seized")]
    trigger, argument = event_scores(pred, [APPENDIX_EVENT])
    assert trigger.f1 == 1.0
    assert argument.f1 == 0.0


def test_event_scores_partial_arguments():
    pred = [EventRecord("attack", "seized", (("attacker", "troops"),))]
    _, argument = event_scores(pred, [APPENDIX_EVENT])
    assert argument.precision == 1.0
    assert argument.recall == 0.5
    assert argument.f1 == pytest.approx(2 / 3)


def test_event_category_conditioning_toggle():
    pred = [EventRecord("injure", "seized", (("attacker", "troops"),))]
    gold = [EventRecord("attack", "seized", (("attacker", "troops"),))]
    _, conditioned = event_scores(pred, gold)
    assert conditioned.f1 == 0.0
    _, unconditioned = event_scores(pred, gold, condition_on_event_category=False)
    assert unconditioned.f1 == 1.0


def test_prf_identities_brute():
    for tp, extra_pred, extra_gold in [(0, 0, 0), (3, 1, 2), (0, 4, 0), (2, 0, 5)]:
        prf = PRF.from_counts(tp, tp + extra_pred, tp + extra_gold)
        assert prf.precision == (1.0 if prf.pred_count == 0 else tp / prf.pred_count)
        assert prf.recall == (1.0 if prf.gold_count == 0 else tp / prf.gold_count)
        expected_f1 = (0.0 if prf.precision + prf.recall == 0
                       else 2 * prf.precision * prf.recall / (prf.precision + prf.recall))
        assert prf.f1 == expected_f1


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_prf_identities_property(tp, extra_pred, extra_gold):
    prf = PRF.from_counts(tp, tp + extra_pred, tp + extra_gold)
    assert 0.0 <= prf.f1 <= 1.0
    assert prf.precision == (1.0 if prf.pred_count == 0 else prf.tp / prf.pred_count)
    assert prf.recall == (1.0 if prf.gold_count == 0 else prf.tp / prf.gold_count)
    if prf.precision + prf.recall:
        assert prf.f1 == 2 * prf.precision * prf.recall / (prf.precision + prf.recall)
    else:
        assert prf.f1 == 0.0


def test_symmetry_swapping_arguments_swaps_precision_and_recall():
    a = [Entity("x", "1"), Entity("y", "2")]
    b = [Entity("x", "1"), Entity("z", "3"), Entity("w", "4")]
    ab = entity_f1(a, b)
    ba = entity_f1(b, a)
    assert ab.precision == ba.recall
    assert ab.recall == ba.precision
    assert ab.f1 == ba.f1
    assert entity_f1(a, a).f1 == 1.0


def test_micro_aggregation_matches_corpus_recount():
    rng = random.Random(11)
    pool = [Entity(c, s) for c in "abc" for s in ("x", "y", "z")]
    pairs = []
    for _ in range(40):
        pairs.append((
            rng.sample(pool, rng.randint(0, 5)),
            rng.sample(pool, rng.randint(0, 5)),
        ))
    total = PRF.from_counts(0, 0, 0)
    for pred, gold in pairs:
        total = total + entity_f1(pred, gold)
    # brute-force recount over the whole corpus
    tp = pred_n = gold_n = 0
    for pred, gold in pairs:
        pred_set = {(e.category, e.span) for e in pred}
        gold_set = {(e.category, e.span) for e in gold}
        tp += len(pred_set & gold_set)
        pred_n += len(pred_set)
        gold_n += len(gold_set)
    assert (total.tp, total.pred_count, total.gold_count) == (tp, pred_n, gold_n)
    assert total == PRF.from_counts(tp, pred_n, gold_n)


def test_execution_accuracy_identical_query():
    gold = "select title from cartoon order by title"
    outcome = execution_accuracy(gold, gold)
    assert outcome.correct and outcome.fallback


def test_execution_accuracy_fallback_normalizes():
    assert execution_accuracy("SELECT  1", "select 1").correct
    assert not execution_accuracy("select 2", "select 1").correct


@pytest.fixture
def cartoon_db():
    conn = sqlite3.connect(":memory:")
    conn.execute("create table cartoon (id integer, title text)")
    conn.executemany("insert into cartoon values (?, ?)",
                     [(1, "Bluey"), (2, "Arthur"), (3, "Caillou")])
    return conn


def test_execution_accuracy_with_real_executor(cartoon_db):
    executor = make_sqlite_executor(cartoon_db)
    outcome = execution_accuracy(
        "select title from cartoon where id <= 2 order by title desc",
        "select title from cartoon where id < 3 order by title",
        executor,
    )
    # multiset comparison: same rows in a different order still match
    assert outcome.correct and not outcome.fallback
    assert not execution_accuracy(
        "select title from cartoon", "select title from cartoon where id = 1",
        executor,
    ).correct


def test_execution_accuracy_prediction_error_scores_wrong(cartoon_db):
    executor = make_sqlite_executor(cartoon_db)
    outcome = execution_accuracy("select nope from nowhere",
                                 "select title from cartoon", executor)
    assert not outcome.correct


def test_execution_accuracy_gold_error_raises(cartoon_db):
    executor = make_sqlite_executor(cartoon_db)
    with pytest.raises(ExecutorFailure):
        execution_accuracy("select title from cartoon", "select broken from", executor)


NER_NODE = {"entities": [
    {"entity category": "song", "entity span": "Posible"},
    {"entity category": "event", "entity span": "2005 Southeast Asian Games"},
]}


def test_structures_from_ner_object_form():
    entities = structures_from_output(NER_NODE, "ner")
    assert entities == set(APPENDIX_ENTITIES)


def test_structures_from_empty_list():
    assert structures_from_output({"entities": []}, "ner") == set()


def test_structures_from_ner_array_form():
    node = [["song", "Posible"], ["event", "2005 Southeast Asian Games"]]
    assert structures_from_output(node, "ner") == set(APPENDIX_ENTITIES)


def test_structures_from_re_both_forms():
    object_form = {"relational triplets": [{
        "head entity category": "People",
        "head entity span": "Rutherford B. Hayes",
        "relation": "Live in",
        "tail entity category": "Location",
        "tail entity span": "Delaware, Ohio",
    }]}
    array_form = [["People", "Rutherford B. Hayes", "Live in", "Location", "Delaware, Ohio"]]
    bare_form = [["Nobel Prize", "winner", "Wadysaw Reymont"]]
    assert structures_from_output(object_form, "re") == {APPENDIX_TRIPLET}
    assert structures_from_output(array_form, "re") == {APPENDIX_TRIPLET}
    assert structures_from_output(bare_form, "re") == {
        RelationTriplet("Nobel Prize", "winner", "Wadysaw Reymont")
    }


def test_structures_from_ee_both_forms():
    object_form = {"events": [{
        "event category": "attack",
        "event trigger": "seized",
        "arguments": [
            {"argument category": "attacker", "argument span": "troops"},
            {"argument category": "place", "argument span": "Umm Qasr"},
        ],
    }]}
    array_form = [["attack", "seized", [["attacker", "troops"], ["place", "Umm Qasr"]]]]
    assert structures_from_output(object_form, "ee") == {APPENDIX_EVENT}
    assert structures_from_output(array_form, "ee") == {APPENDIX_EVENT}


def test_structures_strict_raises_with_path():
    with pytest.raises(ShapeMismatch) as err:
        structures_from_output({"entities": [{"entity category": "song"}]}, "ner")
    assert err.value.path == "entities/0"
    with pytest.raises(ShapeMismatch):
        structures_from_output({"wrong key": []}, "ner")
    with pytest.raises(ValueError):
        structures_from_output({}, "pos-tagging")


def test_structures_tolerant_skips_junk():
    node = {"entities": [
        {"entity category": "song", "entity span": "Posible"},
        {"entity category": "song"},
        ["one-field"],
        "garbage",
        {"entity category": "", "entity span": "x"},
    ]}
    entities = structures_from_output(node, "ner", strict=False)
    assert entities == {Entity("song", "Posible")}
    assert structures_from_output("garbage", "ner", strict=False) == set()


def test_tolerant_event_without_arguments_keeps_trigger():
    node = {"events": [{"event category": "attack", "event trigger": "seized"}]}
    events = structures_from_output(node, "ee", strict=False)
    assert events == {EventRecord("attack", "seized")}


# --- independent brute-force oracle ------------------------------------

def _oracle_norm(text):
    return re.sub(r"[ \t\n]+", " ", text).strip()


def _oracle_prf(pred_keys, gold_keys):
    unique_pred = []
    for key in pred_keys:
        if key not in unique_pred:
            unique_pred.append(key)
    unique_gold = []
    for key in gold_keys:
        if key not in unique_gold:
            unique_gold.append(key)
    tp = 0
    for key in unique_pred:
        for other in unique_gold:
            if key == other:
                tp += 1
                break
    precision = tp / len(unique_pred) if unique_pred else 1.0
    recall = tp / len(unique_gold) if unique_gold else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


_CATS = ["song", "band  x", "award", "a b"]
_SPANS = ["Posible", "Umm  Qasr", "x", "y\tz", "Nobel Prize"]


def _random_entities(rng, limit=8):
    return [Entity(rng.choice(_CATS), rng.choice(_SPANS))
            for _ in range(rng.randint(0, limit))]


def test_entity_f1_matches_brute_force_oracle():
    rng = random.Random(2024)
    for _ in range(1000):
        pred = _random_entities(rng)
        gold = _random_entities(rng)
        prf = entity_f1(pred, gold)
        oracle = _oracle_prf(
            [(_oracle_norm(e.category), _oracle_norm(e.span)) for e in pred],
            [(_oracle_norm(e.category), _oracle_norm(e.span)) for e in gold],
        )
        assert abs(prf.precision - oracle[0]) <= 1e-12
        assert abs(prf.recall - oracle[1]) <= 1e-12
        assert abs(prf.f1 - oracle[2]) <= 1e-12
