from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from structune.core import ControlSchema, LabelSpace, canonical_serialize
from structune.builder import build_output_structure
from structune.parsing import (
    INVALID,
    KIND_MISMATCH,
    LABEL_NOT_IN_SPACE,
    MISSING_PROPERTY,
    RECOVERED,
    UNEXPECTED_PROPERTY,
    VALID,
    ElementNotString,
    check_label,
    extract_text_answer,
    invalid_rate,
    parse_model_output,
    recovered_rate,
    validate,
)

from generators import random_instance, random_node, random_spec


def test_parse_valid_document():
    outcome = parse_model_output('{"answer": "(A)"}')
    assert outcome.status == VALID
    assert outcome.node == {"answer": "(A)"}


def test_parse_empty_string_is_invalid():
    outcome = parse_model_output("")
    assert outcome.status == INVALID
    assert outcome.node is None


def test_parse_recovers_from_trailing_noise():
    outcome = parse_model_output('{"answer": "(A)"} I hope this helps')
    assert outcome.status == RECOVERED
    assert outcome.node == {"answer": "(A)"}
    assert outcome.note


def test_parse_recovers_from_leading_noise():
    outcome = parse_model_output('Sure! {"answer": "(B)"}')
    assert outcome.status == RECOVERED
    assert outcome.node == {"answer": "(B)"}


def test_parse_recovery_honors_braces_inside_strings():
    raw = 'x {"a": "close } brace", "b": "open { brace"} y'
    outcome = parse_model_output(raw)
    assert outcome.status == RECOVERED
    assert outcome.node == {"a": "close } brace", "b": "open { brace"}


def test_parse_recovery_skips_unparseable_regions():
    outcome = parse_model_output('{oops and then {"answer": "(A)"}')
    assert outcome.status == RECOVERED
    assert outcome.node == {"answer": "(A)"}


def test_parse_coerces_numbers_in_predictions():
    raw = ('{"language": "French", "probability scores": '
           '{"French": 0.98, "English": 0.01, "Spanish": 0.01}}')
    outcome = parse_model_output(raw)
    assert outcome.status == VALID
    assert outcome.node["probability scores"]["French"] == "0.98"


def test_parse_coerces_booleans_and_null():
    outcome = parse_model_output('{"a": true, "b": null, "c": 7}')
    assert outcome.node == {"a": "true", "b": "null", "c": "7"}


def test_whitespace_padding_is_still_valid_not_recovered():
    outcome = parse_model_output('  {"answer": "(A)"}\n')
    assert outcome.status == VALID


def test_recovery_never_fires_on_serialized_nodes():
    rng = random.Random(5)
    for _ in range(300):
        node = random_node(rng)
        outcome = parse_model_output(canonical_serialize(node))
        assert outcome.status == VALID
        assert outcome.node == node


MCQA_CONTROL = {"answer": ControlSchema("string")}

LANG_CONTROL = {
    "language": ControlSchema("string"),
    "probability scores": ControlSchema("object", properties={
        "French": ControlSchema("string"),
        "English": ControlSchema("string"),
        "Spanish": ControlSchema("string"),
    }),
}


def test_validate_flagship_output():
    assert validate({"answer": "(A)"}, MCQA_CONTROL).valid


def test_validate_empty_against_empty():
    assert validate({}, {}).valid


def test_validate_reports_missing_nested_property():
    node = {"language": "French",
            "probability scores": {"French": "0.98", "English": "0.01"}}
    report = validate(node, LANG_CONTROL)
    assert not report.valid
    assert report.violations == (("probability scores/Spanish", MISSING_PROPERTY),)


def test_validate_reports_unexpected_top_level_key():
    report = validate({"answer": "(A)", "extra": "x"}, MCQA_CONTROL)
    assert report.violations == (("extra", UNEXPECTED_PROPERTY),)


def test_validate_reports_kind_mismatch_without_recursing():
    report = validate({"answer": ["(A)"]}, MCQA_CONTROL)
    assert report.violations == (("answer", KIND_MISMATCH),)


def test_validate_checks_array_items():
    control = {"entities": ControlSchema("array", items=ControlSchema(
        "object", properties={"entity span": ControlSchema("string")}))}
    report = validate({"entities": [{"entity span": "x"}, "oops"]}, control)
    assert report.violations == (("entities/1", KIND_MISMATCH),)


def test_validate_non_object_top_level():
    report = validate(["(A)"], MCQA_CONTROL)
    assert report.violations == (("", KIND_MISMATCH),)


def test_builder_and_validator_agree_on_gold_outputs():
    rng = random.Random(17)
    for _ in range(50):
        spec = random_spec(rng)
        instance = random_instance(rng, spec, 0)
        report = validate(build_output_structure(instance), spec.control)
        assert report.valid, report.violations


SPACE = LabelSpace("candidate answers", ("(A)", "(B)", "(C)", "(D)"))


def test_check_label_accepts_member():
    assert check_label({"answer": "(A)"}, "answer", SPACE).valid


def test_check_label_accepts_first_label():
    assert check_label({"answer": SPACE.labels[0]}, "answer", SPACE).valid


def test_check_label_rejects_outsider():
    report = check_label({"answer": "(E)"}, "answer", SPACE)
    assert report.violations == (("answer", LABEL_NOT_IN_SPACE),)


def test_check_label_missing_element():
    report = check_label({}, "answer", SPACE)
    assert report.violations == (("answer", MISSING_PROPERTY),)


def test_check_label_non_string_raises():
    with pytest.raises(ElementNotString):
        check_label({"answer": ["(A)"]}, "answer", SPACE)


def test_extract_text_answer():
    assert extract_text_answer(" (A)\n") == "(A)"
    assert extract_text_answer("(A)") == "(A)"
    assert extract_text_answer("a  b\tc") == "a b c"
    assert extract_text_answer("") == ""


def test_rates():
    outcomes = [parse_model_output(raw) for raw in
                ['{"a": "1"}', "garbage {", '{"b": "2"} noise']]
    assert invalid_rate(outcomes) == pytest.approx(1 / 3)
    assert recovered_rate(outcomes) == pytest.approx(1 / 3)
    assert invalid_rate([]) == 0.0


@given(st.text(max_size=40))
def test_parse_never_raises(raw):
    outcome = parse_model_output(raw)
    assert outcome.status in (VALID, RECOVERED, INVALID)
    assert (outcome.node is not None) == (outcome.status != INVALID)
