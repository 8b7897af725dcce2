from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from jts.core import (
    Answerability,
    ConfigError,
    JsonlParseError,
    Judgment,
    ParseResult,
    Question,
    RewardBreakdown,
    RunConfig,
    SchemaError,
    Trace,
    Verdict,
    ViolationCode,
    load_questions,
    load_traces,
    read_jsonl,
    store_questions,
    store_traces,
)

texts = st.text(max_size=40)


@st.composite
def questions(draw):
    label = draw(st.sampled_from(list(Answerability)))
    ref = draw(texts) if label is Answerability.WELL_DEFINED else draw(st.none() | texts)
    return Question(
        id=draw(st.text(min_size=1, max_size=10)),
        subset=draw(texts),
        prompt=draw(texts),
        answerability=label,
        reference_answer=ref,
        hidden_premise=draw(st.none() | texts),
    )


@st.composite
def traces(draw):
    violations = draw(st.lists(st.sampled_from(list(ViolationCode)), max_size=3, unique=True))
    valid = not violations
    parse = draw(st.none() | st.just(ParseResult(
        valid=valid,
        judgment=draw(st.sampled_from(list(Judgment))) if valid else draw(st.none() | st.sampled_from(list(Judgment))),
        final_answer=draw(texts) if valid else draw(st.none() | texts),
        violations=tuple(violations),
    )))
    verdict = draw(st.none() | st.sampled_from(list(Verdict)))
    return Trace(
        question_id=draw(st.text(min_size=1, max_size=10)),
        text=draw(texts),
        token_count=draw(st.integers(0, 10_000)),
        parse=parse,
        verdict=verdict,
        detected=draw(st.none() | st.booleans()),
        abstained=(verdict is Verdict.ABSTAIN) if verdict is not None else draw(st.none() | st.booleans()),
    )


@given(st.lists(questions(), max_size=5))
def test_question_roundtrip(tmp_path_factory, qs):
    path = tmp_path_factory.mktemp("q") / "q.jsonl"
    store_questions(qs, path)
    assert load_questions(path) == qs


@given(st.lists(traces(), max_size=5))
def test_trace_roundtrip(tmp_path_factory, ts):
    path = tmp_path_factory.mktemp("t") / "t.jsonl"
    store_traces(ts, path)
    assert load_traces(path) == ts


def test_well_defined_requires_reference():
    with pytest.raises(ValueError):
        Question("q", "s", "p", Answerability.WELL_DEFINED)


def test_answerability_aliases():
    assert Answerability.parse("insufficient") is Answerability.UNDER_SPECIFIED
    assert Answerability.parse("unanswerable") is Answerability.UNDER_SPECIFIED
    assert Answerability.parse("well_defined") is Answerability.WELL_DEFINED


def test_parse_result_invariants():
    with pytest.raises(ValueError):
        ParseResult(valid=True, violations=(ViolationCode.MISSING_THINK,))
    with pytest.raises(ValueError):
        ParseResult(valid=True)


def test_reward_breakdown_total():
    assert RewardBreakdown(1, 1, 1, -0.05).total == pytest.approx(2.95)
    with pytest.raises(ValueError):
        RewardBreakdown(1, 1, 1, 0.0, total=2.0)


def test_jsonl_error_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"a": 1}\n\n{not json}\n', encoding="utf-8")
    with pytest.raises(JsonlParseError) as info:
        read_jsonl(path)
    assert info.value.line_no == 3


def test_schema_error_on_missing_field(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"question_id": "x", "text": "y"}) + "\n", encoding="utf-8")
    with pytest.raises((SchemaError, JsonlParseError)):
        load_traces(path)


@pytest.mark.parametrize(
    "field,value",
    [("clip_low", 0.0), ("clip_high", 0.1), ("group_size", 1), ("learning_rate", 0.0), ("eval_interval", 0)],
)
def test_config_validation_names_field(field, value):
    with pytest.raises(ConfigError) as info:
        RunConfig(**{field: value})
    assert info.value.field_name == field


def test_config_defaults():
    cfg = RunConfig()
    assert (cfg.group_size, cfg.clip_low, cfg.clip_high, cfg.prompts_per_step) == (8, 0.2, 0.28, 8)
    assert set(cfg.to_dict()) == set(RunConfig.field_names())
