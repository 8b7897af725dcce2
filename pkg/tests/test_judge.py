from __future__ import annotations

import json

import pytest

from conftest import GOLDEN_DIR, SLOT_SENTINELS
from jts.core import Answerability, Question, Verdict
from jts.judge import (
    CallLog,
    ChatCompletionsTransport,
    JudgeClient,
    JudgeExhaustedError,
    JudgeReplyError,
    TrajectoryQualityVerdict,
    extract_reply_text,
    oracle_judge_tokens,
    parse_correctness,
    parse_detection,
    parse_train_code,
    parse_trajectory_quality,
    parse_yes_no,
)
from jts.synth import Tok
from jts.templates import REQUIRED_SLOTS, RenderError, TemplateKind, build_messages, render_prompt


class ScriptedTransport:
    """Replays a fixed list of replies; an Exception entry is raised instead."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def __call__(self, messages, max_tokens):
        self.calls.append((messages, max_tokens))
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


WELL = Question("w1", "mip", "What is 2 + 3?", Answerability.WELL_DEFINED, reference_answer="5")
UNDER = Question("u1", "mip", "What is 2 + x?", Answerability.UNDER_SPECIFIED)


@pytest.mark.parametrize("kind", list(TemplateKind), ids=lambda k: k.value)
def test_template_matches_golden(kind):
    golden = (GOLDEN_DIR / f"{kind.value}.txt").read_text(encoding="utf-8")
    slots = {k: SLOT_SENTINELS[k] for k in REQUIRED_SLOTS[kind]}
    assert render_prompt(kind, slots) == golden


def test_render_leaves_json_braces_and_reports_missing_slot():
    out = render_prompt(TemplateKind.EVAL_DETECTION, {"question": "{reason}", "model_answer": "a"})
    assert '"detected": "Yes/No"' in out and "{reason}" in out
    with pytest.raises(RenderError, match="model_answer"):
        render_prompt(TemplateKind.EVAL_CORRECTNESS, {"question": "q", "ref_answer": "r"})


def test_message_layout():
    msgs = build_messages(TemplateKind.TRAIN_WELL_DEFINED, {"question": "Q", "ref_answer": "R", "model_answer": "M"})
    assert [m["role"] for m in msgs] == ["system", "user"]
    assert msgs[1]["content"] == "Question: Q\n\nReference Answer: R\n\nModel Answer: M"
    det = build_messages(TemplateKind.EVAL_DETECTION, {"question": "Q", "model_answer": "M"})
    assert det[0] == {"role": "system", "content": "You are an AI analyst. Always respond in JSON."}


def test_retry_then_succeed():
    transport = ScriptedTransport([TimeoutError("slow"), "maybe", "1"])
    log = CallLog()
    client = JudgeClient(transport, retry_limit=3, call_log=log)
    assert client.classify_train(WELL, "The answer is 5.") is Verdict.CORRECT
    assert len(transport.calls) == 3
    assert [e["attempt"] for e in log.entries] == [0, 1, 2]
    assert "error" in log.entries[0] and log.entries[1]["reply"] == "maybe"
    assert len({e["prompt_sha256"] for e in log.entries}) == 1


def test_exhausted_after_three():
    transport = ScriptedTransport(["7", ConnectionError("down"), "yes", "1"])
    client = JudgeClient(transport, retry_limit=3)
    with pytest.raises(JudgeExhaustedError) as info:
        client.classify_train(WELL, "x")
    assert len(transport.calls) == 3
    assert info.value.raw_outputs[0] == "7" and info.value.raw_outputs[2] == "yes"
    assert info.value.kind is TemplateKind.TRAIN_WELL_DEFINED


def test_under_specified_code_two_is_invalid():
    client = JudgeClient(ScriptedTransport(["2", "2", "0"]))
    assert client.classify_train(UNDER, "I cannot answer.") is Verdict.ABSTAIN


def test_call_log_file(tmp_path):
    path = tmp_path / "calls.jsonl"
    client = JudgeClient(ScriptedTransport(["Yes"]), call_log=CallLog(path))
    assert client.classify_eval_abstention("q", "r", "insufficient", "I don't know") is True
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["kind"] == "eval_abstention" and rows[0]["reply"] == "Yes"


def test_map_preserves_order():
    client = JudgeClient(lambda messages, max_tokens: "correct", max_in_flight=3)
    assert client.map(lambda i: i * i, range(10)) == [i * i for i in range(10)]


@pytest.mark.parametrize(
    "reply,kind,expected",
    [
        ("1", TemplateKind.TRAIN_WELL_DEFINED, Verdict.CORRECT),
        (" 2.\n", TemplateKind.TRAIN_WELL_DEFINED, Verdict.INCORRECT),
        ("`0`", TemplateKind.TRAIN_UNDER_SPECIFIED, Verdict.ABSTAIN),
    ],
)
def test_parse_train_code(reply, kind, expected):
    assert parse_train_code(reply, kind) is expected


@pytest.mark.parametrize("reply", ["", "3", "one", "1 2", "-1"])
def test_parse_train_code_rejects(reply):
    with pytest.raises(JudgeReplyError):
        parse_train_code(reply, TemplateKind.TRAIN_WELL_DEFINED)


def test_parse_words():
    assert parse_yes_no("Yes") is True and parse_yes_no("no.") is False
    assert parse_correctness("Correct") is True and parse_correctness("incorrect") is False
    for bad in ("yes no", "Maybe", ""):
        with pytest.raises(JudgeReplyError):
            parse_yes_no(bad)


def test_parse_detection():
    assert parse_detection('{"detected": "Yes", "reason": "x"}') is True
    assert parse_detection('```json\n{"detected": "No", "reason": "x"}\n```') is False
    for bad in ("not json", "[1]", '{"reason": "x"}', '{"detected": "perhaps"}'):
        with pytest.raises(JudgeReplyError):
            parse_detection(bad)


def test_parse_trajectory_quality():
    v = parse_trajectory_quality('{"hesitation_count": 2, "completeness": 5, "executability": 4}')
    assert v == TrajectoryQualityVerdict(2, 5, 4)
    for bad in (
        '{"hesitation_count": -1, "completeness": 5, "executability": 4}',
        '{"hesitation_count": 1, "completeness": 6, "executability": 4}',
        '{"hesitation_count": 1.5, "completeness": 3, "executability": 4}',
        '{"hesitation_count": true, "completeness": 3, "executability": 4}',
        '{"completeness": 3, "executability": 4}',
    ):
        with pytest.raises(JudgeReplyError):
            parse_trajectory_quality(bad)


def test_chat_transport_request_shape():
    t = ChatCompletionsTransport("http://localhost:9/v1/chat/completions", api_key="k")
    body = t.request_body([{"role": "user", "content": "hi"}], 10)
    assert body == {"model": "gpt-4o-2024-11-20", "messages": [{"role": "user", "content": "hi"}],
                    "temperature": 0.0, "max_tokens": 10}
    assert extract_reply_text({"choices": [{"message": {"content": "ok"}}]}) == "ok"
    with pytest.raises(JudgeReplyError):
        extract_reply_text({"choices": []})


def test_oracle_judge_tokens():
    well = Question("s", "synthetic", "Compute 2 + 3", Answerability.WELL_DEFINED, reference_answer="5")
    under = Question("t", "synthetic", "Compute 2 + ?", Answerability.UNDER_SPECIFIED)
    assert oracle_judge_tokens(well, [Tok.ANS_5, Tok.EOS]).verdict is Verdict.CORRECT
    assert oracle_judge_tokens(well, [Tok.ANS_4]).verdict is Verdict.INCORRECT
    assert oracle_judge_tokens(well, [Tok.STEP]).verdict is Verdict.INCORRECT
    # the last action decides
    assert oracle_judge_tokens(well, [Tok.ABSTAIN, Tok.ANS_5]).verdict is Verdict.CORRECT
    j = oracle_judge_tokens(under, [Tok.CONC_UNANS, Tok.ANS_1])
    assert (j.verdict, j.detected, j.abstained) == (Verdict.CORRECT, True, False)
    j = oracle_judge_tokens(under, [Tok.ABSTAIN, Tok.EOS])
    assert (j.verdict, j.detected, j.abstained) == (Verdict.ABSTAIN, True, True)
