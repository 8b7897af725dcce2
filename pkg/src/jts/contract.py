"""Strict validator for the judge-then-solve output contract.

A conforming response looks like::

    <think>
    <answerability_judge>
    ...audit lines...
    Conclusion: ANSWERABLE | UNANSWERABLE
    </answerability_judge>
    [reasoning, only when ANSWERABLE]
    </think>
    final answer

Tags are matched as exact, case-sensitive literals.  Structural problems are
returned as ``ViolationCode`` values; nothing in this module raises on bad input.
"""

from __future__ import annotations

import re

from jts.core import (
    Judgment,
    ParseResult,
    Tokenizer,
    ViolationCode,
    whitespace_tokenize,
)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
JUDGE_OPEN = "<answerability_judge>"
JUDGE_CLOSE = "</answerability_judge>"

CONCLUSION_LINES = {
    "Conclusion: ANSWERABLE": Judgment.ANSWERABLE,
    "Conclusion: UNANSWERABLE": Judgment.UNANSWERABLE,
}

_PARAGRAPH_BREAK = re.compile(r"\n[ \t\r\f\v]*\n")


def _judge_body(text: str) -> str | None:
    """Content of the first judge block, or None when no close tag exists."""
    close = text.find(JUDGE_CLOSE)
    if close < 0:
        return None
    head = text[:close]
    opened = head.rfind(JUDGE_OPEN)
    return head[opened + len(JUDGE_OPEN):] if opened >= 0 else head


def _last_line(body: str) -> str:
    lines = body.rstrip().splitlines()
    return lines[-1].strip() if lines else ""


def extract_conclusion(text: str) -> Judgment | None:
    body = _judge_body(text)
    if body is None:
        return None
    return CONCLUSION_LINES.get(_last_line(body))


def extract_final_answer(text: str) -> str | None:
    """Text after the unique ``</think>``, left-trimmed; None unless exactly one tag."""
    if text.count(THINK_CLOSE) != 1:
        return None
    return text.split(THINK_CLOSE, 1)[1].lstrip()


def tail_two_paragraphs(answer_text: str) -> str:
    paragraphs = [p for p in _PARAGRAPH_BREAK.split(answer_text.rstrip()) if p.strip()]
    if len(paragraphs) < 2:
        return answer_text.rstrip()
    return "\n\n".join(paragraphs[-2:])


def _judge_opens_think(text: str, judge_open: int) -> bool:
    prefix = text[:judge_open]
    think = prefix.rfind(THINK_OPEN)
    if think >= 0:
        prefix = prefix[think + len(THINK_OPEN):]
    return not prefix.strip()


def validate_contract(
    text: str,
    min_final_answer_tokens: int = 5,
    *,
    min_reasoning_tokens: int = 1,
    tokenizer: Tokenizer = whitespace_tokenize,
) -> ParseResult:
    """Audit ``text`` against every contract rule and collect all violations."""
    violations: list[ViolationCode] = []

    n_think_close = text.count(THINK_CLOSE)
    if n_think_close == 0:
        violations.append(ViolationCode.MISSING_THINK)
    elif n_think_close > 1:
        violations.append(ViolationCode.MULTIPLE_THINK_CLOSE)

    judge_open = text.find(JUDGE_OPEN)
    judge_close = text.find(JUDGE_CLOSE)
    n_judge_close = text.count(JUDGE_CLOSE)
    has_block = judge_open >= 0 and judge_close > judge_open
    if not has_block:
        violations.append(ViolationCode.MISSING_JUDGE_BLOCK)
    elif n_judge_close > 1:
        violations.append(ViolationCode.MULTIPLE_JUDGE_CLOSE)

    think_close = text.find(THINK_CLOSE)
    if has_block:
        before_think_close = think_close < 0 or judge_close < think_close
        if not (_judge_opens_think(text, judge_open) and before_think_close):
            violations.append(ViolationCode.JUDGE_OUTSIDE_THINK)

    judgment: Judgment | None = None
    if has_block:
        body = text[judge_open + len(JUDGE_OPEN):judge_close]
        judgment = CONCLUSION_LINES.get(_last_line(body))
        if judgment is None:
            if any(line.strip() in CONCLUSION_LINES for line in body.splitlines()):
                violations.append(ViolationCode.CONCLUSION_NOT_LAST)
            else:
                violations.append(ViolationCode.BAD_CONCLUSION_LINE)

    segment: str | None = None
    if has_block and n_think_close == 1 and n_judge_close == 1 and judge_close < think_close:
        segment = text[judge_close + len(JUDGE_CLOSE):think_close]
        if judgment is Judgment.UNANSWERABLE and segment.strip():
            violations.append(ViolationCode.UNANSWERABLE_NOT_TERMINATED)
        elif judgment is Judgment.ANSWERABLE and len(tokenizer(segment)) < max(1, min_reasoning_tokens):
            violations.append(ViolationCode.ANSWERABLE_NO_REASONING)

    final_answer = extract_final_answer(text)
    if final_answer is not None and len(tokenizer(final_answer)) < min_final_answer_tokens:
        violations.append(ViolationCode.FINAL_ANSWER_TOO_SHORT)

    return ParseResult(
        valid=not violations,
        judgment=judgment,
        final_answer=final_answer,
        reasoning_segment=segment,
        violations=tuple(violations),
    )
