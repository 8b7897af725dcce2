"""Missing-premise addition tasks and the template vocabulary used by the toy policy.

Each question asks for ``a + b`` with operands in 0..4.  Well-defined items show
both operands; under-specified items hide ``b`` and record it as the hidden
premise.  Policy outputs are sequences over a fixed 22-token vocabulary that
renders line by line into contract-shaped text, so the same parser and reward code
used for free text also scores the toy policy.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from jts.core import Answerability, Question

MAX_OPERAND = 4
N_OPERAND = MAX_OPERAND + 1
N_FEATURES = N_OPERAND * (N_OPERAND + 1)  # b in 0..4 or hidden


class Tok(enum.IntEnum):
    THINK_OPEN = 0
    AJ_OPEN = 1
    AUDIT = 2
    CHECK = 3
    CONC_ANS = 4
    CONC_UNANS = 5
    AJ_CLOSE = 6
    STEP = 7
    THINK_CLOSE = 8
    ANS_0 = 9
    ANS_1 = 10
    ANS_2 = 11
    ANS_3 = 12
    ANS_4 = 13
    ANS_5 = 14
    ANS_6 = 15
    ANS_7 = 16
    ANS_8 = 17
    ABSTAIN = 18
    EOS = 19
    HEDGE = 20
    BOS = 21


VOCAB_SIZE = len(Tok)
ANSWER_TOKENS = tuple(Tok(Tok.ANS_0 + k) for k in range(2 * MAX_OPERAND + 1))
ACTION_TOKENS = frozenset(ANSWER_TOKENS) | {Tok.ABSTAIN}

ABSTAIN_TEXT = "I cannot answer this question because the second operand is missing."

_RENDER: dict[Tok, str] = {
    Tok.THINK_OPEN: "<think>\n",
    Tok.AJ_OPEN: "<answerability_judge>\n",
    Tok.AUDIT: "Contextual Audit: the question asks for the sum of two operands.\n",
    Tok.CHECK: "Integrity Check: confirm that both operands are stated.\n",
    Tok.CONC_ANS: "Conclusion: ANSWERABLE\n",
    Tok.CONC_UNANS: "Conclusion: UNANSWERABLE\n",
    Tok.AJ_CLOSE: "</answerability_judge>\n",
    Tok.STEP: "Add the two operands together.\n",
    Tok.HEDGE: "Hmm, wait, let me re-read the question.\n",
    Tok.THINK_CLOSE: "</think>\n",
    Tok.ABSTAIN: ABSTAIN_TEXT + "\n",
    Tok.EOS: "",
    Tok.BOS: "",
}
for _k, _tok in enumerate(ANSWER_TOKENS):
    _RENDER[_tok] = f"The final answer is {_k}.\n"

_PARSE = {line: tok for tok, line in _RENDER.items() if line}

_PROMPT_RE = re.compile(r"^Compute (\d) \+ (\d|\?)$")


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    count: int
    under_specified_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if not 0.0 <= self.under_specified_fraction <= 1.0:
            raise ValueError("under_specified_fraction must lie in [0, 1]")


def generate(spec: SynthSpec) -> list[Question]:
    rng = np.random.default_rng(spec.seed)
    n_under = int(np.floor(spec.count * spec.under_specified_fraction + 0.5))
    hidden = np.zeros(spec.count, dtype=bool)
    hidden[:n_under] = True
    rng.shuffle(hidden)
    operands = rng.integers(0, N_OPERAND, size=(spec.count, 2))

    questions = []
    for i in range(spec.count):
        a, b = int(operands[i, 0]), int(operands[i, 1])
        qid = f"synth-{spec.seed}-{i:05d}"
        if hidden[i]:
            questions.append(
                Question(
                    id=qid,
                    subset="synthetic",
                    prompt=f"Compute {a} + ?",
                    answerability=Answerability.UNDER_SPECIFIED,
                    hidden_premise=str(b),
                )
            )
        else:
            questions.append(
                Question(
                    id=qid,
                    subset="synthetic",
                    prompt=f"Compute {a} + {b}",
                    answerability=Answerability.WELL_DEFINED,
                    reference_answer=str(a + b),
                )
            )
    return questions


def question_operands(question: Question) -> tuple[int, int | None]:
    m = _PROMPT_RE.match(question.prompt)
    if m is None:
        raise VocabularyError(f"question {question.id!r} is not a synthetic addition prompt")
    a = int(m.group(1))
    b = None if m.group(2) == "?" else int(m.group(2))
    return a, b


def question_feature(question: Question) -> int:
    """Row index of the policy table: visible operand a and visible b (or hidden)."""
    a, b = question_operands(question)
    return a * (N_OPERAND + 1) + (N_OPERAND if b is None else b)


def oracle_sum(question: Question) -> int:
    a, b = question_operands(question)
    if b is None:
        if question.hidden_premise is None:
            raise VocabularyError(f"question {question.id!r} hides b but records no premise")
        b = int(question.hidden_premise)
    return a + b


def render_trace(tokens: Sequence[int]) -> str:
    parts = []
    for t in tokens:
        tok = Tok(t)
        parts.append(_RENDER[tok])
        if tok is Tok.EOS:
            break
    return "".join(parts)


def parse_rendered(text: str) -> list[Tok]:
    """Inverse of ``render_trace`` up to the silent BOS/EOS tokens."""
    out = []
    for line in text.splitlines(keepends=True):
        tok = _PARSE.get(line)
        if tok is None:
            raise VocabularyError(f"line outside the template vocabulary: {line!r}")
        out.append(tok)
    return out


def token_name(t: int) -> str:
    return Tok(t).name
