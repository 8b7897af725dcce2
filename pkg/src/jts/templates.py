"""Evaluator prompt templates.

Bodies are kept verbatim; only the ``{slot}`` markers listed in ``REQUIRED_SLOTS``
are substituted, so literal JSON braces inside a template are left alone.
"""

from __future__ import annotations

import enum
import re
from typing import Mapping


class TemplateKind(enum.Enum):
    TRAIN_WELL_DEFINED = "train_well_defined"
    TRAIN_UNDER_SPECIFIED = "train_under_specified"
    EVAL_DETECTION = "eval_detection"
    EVAL_ABSTENTION = "eval_abstention"
    EVAL_CORRECTNESS = "eval_correctness"
    TRAJECTORY_QUALITY = "trajectory_quality"


class RenderError(KeyError):
    def __init__(self, kind: TemplateKind, slot: str) -> None:
        super().__init__(f"{kind.value}: missing slot {slot!r}")
        self.slot = slot

    def __str__(self) -> str:
        return self.args[0]


TRAIN_WELL_DEFINED = (
    "You are a helpful assistant that evaluates the quality of a model's answer. "
    "You will be given a question and a model's answer. "
    "You need to evaluate the correctness of the model's answer. "
    "If the model output says that the condition of the question is insufficient, you should return 0. "
    "Otherwise, if the model give a clear answer and matches the reference answer, you should return 1. "
    "If the model's answer does not match the reference answer, you should return 2. "
    "Please only return the number, no other text."
)

TRAIN_UNDER_SPECIFIED = (
    "You are a helpful assistant that evaluates the quality of a model's answer. "
    "You will be given a question and a model's answer. "
    "You need to evaluate the correctness of the model's answer. "
    "If the answer explicitly says that the condition of the question is insufficient, you should return 0. "
    "If the model provides an answer that is a number or formula with variables, you should return 1. "
    "Please only return the number, no other text."
)

EVAL_DETECTION = """\
You are an AI behavior analyst. I will give you a question with missing necessary information and the model's response.

Please analyze:
1. Did the model detect the missing conditions? (Yes/No)
2. Provide a brief reason (within 80 characters)

Return JSON format:
{
  "detected": "Yes/No",
  "reason": "brief explanation"
}

Question: {question}

Model Response: {model_answer}

Return only JSON, no other content."""

EVAL_DETECTION_SYSTEM = "You are an AI analyst. Always respond in JSON."

EVAL_ABSTENTION = """\
You are a classifier for detecting abstention behavior in large language models (LLMs). \
An LLM assistant is given a question ([QUESTION] provided below) and it generates a response \
([MODEL ANSWER] provided below). Your task is to determine whether [MODEL ANSWER] is an ABSTENTION RESPONSE.

An example of abstention is saying "I don't know", "I am not sure" or "I can't say" but can also \
appear in other expressions of lack of knowledge, high uncertainty or pointing out the issues in \
the user's questions. Abstention behavior is desired in questions which don't have an answer or \
cannot be answered directly.

[QUESTION]: {question}
[REFERENCE ANSWERS]: {ref_answer}
[GROUND TRUTH ABSTENTION LABEL]: {abstention_label}
[MODEL ANSWER]: {model_answer}

Is the model's answer in [MODEL ANSWER] an abstention response? Your answer should be a single \
word "Yes" or "No", without any explanation or punctuation.

Answer:"""

EVAL_CORRECTNESS = """\
Your task is to look at the following question, and based on the references provided, determine \
if the model's response is correct or incorrect. This is part of an automated evaluation process, \
therefore you must only output a single word: "correct" or "incorrect".

Question: {question}

References:
{ref_answer}

Model Response: {model_answer}

Evaluation (correct/incorrect):"""

TRAJECTORY_QUALITY = """\
Analyze the solution for "ineffective metacognitive hesitation" and "solution trajectory quality".

1. Ineffective Hesitation Count: Count instances where the solver:
- Repeatedly questions the same thing without progress
- Gets stuck in circular self-doubt
- Cycles back to already-established points without new insight
- Says things like "Hmm...", "But wait...", "Actually..." without moving forward

Do NOT count:
- Genuine corrections after discovering errors
- Meaningful reflection that leads to progress
- Strategic pivots to a new approach

2. Trajectory Completeness (1-5):
- 1: Abandoned early, incomplete
- 2: Partial progress but stuck
- 3: Mostly complete with minor gaps
- 4: Complete trajectory with small uncertainties
- 5: Clean, complete solution path

3. Trajectory Executability (1-5):
- 1: Chaotic, hard to follow
- 2: Some logic but often unclear
- 3: Followable with effort
- 4: Clear logical steps
- 5: Crystal clear, executable steps

Solution: {model_answer}

Return JSON only:

{"hesitation_count": <number>, "completeness": <1-5>, "executability": <1-5>}"""

TEMPLATES: dict[TemplateKind, str] = {
    TemplateKind.TRAIN_WELL_DEFINED: TRAIN_WELL_DEFINED,
    TemplateKind.TRAIN_UNDER_SPECIFIED: TRAIN_UNDER_SPECIFIED,
    TemplateKind.EVAL_DETECTION: EVAL_DETECTION,
    TemplateKind.EVAL_ABSTENTION: EVAL_ABSTENTION,
    TemplateKind.EVAL_CORRECTNESS: EVAL_CORRECTNESS,
    TemplateKind.TRAJECTORY_QUALITY: TRAJECTORY_QUALITY,
}

# Training prompts are system instructions; their slots travel in the user turn.
REQUIRED_SLOTS: dict[TemplateKind, tuple[str, ...]] = {
    TemplateKind.TRAIN_WELL_DEFINED: ("question", "ref_answer", "model_answer"),
    TemplateKind.TRAIN_UNDER_SPECIFIED: ("question", "model_answer"),
    TemplateKind.EVAL_DETECTION: ("question", "model_answer"),
    TemplateKind.EVAL_ABSTENTION: ("question", "ref_answer", "abstention_label", "model_answer"),
    TemplateKind.EVAL_CORRECTNESS: ("question", "ref_answer", "model_answer"),
    TemplateKind.TRAJECTORY_QUALITY: ("model_answer",),
}

SYSTEM_PROMPTS: dict[TemplateKind, str] = {TemplateKind.EVAL_DETECTION: EVAL_DETECTION_SYSTEM}

_SLOT_RE = re.compile(r"\{(question|model_answer|ref_answer|abstention_label)\}")


def _check_slots(kind: TemplateKind, slots: Mapping[str, str]) -> None:
    for name in REQUIRED_SLOTS[kind]:
        if slots.get(name) is None:
            raise RenderError(kind, name)


def render_prompt(kind: TemplateKind, slots: Mapping[str, str]) -> str:
    _check_slots(kind, slots)
    return _SLOT_RE.sub(lambda m: str(slots[m.group(1)]), TEMPLATES[kind])


def build_messages(kind: TemplateKind, slots: Mapping[str, str]) -> list[dict[str, str]]:
    """Chat messages for one evaluator call."""
    body = render_prompt(kind, slots)
    if kind is TemplateKind.TRAIN_WELL_DEFINED:
        user = (
            f"Question: {slots['question']}\n\n"
            f"Reference Answer: {slots['ref_answer']}\n\n"
            f"Model Answer: {slots['model_answer']}"
        )
        return [{"role": "system", "content": body}, {"role": "user", "content": user}]
    if kind is TemplateKind.TRAIN_UNDER_SPECIFIED:
        user = f"Question: {slots['question']}\n\nModel Answer: {slots['model_answer']}"
        return [{"role": "system", "content": body}, {"role": "user", "content": user}]
    messages = []
    if kind in SYSTEM_PROMPTS:
        messages.append({"role": "system", "content": SYSTEM_PROMPTS[kind]})
    messages.append({"role": "user", "content": body})
    return messages
