from __future__ import annotations

from pathlib import Path

import pytest

GOLDEN_DIR = Path(__file__).parent / "golden"

UNANSWERABLE_TRACE = (
    "<think> <answerability_judge>\n"
    "Contextual Audit: We know Jenny gives 1/3 of the pizza to Bill and 1/4 to Mark, and Jenny eats 2 slices. "
    "To determine how many slices are left, we need the total number of slices in the whole pizza, "
    "or an equivalent way to convert the fractions into a slice count.\n"
    "Integrity Check: The total number of slices in the pizza is not given, so \"2 slices\" cannot be related "
    "to the fractional amounts, 1/3 and 1/4, to compute a remaining slice count.\n"
    "Conclusion: UNANSWERABLE\n"
    "</answerability_judge> </think>\n"
    "I cannot answer this question. The total number of slices in the pizza is missing, so we cannot "
    "determine how many slices remain after giving fractional portions and eating 2 slices."
)

ANSWERABLE_TRACE = (
    "<think>\n"
    "<answerability_judge>\n"
    "Contextual Audit: Given Anna's total budget ($16), prior spending ($4), today's purchase quantity "
    "(2 books at equal price), and remaining budget after all spending ($2). Asked: the cost of each of the 2 books.\n"
    "Integrity Check: All necessary quantities are provided: starting budget, remaining amount, earlier spending, "
    "and the number of equal-cost books. The unknown price per book is uniquely determined by these values.\n"
    "Conclusion: ANSWERABLE\n"
    "</answerability_judge>\n"
    "... (reasoning steps omitted for brevity) ...\n"
    "</think>\n"
    "Each of the two books cost $5."
)

SLOT_SENTINELS = {
    "question": "<<QUESTION>>",
    "model_answer": "<<MODEL_ANSWER>>",
    "ref_answer": "<<REF_ANSWER>>",
    "abstention_label": "<<LABEL>>",
}


@pytest.fixture
def unanswerable_trace() -> str:
    return UNANSWERABLE_TRACE


@pytest.fixture
def answerable_trace() -> str:
    return ANSWERABLE_TRACE
