from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from jts.contract import validate_contract
from jts.core import Answerability, Judgment
from jts.synth import (
    N_FEATURES,
    VOCAB_SIZE,
    SynthSpec,
    Tok,
    VocabularyError,
    generate,
    oracle_sum,
    parse_rendered,
    question_feature,
    render_trace,
)

IDEAL_UNANS = [Tok.THINK_OPEN, Tok.AJ_OPEN, Tok.AUDIT, Tok.CHECK, Tok.CONC_UNANS, Tok.AJ_CLOSE,
               Tok.THINK_CLOSE, Tok.ABSTAIN, Tok.EOS]
IDEAL_ANS = [Tok.THINK_OPEN, Tok.AJ_OPEN, Tok.AUDIT, Tok.CHECK, Tok.CONC_ANS, Tok.AJ_CLOSE,
             Tok.STEP, Tok.THINK_CLOSE, Tok.ANS_5, Tok.EOS]


def test_vocabulary_size():
    assert VOCAB_SIZE == 22
    assert N_FEATURES == 30


def test_generate_is_seeded_and_exact_mixture():
    spec = SynthSpec(count=101, under_specified_fraction=0.3, seed=7)
    a, b = generate(spec), generate(spec)
    assert a == b
    assert sum(q.answerability is Answerability.UNDER_SPECIFIED for q in a) == 30
    assert generate(SynthSpec(count=101, seed=8)) != a
    assert len({q.id for q in a}) == 101


def test_well_defined_reference_is_sum():
    for q in generate(SynthSpec(count=50, seed=3)):
        if q.well_defined:
            assert int(q.reference_answer) == oracle_sum(q)
        else:
            assert q.prompt.endswith("+ ?") and q.hidden_premise is not None


def test_features_distinguish_hidden_operand():
    qs = generate(SynthSpec(count=200, seed=0))
    hidden = {question_feature(q) for q in qs if not q.well_defined}
    visible = {question_feature(q) for q in qs if q.well_defined}
    assert hidden.isdisjoint(visible)
    assert all(0 <= f < N_FEATURES for f in hidden | visible)


def test_ideal_traces_satisfy_contract():
    unans = validate_contract(render_trace(IDEAL_UNANS))
    assert unans.valid and unans.judgment is Judgment.UNANSWERABLE
    ans = validate_contract(render_trace(IDEAL_ANS))
    assert ans.valid and ans.judgment is Judgment.ANSWERABLE


def test_render_stops_at_eos():
    assert render_trace([Tok.STEP, Tok.EOS, Tok.ABSTAIN]) == render_trace([Tok.STEP])


@given(st.lists(st.sampled_from([t for t in Tok if t not in (Tok.EOS, Tok.BOS)]), max_size=30))
def test_parse_inverts_render(tokens):
    assert parse_rendered(render_trace(tokens)) == tokens


def test_parse_rejects_foreign_text():
    with pytest.raises(VocabularyError):
        parse_rendered("hello\n")


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(count=-1)
    with pytest.raises(ValueError):
        SynthSpec(count=3, under_specified_fraction=1.5)
