from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jts.core import Answerability, Question, Trace, Verdict
from jts.metrics import (
    JoinError,
    SubsetMetrics,
    UndefinedMetricError,
    abstention_at_detection,
    aggregate_a_at_d,
    answer_rate,
    corr_per_ktok_value,
    correct_rate,
    detection_rate,
    entropy_profile,
    entropy_profile_from_entropies,
    nearest_rank_percentile,
    overall_abstention_rate,
    report,
    token_entropy,
    weighted_average,
)

U, W = Answerability.UNDER_SPECIFIED, Answerability.WELL_DEFINED


def under_trace(detected: bool, abstained: bool, n: int = 10) -> Trace:
    return Trace("u", "x", n, verdict=Verdict.ABSTAIN if abstained else Verdict.CORRECT,
                 detected=detected, abstained=abstained)


def well_trace(verdict: int, n: int = 10) -> Trace:
    return Trace("w", "x", n, verdict=Verdict(verdict), abstained=verdict == 0)


def test_under_specified_rates():
    ts = [under_trace(True, True), under_trace(True, False), under_trace(False, False), under_trace(False, True)]
    assert detection_rate(ts) == 0.5
    assert overall_abstention_rate(ts) == 0.5
    assert abstention_at_detection(ts, "exact") == 0.5
    assert abstention_at_detection(ts, "aggregate") == 1.0


def test_a_at_d_undefined_without_detection():
    with pytest.raises(UndefinedMetricError):
        abstention_at_detection([under_trace(False, True)], "exact")
    with pytest.raises(UndefinedMetricError):
        aggregate_a_at_d(0.3, 0.0)


def test_well_defined_rates():
    ts = [well_trace(1), well_trace(1), well_trace(2), well_trace(0)]
    assert answer_rate(ts) == 0.75
    assert correct_rate(ts) == pytest.approx(2 / 3)


def test_missing_flags_are_reported():
    with pytest.raises(UndefinedMetricError):
        detection_rate([Trace("u", "x", 1, abstained=True)])


# ---------------------------------------------------------------------------
# Reference-value arithmetic
# ---------------------------------------------------------------------------

A_AT_D_ROWS = [(45.3, 18.6, 41.1), (88.7, 88.5, 99.8), (52.9, 21.1, 40.0), (72.9, 72.4, 99.3)]


@pytest.mark.parametrize("dr,oar,reported", A_AT_D_ROWS[:2] + A_AT_D_ROWS[3:])
def test_aggregate_a_at_d_reproduces_reference(dr, oar, reported):
    assert abs(100 * aggregate_a_at_d(oar / 100, dr / 100) - reported) <= 0.05


def test_third_row_is_consistent_with_input_rounding():
    # 21.1 / 52.9 = 39.89%; 40.0 is reachable only from unrounded DR/OAR values.
    lo = 100 * 21.05 / 52.95
    hi = 100 * 21.15 / 52.85
    assert lo <= 40.0 <= hi
    assert 100 * aggregate_a_at_d(0.211, 0.529) == pytest.approx(39.887, abs=1e-3)


@pytest.mark.parametrize("correct,length,reported", [(91.8, 1687.3, 0.544), (93.4, 810.4, 1.152)])
def test_corr_per_ktok_reproduces_reference(correct, length, reported):
    assert abs(corr_per_ktok_value(correct / 100, length) - reported) <= 0.001


# ---------------------------------------------------------------------------
# Weighting and reports
# ---------------------------------------------------------------------------


def test_weighted_average():
    a = SubsetMetrics("a", "well_defined", 100, answer_rate=1.0, correct_rate=0.9, avg_len=100.0)
    b = SubsetMetrics("b", "well_defined", 300, answer_rate=0.5, correct_rate=0.5, avg_len=500.0)
    avg = weighted_average([a, b])
    assert avg.n == 400
    assert avg.answer_rate == pytest.approx(0.625)
    assert avg.correct_rate == pytest.approx(0.6)
    assert avg.avg_len == pytest.approx(400.0)
    assert avg.corr_per_ktok == pytest.approx(0.6 / 400 * 1000)


def test_single_subset_weighting_is_identity():
    a = SubsetMetrics("a", "insufficient", 7, dr=0.5, oar=0.25, a_at_d_aggregate=0.5)
    avg = weighted_average([a], name="overall")
    assert avg == SubsetMetrics("overall", "insufficient", 7, dr=0.5, oar=0.25, a_at_d_aggregate=0.5)


def test_report_rows_and_csv():
    qs = [
        Question("u1", "s1", "p", U), Question("u2", "s2", "p", U),
        Question("w1", "s1", "p", W, reference_answer="1"),
    ]
    ts = [
        Trace("u1", "x", 4, verdict=Verdict.ABSTAIN, detected=True, abstained=True),
        Trace("u2", "x", 6, verdict=Verdict.CORRECT, detected=True, abstained=False),
        Trace("w1", "x", 10, verdict=Verdict.CORRECT, detected=False, abstained=False),
    ]
    rep = report(ts, qs)
    assert [(r.subset, r.answerability) for r in rep.rows] == [
        ("s1", "insufficient"), ("s2", "insufficient"), ("overall", "insufficient"),
        ("s1", "well_defined"), ("overall", "well_defined"),
    ]
    assert rep.rows[2].oar == 0.5 and rep.rows[2].a_at_d_exact == 0.5
    assert rep.to_csv().splitlines()[0].startswith("subset,answerability,n,")
    with pytest.raises(JoinError):
        report([Trace("zz", "x", 1)], qs)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


def test_entropy_reference_values():
    assert abs(token_entropy(np.full(22, 1 / 22)) - math.log(22)) <= 1e-9
    assert token_entropy([0.0, 1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        token_entropy([0.5, 0.6])
    with pytest.raises(ValueError):
        token_entropy([1.5, -0.5])


def test_token_weighted_mean_is_exact():
    rng = np.random.default_rng(9)
    for _ in range(50):
        rows = [list(rng.exponential(size=int(rng.integers(1, 30)))) for _ in range(int(rng.integers(1, 8)))]
        prof = entropy_profile_from_entropies(rows)
        assert prof.token_weighted_mean == math.fsum(h for r in rows for h in r) / sum(len(r) for r in rows)


def test_profile_from_distributions():
    prof = entropy_profile([[[0.5, 0.5], [1.0, 0.0]], [[0.25] * 4]])
    assert prof.token_counts == (2, 1)
    assert prof.per_token[1][0] == pytest.approx(math.log(4))
    assert prof.frac_above_1 == pytest.approx(1 / 3)


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200), st.floats(0.1, 100))
def test_nearest_rank_matches_sort_oracle(values, q):
    ordered = sorted(values)
    k = math.ceil(q / 100 * len(ordered))
    assert nearest_rank_percentile(values, q) == ordered[max(k, 1) - 1]


def test_p90_small_series():
    assert nearest_rank_percentile([1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 90) == 9
