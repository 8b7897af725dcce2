"""Abstention metrics and token-entropy statistics.

Under-specified items are scored with detection rate (DR), overall abstention
rate (OAR) and abstention-at-detection (A@D).  A@D is available in two forms:
the exact per-sample ratio |detected and abstained| / |detected|, and the
aggregate OAR / DR.  They coincide when every abstaining trace is also a
detecting one.

Well-defined items are scored with answer rate, correct rate over answered
traces, mean length, and correct-per-thousand-tokens.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from jts.core import Answerability, Question, Trace, Verdict


class UndefinedMetricError(ValueError):
    pass


class JoinError(KeyError):
    def __str__(self) -> str:
        return self.args[0]


# ---------------------------------------------------------------------------
# Under-specified subset
# ---------------------------------------------------------------------------


def _flags(traces: Sequence[Trace], name: str) -> list[bool]:
    if not traces:
        raise UndefinedMetricError(f"{name}: empty subset")
    values = []
    for t in traces:
        v = getattr(t, name)
        if v is None:
            raise UndefinedMetricError(f"{name}: trace for {t.question_id} has no {name} flag")
        values.append(v)
    return values


def detection_rate(traces: Sequence[Trace]) -> float:
    flags = _flags(traces, "detected")
    return sum(flags) / len(flags)


def overall_abstention_rate(traces: Sequence[Trace]) -> float:
    flags = _flags(traces, "abstained")
    return sum(flags) / len(flags)


def aggregate_a_at_d(oar: float, dr: float) -> float:
    if dr <= 0:
        raise UndefinedMetricError("A@D: detection rate is zero")
    return oar / dr


def abstention_at_detection(traces: Sequence[Trace], mode: str = "exact") -> float:
    if mode == "aggregate":
        return aggregate_a_at_d(overall_abstention_rate(traces), detection_rate(traces))
    if mode != "exact":
        raise ValueError(f"unknown A@D mode {mode!r}")
    detected = _flags(traces, "detected")
    abstained = _flags(traces, "abstained")
    n_detected = sum(detected)
    if n_detected == 0:
        raise UndefinedMetricError("A@D: no detected traces")
    return sum(d and a for d, a in zip(detected, abstained)) / n_detected


# ---------------------------------------------------------------------------
# Well-defined subset
# ---------------------------------------------------------------------------


def _verdicts(traces: Sequence[Trace]) -> list[Verdict]:
    if not traces:
        raise UndefinedMetricError("empty subset")
    out = []
    for t in traces:
        if t.verdict is None:
            raise UndefinedMetricError(f"trace for {t.question_id} has no verdict")
        out.append(t.verdict)
    return out


def answer_rate(traces: Sequence[Trace]) -> float:
    verdicts = _verdicts(traces)
    return sum(v is not Verdict.ABSTAIN for v in verdicts) / len(verdicts)


def correct_rate(traces: Sequence[Trace]) -> float:
    """Share of answered (non-abstaining) traces judged correct."""
    answered = [v for v in _verdicts(traces) if v is not Verdict.ABSTAIN]
    if not answered:
        raise UndefinedMetricError("correct rate: no answered traces")
    return sum(v is Verdict.CORRECT for v in answered) / len(answered)


def avg_length(traces: Sequence[Trace]) -> float:
    if not traces:
        raise UndefinedMetricError("average length: empty subset")
    return sum(t.token_count for t in traces) / len(traces)


def corr_per_ktok_value(correct: float, avg_len: float) -> float:
    if avg_len <= 0:
        raise UndefinedMetricError("Corr./1KTok: average length is zero")
    return correct / avg_len * 1000.0


def corr_per_ktok(traces: Sequence[Trace]) -> float:
    return corr_per_ktok_value(correct_rate(traces), avg_length(traces))


# ---------------------------------------------------------------------------
# Subset rows and weighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsetMetrics:
    subset: str
    answerability: str
    n: int
    dr: float | None = None
    oar: float | None = None
    a_at_d_exact: float | None = None
    a_at_d_aggregate: float | None = None
    answer_rate: float | None = None
    correct_rate: float | None = None
    avg_len: float | None = None
    corr_per_ktok: float | None = None

    def __post_init__(self) -> None:
        for name in ("dr", "oar", "a_at_d_exact", "a_at_d_aggregate", "answer_rate", "correct_rate"):
            v = getattr(self, name)
            if v is not None and not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name}={v} is not a rate")
        if self.avg_len is not None and self.avg_len < 0:
            raise ValueError("avg_len must be nonnegative")


_RATE_FIELDS = ("dr", "oar", "a_at_d_exact", "answer_rate", "correct_rate", "avg_len")


def _maybe(fn, *args) -> float | None:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def subset_metrics(subset: str, answerability: Answerability, traces: Sequence[Trace]) -> SubsetMetrics:
    if answerability is Answerability.UNDER_SPECIFIED:
        has_detection = all(t.detected is not None for t in traces)
        dr = _maybe(detection_rate, traces) if has_detection else None
        oar = _maybe(overall_abstention_rate, traces)
        return SubsetMetrics(
            subset=subset,
            answerability=answerability.value,
            n=len(traces),
            dr=dr,
            oar=oar,
            a_at_d_exact=_maybe(abstention_at_detection, traces, "exact") if has_detection else None,
            a_at_d_aggregate=_maybe(aggregate_a_at_d, oar, dr) if oar is not None and dr is not None else None,
            avg_len=_maybe(avg_length, traces),
        )
    correct = _maybe(correct_rate, traces)
    avg_len = _maybe(avg_length, traces)
    return SubsetMetrics(
        subset=subset,
        answerability=answerability.value,
        n=len(traces),
        answer_rate=_maybe(answer_rate, traces),
        correct_rate=correct,
        avg_len=avg_len,
        corr_per_ktok=_maybe(corr_per_ktok_value, correct, avg_len) if correct is not None and avg_len else None,
    )


def weighted_average(subsets: Sequence[SubsetMetrics], name: str = "overall") -> SubsetMetrics:
    """Sample-size-weighted mean of each rate; ratios are recomputed from the means."""
    if not subsets:
        raise UndefinedMetricError("weighted average of no subsets")
    if any(s.n <= 0 for s in subsets):
        raise ValueError("every subset needs n > 0")
    if len(subsets) == 1:
        return replace(subsets[0], subset=name)
    labels = {s.answerability for s in subsets}
    averaged: dict[str, float | None] = {}
    for key in _RATE_FIELDS:
        present = [(s.n, getattr(s, key)) for s in subsets if getattr(s, key) is not None]
        if not present:
            averaged[key] = None
            continue
        total = sum(n for n, _ in present)
        averaged[key] = sum(n * v for n, v in present) / total
    dr, oar, correct, avg_len = averaged["dr"], averaged["oar"], averaged["correct_rate"], averaged["avg_len"]
    return SubsetMetrics(
        subset=name,
        answerability=labels.pop() if len(labels) == 1 else "mixed",
        n=sum(s.n for s in subsets),
        dr=dr,
        oar=oar,
        a_at_d_exact=averaged["a_at_d_exact"],
        a_at_d_aggregate=oar / dr if oar is not None and dr else None,
        answer_rate=averaged["answer_rate"],
        correct_rate=correct,
        avg_len=avg_len,
        corr_per_ktok=correct / avg_len * 1000.0 if correct is not None and avg_len else None,
    )


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[SubsetMetrics, ...]

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(SubsetMetrics)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in self.rows:
            writer.writerow(["" if getattr(row, n) is None else _fmt(getattr(row, n)) for n in names])
        return buf.getvalue()


def _fmt(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def report(traces: Sequence[Trace], questions: Iterable[Question]) -> MetricsReport:
    """Per-subset rows for each label plus a weighted overall row per label."""
    by_id: Mapping[str, Question] = {q.id: q for q in questions}
    groups: dict[tuple[str, Answerability], list[Trace]] = {}
    for t in traces:
        q = by_id.get(t.question_id)
        if q is None:
            raise JoinError(f"trace references unknown question {t.question_id!r}")
        groups.setdefault((q.subset, q.answerability), []).append(t)

    rows = []
    for label in (Answerability.UNDER_SPECIFIED, Answerability.WELL_DEFINED):
        label_rows = [
            subset_metrics(subset, label, groups[(subset, lab)])
            for subset, lab in sorted(groups, key=lambda k: k[0])
            if lab is label
        ]
        rows.extend(label_rows)
        if label_rows:
            rows.append(weighted_average(label_rows, name="overall"))
    return MetricsReport(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


def token_entropy(distribution: Sequence[float] | np.ndarray, atol: float = 1e-6) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    p = np.asarray(distribution, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a nonempty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("distribution has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"distribution sums to {p.sum()}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def nearest_rank_percentile(values: Sequence[float], q: float) -> float:
    if not values:
        raise UndefinedMetricError("percentile of an empty series")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class EntropyProfile:
    per_token: tuple[tuple[float, ...], ...]
    token_counts: tuple[int, ...]
    token_weighted_mean: float
    response_mean: float
    p90: float
    frac_above_1: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_token": [list(r) for r in self.per_token],
            "token_counts": list(self.token_counts),
            "token_weighted_mean": self.token_weighted_mean,
            "response_mean": self.response_mean,
            "p90": self.p90,
            "frac_above_1": self.frac_above_1,
        }


def entropy_profile_from_entropies(per_response: Sequence[Sequence[float]], threshold: float = 1.0) -> EntropyProfile:
    rows = tuple(tuple(float(h) for h in r) for r in per_response)
    counts = tuple(len(r) for r in rows)
    flat = [h for r in rows for h in r]
    if not flat:
        raise UndefinedMetricError("entropy profile of zero tokens")
    nonempty = [r for r in rows if r]
    return EntropyProfile(
        per_token=rows,
        token_counts=counts,
        token_weighted_mean=math.fsum(flat) / sum(counts),
        response_mean=math.fsum(math.fsum(r) / len(r) for r in nonempty) / len(nonempty),
        p90=nearest_rank_percentile(flat, 90),
        frac_above_1=sum(h > threshold for h in flat) / len(flat),
    )


def entropy_profile(per_response: Sequence[Sequence[Sequence[float]]]) -> EntropyProfile:
    return entropy_profile_from_entropies([[token_entropy(p) for p in resp] for resp in per_response])
