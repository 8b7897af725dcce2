"""Structured reward for judge-then-solve traces and the plain-RL baseline.

The JTS reward of one trace is the sum of four terms:

* format       1 if the trace satisfies the output contract, else 0
* consistency  1 if the parsed judgment agrees with the evaluator verdict
* task         +1/0/-1 behavioral reward, paid only when format and consistency hold
* length       min-max length shaping in [-0.1, 0.1], paid only to failures

Length shaping works on two failure pools inside one rollout group: under-specified
traces that did not abstain (shorter is better) and well-defined traces that were
not correct (longer is mildly better).  A pool with one member or a single distinct
length gets zero shaping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from jts.core import Answerability, Judgment, ParseResult, Question, RewardBreakdown, Trace, Verdict

LENGTH_SCALE = 0.2


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class BehaviorContext:
    answerability: Answerability
    judgment: Judgment | None
    verdict: Verdict | None
    format_valid: bool
    token_count: int
    trace_id: str = ""

    @property
    def under_specified(self) -> bool:
        return self.answerability is Answerability.UNDER_SPECIFIED

    @property
    def abstained(self) -> bool:
        return self.verdict is Verdict.ABSTAIN

    @property
    def successful(self) -> bool:
        if self.under_specified:
            return self.verdict is Verdict.ABSTAIN
        return self.verdict is Verdict.CORRECT


def context_for(question: Question, trace: Trace, trace_id: str = "") -> BehaviorContext:
    parse = trace.parse
    return BehaviorContext(
        answerability=question.answerability,
        judgment=parse.judgment if parse is not None else trace.judgment,
        verdict=trace.verdict,
        format_valid=bool(parse is not None and parse.valid),
        token_count=trace.token_count,
        trace_id=trace_id or trace.question_id,
    )


def format_reward(parse: ParseResult) -> int:
    return 1 if parse.valid else 0


def consistency_reward(judgment: Judgment | None, verdict: Verdict) -> int:
    if judgment is Judgment.UNANSWERABLE:
        return 1 if verdict is Verdict.ABSTAIN else 0
    if judgment is Judgment.ANSWERABLE:
        return 1 if verdict in (Verdict.CORRECT, Verdict.INCORRECT) else 0
    return 0


def _behavior_reward(ctx: BehaviorContext) -> int:
    verdict = _require_verdict(ctx)
    if ctx.under_specified:
        return 1 if verdict is Verdict.ABSTAIN else 0
    if verdict is Verdict.CORRECT:
        return 1
    if verdict is Verdict.ABSTAIN:
        return -1
    return 0


def task_reward(ctx: BehaviorContext) -> int:
    verdict = _require_verdict(ctx)
    if not ctx.format_valid or consistency_reward(ctx.judgment, verdict) != 1:
        return 0
    return _behavior_reward(ctx)


def _require_verdict(ctx: BehaviorContext) -> Verdict:
    if ctx.verdict is None:
        raise ScoringError(f"trace {ctx.trace_id or '<unnamed>'} has no evaluator verdict")
    return ctx.verdict


def length_shaping(group: Sequence[BehaviorContext], *, require_format: bool = False) -> list[float]:
    shaped = [0.0] * len(group)
    short_pool: list[int] = []
    long_pool: list[int] = []
    for i, ctx in enumerate(group):
        _require_verdict(ctx)
        if require_format and not ctx.format_valid:
            continue
        if ctx.under_specified and not ctx.abstained:
            short_pool.append(i)
        elif not ctx.under_specified and ctx.verdict is not Verdict.CORRECT:
            long_pool.append(i)

    for pool, sign in ((short_pool, -1.0), (long_pool, 1.0)):
        if len(pool) <= 1:
            continue
        lengths = [group[i].token_count for i in pool]
        lo, hi = min(lengths), max(lengths)
        if lo == hi:
            continue
        for i in pool:
            norm = (group[i].token_count - lo) / (hi - lo)
            shaped[i] = LENGTH_SCALE * sign * (norm - 0.5)
    return shaped


def jts_total_reward(group: Sequence[BehaviorContext], *, require_format: bool = False) -> list[RewardBreakdown]:
    lengths = length_shaping(group, require_format=require_format)
    out = []
    for ctx, length in zip(group, lengths):
        verdict = _require_verdict(ctx)
        out.append(
            RewardBreakdown(
                format=1 if ctx.format_valid else 0,
                consistency=consistency_reward(ctx.judgment, verdict),
                task=task_reward(ctx),
                length=length,
            )
        )
    return out


def plain_rl_reward(group: Sequence[BehaviorContext]) -> list[float]:
    lengths = length_shaping(group)
    return [float(_behavior_reward(ctx)) + length for ctx, length in zip(group, lengths)]


def plain_breakdown(group: Sequence[BehaviorContext]) -> list[RewardBreakdown]:
    """Plain-RL reward expressed with the JTS breakdown fields (format/consistency unused)."""
    lengths = length_shaping(group)
    return [
        RewardBreakdown(format=0, consistency=0, task=_behavior_reward(ctx), length=length)
        for ctx, length in zip(group, lengths)
    ]


def check_breakdown(ctx: BehaviorContext, rb: RewardBreakdown, *, jts: bool = True) -> None:
    """Raise ScoringError if ``rb`` breaks any reward invariant for ``ctx``."""
    problems = []
    if rb.total != rb.format + rb.consistency + rb.task + rb.length:
        problems.append("total is not the sum of its terms")
    if not -0.1 - 1e-12 <= rb.length <= 0.1 + 1e-12:
        problems.append(f"length term {rb.length} out of [-0.1, 0.1]")
    if ctx.successful and rb.length != 0.0:
        problems.append("successful trace received length shaping")
    if jts and rb.task != 0 and not (rb.format == 1 and rb.consistency == 1):
        problems.append("task reward paid without format and consistency")
    if jts and not -1.1 <= rb.total <= 3.0:
        problems.append(f"total {rb.total} out of [-1.1, 3.0]")
    if problems:
        raise ScoringError(f"trace {ctx.trace_id or '<unnamed>'}: " + "; ".join(problems))
