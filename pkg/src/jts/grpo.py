"""GRPO on a tabular template-token policy.

The policy is a table of logits indexed by (question feature, previous token),
each row a distribution over the 22-token template vocabulary.  Training follows
the usual GRPO recipe: sample G completions per prompt from the frozen rollout
policy, score them, normalize rewards within the group, and take one gradient
step on the clipped surrogate

    L = -mean_groups mean_i 1/|y_i| sum_t min(rho_t A_i, clip(rho_t, 1-eps, 1+eps_high) A_i)

with rho_t the per-token probability ratio against the rollout policy.  The
gradient is analytic: d log pi(a|s) / d logit[s, v] = [v == a] - pi(v|s).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from jts.contract import validate_contract
from jts.core import Answerability, Question, RewardBreakdown, RolloutGroup, RunConfig, Trace
from jts.judge import oracle_judge_tokens
from jts.metrics import UndefinedMetricError, abstention_at_detection, answer_rate, correct_rate, detection_rate
from jts.metrics import overall_abstention_rate
from jts.rewards import BehaviorContext, check_breakdown, jts_total_reward, plain_breakdown
from jts.synth import (
    ACTION_TOKENS,
    ANSWER_TOKENS,
    N_FEATURES,
    N_OPERAND,
    VOCAB_SIZE,
    SynthSpec,
    Tok,
    generate,
    question_feature,
    render_trace,
)

log = logging.getLogger(__name__)

ADV_EPS = 1e-6
LOGIT_LIMIT = 50.0


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


def _grammar_mask() -> np.ndarray:
    """allowed[prev, next] for the masked ablation mode."""
    allowed = np.zeros((VOCAB_SIZE, VOCAB_SIZE), dtype=bool)
    reasoning = [Tok.STEP, Tok.HEDGE, Tok.THINK_CLOSE]
    edges = {
        Tok.BOS: [Tok.THINK_OPEN],
        Tok.THINK_OPEN: [Tok.AJ_OPEN],
        Tok.AJ_OPEN: [Tok.AUDIT],
        Tok.AUDIT: [Tok.CHECK],
        Tok.CHECK: [Tok.CONC_ANS, Tok.CONC_UNANS],
        Tok.CONC_ANS: [Tok.AJ_CLOSE],
        Tok.CONC_UNANS: [Tok.AJ_CLOSE],
        Tok.AJ_CLOSE: reasoning,
        Tok.STEP: reasoning,
        Tok.HEDGE: reasoning,
        Tok.THINK_CLOSE: [*ANSWER_TOKENS, Tok.ABSTAIN],
        Tok.EOS: [Tok.EOS],
    }
    for prev, nxt in edges.items():
        allowed[prev, nxt] = True
    for tok in ACTION_TOKENS:
        allowed[tok, Tok.EOS] = True
    return allowed


GRAMMAR_MASK = _grammar_mask()
NO_MASK = np.ones((VOCAB_SIZE, VOCAB_SIZE), dtype=bool)

# Judgment memory: which conclusion (if any) the trace has committed to so far.
MEM_NONE, MEM_ANS, MEM_UNANS = 0, 1, 2
N_MEMORY = 3
N_CONTEXTS = N_FEATURES * N_MEMORY


def context_index(feature: int, memory: int) -> int:
    return feature * N_MEMORY + memory


def _next_memory(memory: int, tok: int) -> int:
    if tok == Tok.CONC_ANS:
        return MEM_ANS
    if tok == Tok.CONC_UNANS:
        return MEM_UNANS
    return memory


def token_states(feature: int, tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-position (context row, previous token) that conditioned each token."""
    ctx = np.empty(len(tokens), dtype=np.intp)
    prev = np.empty(len(tokens), dtype=np.intp)
    memory, last = MEM_NONE, int(Tok.BOS)
    for t, tok in enumerate(tokens):
        ctx[t] = context_index(feature, memory)
        prev[t] = last
        memory = _next_memory(memory, tok)
        last = tok
    return ctx, prev


@dataclass
class ToyPolicy:
    """Logit table of shape (features x judgment memory, previous token, next token)."""

    logits: np.ndarray
    mask: np.ndarray = field(default_factory=lambda: NO_MASK)

    def __post_init__(self) -> None:
        if self.logits.shape != (N_CONTEXTS, VOCAB_SIZE, VOCAB_SIZE):
            raise ValueError(f"logits must have shape {(N_CONTEXTS, VOCAB_SIZE, VOCAB_SIZE)}")

    @classmethod
    def uniform(cls, masked: bool = False) -> "ToyPolicy":
        return cls(np.zeros((N_CONTEXTS, VOCAB_SIZE, VOCAB_SIZE)), GRAMMAR_MASK if masked else NO_MASK)

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.logits.copy(), self.mask)

    def log_probs(self, context: int | np.ndarray, prev: int | np.ndarray) -> np.ndarray:
        rows = self.logits[context, prev]
        z = np.where(self.mask[prev], rows, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def probs(self, context: int | np.ndarray, prev: int | np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(context, prev))


def _answer_row(row: np.ndarray, a: int, b: int | None, abstain: float) -> None:
    row[Tok.ABSTAIN] = abstain
    if b is None:
        for k in range(N_OPERAND):
            row[Tok.ANS_0 + a + k] += (1.0 - abstain) / N_OPERAND
    else:
        row[Tok.ANS_0 + a + b] = 0.7 * (1.0 - abstain)
        others = [t for t in ANSWER_TOKENS if t != Tok.ANS_0 + a + b]
        row[others] += 0.3 * (1.0 - abstain) / len(others)


def _finish(p: np.ndarray, noise: float, masked: bool) -> ToyPolicy:
    p = (1.0 - noise) * p + noise / VOCAB_SIZE
    return ToyPolicy(np.log(p), GRAMMAR_MASK if masked else NO_MASK)


def warm_start_policy(noise: float = 0.02, masked: bool = False) -> ToyPolicy:
    """Starting point for JTS runs, standing in for a supervised warm-up.

    It mostly follows the judge-then-solve layout, but its judgment on
    under-specified items is a coin flip, and after an UNANSWERABLE conclusion it
    still keeps reasoning or commits to an answer about half the time.
    """
    p = np.zeros((N_CONTEXTS, VOCAB_SIZE, VOCAB_SIZE))
    reasoning = [Tok.STEP, Tok.HEDGE, Tok.THINK_CLOSE]
    for f in range(N_FEATURES):
        a, b_slot = divmod(f, N_OPERAND + 1)
        b = None if b_slot == N_OPERAND else b_slot
        for memory in range(N_MEMORY):
            row = p[context_index(f, memory)]
            row[Tok.BOS, Tok.THINK_OPEN] = 1.0
            row[Tok.THINK_OPEN, Tok.AJ_OPEN] = 1.0
            row[Tok.AJ_OPEN, Tok.AUDIT] = 1.0
            row[Tok.AUDIT, Tok.CHECK] = 1.0
            row[Tok.CHECK, [Tok.CONC_UNANS, Tok.CONC_ANS]] = [0.5, 0.5] if b is None else [0.1, 0.9]
            row[Tok.CONC_ANS, Tok.AJ_CLOSE] = 1.0
            row[Tok.CONC_UNANS, Tok.AJ_CLOSE] = 1.0
            if memory == MEM_UNANS:
                row[Tok.AJ_CLOSE, reasoning] = [0.35, 0.15, 0.5]
                _answer_row(row[Tok.THINK_CLOSE], a, b, abstain=0.5)
            else:
                row[Tok.AJ_CLOSE, reasoning] = [0.7, 0.2, 0.1]
                _answer_row(row[Tok.THINK_CLOSE], a, b, abstain=0.1)
            row[Tok.STEP, reasoning] = [0.3, 0.2, 0.5]
            row[Tok.HEDGE, reasoning] = [0.5, 0.2, 0.3]
            for tok in ACTION_TOKENS:
                row[tok, Tok.EOS] = 1.0
            row[Tok.EOS, Tok.EOS] = 1.0
    return _finish(p, noise, masked)


def base_policy(noise: float = 0.02, masked: bool = False) -> ToyPolicy:
    """Starting point for plain runs: free-form reasoning with no judgment block."""
    p = np.zeros((N_CONTEXTS, VOCAB_SIZE, VOCAB_SIZE))
    reasoning = [Tok.STEP, Tok.HEDGE, Tok.THINK_CLOSE]
    for f in range(N_FEATURES):
        a, b_slot = divmod(f, N_OPERAND + 1)
        b = None if b_slot == N_OPERAND else b_slot
        for memory in range(N_MEMORY):
            row = p[context_index(f, memory)]
            row[Tok.BOS, Tok.THINK_OPEN] = 1.0
            row[Tok.THINK_OPEN, reasoning[:2]] = [0.8, 0.2]
            row[Tok.STEP, reasoning] = [0.3, 0.2, 0.5]
            row[Tok.HEDGE, reasoning] = [0.5, 0.2, 0.3]
            _answer_row(row[Tok.THINK_CLOSE], a, b, abstain=0.2 if b is None else 0.05)
            for tok in ACTION_TOKENS:
                row[tok, Tok.EOS] = 1.0
            row[Tok.EOS, Tok.EOS] = 1.0
    return _finish(p, noise, masked)


def initial_policy(mode: str, masked: bool = False) -> ToyPolicy:
    return warm_start_policy(masked=masked) if mode == "jts" else base_policy(masked=masked)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rollout:
    """G sampled token sequences for one prompt, with rollout-policy log-probs."""

    question: Question
    feature: int
    sequences: tuple[tuple[int, ...], ...]
    old_logps: tuple[np.ndarray, ...]

    @property
    def group_size(self) -> int:
        return len(self.sequences)


def sample_sequence(policy: ToyPolicy, feature: int, max_len: int, rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
    tokens: list[int] = []
    logps: list[float] = []
    prev, memory = int(Tok.BOS), MEM_NONE
    for _ in range(max_len):
        lp = policy.log_probs(context_index(feature, memory), prev)
        cdf = np.cumsum(np.exp(lp))
        tok = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), VOCAB_SIZE - 1)
        while not np.isfinite(lp[tok]):  # float edge at a masked boundary
            tok -= 1
        tokens.append(tok)
        logps.append(float(lp[tok]))
        if tok == Tok.EOS:
            break
        prev, memory = tok, _next_memory(memory, tok)
    return tokens, np.asarray(logps)


def sample_group(policy: ToyPolicy, question: Question, group_size: int, max_len: int, rng: np.random.Generator) -> Rollout:
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    feature = question_feature(question)
    seqs, lps = [], []
    for _ in range(group_size):
        toks, lp = sample_sequence(policy, feature, max_len, rng)
        seqs.append(tuple(toks))
        lps.append(lp)
    return Rollout(question=question, feature=feature, sequences=tuple(seqs), old_logps=tuple(lps))


def compute_advantages(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("no rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + ADV_EPS)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@lru_cache(maxsize=65536)
def _audit(tokens: tuple[int, ...], min_answer_tokens: int, min_reasoning_tokens: int):
    text = render_trace(tokens)
    return text, validate_contract(text, min_answer_tokens, min_reasoning_tokens=min_reasoning_tokens)


def score_rollout(rollout: Rollout, config: RunConfig, mode: str) -> tuple[RolloutGroup, list[RewardBreakdown]]:
    """Judge every sequence with the oracle and compute JTS or plain rewards."""
    q = rollout.question
    traces, contexts = [], []
    for i, toks in enumerate(rollout.sequences):
        text, parse = _audit(toks, config.min_final_answer_tokens, config.min_reasoning_tokens)
        oj = oracle_judge_tokens(q, toks)
        traces.append(
            Trace(
                question_id=q.id,
                text=text,
                token_count=len(toks),
                parse=parse,
                judgment=parse.judgment,
                final_answer=parse.final_answer,
                verdict=oj.verdict,
                detected=oj.detected,
                abstained=oj.abstained,
            )
        )
        contexts.append(
            BehaviorContext(
                answerability=q.answerability,
                judgment=parse.judgment,
                verdict=oj.verdict,
                format_valid=parse.valid,
                token_count=len(toks),
                trace_id=f"{q.id}#{i}",
            )
        )
    if mode == "jts":
        breakdowns = jts_total_reward(contexts, require_format=config.length_requires_format)
    elif mode == "plain":
        breakdowns = plain_breakdown(contexts)
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    for ctx, rb in zip(contexts, breakdowns):
        check_breakdown(ctx, rb, jts=mode == "jts")
    rewards = [rb.total for rb in breakdowns]
    group = RolloutGroup(
        question_id=q.id,
        traces=tuple(traces),
        rewards=tuple(rewards),
        advantages=tuple(float(a) for a in compute_advantages(rewards)),
    )
    return group, breakdowns


# ---------------------------------------------------------------------------
# Surrogate loss
# ---------------------------------------------------------------------------


def _flatten(batch: Sequence[tuple[Rollout, Sequence[float]]]):
    ctxs, prevs, acts, old, weights, advs = [], [], [], [], [], []
    n_groups = len(batch)
    for rollout, advantages in batch:
        g = rollout.group_size
        for toks, lp, adv in zip(rollout.sequences, rollout.old_logps, advantages):
            n = len(toks)
            if n == 0:
                continue
            ctx, prev = token_states(rollout.feature, toks)
            ctxs.append(ctx)
            prevs.append(prev)
            acts.append(np.asarray(toks, dtype=np.intp))
            old.append(np.asarray(lp, dtype=float))
            weights.append(np.full(n, 1.0 / (n_groups * g * n)))
            advs.append(np.full(n, float(adv)))
    if not ctxs:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty, empty, np.empty(0), np.empty(0), np.empty(0)
    return tuple(np.concatenate(x) for x in (ctxs, prevs, acts, old, weights, advs))


def surrogate_loss(
    policy: ToyPolicy,
    batch: Sequence[tuple[Rollout, Sequence[float]]],
    clip_low: float = 0.2,
    clip_high: float = 0.28,
) -> tuple[float, np.ndarray]:
    """Clipped GRPO loss over a batch of (rollout, advantages) and its logit gradient."""
    grad = np.zeros_like(policy.logits)
    ctxs, prevs, acts, old, weights, advs = _flatten(batch)
    if ctxs.size == 0:
        return 0.0, grad
    lp_all = policy.log_probs(ctxs, prevs)
    idx = np.arange(ctxs.size)
    logp = lp_all[idx, acts]
    ratio = np.exp(logp - old)
    clipped = np.clip(ratio, 1.0 - clip_low, 1.0 + clip_high)
    unclipped_term = ratio * advs
    clipped_term = clipped * advs
    term = np.minimum(unclipped_term, clipped_term)
    loss = -float(np.sum(weights * term))

    # The min picks the unclipped branch (and carries gradient) unless the clip binds.
    active = unclipped_term <= clipped_term
    coef = -weights * advs * ratio * active
    probs = np.exp(lp_all)
    rows = -coef[:, None] * probs
    rows[idx, acts] += coef
    np.add.at(grad, (ctxs, prevs), rows)
    return loss, grad


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    policy: ToyPolicy
    old_policy: ToyPolicy
    step: int
    rng: np.random.Generator
    metrics: list[dict[str, float]] = field(default_factory=list)

    def refresh_old(self) -> None:
        self.old_policy = self.policy.copy()


METRIC_COLUMNS = (
    "step",
    "mean_reward",
    "format_rate",
    "dr",
    "oar",
    "a_at_d_exact",
    "under_len",
    "answer_rate",
    "correct_rate",
    "well_len",
)


def _safe(fn: Callable[..., float], *args) -> float:
    try:
        return float(fn(*args))
    except UndefinedMetricError:
        return float("nan")


def sample_eval_traces(
    policy: ToyPolicy, questions: Sequence[Question], config: RunConfig, rng: np.random.Generator, samples: int
) -> list[Trace]:
    traces = []
    for q in questions:
        rollout = sample_group(policy, q, samples, config.max_completion_tokens, rng)
        group, _ = score_rollout(rollout, config, "jts")
        traces.extend(group.traces)
    return traces


def evaluate_policy(
    policy: ToyPolicy, questions: Sequence[Question], config: RunConfig, rng: np.random.Generator, step: int
) -> dict[str, float]:
    traces = sample_eval_traces(policy, questions, config, rng, config.eval_samples)
    by_id = {q.id: q for q in questions}
    under = [t for t in traces if by_id[t.question_id].answerability is Answerability.UNDER_SPECIFIED]
    well = [t for t in traces if by_id[t.question_id].answerability is Answerability.WELL_DEFINED]
    return {
        "step": step,
        "mean_reward": float("nan"),
        "format_rate": sum(t.parse is not None and t.parse.valid for t in traces) / max(1, len(traces)),
        "dr": _safe(detection_rate, under),
        "oar": _safe(overall_abstention_rate, under),
        "a_at_d_exact": _safe(abstention_at_detection, under, "exact"),
        "under_len": float(np.mean([t.token_count for t in under])) if under else float("nan"),
        "answer_rate": _safe(answer_rate, well),
        "correct_rate": _safe(correct_rate, well),
        "well_len": float(np.mean([t.token_count for t in well])) if well else float("nan"),
    }


@dataclass
class TrainResult:
    state: TrainState
    initial_logits: np.ndarray

    @property
    def metrics(self) -> list[dict[str, float]]:
        return self.state.metrics


def train(
    config: RunConfig,
    dataset: Sequence[Question],
    mode: str = "jts",
    steps: int = 500,
    policy: ToyPolicy | None = None,
    eval_questions: Sequence[Question] | None = None,
) -> TrainResult:
    if mode not in ("jts", "plain"):
        raise ValueError(f"unknown reward mode {mode!r}")
    labels = {q.answerability for q in dataset}
    if len(labels) < 2:
        raise ValueError("training data must contain both well-defined and under-specified questions")
    eval_set = list(eval_questions) if eval_questions is not None else list(dataset)
    init = policy.copy() if policy is not None else initial_policy(mode, masked=config.grammar_mask)
    state = TrainState(policy=init.copy(), old_policy=init.copy(), step=0, rng=np.random.default_rng(config.seed))

    def eval_rng(step: int) -> np.random.Generator:
        return np.random.default_rng([config.seed, 1, step])

    state.metrics.append(evaluate_policy(state.policy, eval_set, config, eval_rng(0), 0))
    batch_size = min(config.prompts_per_step, len(dataset))
    for step in range(1, steps + 1):
        picks = state.rng.choice(len(dataset), size=batch_size, replace=False)
        batch, step_rewards = [], []
        for i in picks:
            rollout = sample_group(state.old_policy, dataset[int(i)], config.group_size, config.max_completion_tokens, state.rng)
            group, _ = score_rollout(rollout, config, mode)
            batch.append((rollout, group.advantages))
            step_rewards.extend(group.rewards)
        _, grad = surrogate_loss(state.policy, batch, config.clip_low, config.clip_high)
        state.policy.logits -= config.learning_rate * grad
        peak = float(np.abs(state.policy.logits).max())
        if peak > LOGIT_LIMIT:
            raise DivergenceError(f"step {step}: logit magnitude {peak:.2f} exceeds {LOGIT_LIMIT}")
        state.refresh_old()
        state.step = step
        if step % config.eval_interval == 0 or step == steps:
            row = evaluate_policy(state.policy, eval_set, config, eval_rng(step), step)
            row["mean_reward"] = float(np.mean(step_rewards))
            state.metrics.append(row)
            log.info("step %d oar=%.3f dr=%.3f len=%.2f", step, row["oar"], row["dr"], row["under_len"])
    return TrainResult(state=state, initial_logits=init.logits.copy())


def default_dataset(config: RunConfig) -> list[Question]:
    spec = SynthSpec(
        count=config.dataset_count,
        under_specified_fraction=config.under_specified_fraction,
        seed=config.dataset_seed,
    )
    return generate(spec)
