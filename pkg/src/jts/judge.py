"""LLM-as-a-judge client, reply parsers, and the offline oracle judge.

The client talks to any chat-completions style endpoint through a ``Transport``
callable.  Prompts are sent byte-exact; replies are parsed leniently (whitespace,
code fences and trailing punctuation are stripped).  A reply that still does not
parse counts as a failed attempt, exactly like a transport error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

from jts.core import Answerability, Question, Trace, Verdict
from jts.synth import ACTION_TOKENS, Tok, oracle_sum, parse_rendered
from jts.templates import TemplateKind, build_messages

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_MODEL = "gpt-4o-2024-11-20"
SHORT_REPLY_TOKENS = 10
JSON_REPLY_TOKENS = 256


class Transport(Protocol):
    def __call__(self, messages: list[dict[str, str]], max_tokens: int) -> str: ...


class JudgeReplyError(ValueError):
    """An evaluator reply that does not match the expected protocol."""


class JudgeExhaustedError(RuntimeError):
    def __init__(self, kind: TemplateKind, raw_outputs: Sequence[str]) -> None:
        super().__init__(f"{kind.value}: no valid reply after {len(raw_outputs)} attempts: {list(raw_outputs)!r}")
        self.kind = kind
        self.raw_outputs = list(raw_outputs)


@dataclass(frozen=True)
class TrajectoryQualityVerdict:
    hesitation_count: int
    completeness: int
    executability: int


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?```$", re.DOTALL)
_PUNCT = " \t\r\n.,;:!?\"'`"


def strip_fences(reply: str) -> str:
    text = reply.strip()
    m = _FENCE_RE.match(text)
    return m.group(1).strip() if m else text


def parse_train_code(reply: str, kind: TemplateKind) -> Verdict:
    allowed = {0, 1} if kind is TemplateKind.TRAIN_UNDER_SPECIFIED else {0, 1, 2}
    token = reply.strip(_PUNCT)
    if not token.isdigit() or int(token) not in allowed:
        raise JudgeReplyError(f"expected one of {sorted(allowed)}, got {reply!r}")
    return Verdict(int(token))


def _single_word(reply: str, choices: Mapping[str, bool]) -> bool:
    word = reply.strip(_PUNCT).lower()
    if word not in choices:
        raise JudgeReplyError(f"expected one of {sorted(choices)}, got {reply!r}")
    return choices[word]


def parse_yes_no(reply: str) -> bool:
    return _single_word(reply, {"yes": True, "no": False})


def parse_correctness(reply: str) -> bool:
    return _single_word(reply, {"correct": True, "incorrect": False})


def _json_object(reply: str) -> dict[str, Any]:
    try:
        obj = json.loads(strip_fences(reply))
    except json.JSONDecodeError as exc:
        raise JudgeReplyError(f"reply is not JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise JudgeReplyError("reply is not a JSON object")
    return obj


def parse_detection(reply: str) -> bool:
    obj = _json_object(reply)
    if "detected" not in obj:
        raise JudgeReplyError("detection reply lacks 'detected'")
    return parse_yes_no(str(obj["detected"]))


def parse_trajectory_quality(reply: str) -> TrajectoryQualityVerdict:
    obj = _json_object(reply)
    values = {}
    for key in ("hesitation_count", "completeness", "executability"):
        if key not in obj:
            raise JudgeReplyError(f"trajectory-quality reply lacks {key!r}")
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise JudgeReplyError(f"{key} must be an integer, got {value!r}")
        values[key] = value
    if values["hesitation_count"] < 0:
        raise JudgeReplyError("hesitation_count must be nonnegative")
    for key in ("completeness", "executability"):
        if not 1 <= values[key] <= 5:
            raise JudgeReplyError(f"{key} must lie in 1..5, got {values[key]}")
    return TrajectoryQualityVerdict(**values)


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class ChatCompletionsTransport:
    """POSTs an OpenAI-style chat-completions request and returns the reply text."""

    def __init__(
        self,
        endpoint: str,
        model: str = DEFAULT_MODEL,
        api_key: str | None = None,
        temperature: float = 0.0,
        timeout: float = 60.0,
    ) -> None:
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout)

    @classmethod
    def from_env(cls) -> "ChatCompletionsTransport":
        endpoint = os.environ.get("JTS_JUDGE_ENDPOINT")
        if not endpoint:
            raise RuntimeError("JTS_JUDGE_ENDPOINT is not set (use --offline-oracle for synthetic traces)")
        return cls(
            endpoint=endpoint,
            model=os.environ.get("JTS_JUDGE_MODEL", DEFAULT_MODEL),
            api_key=os.environ.get("JTS_JUDGE_API_KEY"),
        )

    def request_body(self, messages: list[dict[str, str]], max_tokens: int) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": max_tokens,
        }

    def __call__(self, messages: list[dict[str, str]], max_tokens: int) -> str:
        resp = self._client.post(self.endpoint, json=self.request_body(messages, max_tokens))
        resp.raise_for_status()
        return extract_reply_text(resp.json())


def extract_reply_text(payload: Mapping[str, Any]) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise JudgeReplyError("response has no choices[0].message.content") from None
    return "" if content is None else str(content)


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class CallLog:
    """Append-only JSONL record of every evaluator attempt."""

    def __init__(self, path: Path | str | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self.entries: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def append(self, entry: dict[str, Any]) -> None:
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


class JudgeClient:
    def __init__(
        self,
        transport: Transport,
        retry_limit: int = 3,
        call_log: CallLog | None = None,
        max_in_flight: int = 4,
    ) -> None:
        if retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        self.transport = transport
        self.retry_limit = retry_limit
        self.call_log = call_log if call_log is not None else CallLog()
        self.max_in_flight = max_in_flight

    def ask(
        self,
        kind: TemplateKind,
        slots: Mapping[str, str],
        parse: Callable[[str], T],
        max_tokens: int = SHORT_REPLY_TOKENS,
    ) -> T:
        messages = build_messages(kind, slots)
        digest = hashlib.sha256(json.dumps(messages, sort_keys=True).encode("utf-8")).hexdigest()
        raw_outputs: list[str] = []
        for attempt in range(self.retry_limit):
            entry: dict[str, Any] = {"kind": kind.value, "prompt_sha256": digest, "attempt": attempt}
            try:
                reply = self.transport(messages, max_tokens)
            except Exception as exc:  # transport failures count as attempts
                entry["error"] = repr(exc)
                self.call_log.append(entry)
                raw_outputs.append(f"<error: {exc!r}>")
                log.warning("judge %s attempt %d failed: %r", kind.value, attempt + 1, exc)
                continue
            entry["reply"] = reply
            self.call_log.append(entry)
            raw_outputs.append(reply)
            try:
                return parse(reply)
            except JudgeReplyError as exc:
                log.warning("judge %s attempt %d unparseable: %s", kind.value, attempt + 1, exc)
        raise JudgeExhaustedError(kind, raw_outputs)

    def classify_train(self, question: Question, final_answer_tail: str) -> Verdict:
        if question.well_defined:
            kind = TemplateKind.TRAIN_WELL_DEFINED
            slots = {"question": question.prompt, "ref_answer": question.reference_answer or "", "model_answer": final_answer_tail}
        else:
            kind = TemplateKind.TRAIN_UNDER_SPECIFIED
            slots = {"question": question.prompt, "model_answer": final_answer_tail}
        return self.ask(kind, slots, lambda r: parse_train_code(r, kind))

    def classify_eval_detection(self, question: str, answer: str) -> bool:
        return self.ask(
            TemplateKind.EVAL_DETECTION,
            {"question": question, "model_answer": answer},
            parse_detection,
            max_tokens=JSON_REPLY_TOKENS,
        )

    def classify_eval_abstention(self, question: str, ref_answer: str, label: str, answer: str) -> bool:
        slots = {"question": question, "ref_answer": ref_answer, "abstention_label": label, "model_answer": answer}
        return self.ask(TemplateKind.EVAL_ABSTENTION, slots, parse_yes_no)

    def classify_eval_correctness(self, question: str, ref_answer: str, answer: str) -> bool:
        slots = {"question": question, "ref_answer": ref_answer, "model_answer": answer}
        return self.ask(TemplateKind.EVAL_CORRECTNESS, slots, parse_correctness)

    def trajectory_quality(self, solution: str) -> TrajectoryQualityVerdict:
        return self.ask(
            TemplateKind.TRAJECTORY_QUALITY,
            {"model_answer": solution},
            parse_trajectory_quality,
            max_tokens=JSON_REPLY_TOKENS,
        )

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` with bounded concurrency; results keep input order."""
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Offline oracle for synthetic traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleJudgment:
    verdict: Verdict
    detected: bool
    abstained: bool


def oracle_judge_tokens(question: Question, tokens: Sequence[int]) -> OracleJudgment:
    toks = [Tok(t) for t in tokens]
    actions = [t for t in toks if t in ACTION_TOKENS]
    final = actions[-1] if actions else None
    abstained = final is Tok.ABSTAIN
    detected = Tok.CONC_UNANS in toks or Tok.ABSTAIN in toks
    if abstained:
        verdict = Verdict.ABSTAIN
    elif question.answerability is Answerability.UNDER_SPECIFIED:
        verdict = Verdict.CORRECT  # any non-abstention counts as a substantive answer
    elif final is not None and final - Tok.ANS_0 == oracle_sum(question):
        verdict = Verdict.CORRECT
    else:
        verdict = Verdict.INCORRECT
    return OracleJudgment(verdict=verdict, detected=detected, abstained=abstained)


def oracle_judge(question: Question, trace: Trace) -> OracleJudgment:
    return oracle_judge_tokens(question, parse_rendered(trace.text))
