"""Shared domain types and JSONL persistence.

Every value type here is a frozen dataclass so it can be handed to worker
threads without copying.  Records are stored one JSON object per line; optional
fields that are unset are omitted from the record rather than written as null.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence


class SchemaError(ValueError):
    """A record is well-formed JSON but violates the field schema."""


class JsonlParseError(ValueError):
    def __init__(self, path: Path | str, line_no: int, cause: str) -> None:
        super().__init__(f"{path}:{line_no}: {cause}")
        self.path = str(path)
        self.line_no = line_no


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

Tokenizer = Callable[[str], Sequence[str]]


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def count_tokens(text: str, tokenizer: Tokenizer = whitespace_tokenize) -> int:
    return len(tokenizer(text))


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class Answerability(enum.Enum):
    WELL_DEFINED = "well_defined"
    UNDER_SPECIFIED = "insufficient"

    @classmethod
    def parse(cls, label: str) -> "Answerability":
        key = label.strip().lower()
        if key in _ANSWERABILITY_ALIASES:
            return _ANSWERABILITY_ALIASES[key]
        raise SchemaError(f"unknown answerability label {label!r}")


_ANSWERABILITY_ALIASES = {
    "well_defined": Answerability.WELL_DEFINED,
    "insufficient": Answerability.UNDER_SPECIFIED,
    "under_specified": Answerability.UNDER_SPECIFIED,
    "unanswerable": Answerability.UNDER_SPECIFIED,
}


class Judgment(enum.Enum):
    ANSWERABLE = "ANSWERABLE"
    UNANSWERABLE = "UNANSWERABLE"


class Verdict(enum.IntEnum):
    """Evaluator code: 0 abstain, 1 correct (or substantive) answer, 2 incorrect."""

    ABSTAIN = 0
    CORRECT = 1
    INCORRECT = 2


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Question:
    id: str
    subset: str
    prompt: str
    answerability: Answerability
    reference_answer: str | None = None
    hidden_premise: str | None = None

    def __post_init__(self) -> None:
        if self.answerability is Answerability.WELL_DEFINED and self.reference_answer is None:
            raise SchemaError(f"question {self.id!r}: well-defined question needs a reference_answer")

    @property
    def well_defined(self) -> bool:
        return self.answerability is Answerability.WELL_DEFINED

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "subset": self.subset,
            "prompt": self.prompt,
            "answerability": self.answerability.value,
        }
        if self.reference_answer is not None:
            rec["reference_answer"] = self.reference_answer
        if self.hidden_premise is not None:
            rec["hidden_premise"] = self.hidden_premise
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Question":
        try:
            return cls(
                id=str(rec["id"]),
                subset=str(rec.get("subset", "default")),
                prompt=str(rec["prompt"]),
                answerability=Answerability.parse(str(rec["answerability"])),
                reference_answer=_opt_str(rec.get("reference_answer")),
                hidden_premise=_opt_str(rec.get("hidden_premise")),
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r}") from None


class ViolationCode(enum.Enum):
    MISSING_THINK = "MissingThink"
    MULTIPLE_THINK_CLOSE = "MultipleThinkClose"
    MISSING_JUDGE_BLOCK = "MissingJudgeBlock"
    MULTIPLE_JUDGE_CLOSE = "MultipleJudgeClose"
    CONCLUSION_NOT_LAST = "ConclusionNotLast"
    BAD_CONCLUSION_LINE = "BadConclusionLine"
    UNANSWERABLE_NOT_TERMINATED = "UnanswerableNotTerminated"
    ANSWERABLE_NO_REASONING = "AnswerableNoReasoning"
    FINAL_ANSWER_TOO_SHORT = "FinalAnswerTooShort"
    JUDGE_OUTSIDE_THINK = "JudgeOutsideThink"


@dataclass(frozen=True)
class ParseResult:
    valid: bool
    judgment: Judgment | None = None
    final_answer: str | None = None
    reasoning_segment: str | None = None
    violations: tuple[ViolationCode, ...] = ()

    def __post_init__(self) -> None:
        if self.valid != (not self.violations):
            raise ValueError("valid must be equivalent to an empty violation list")
        if self.valid and (self.judgment is None or self.final_answer is None):
            raise ValueError("a valid parse carries a judgment and a final answer")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"valid": self.valid, "violations": [v.value for v in self.violations]}
        if self.judgment is not None:
            rec["judgment"] = self.judgment.value
        if self.final_answer is not None:
            rec["final_answer"] = self.final_answer
        if self.reasoning_segment is not None:
            rec["reasoning_segment"] = self.reasoning_segment
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ParseResult":
        return cls(
            valid=bool(rec["valid"]),
            judgment=Judgment(rec["judgment"]) if "judgment" in rec else None,
            final_answer=rec.get("final_answer"),
            reasoning_segment=rec.get("reasoning_segment"),
            violations=tuple(ViolationCode(v) for v in rec.get("violations", ())),
        )


@dataclass(frozen=True)
class Trace:
    question_id: str
    text: str
    token_count: int
    parse: ParseResult | None = None
    judgment: Judgment | None = None
    final_answer: str | None = None
    verdict: Verdict | None = None
    detected: bool | None = None
    abstained: bool | None = None

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be nonnegative")
        if self.abstained and self.verdict is not None and self.verdict is not Verdict.ABSTAIN:
            raise ValueError("an abstained trace must carry verdict 0")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "question_id": self.question_id,
            "text": self.text,
            "token_count": self.token_count,
        }
        if self.judgment is not None:
            rec["judgment"] = self.judgment.value
        if self.final_answer is not None:
            rec["final_answer"] = self.final_answer
        if self.verdict is not None:
            rec["verdict"] = int(self.verdict)
        if self.detected is not None:
            rec["detected"] = self.detected
        if self.abstained is not None:
            rec["abstained"] = self.abstained
        if self.parse is not None:
            rec["parse"] = self.parse.to_record()
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Trace":
        try:
            return cls(
                question_id=str(rec["question_id"]),
                text=str(rec["text"]),
                token_count=int(rec["token_count"]),
                parse=ParseResult.from_record(rec["parse"]) if "parse" in rec else None,
                judgment=Judgment(rec["judgment"]) if rec.get("judgment") is not None else None,
                final_answer=_opt_str(rec.get("final_answer")),
                verdict=Verdict(int(rec["verdict"])) if rec.get("verdict") is not None else None,
                detected=_opt_bool(rec.get("detected")),
                abstained=_opt_bool(rec.get("abstained")),
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise SchemaError(str(exc)) from None


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    consistency: int
    task: int
    length: float
    total: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        total = self.format + self.consistency + self.task + self.length
        if self.total != self.total:  # NaN sentinel: derive
            object.__setattr__(self, "total", total)
        elif self.total != total:
            raise ValueError(f"total {self.total} != sum of terms {total}")

    def to_record(self) -> dict[str, Any]:
        return {
            "format": self.format,
            "consistency": self.consistency,
            "task": self.task,
            "length": self.length,
            "total": self.total,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "RewardBreakdown":
        return cls(
            format=int(rec["format"]),
            consistency=int(rec["consistency"]),
            task=int(rec["task"]),
            length=float(rec["length"]),
            total=float(rec["total"]),
        )


@dataclass(frozen=True)
class RolloutGroup:
    question_id: str
    traces: tuple[Trace, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]

    def __post_init__(self) -> None:
        g = len(self.traces)
        if g < 1 or len(self.rewards) != g or len(self.advantages) != g:
            raise ValueError("traces, rewards and advantages must share a length >= 1")


@dataclass(frozen=True)
class RunConfig:
    group_size: int = 8
    clip_low: float = 0.2
    clip_high: float = 0.28
    learning_rate: float = 30.0
    max_completion_tokens: int = 24
    min_final_answer_tokens: int = 5
    min_reasoning_tokens: int = 1
    judge_retry_limit: int = 3
    seed: int = 0
    prompts_per_step: int = 8
    eval_interval: int = 25
    eval_samples: int = 4
    dataset_count: int = 200
    dataset_seed: int = 0
    under_specified_fraction: float = 0.5
    length_requires_format: bool = False
    grammar_mask: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_low < 1.0:
            raise ConfigError("clip_low", f"must lie in (0, 1), got {self.clip_low}")
        if self.clip_high < self.clip_low:
            raise ConfigError("clip_high", f"must be >= clip_low ({self.clip_low}), got {self.clip_high}")
        if self.group_size < 2:
            raise ConfigError("group_size", f"must be >= 2 for training, got {self.group_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", "must be positive")
        if self.max_completion_tokens < 1:
            raise ConfigError("max_completion_tokens", "must be >= 1")
        if self.min_final_answer_tokens < 0:
            raise ConfigError("min_final_answer_tokens", "must be >= 0")
        if self.judge_retry_limit < 1:
            raise ConfigError("judge_retry_limit", "must be >= 1")
        if self.prompts_per_step < 1:
            raise ConfigError("prompts_per_step", "must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval", "must be >= 1")
        if not 0.0 <= self.under_specified_fraction <= 1.0:
            raise ConfigError("under_specified_fraction", "must lie in [0, 1]")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.field_names()}


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------


def _iter_records(path: Path | str) -> Iterable[tuple[int, dict[str, Any]]]:
    path = Path(path)
    try:
        # split on newline only; str.splitlines would also break on U+2028 and friends
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JsonlParseError(path, i, exc.msg) from None
        if not isinstance(rec, dict):
            raise JsonlParseError(path, i, "record is not a JSON object")
        yield i, rec


def read_jsonl(path: Path | str) -> list[dict[str, Any]]:
    """Read a JSONL file, skipping blank lines and failing on the first bad one."""
    return [rec for _, rec in _iter_records(path)]


def write_jsonl(records: Iterable[dict[str, Any]], path: Path | str) -> None:
    path = Path(path)
    body = "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)
    try:
        path.write_text(body, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_typed(path: Path | str, build: Callable[[dict[str, Any]], Any]) -> list[Any]:
    out = []
    for i, rec in _iter_records(path):
        try:
            out.append(build(rec))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{i}: {exc}") from None
    return out


def load_questions(path: Path | str) -> list[Question]:
    return _load_typed(path, Question.from_record)


def store_questions(questions: Iterable[Question], path: Path | str) -> None:
    write_jsonl((q.to_record() for q in questions), path)


def load_traces(path: Path | str) -> list[Trace]:
    return _load_typed(path, Trace.from_record)


def store_traces(traces: Iterable[Trace], path: Path | str) -> None:
    write_jsonl((t.to_record() for t in traces), path)


def _opt_str(value: Any) -> str | None:
    return None if value is None else str(value)


def _opt_bool(value: Any) -> bool | None:
    return None if value is None else bool(value)
