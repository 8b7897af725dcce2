"""Command-line entry point: ``jts <subcommand>``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Failures print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from jts import __version__
from jts.contract import tail_two_paragraphs, validate_contract
from jts.core import (
    ConfigError,
    RunConfig,
    Trace,
    load_questions,
    load_traces,
    read_jsonl,
    store_questions,
    store_traces,
    write_jsonl,
)
from jts.grpo import METRIC_COLUMNS, ToyPolicy, default_dataset, initial_policy, sample_eval_traces, train
from jts.judge import ChatCompletionsTransport, CallLog, JudgeClient, oracle_judge
from jts.metrics import entropy_profile, entropy_profile_from_entropies, report
from jts.rewards import context_for, jts_total_reward, plain_breakdown
from jts.synth import SynthSpec, generate

log = logging.getLogger("jts")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration and manifests
# ---------------------------------------------------------------------------


def _coerce(name: str, raw: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(name, f"expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {type(default).__name__}, got {raw!r}") from None
    return raw


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then the YAML file, then command-line overrides."""
    defaults = RunConfig().to_dict()
    merged = dict(defaults)
    layers: list[dict[str, Any]] = []
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("<file>", f"{path} must hold a key-value mapping")
        layers.append(loaded)
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(key, "unknown configuration key")
            merged[key] = _coerce(key, value, defaults[key])
    return RunConfig(**merged)


def _parse_sets(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any]
    seed: int | None
    inputs: dict[str, str]
    tool_version: str = __version__
    started_at: str = field(default_factory=lambda: _now())
    finished_at: str | None = None
    status: str = "running"

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"manifest-{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    spec = SynthSpec(count=args.count, under_specified_fraction=args.fraction, seed=args.seed)
    questions = generate(spec)
    store_questions(questions, args.out)
    n_under = sum(not q.well_defined for q in questions)
    return {"questions": len(questions), "under_specified": n_under, "out": str(args.out)}


def cmd_validate(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    traces = load_traces(args.traces)
    rows, histogram = [], Counter()
    for i, t in enumerate(traces):
        parse = validate_contract(
            t.text, config.min_final_answer_tokens, min_reasoning_tokens=config.min_reasoning_tokens
        )
        histogram.update(v.value for v in parse.violations)
        rows.append({"index": i, "question_id": t.question_id, "valid": parse.valid,
                     "violations": [v.value for v in parse.violations]})
    if args.out:
        write_jsonl(rows, args.out)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    summary = {"traces": len(rows), "valid": sum(r["valid"] for r in rows), "violations": dict(sorted(histogram.items()))}
    return summary


def _parsed(trace: Trace, config: RunConfig) -> Trace:
    if trace.parse is not None:
        return trace
    parse = validate_contract(trace.text, config.min_final_answer_tokens, min_reasoning_tokens=config.min_reasoning_tokens)
    return Trace(**{**trace.__dict__, "parse": parse})


def cmd_score(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    questions = {q.id: q for q in load_questions(args.questions)}
    traces = [_parsed(t, config) for t in load_traces(args.traces)]
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(traces):
        if t.question_id not in questions:
            raise KeyError(f"trace {i} references unknown question {t.question_id!r}")
        groups.setdefault(t.question_id, []).append(i)

    out: list[dict[str, Any] | None] = [None] * len(traces)
    for qid, idx in groups.items():
        ctxs = [context_for(questions[qid], traces[i], trace_id=f"{qid}#{i}") for i in idx]
        if args.mode == "jts":
            breakdowns = jts_total_reward(ctxs, require_format=config.length_requires_format)
        else:
            breakdowns = plain_breakdown(ctxs)
        for i, rb in zip(idx, breakdowns):
            out[i] = {"index": i, "question_id": qid, **rb.to_record()}
    rows = [r for r in out if r is not None]
    write_jsonl(rows, args.out)
    terms = ("format", "consistency", "task", "length", "total")
    n = max(1, len(rows))
    return {"traces": len(rows), "mode": args.mode, "mean": {k: sum(r[k] for r in rows) / n for k in terms}}


def cmd_judge(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    questions = {q.id: q for q in load_questions(args.questions)}
    traces = [_parsed(t, config) for t in load_traces(args.traces)]
    judged: list[Trace] = []
    if args.offline_oracle:
        for t in traces:
            oj = oracle_judge(questions[t.question_id], t)
            judged.append(Trace(**{**t.__dict__, "verdict": oj.verdict, "detected": oj.detected, "abstained": oj.abstained}))
    else:
        out_dir = Path(args.out).parent
        client = JudgeClient(
            ChatCompletionsTransport.from_env(),
            retry_limit=config.judge_retry_limit,
            call_log=CallLog(out_dir / "judge_calls.jsonl"),
        )
        judged = client.map(lambda t: _remote_judge(client, args.kind, questions[t.question_id], t), traces)
    store_traces(judged, args.out)
    return {"traces": len(judged), "kind": args.kind, "offline": bool(args.offline_oracle)}


def _remote_judge(client: JudgeClient, kind: str, question, trace: Trace) -> Trace:
    answer = trace.final_answer if trace.final_answer is not None else (trace.parse.final_answer if trace.parse else None)
    answer = answer if answer is not None else trace.text
    fields = dict(trace.__dict__)
    if kind == "train":
        verdict = client.classify_train(question, tail_two_paragraphs(answer))
        fields.update(verdict=verdict, abstained=verdict == 0)
    elif kind == "detection":
        fields["detected"] = client.classify_eval_detection(question.prompt, trace.text)
    elif kind == "abstention":
        label = "insufficient" if not question.well_defined else "well_defined"
        fields["abstained"] = client.classify_eval_abstention(question.prompt, question.reference_answer or "", label, answer)
    elif kind == "correctness":
        correct = client.classify_eval_correctness(question.prompt, question.reference_answer or "", answer)
        fields["verdict"] = 1 if correct else 2
    else:
        raise UsageError(f"unknown judge kind {kind!r}")
    from jts.core import Verdict

    if fields.get("verdict") is not None:
        fields["verdict"] = Verdict(int(fields["verdict"]))
    return Trace(**fields)


def write_policy(policy: ToyPolicy, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["context", "prev_token", "next_token", "logit"])
        for (c, p, n), v in np.ndenumerate(policy.logits):
            writer.writerow([c, p, n, repr(float(v))])


def read_policy(path: Path) -> np.ndarray:
    template = ToyPolicy.uniform().logits
    out = np.empty_like(template)
    with path.open(encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[int(row["context"]), int(row["prev_token"]), int(row["next_token"])] = float(row["logit"])
    return out


def _write_metrics_csv(rows: Sequence[dict[str, float]], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([int(row[c]) if c == "step" else repr(float(row[c])) for c in METRIC_COLUMNS])


def cmd_train(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_questions(args.questions) if args.questions else default_dataset(config)
    result = train(config, dataset, mode=args.mode, steps=args.steps,
                   policy=initial_policy(args.mode, masked=config.grammar_mask))
    _write_metrics_csv(result.metrics, out / "metrics.csv")
    write_policy(result.state.policy, out / "policy.csv")
    eval_rng = np.random.default_rng([config.seed, 2, args.steps])
    traces = sample_eval_traces(result.state.policy, dataset, config, eval_rng, config.eval_samples)
    store_traces(traces, out / "eval_traces.jsonl")
    store_questions(dataset, out / "questions.jsonl")
    final = result.metrics[-1]
    return {"steps": args.steps, "mode": args.mode, "final": {k: final[k] for k in METRIC_COLUMNS}}


def _report_paths(out: str) -> tuple[Path, Path]:
    path = Path(out)
    stem = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    return stem.with_suffix(".csv"), stem.with_suffix(".json")


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    rep = report(load_traces(args.traces), load_questions(args.questions))
    csv_path, json_path = _report_paths(args.out)
    csv_path.write_text(rep.to_csv(), encoding="utf-8")
    json_path.write_text(rep.to_json(), encoding="utf-8")
    return {"rows": len(rep.rows), "csv": str(csv_path), "json": str(json_path)}


def cmd_entropy(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    rows = read_jsonl(args.probs)
    if all("entropies" in r for r in rows):
        profile = entropy_profile_from_entropies([r["entropies"] for r in rows])
    elif all("probs" in r for r in rows):
        profile = entropy_profile([r["probs"] for r in rows])
    else:
        raise UsageError("every row needs either 'probs' or 'entropies'")
    Path(args.out).write_text(json.dumps(profile.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {k: v for k, v in profile.to_dict().items() if k not in ("per_token",)}


def cmd_report(args: argparse.Namespace, config: RunConfig) -> dict[str, Any]:
    run_dir = Path(args.run_dir)
    with (run_dir / "metrics.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{run_dir / 'metrics.csv'} has no rows")
    first, last = rows[0], rows[-1]
    summary = {
        "run_dir": str(run_dir),
        "evaluations": len(rows),
        "initial": {k: float(v) for k, v in first.items()},
        "final": {k: float(v) for k, v in last.items()},
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jts", description="Judge-then-solve abstention toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with RunConfig keys")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic questions")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", parents=[common], help="check traces against the output contract")
    p.add_argument("traces")
    p.add_argument("--out")

    p = sub.add_parser("score", parents=[common], help="compute per-trace rewards")
    p.add_argument("traces")
    p.add_argument("--questions", required=True)
    p.add_argument("--mode", choices=("jts", "plain"), default="jts")
    p.add_argument("--out", required=True)

    p = sub.add_parser("judge", parents=[common], help="attach evaluator verdicts to traces")
    p.add_argument("--kind", choices=("train", "detection", "abstention", "correctness"), default="train")
    p.add_argument("--traces", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--offline-oracle", action="store_true", help="use the exact oracle for synthetic traces")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="GRPO on the synthetic task")
    p.add_argument("--mode", choices=("jts", "plain"), default="jts")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--questions", help="training questions (default: generated)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="abstention and answer metrics")
    p.add_argument("--traces", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("entropy", parents=[common], help="token-entropy profile")
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="summarize a training run directory")
    p.add_argument("--run-dir", required=True)
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "validate": cmd_validate,
    "score": cmd_score,
    "judge": cmd_judge,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "entropy": cmd_entropy,
    "report": cmd_report,
}

_INPUT_ARGS = ("traces", "questions", "probs", "config")


def _output_dir(args: argparse.Namespace) -> Path | None:
    if args.command == "train":
        return Path(args.out)
    if args.command == "report":
        return Path(args.run_dir)
    out = getattr(args, "out", None)
    return Path(out).parent if out else None


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        overrides: dict[str, Any] = _parse_sets(args.set)
        if getattr(args, "seed", None) is not None and args.command == "train":
            overrides["seed"] = args.seed
        config = load_config(args.config, overrides)
    except (ConfigError, UsageError) as exc:
        return _error("config", str(exc), 2)
    except (OSError, yaml.YAMLError) as exc:
        return _error("config", f"cannot load config: {exc}", 2)

    inputs = {}
    for name in _INPUT_ARGS:
        value = getattr(args, name, None)
        if value and Path(value).is_file():
            inputs[name] = file_digest(value)
    manifest = RunManifest(
        command=args.command, argv=argv, config=config.to_dict(), seed=config.seed, inputs=inputs
    )
    out_dir = _output_dir(args)
    try:
        if out_dir is not None:
            manifest.write(out_dir)
        result = COMMANDS[args.command](args, config)
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable record
        log.debug("command failed", exc_info=True)
        if out_dir is not None:
            manifest.status, manifest.finished_at = "failed", _now()
            manifest.write(out_dir)
        return _error(type(exc).__name__, str(exc), 1)

    if out_dir is not None:
        manifest.status, manifest.finished_at = "ok", _now()
        manifest.write(out_dir)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
