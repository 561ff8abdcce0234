"""Model-graded evaluation harness: prompt templates, score parsing,
language-match enforcement, aggregation, and a resumable concurrent
runner over a pluggable judge backend.

The backend contract is a callable from a chat message list to the
judge's reply text. Scores are integers 0..10 extracted by a configurable
pattern. An answer whose detected language differs from the instruction's
is forced to score 0 before any judge text is considered.
"""

from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .errors import (
    BackendError,
    FormatError,
    InputError,
    ParseFailure,
    RangeError,
    TemplateError,
)

CATEGORIES = (
    "creative writing",
    "mail assistant",
    "health consultant",
    "translation",
    "copywriting generation",
    "knowledge-based question",
    "summarization",
    "proofreading",
    "open question",
    "morality and ethics",
    "general question",
    "English instruction",
    "arithmetic",
    "multi-turn dialogue",
)

SCORE_PATTERN = r"\[\[(\d+)\]\]"
SLOTS = ("instruction", "answer", "reference", "turns")

CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0xF900, 0xFAFF))
CJK_THRESHOLD = 0.3


@dataclass(frozen=True)
class BenchRecord:
    id: str
    category: str
    turns: tuple[str, ...]
    reference: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise InputError(f"record {self.id!r} has no turns")
        if self.category not in CATEGORIES:
            raise InputError(f"record {self.id!r} has unknown category {self.category!r}")


@dataclass(frozen=True)
class JudgeVerdict:
    id: str
    turn: int
    raw: str
    score: int | None  # None only when the backend failed
    language_mismatch: bool = False
    parse_failure: bool = False
    backend_error: bool = False

    def __post_init__(self):
        if self.score is not None and not (0 <= self.score <= 10):
            raise RangeError(f"verdict score {self.score} outside 0..10")
        if self.language_mismatch and self.score != 0:
            raise InputError("language mismatch verdicts must score 0")

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "turn": self.turn,
                "raw": self.raw,
                "score": self.score,
                "language_mismatch": self.language_mismatch,
                "parse_failure": self.parse_failure,
                "backend_error": self.backend_error,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "JudgeVerdict":
        rec = json.loads(line)
        return cls(
            rec["id"],
            rec["turn"],
            rec["raw"],
            rec["score"],
            rec.get("language_mismatch", False),
            rec.get("parse_failure", False),
            rec.get("backend_error", False),
        )


def load_bench(path: str | Path) -> list[BenchRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            for key in ("id", "category", "turns"):
                if key not in rec:
                    raise FormatError(f"{path}: line {lineno}: record needs {key!r}")
            if rec["id"] in seen:
                raise FormatError(f"{path}: line {lineno}: duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            records.append(
                BenchRecord(rec["id"], rec["category"], tuple(rec["turns"]), rec.get("reference"))
            )
    return records


def check_bench_shape(records: Sequence[BenchRecord]) -> None:
    """Full-benchmark sanity: all 14 categories, 10 instructions each."""
    counts = {}
    for r in records:
        counts[r.category] = counts.get(r.category, 0) + 1
    if set(counts) != set(CATEGORIES) or set(counts.values()) != {10}:
        raise InputError(
            f"expected 14 categories x 10 records, got {len(records)} records "
            f"over {len(counts)} categories"
        )


def load_answers(path: str | Path) -> dict[tuple[str, int], str]:
    answers = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("id", "turn", "answer"):
                if key not in rec:
                    raise FormatError(f"{path}: line {lineno}: record needs {key!r}")
            answers[(str(rec["id"]), int(rec["turn"]))] = rec["answer"]
    return answers


def fill_template(template: str, values: dict[str, str]) -> str:
    """Substitute {instruction}/{answer}/{reference}/{turns} slots.

    Non-slot brace content passes through untouched; a slot present in
    the template but absent from values is an error.
    """
    for name in values:
        if name not in SLOTS:
            raise TemplateError(f"unknown template slot {name!r}")
    out = template
    for name in SLOTS:
        token = "{" + name + "}"
        if token in out:
            if name not in values or values[name] is None:
                raise TemplateError(f"template slot {name!r} has no value")
            out = out.replace(token, values[name])
    return out


def parse_score(text: str, pattern: str = SCORE_PATTERN) -> int:
    m = re.compile(pattern).search(text)
    if m is None:
        raise ParseFailure(f"no score matching {pattern!r} in judge output")
    score = int(m.group(1))
    if not 0 <= score <= 10:
        raise RangeError(f"judge score {score} outside 0..10")
    return score


def cjk_fraction(text: str) -> float:
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return 0.0
    cjk = sum(1 for c in chars if any(lo <= ord(c) <= hi for lo, hi in CJK_RANGES))
    return cjk / len(chars)


def detect_language(text: str, threshold: float = CJK_THRESHOLD) -> str:
    return "zh" if cjk_fraction(text) >= threshold else "en"


def language_gate(instruction_lang: str, answer: str) -> bool:
    """True when the answer's detected language mismatches the instruction."""
    return detect_language(answer) != instruction_lang


@dataclass(frozen=True)
class ScoreTable:
    columns: dict[str, float]
    average: float

    def as_text(self) -> str:
        names = list(self.columns) + ["Avg"]
        vals = [f"{self.columns[n]:.2f}" for n in self.columns] + [f"{self.average:.2f}"]
        widths = [max(len(n), len(v)) for n, v in zip(names, vals)]
        head = "  ".join(n.ljust(w) for n, w in zip(names, widths))
        body = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return head + "\n" + body

    def save_csv(self, path: str | Path) -> None:
        names = list(self.columns) + ["Avg"]
        vals = [repr(self.columns[n]) for n in self.columns] + [repr(self.average)]
        Path(path).write_text(
            ",".join(names) + "\n" + ",".join(vals) + "\n", encoding="utf-8"
        )


def aggregate(by_benchmark: dict[str, Sequence]) -> ScoreTable:
    """Mean score per benchmark plus the unweighted mean of those means.

    Accepts verdicts or plain numbers; verdicts without a score (backend
    failures) are excluded.
    """
    columns = {}
    for name, items in by_benchmark.items():
        scores = [
            it if isinstance(it, (int, float)) else it.score
            for it in items
            if isinstance(it, (int, float)) or it.score is not None
        ]
        if not scores:
            raise InputError(f"benchmark {name!r} has no scored verdicts")
        columns[name] = sum(scores) / len(scores)
    if not columns:
        raise InputError("nothing to aggregate")
    return ScoreTable(columns, sum(columns.values()) / len(columns))


@dataclass
class HttpJudgeBackend:
    """Chat-completions style HTTP client; credentials come from the
    environment so keys never land in configs or manifests."""

    endpoint: str
    model: str
    api_key_env: str = "JUDGE_API_KEY"
    temperature: float = 0.0
    timeout: float = 120.0

    def __call__(self, messages: list[dict]) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "messages": messages, "temperature": self.temperature},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"judge request failed: {exc}") from exc


@dataclass(frozen=True)
class ConstantBackend:
    """Always replies the same text; handy for dry runs and smoke tests."""

    text: str = "[[5]]"

    def __call__(self, messages: list[dict]) -> str:
        return self.text


def _render_history(turns: Sequence[str], answers: Sequence[str]) -> str:
    lines = []
    for i, instruction in enumerate(turns):
        lines.append(f"USER: {instruction}")
        if i < len(answers):
            lines.append(f"ASSISTANT: {answers[i]}")
    return "\n".join(lines)


def _choose_template(record: BenchRecord, templates: dict[str, str]) -> tuple[str, str]:
    if record.reference is not None:
        name = "reference"
    elif len(record.turns) > 1:
        name = "multi"
    else:
        name = "single"
    if name not in templates:
        raise TemplateError(f"no {name!r} template configured")
    return name, templates[name]


def judge_one(
    record: BenchRecord,
    turn: int,
    answers: dict[tuple[str, int], str],
    backend: Callable[[list[dict]], str],
    templates: dict[str, str],
    pattern: str = SCORE_PATTERN,
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> JudgeVerdict:
    answer = answers.get((record.id, turn))
    if answer is None:
        raise InputError(f"no answer for record {record.id!r} turn {turn}")

    if language_gate(detect_language(record.turns[turn]), answer):
        return JudgeVerdict(record.id, turn, "", 0, language_mismatch=True)

    name, template = _choose_template(record, templates)
    values = {"instruction": record.turns[turn], "answer": answer}
    if record.reference is not None:
        values["reference"] = record.reference
    if name == "multi":
        history = [answers[(record.id, t)] for t in range(turn + 1)]
        values["turns"] = _render_history(record.turns[: turn + 1], history)
    prompt = fill_template(template, values)

    raw = None
    for attempt in range(retries + 1):
        try:
            raw = backend([{"role": "user", "content": prompt}])
            break
        except Exception:
            if attempt == retries:
                return JudgeVerdict(record.id, turn, "", None, backend_error=True)
            sleep(backoff * (2**attempt))
    try:
        score = parse_score(raw, pattern)
    except (ParseFailure, RangeError):
        return JudgeVerdict(record.id, turn, raw, 0, parse_failure=True)
    return JudgeVerdict(record.id, turn, raw, score)


def run_eval(
    records: Sequence[BenchRecord],
    answers: dict[tuple[str, int], str],
    backend: Callable[[list[dict]], str],
    templates: dict[str, str],
    out_path: str | Path | None = None,
    pattern: str = SCORE_PATTERN,
    threads: int = 4,
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[JudgeVerdict], ScoreTable]:
    """Judge every (record, turn), resumably and in deterministic order.

    Verdicts are appended to out_path as they complete, in task order, so
    an interrupted run resumes by skipping pairs already on disk and the
    final file is byte-identical to an uninterrupted run.
    """
    tasks = [(r, t) for r in records for t in range(len(r.turns))]
    for r, t in tasks:
        if (r.id, t) not in answers:
            raise InputError(f"no answer for record {r.id!r} turn {t}")

    done: dict[tuple[str, int], JudgeVerdict] = {}
    if out_path is not None and Path(out_path).exists():
        with open(out_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    v = JudgeVerdict.from_json(line)
                    done[(v.id, v.turn)] = v

    pending = [(r, t) for r, t in tasks if (r.id, t) not in done]

    def work(item):
        r, t = item
        return judge_one(r, t, answers, backend, templates, pattern, retries, backoff, sleep)

    fresh: list[JudgeVerdict] = []
    sink = open(out_path, "a", encoding="utf-8") if out_path is not None else None
    try:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            for verdict in pool.map(work, pending):
                fresh.append(verdict)
                if sink is not None:
                    sink.write(verdict.to_json() + "\n")
                    sink.flush()
    finally:
        if sink is not None:
            sink.close()

    fresh_by_key = {(v.id, v.turn): v for v in fresh}
    verdicts = [done.get((r.id, t)) or fresh_by_key[(r.id, t)] for r, t in tasks]

    by_category: dict[str, list[JudgeVerdict]] = {}
    for (r, t), v in zip(tasks, verdicts):
        by_category.setdefault(r.category, []).append(v)
    return verdicts, aggregate(by_category)
