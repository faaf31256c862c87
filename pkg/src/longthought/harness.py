"""Benchmark evaluation: loading, running, scoring, analytics.

Four benchmarks are supported: MathVerse (testmini, text-only split
removed), MathVision, OlympiadBench (theorem-proving parts removed), and
MMMU (validation split). Scoring reports per-benchmark accuracy to one
decimal and the cross-benchmark average to two, rounding halves up so
the published tables reproduce digit for digit.

Runs are self-contained: every item result stores the raw response next
to its verdict, so any run can be re-verified offline and scores are
recomputable from the artifact alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .client import CompletionRequest, InferenceClient, SamplingParams, user_message
from .errors import (
    EmptyRun,
    IoFailure,
    MissingDifficultyAnnotations,
    NoAnswerFound,
    SchemaViolation,
    UnknownBenchmark,
)
from .transcripts import (
    FORMAT_INSTRUCTION,
    extract_final_answer,
    measure_thought_length,
    parse_leniently,
)
from .verify import equivalent

log = logging.getLogger(__name__)

BENCHMARKS = ("MathVerse", "MathVision", "OlympiadBench", "MMMU")

DIFFICULTIES = ("easy", "medium", "hard")

# Items carrying one of these flags never make it into an evaluation.
EXCLUDED_FLAGS = {
    "MathVerse": frozenset({"text_only"}),
    "OlympiadBench": frozenset({"theorem_proof"}),
}

# Benchmarks pinned to a single split; other splits are dropped on load.
REQUIRED_SPLITS = {
    "MathVerse": "testmini",
    "MMMU": "validation",
}

_BENCHMARK_REQUIRED = ("id", "benchmark", "split", "question", "gold")


@dataclass(frozen=True)
class BenchmarkItem:
    """One evaluation problem in the common cross-benchmark schema."""

    id: str
    benchmark: str
    split: str
    question: str
    gold: str
    image_ref: str | None = None
    difficulty: str | None = None
    subject: str | None = None
    category_flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise UnknownBenchmark(f"unknown benchmark {self.benchmark!r}")
        if self.difficulty is not None and self.difficulty not in DIFFICULTIES:
            raise SchemaViolation(f"unknown difficulty {self.difficulty!r}",
                                  field="difficulty")
        if not self.id or not self.question:
            raise SchemaViolation("id and question must be non-empty")


def _item_from_doc(doc: dict, line: int | None = None) -> BenchmarkItem:
    if not isinstance(doc, dict):
        raise SchemaViolation("benchmark record is not an object", line=line)
    missing = [f for f in _BENCHMARK_REQUIRED if f not in doc]
    if missing:
        raise SchemaViolation(f"missing field {missing[0]!r}",
                              line=line, field=missing[0])
    try:
        return BenchmarkItem(
            id=doc["id"], benchmark=doc["benchmark"], split=doc["split"],
            question=doc["question"], gold=str(doc["gold"]),
            image_ref=doc.get("image_ref"),
            difficulty=doc.get("difficulty"),
            subject=doc.get("subject"),
            category_flags=frozenset(doc.get("category_flags") or ()))
    except SchemaViolation as exc:
        raise SchemaViolation(exc.message, line=line, field=exc.field) from exc


def load_benchmark(source) -> list[BenchmarkItem]:
    """Load benchmark items from JSONL lines or dicts, applying exclusions.

    MathVerse items flagged text_only and OlympiadBench items flagged
    theorem_proof are dropped; MathVerse is restricted to testmini and
    MMMU to its validation split. Exclusion counts are logged so silent
    shrinkage is visible.
    """
    if isinstance(source, (str, Path)):
        try:
            items: Iterable = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read {source}: {exc}") from exc
    else:
        items = source

    loaded: list[BenchmarkItem] = []
    dropped_flags = 0
    dropped_split = 0
    for lineno, raw in enumerate(items, start=1):
        if isinstance(raw, str):
            if not raw.strip():
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
        else:
            doc = raw
        item = _item_from_doc(doc, line=lineno)
        banned = EXCLUDED_FLAGS.get(item.benchmark, frozenset())
        if item.category_flags & banned:
            dropped_flags += 1
            continue
        required_split = REQUIRED_SPLITS.get(item.benchmark)
        if required_split is not None and item.split != required_split:
            dropped_split += 1
            continue
        loaded.append(item)
    if dropped_flags or dropped_split:
        log.info("load_benchmark: dropped %d flagged and %d off-split items",
                 dropped_flags, dropped_split)
    return loaded


@dataclass(frozen=True)
class ItemResult:
    """Outcome of one item: the response plus everything derived from it."""

    item_id: str
    benchmark: str
    gold: str
    response: str
    verdict: bool
    thought_length: int
    answer: str | None = None
    answer_kind: str | None = None
    difficulty: str | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "benchmark": self.benchmark,
                "gold": self.gold, "response": self.response,
                "verdict": self.verdict, "thought_length": self.thought_length,
                "answer": self.answer, "answer_kind": self.answer_kind,
                "difficulty": self.difficulty, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "ItemResult":
        return cls(item_id=d["item_id"], benchmark=d["benchmark"],
                   gold=d["gold"], response=d["response"],
                   verdict=d["verdict"], thought_length=d["thought_length"],
                   answer=d.get("answer"), answer_kind=d.get("answer_kind"),
                   difficulty=d.get("difficulty"),
                   flags=tuple(d.get("flags") or ()))


@dataclass(frozen=True)
class EvalRun:
    """A complete evaluation pass of one model over loaded items."""

    model: str
    endpoint_url: str
    sampling: dict
    items: tuple[ItemResult, ...]
    cache_dir: str | None = None

    def to_dict(self) -> dict:
        return {"model": self.model, "endpoint_url": self.endpoint_url,
                "sampling": self.sampling, "cache_dir": self.cache_dir,
                "items": [r.to_dict() for r in self.items]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRun":
        return cls(model=d["model"], endpoint_url=d["endpoint_url"],
                   sampling=d["sampling"], cache_dir=d.get("cache_dir"),
                   items=tuple(ItemResult.from_dict(r) for r in d["items"]))


def save_run(run: EvalRun, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(run.to_dict(), indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    return path


def load_run(path: str | Path) -> EvalRun:
    path = Path(path)
    try:
        return EvalRun.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise IoFailure(f"cannot read run {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise SchemaViolation(f"run file {path} is not valid: {exc}") from exc


def judge_response(response: str, gold: str) -> tuple[bool, int, str | None,
                                                      str | None, tuple[str, ...]]:
    """Verdict, thought length, answer, answer kind, and flags for one response.

    Responses that ignore the grammar are still scored from whatever
    answer they contain, flagged format_noncompliant; their length is
    measured over the whole response since no thought span exists.
    """
    parsed = parse_leniently(response)
    flags: list[str] = []
    if not parsed.format_ok:
        flags.append("format_noncompliant")
    length = measure_thought_length(parsed.thought if parsed.format_ok
                                    else response)
    try:
        answer = extract_final_answer(parsed.solution)
    except NoAnswerFound:
        flags.append("unanswered")
        return False, length, None, None, tuple(flags)
    verdict = equivalent(answer.raw, gold)
    return verdict, length, answer.raw, answer.kind, tuple(flags)


def evaluate(items: Sequence[BenchmarkItem],
             client: InferenceClient,
             sampling: SamplingParams | None = None,
             image_loader: Callable[[BenchmarkItem], bytes | None] | None = None,
             instruction: str = FORMAT_INSTRUCTION,
             max_inflight: int = 4) -> EvalRun:
    """One completion per item, parsed leniently and verified.

    A transport failure on an item scores it incorrect with flags
    transport_failed and unanswered; dropping such items would inflate
    accuracy, so they stay in the denominator.
    """
    sampling = sampling or SamplingParams()
    requests = []
    for item in items:
        image = image_loader(item) if (image_loader and item.image_ref) else None
        text = f"{item.question}\n\n{instruction}" if instruction else item.question
        requests.append(CompletionRequest(messages=[user_message(text, image)]))
    results = client.batch_complete(requests, sampling=sampling,
                                    max_inflight=max_inflight)

    item_results: list[ItemResult] = []
    for item, result in zip(items, results):
        if isinstance(result, Exception):
            log.warning("eval: transport failure on %s: %s", item.id, result)
            item_results.append(ItemResult(
                item_id=item.id, benchmark=item.benchmark, gold=item.gold,
                response="", verdict=False, thought_length=0,
                difficulty=item.difficulty,
                flags=("transport_failed", "unanswered")))
            continue
        verdict, length, answer, kind, flags = judge_response(result.content,
                                                              item.gold)
        item_results.append(ItemResult(
            item_id=item.id, benchmark=item.benchmark, gold=item.gold,
            response=result.content, verdict=verdict, thought_length=length,
            answer=answer, answer_kind=kind, difficulty=item.difficulty,
            flags=flags))
    return EvalRun(model=client.endpoint.model,
                   endpoint_url=client.endpoint.base_url,
                   sampling={**sampling.resolved(), "mode": sampling.mode},
                   items=tuple(item_results),
                   cache_dir=str(client.cache.root) if client.cache else None)


def audit_verdicts(run: EvalRun) -> list[str]:
    """Ids whose stored verdict disagrees with one recomputed from the response.

    Transport-failed items are skipped (there is no response to rejudge).
    A clean run returns an empty list; anything else means the artifact
    was edited or the scorer drifted.
    """
    mismatched = []
    for item in run.items:
        if "transport_failed" in item.flags:
            continue
        verdict, _, _, _, _ = judge_response(item.response, item.gold)
        if verdict != item.verdict:
            mismatched.append(item.item_id)
    return mismatched


def _accuracy(correct: int, total: int) -> Decimal:
    return (Decimal(correct) * 100 / Decimal(total)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP)


def _mean(values: Sequence[Decimal], quantum: str) -> Decimal:
    return (sum(values, Decimal(0)) / Decimal(len(values))).quantize(
        Decimal(quantum), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class EvalReport:
    """Scores of one run: per benchmark, averaged, and by difficulty."""

    per_benchmark: dict[str, float]
    average: float
    mean_thought_length: dict[str, float]
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    missing_benchmarks: tuple[str, ...] = ()
    per_difficulty: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return {"per_benchmark": self.per_benchmark, "average": self.average,
                "mean_thought_length": self.mean_thought_length,
                "counts": {k: list(v) for k, v in self.counts.items()},
                "missing_benchmarks": list(self.missing_benchmarks),
                "per_difficulty": self.per_difficulty}


def report_from_accuracies(accuracies: dict[str, float | str]) -> EvalReport:
    """Build a report straight from per-benchmark accuracy values.

    The average is the arithmetic mean of the given accuracies, halves
    rounded up, to two decimals. Values pass through Decimal as strings
    so float artifacts cannot perturb the rounding.
    """
    if not accuracies:
        raise EmptyRun("no accuracies given")
    unknown = sorted(set(accuracies) - set(BENCHMARKS))
    if unknown:
        raise UnknownBenchmark(f"unknown benchmark {unknown[0]!r}")
    per = {name: Decimal(str(accuracies[name])).quantize(
               Decimal("0.1"), rounding=ROUND_HALF_UP)
           for name in BENCHMARKS if name in accuracies}
    average = _mean(list(per.values()), "0.01")
    missing = tuple(b for b in BENCHMARKS if b not in per)
    if missing:
        log.warning("average computed without %s", ", ".join(missing))
    return EvalReport(
        per_benchmark={k: float(v) for k, v in per.items()},
        average=float(average),
        mean_thought_length={},
        missing_benchmarks=missing)


def score(run: EvalRun) -> EvalReport:
    """Accuracy per benchmark (1 decimal) and their mean (2 decimals)."""
    if not run.items:
        raise EmptyRun("run has no items")
    totals: dict[str, int] = {}
    corrects: dict[str, int] = {}
    lengths: dict[str, int] = {}
    for item in run.items:
        totals[item.benchmark] = totals.get(item.benchmark, 0) + 1
        corrects[item.benchmark] = corrects.get(item.benchmark, 0) + item.verdict
        lengths[item.benchmark] = lengths.get(item.benchmark, 0) + item.thought_length
    per = {name: _accuracy(corrects[name], totals[name])
           for name in BENCHMARKS if name in totals}
    average = _mean(list(per.values()), "0.01")
    missing = tuple(b for b in BENCHMARKS if b not in per)
    if missing:
        log.warning("average computed without %s", ", ".join(missing))
    mean_lengths = {
        name: float((Decimal(lengths[name]) / Decimal(totals[name])).quantize(
            Decimal("0.1"), rounding=ROUND_HALF_UP))
        for name in BENCHMARKS if name in totals}
    per_difficulty = None
    if any(item.difficulty for item in run.items):
        per_difficulty = difficulty_breakdown(run)
    return EvalReport(
        per_benchmark={k: float(v) for k, v in per.items()},
        average=float(average),
        mean_thought_length=mean_lengths,
        counts={name: (corrects[name], totals[name])
                for name in BENCHMARKS if name in totals},
        missing_benchmarks=missing,
        per_difficulty=per_difficulty)


def difficulty_breakdown(run: EvalRun) -> dict[str, float]:
    """Accuracy per difficulty bin plus the item-weighted overall.

    Only annotated items participate; empty bins are absent from the
    map. The overall value is recomputed from raw counts, not from the
    rounded bin accuracies, so it stays the exact weighted combination.
    """
    annotated = [item for item in run.items if item.difficulty]
    if not annotated:
        raise MissingDifficultyAnnotations(
            "no item in the run carries a difficulty annotation")
    breakdown: dict[str, float] = {}
    for bin_name in DIFFICULTIES:
        members = [item for item in annotated if item.difficulty == bin_name]
        if not members:
            continue
        correct = sum(item.verdict for item in members)
        breakdown[bin_name] = float(
            (Decimal(correct) * 100 / Decimal(len(members))).quantize(
                Decimal("0.01"), rounding=ROUND_HALF_UP))
    overall_correct = sum(item.verdict for item in annotated)
    breakdown["overall"] = float(
        (Decimal(overall_correct) * 100 / Decimal(len(annotated))).quantize(
            Decimal("0.01"), rounding=ROUND_HALF_UP))
    return breakdown


LENGTH_ANALYSIS_FIELDS = ("benchmark", "mean_length", "accuracy",
                          "baseline_accuracy")


def length_analysis(run: EvalRun,
                    baseline_run: EvalRun | None = None) -> list[dict]:
    """Plot-ready rows relating mean thought length to accuracy.

    One row per benchmark present in the run, ordered by ascending mean
    length (name breaks ties). The optional baseline run contributes a
    baseline_accuracy column for the same benchmark.
    """
    report = score(run)
    baseline = score(baseline_run).per_benchmark if baseline_run else {}
    rows = [{"benchmark": name,
             "mean_length": report.mean_thought_length[name],
             "accuracy": report.per_benchmark[name],
             "baseline_accuracy": baseline.get(name)}
            for name in report.per_benchmark]
    rows.sort(key=lambda r: (r["mean_length"], r["benchmark"]))
    return rows
