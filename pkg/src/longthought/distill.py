"""Rollout-based distillation over a pool of visual reasoning problems.

The pipeline has three steps. First the pool is screened against the
base model under greedy decoding: anything it already solves is dropped,
because such problems teach nothing. Then a teacher samples five
rollouts per surviving problem; the number of correct rollouts bins the
problem by difficulty (4-5 correct is medium, 2-3 is hard, 0-1 is
discarded as noise or out of reach). Finally the correct rollouts of
retained problems become training records, capped per problem so easy
problems do not flood the corpus.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .client import (
    GREEDY,
    CompletionRequest,
    InferenceClient,
    SamplingParams,
    user_message,
)
from .errors import (
    AllRolloutsFailedTransport,
    EmptyCorpus,
    InvalidBinningArity,
    IoFailure,
    NoAnswerFound,
    SchemaViolation,
)
from .transcripts import (
    FORMAT_INSTRUCTION,
    FinalAnswer,
    LongThoughtRecord,
    extract_final_answer,
    parse_leniently,
)
from .verify import equivalent

log = logging.getLogger(__name__)

POOL_FIELDS = ("id", "dataset", "question", "image_ref", "ground_truth")

# Which corpus domain each source dataset belongs to.
DATASET_DOMAINS = {
    "Geos": "geometry",
    "GeoQA+": "geometry",
    "Geometry3K": "geometry",
    "UniGeo": "geometry",
    "TabMWP": "table_chart_figure",
    "FigureQA": "table_chart_figure",
    "ChartQA": "table_chart_figure",
    "CLEVR": "object",
}

# Reference pool composition, used as an optional ingest check.
POOL_COMPOSITION = {
    "Geos": 279,
    "GeoQA+": 563,
    "Geometry3K": 551,
    "UniGeo": 555,
    "TabMWP": 568,
    "FigureQA": 589,
    "ChartQA": 509,
    "CLEVR": 548,
}

ROLLOUTS_PER_PROBLEM = 5

ROLE_SOURCES = {
    "teacher_qvq": "QVQ",
    "self_distilled_m0": "SelfDistilled",
}


@dataclass(frozen=True)
class VisualProblem:
    """One pool entry: a question about an image with a known answer."""

    id: str
    dataset: str
    question: str
    image_ref: str
    ground_truth: str

    def __post_init__(self):
        if not self.id:
            raise SchemaViolation("problem id must be non-empty")
        if self.dataset not in DATASET_DOMAINS:
            raise SchemaViolation(f"unknown dataset {self.dataset!r}",
                                  field="dataset")
        if not self.question or not self.image_ref:
            raise SchemaViolation("question and image_ref must be non-empty")

    @property
    def domain(self) -> str:
        return DATASET_DOMAINS[self.dataset]


def build_problem_pool(source, check_composition: bool = False) -> list[VisualProblem]:
    """Load the problem pool from JSONL lines or dicts.

    Duplicate ids are rejected; unknown datasets are rejected. With
    check_composition, the per-dataset counts must match the reference
    composition exactly.
    """
    if isinstance(source, (str, Path)):
        try:
            items: Iterable = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read {source}: {exc}") from exc
    else:
        items = source

    pool: list[VisualProblem] = []
    seen: set[str] = set()
    for lineno, item in enumerate(items, start=1):
        if isinstance(item, str):
            if not item.strip():
                continue
            try:
                doc = json.loads(item)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
        else:
            doc = item
        missing = [f for f in POOL_FIELDS if f not in doc]
        if missing:
            raise SchemaViolation(f"missing field {missing[0]!r}",
                                  line=lineno, field=missing[0])
        try:
            problem = VisualProblem(**{f: doc[f] for f in POOL_FIELDS})
        except SchemaViolation as exc:
            raise SchemaViolation(exc.message, line=lineno, field=exc.field) from exc
        if problem.id in seen:
            raise SchemaViolation(f"duplicate problem id {problem.id!r}",
                                  line=lineno)
        seen.add(problem.id)
        pool.append(problem)
    if not pool:
        raise EmptyCorpus("problem pool is empty")

    if check_composition:
        counts: dict[str, int] = {}
        for p in pool:
            counts[p.dataset] = counts.get(p.dataset, 0) + 1
        if counts != POOL_COMPOSITION:
            raise SchemaViolation(
                f"pool composition {counts} does not match the reference "
                f"composition {POOL_COMPOSITION}")
    return pool


def problem_messages(problem: VisualProblem,
                     image_loader: Callable[[VisualProblem], bytes | None],
                     instruction: str = FORMAT_INSTRUCTION) -> list[dict]:
    image = image_loader(problem)
    text = f"{problem.question}\n\n{instruction}" if instruction else problem.question
    return [user_message(text, image)]


def _predicted_answer(text: str) -> FinalAnswer | None:
    parsed = parse_leniently(text)
    try:
        return extract_final_answer(parsed.solution)
    except NoAnswerFound:
        return None


@dataclass(frozen=True)
class BaseFilterOutcome:
    """Split of the pool after screening against the base model."""

    kept: tuple[VisualProblem, ...]
    excluded: tuple[VisualProblem, ...]
    base_answers: dict[str, str]
    flagged: tuple[str, ...]  # kept despite a transport failure


def base_model_filter(problems: Sequence[VisualProblem],
                      client: InferenceClient,
                      image_loader: Callable[[VisualProblem], bytes | None],
                      sampling: SamplingParams = GREEDY,
                      max_inflight: int = 4) -> BaseFilterOutcome:
    """Drop problems the base model already answers correctly.

    Screening runs greedy decoding, one completion per problem. When the
    endpoint cannot be reached for a problem, the problem is kept and
    flagged: an unreachable endpoint must never silently shrink the pool.
    """
    requests = [CompletionRequest(messages=problem_messages(p, image_loader))
                for p in problems]
    results = client.batch_complete(requests, sampling=sampling,
                                    max_inflight=max_inflight)
    kept: list[VisualProblem] = []
    excluded: list[VisualProblem] = []
    base_answers: dict[str, str] = {}
    flagged: list[str] = []
    for problem, result in zip(problems, results):
        if isinstance(result, Exception):
            kept.append(problem)
            flagged.append(problem.id)
            log.warning("base filter: transport failure on %s, kept: %s",
                        problem.id, result)
            continue
        answer = _predicted_answer(result.content)
        if answer is not None and equivalent(answer.raw, problem.ground_truth):
            excluded.append(problem)
            base_answers[problem.id] = answer.raw
        else:
            kept.append(problem)
    return BaseFilterOutcome(kept=tuple(kept), excluded=tuple(excluded),
                             base_answers=base_answers, flagged=tuple(flagged))


@dataclass(frozen=True)
class Rollout:
    """One teacher sample for a problem, already parsed and verified."""

    index: int
    text: str
    thought: str
    solution: str
    answer: str | None
    verdict: bool
    format_ok: bool


@dataclass(frozen=True)
class RolloutSet:
    problem: VisualProblem
    n_requested: int
    rollouts: tuple[Rollout, ...]
    transport_failures: int

    @property
    def correct_count(self) -> int:
        return sum(1 for r in self.rollouts if r.verdict)


def generate_rollouts(problem: VisualProblem,
                      client: InferenceClient,
                      image_loader: Callable[[VisualProblem], bytes | None],
                      n: int = ROLLOUTS_PER_PROBLEM,
                      sampling: SamplingParams | None = None,
                      max_inflight: int = 4) -> RolloutSet:
    """Sample n rollouts and verify each against the ground truth.

    A rollout that ignores the grammar or yields no answer stays in the
    set with a False verdict; it still counts toward the denominator.
    Transport failures shrink the set instead, and losing all n of them
    is an error because no difficulty signal exists at all.
    """
    messages = problem_messages(problem, image_loader)
    requests = [CompletionRequest(messages=messages, rollout_index=i)
                for i in range(n)]
    results = client.batch_complete(requests, sampling=sampling,
                                    max_inflight=max_inflight)
    rollouts: list[Rollout] = []
    transport_failures = 0
    for i, result in enumerate(results):
        if isinstance(result, Exception):
            transport_failures += 1
            log.warning("rollout %d of %s failed: %s", i, problem.id, result)
            continue
        parsed = parse_leniently(result.content)
        try:
            answer = extract_final_answer(parsed.solution)
        except NoAnswerFound:
            answer = None
        # a rollout that ignored the grammar cannot be retained, so it
        # must not count as a success either
        verdict = (parsed.format_ok and answer is not None
                   and equivalent(answer.raw, problem.ground_truth))
        rollouts.append(Rollout(
            index=i, text=result.content,
            thought=parsed.thought, solution=parsed.solution,
            answer=answer.raw if answer else None,
            verdict=verdict, format_ok=parsed.format_ok))
    if not rollouts:
        raise AllRolloutsFailedTransport(
            f"all {n} rollouts of {problem.id} failed at transport level")
    return RolloutSet(problem=problem, n_requested=n,
                      rollouts=tuple(rollouts),
                      transport_failures=transport_failures)


def classify_difficulty(correct_count: int,
                        n_requested: int = ROLLOUTS_PER_PROBLEM,
                        mode: str = "binned") -> str | None:
    """Map a correct-rollout count to a difficulty label.

    The bins are defined over five rollouts: 4 or 5 correct is medium,
    2 or 3 is hard, fewer is discarded (None). Random mode skips the
    binning and retains every problem with at least one correct rollout.
    """
    if mode not in ("binned", "random"):
        raise ValueError(f"unknown retention mode: {mode!r}")
    if not 0 <= correct_count <= n_requested:
        raise InvalidBinningArity(
            f"correct count {correct_count} outside 0..{n_requested}")
    if mode == "random":
        return "random" if correct_count >= 1 else None
    if n_requested != ROLLOUTS_PER_PROBLEM:
        raise InvalidBinningArity(
            f"difficulty bins are defined over {ROLLOUTS_PER_PROBLEM} "
            f"rollouts, got {n_requested}")
    if correct_count >= 4:
        return "medium"
    if correct_count >= 2:
        return "hard"
    return None


@dataclass(frozen=True)
class RetentionPolicy:
    """How rollout sets become training records."""

    mode: str = "binned"
    max_retained_per_problem: int = 2
    n_rollouts: int = ROLLOUTS_PER_PROBLEM

    def __post_init__(self):
        if self.mode not in ("binned", "random"):
            raise ValueError(f"unknown retention mode: {self.mode!r}")
        if self.max_retained_per_problem < 1:
            raise ValueError("max_retained_per_problem must be at least 1")


def retain_instructions(rollout_set: RolloutSet,
                        policy: RetentionPolicy,
                        role_tag: str) -> tuple[str | None, list[LongThoughtRecord]]:
    """Turn a rollout set into (difficulty label, retained records).

    Only correct rollouts are eligible. They are taken in rollout order
    up to the per-problem cap, so retention is deterministic given the
    rollout contents.
    """
    if role_tag not in ROLE_SOURCES:
        raise SchemaViolation(f"unknown role tag {role_tag!r}", field="role_tag")
    label = classify_difficulty(rollout_set.correct_count,
                                rollout_set.n_requested, policy.mode)
    if label is None:
        return None, []
    problem = rollout_set.problem
    records = []
    correct = sorted((r for r in rollout_set.rollouts if r.verdict),
                     key=lambda r: r.index)
    for rollout in correct[:policy.max_retained_per_problem]:
        records.append(LongThoughtRecord(
            id=f"{problem.id}/rollout{rollout.index}",
            modality="visual",
            domain=problem.domain,
            query=problem.question,
            image_ref=problem.image_ref,
            thought=rollout.thought,
            solution=rollout.solution,
            source=ROLE_SOURCES[role_tag]))
    return label, records


REPORT_FIELDS = ("problem_id", "n_requested", "correct_count", "label",
                 "retained_ids")


@dataclass
class StageResult:
    """Everything a distillation stage produced."""

    rows: list[dict] = field(default_factory=list)
    records: list[LongThoughtRecord] = field(default_factory=list)
    transport_failed_problems: list[str] = field(default_factory=list)

    def difficulty_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.rows:
            counts[row["label"]] = counts.get(row["label"], 0) + 1
        return dict(sorted(counts.items()))


def run_distillation_stage(problems: Sequence[VisualProblem],
                           client: InferenceClient,
                           image_loader: Callable[[VisualProblem], bytes | None],
                           role_tag: str,
                           policy: RetentionPolicy | None = None,
                           sampling: SamplingParams | None = None,
                           max_inflight: int = 4) -> StageResult:
    """Roll out, bin, and retain over a whole pool.

    A problem whose rollouts all fail at transport is reported with the
    label "transport_failed" and retains nothing; the stage itself only
    aborts when that happened to every single problem, because then there
    is no signal to distinguish a dead endpoint from hard problems.
    """
    policy = policy or RetentionPolicy()
    result = StageResult()
    for problem in problems:
        try:
            rollout_set = generate_rollouts(
                problem, client, image_loader, n=policy.n_rollouts,
                sampling=sampling, max_inflight=max_inflight)
        except AllRolloutsFailedTransport:
            result.transport_failed_problems.append(problem.id)
            result.rows.append({
                "problem_id": problem.id,
                "n_requested": policy.n_rollouts,
                "correct_count": 0,
                "label": "transport_failed",
                "retained_ids": "",
            })
            continue
        label, records = retain_instructions(rollout_set, policy, role_tag)
        result.records.extend(records)
        result.rows.append({
            "problem_id": problem.id,
            "n_requested": rollout_set.n_requested,
            "correct_count": rollout_set.correct_count,
            "label": label if label is not None else "discarded",
            "retained_ids": ";".join(r.id for r in records),
        })
    if problems and len(result.transport_failed_problems) == len(problems):
        raise AllRolloutsFailedTransport(
            "every problem in the stage failed at transport level")
    return result


def run_self_distillation_stage(problems: Sequence[VisualProblem],
                                client: InferenceClient,
                                image_loader: Callable[[VisualProblem], bytes | None],
                                policy: RetentionPolicy | None = None,
                                sampling: SamplingParams | None = None,
                                max_inflight: int = 4) -> StageResult:
    """Second distillation round where the trained model teaches itself."""
    return run_distillation_stage(problems, client, image_loader,
                                  role_tag="self_distilled_m0",
                                  policy=policy, sampling=sampling,
                                  max_inflight=max_inflight)


def write_stage_report(result: StageResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(result.rows)
    return path
