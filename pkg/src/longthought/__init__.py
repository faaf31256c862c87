"""Curation, distillation, and evaluation toolkit for long-thought corpora."""

from .client import (
    GREEDY,
    CompletionCache,
    CompletionRecord,
    CompletionRequest,
    EndpointConfig,
    InferenceClient,
    SamplingParams,
    user_message,
)
from .corpus import (
    CorpusManifest,
    CorpusStore,
    ManifestEntry,
    TrainingManifest,
    domain_stats,
    export_training_set,
    ingest,
    load_manifest,
    mix,
    sample_subset,
    save_manifest,
    stratify_by_length,
)
from .distill import (
    BaseFilterOutcome,
    RetentionPolicy,
    Rollout,
    RolloutSet,
    VisualProblem,
    base_model_filter,
    build_problem_pool,
    classify_difficulty,
    generate_rollouts,
    retain_instructions,
    run_distillation_stage,
    run_self_distillation_stage,
)
from .harness import (
    BenchmarkItem,
    EvalReport,
    EvalRun,
    difficulty_breakdown,
    evaluate,
    length_analysis,
    load_benchmark,
    report_from_accuracies,
    score,
)
from .transcripts import (
    BEGIN_SOLUTION,
    BEGIN_THOUGHT,
    END_SOLUTION,
    END_THOUGHT,
    FinalAnswer,
    LongThoughtRecord,
    extract_final_answer,
    measure_thought_length,
    parse_leniently,
    parse_transcript,
    render_transcript,
)
from .verify import NormalizedAnswer, equivalent, normalize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
