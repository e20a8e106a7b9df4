"""Early exit for step-wise LLM reasoning based on multi-step answer stability."""

from .controller import (
    ExitDecision,
    SessionConfig,
    SessionRecord,
    StepRecord,
    collect_evidence,
    run_fixed_budget,
    run_oracle,
    run_policy,
    run_single_step,
    run_trace,
    run_vanilla,
)
from .induction import InducedAnswer, InductionPrompt, canonicalize, induce, parse_answer
from .scoring import (
    AnswerConfidence,
    StabilityReport,
    StepEvidence,
    WindowConfig,
    acs,
    answer_confidence,
    cts,
    normalized_entropy,
    stability,
)
from .stepper import BoundaryEvent, ReasoningStep, SegmenterConfig, StreamingSegmenter, offline_segment

__version__ = "0.1.0"

__all__ = [
    "AnswerConfidence",
    "BoundaryEvent",
    "ExitDecision",
    "InducedAnswer",
    "InductionPrompt",
    "ReasoningStep",
    "SegmenterConfig",
    "SessionConfig",
    "SessionRecord",
    "StabilityReport",
    "StepEvidence",
    "StepRecord",
    "StreamingSegmenter",
    "WindowConfig",
    "acs",
    "answer_confidence",
    "canonicalize",
    "collect_evidence",
    "cts",
    "induce",
    "normalized_entropy",
    "offline_segment",
    "parse_answer",
    "run_fixed_budget",
    "run_oracle",
    "run_policy",
    "run_single_step",
    "run_trace",
    "run_vanilla",
    "stability",
]
