"""Prompt assembly and reward-program generation backends."""

from .generator import (
    TEMPLATE_POOLS,
    BackendUnavailable,
    Candidate,
    GenerationError,
    HttpBackend,
    MockBackend,
    extract_program,
    generate_candidates,
    mock_program,
    template_pool,
)
from .prompts import (
    FENCE_TAG,
    MissingFeedback,
    PromptContext,
    build_feedback_prompt,
    build_initial_prompt,
    build_prompt,
    format_series,
)

__all__ = [
    "BackendUnavailable", "Candidate", "FENCE_TAG", "GenerationError", "HttpBackend", "MissingFeedback",
    "MockBackend", "PromptContext", "TEMPLATE_POOLS", "build_feedback_prompt", "build_initial_prompt",
    "build_prompt", "extract_program", "format_series", "generate_candidates", "mock_program",
    "template_pool",
]
