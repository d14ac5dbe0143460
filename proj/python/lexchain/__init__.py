"""Legal document classification by prompt chaining (summarize, retrieve, few-shot label)."""

from ._lexchain import (
    LexchainError,
    TokenBudget,
    Chunk,
    Summary,
    Hit,
    Index,
    count_tokens,
    segment_sentences,
    pack_chunks,
    iterative_summarize,
    label_space,
    evaluate,
    round3,
    vote,
    parse_label,
    run_cli,
)

__all__ = [
    "LexchainError",
    "TokenBudget",
    "Chunk",
    "Summary",
    "Hit",
    "Index",
    "count_tokens",
    "segment_sentences",
    "pack_chunks",
    "iterative_summarize",
    "label_space",
    "evaluate",
    "round3",
    "vote",
    "parse_label",
    "run_cli",
]
