"""Consistency-aware attention recommender for ordered item lists."""

from ._core import (
    CoocEmbeddings,
    Corpus,
    CorpusStats,
    DataError,
    EvalReport,
    FitResult,
    Model,
    ParseError,
    SplitCorpus,
    consistency,
    cosine,
    evaluate,
    fit,
    hr_at_k,
    ndcg_at_k,
    rank_of_target,
    synthesize,
    train_embeddings,
    winner_analysis,
)

__all__ = [
    "CoocEmbeddings",
    "Corpus",
    "CorpusStats",
    "DataError",
    "EvalReport",
    "FitResult",
    "Model",
    "ParseError",
    "SplitCorpus",
    "consistency",
    "cosine",
    "evaluate",
    "fit",
    "hr_at_k",
    "ndcg_at_k",
    "rank_of_target",
    "synthesize",
    "train_embeddings",
    "winner_analysis",
]
