from simtune.evaluation.evaluator import (
    MetricsReport,
    evaluate,
    score_pairs,
    write_embeddings,
    write_report,
)
from simtune.evaluation.metrics import (
    ScoreSet,
    cluster_variance,
    retrieval_at_k,
    tar_at_far,
    zero_shot_accuracy,
)

__all__ = [
    "MetricsReport",
    "evaluate",
    "score_pairs",
    "write_embeddings",
    "write_report",
    "ScoreSet",
    "cluster_variance",
    "retrieval_at_k",
    "tar_at_far",
    "zero_shot_accuracy",
]
