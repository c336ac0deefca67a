"""Binary-feedback venue recommenders."""

from .interactions import InteractionMatrix, build_interactions
from .models import MODEL_KINDS, Recommender, cosine_topk, minmax, register
from .optim import TrainingHyper
from .scoring import (
    EvaluationResult,
    ScoredCandidates,
    choose_from_scores,
    evaluate,
    load_model,
    recommend,
    retrain,
    save_model,
    score,
    train,
    write_evaluation,
)

__all__ = [
    "InteractionMatrix", "build_interactions", "MODEL_KINDS", "Recommender", "cosine_topk", "minmax",
    "register", "TrainingHyper", "EvaluationResult", "ScoredCandidates", "choose_from_scores", "evaluate",
    "load_model", "recommend", "retrain", "save_model", "score", "train", "write_evaluation",
]
