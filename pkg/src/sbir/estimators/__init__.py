from typing import Any

from sbir.estimators.base import ConditionalEstimator, DensityEstimator
from sbir.estimators.classifier import RatioClassifier, classifier_logit
from sbir.estimators.embedding import EmbeddingNet, embed
from sbir.estimators.maf import ConditionalMAF, maf_log_prob, maf_sample
from sbir.estimators.mdn import MixtureDensityNet, mdn_log_prob

_KINDS = {"maf": ConditionalMAF, "mdn": MixtureDensityNet, "classifier": RatioClassifier}


def estimator_from_config(cfg: dict[str, Any]) -> ConditionalEstimator:
    """Rebuild an (untrained) estimator from ``full_config()`` output."""
    cfg = dict(cfg)
    cls = _KINDS[cfg.pop("kind")]
    emb = cfg.pop("embedding", None)
    embedding = EmbeddingNet(**emb) if emb else None
    return cls(**cfg, embedding=embedding)


__all__ = [
    "ConditionalEstimator",
    "DensityEstimator",
    "RatioClassifier",
    "classifier_logit",
    "EmbeddingNet",
    "embed",
    "ConditionalMAF",
    "maf_log_prob",
    "maf_sample",
    "MixtureDensityNet",
    "mdn_log_prob",
    "estimator_from_config",
]
