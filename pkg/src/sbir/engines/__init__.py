from sbir.engines.abc import ABCError, abc_select, rejection_abc
from sbir.engines.inference import (
    ALGORITHMS,
    InferenceConfig,
    InferenceError,
    RoundDataset,
    build_estimator,
    run_inference,
)
from sbir.engines.losses import (
    atomic_loss_from_logits,
    derangement,
    draw_atoms,
    snle_loss,
    snpe_loss,
    snre_loss,
)
from sbir.engines.training import TrainConfig, TrainingError, TrainReport, train_estimator

__all__ = [
    "ABCError",
    "abc_select",
    "rejection_abc",
    "ALGORITHMS",
    "InferenceConfig",
    "InferenceError",
    "RoundDataset",
    "build_estimator",
    "run_inference",
    "atomic_loss_from_logits",
    "derangement",
    "draw_atoms",
    "snle_loss",
    "snpe_loss",
    "snre_loss",
    "TrainConfig",
    "TrainingError",
    "TrainReport",
    "train_estimator",
]
