"""Loss, optimizers, early-stopped training, cross-validation, metrics and checkpoints."""

from dogpain.train.checkpoint import Checkpoint, load_checkpoint, load_tensors, save_checkpoint, save_tensors
from dogpain.train.loop import (
    CrossvalReport,
    EpochRecord,
    FoldResult,
    TrainConfig,
    crossval,
    evaluate,
    fold_seed,
    predict,
    recalibrate_batchnorm,
    train_fold,
    train_step,
)
from dogpain.train.loss import bce_loss
from dogpain.train.metrics import (
    EvalReport,
    PckResult,
    classification_metrics,
    pck,
    summarize,
    video_metrics,
)
from dogpain.train.optim import Adam, SGDMomentum, make_optimizer

__all__ = [
    "Adam", "Checkpoint", "CrossvalReport", "EpochRecord", "EvalReport", "FoldResult", "PckResult",
    "SGDMomentum", "TrainConfig", "bce_loss", "classification_metrics", "crossval", "evaluate",
    "fold_seed", "load_checkpoint", "load_tensors", "make_optimizer", "pck", "predict", "recalibrate_batchnorm",
    "save_checkpoint", "save_tensors", "summarize", "train_fold", "train_step", "video_metrics",
]
