"""Mini-batch training with validation-F1 early stopping, and the cross-validation harness."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from dogpain.data.clips import Clip, stack_clips
from dogpain.data.splits import FoldPlan, make_splits
from dogpain.errors import ConfigurationError
from dogpain.model import TwoStreamConfig, TwoStreamParams, forward_batch
from dogpain.train.checkpoint import Checkpoint
from dogpain.train.loss import bce_loss
from dogpain.train.metrics import EvalReport, classification_metrics, summarize, video_metrics
from dogpain.train.optim import make_optimizer

log = logging.getLogger("dogpain.train")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 10
    optimizer: str = "adam"
    momentum: float = 0.9
    deterministic: bool = True
    seed: int = 0
    workers: int = 1
    bn_recalibrate: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.workers < 1:
            raise ConfigurationError("lr, batch_size, max_epochs and workers must be positive")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigurationError(f"patience {self.patience} must lie in [0, max_epochs={self.max_epochs})")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}; expected adam or sgd-momentum")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_f1: float
    val_accuracy: float
    improved: bool
    seconds: float


def _subjects(clips: Sequence[Clip]) -> set[str]:
    return {c.subject_id for c in clips}


def predict(params: TwoStreamParams, clips: Sequence[Clip], batch_size: int = 32, workers: int = 1) -> np.ndarray:
    """Inference-mode pain probabilities, in clip order.

    Batches are independent, so ``workers > 1`` evaluates them on a thread
    pool; results are reassembled in order and do not depend on ``workers``.
    """
    chunks = [clips[i : i + batch_size] for i in range(0, len(clips), batch_size)]

    def run(chunk):
        frames, poses, _ = stack_clips(chunk)
        return np.asarray(forward_batch(params, frames, poses, training=False).prob.data, dtype=np.float64)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(run, chunks))
    else:
        out = [run(c) for c in chunks]
    return np.concatenate(out) if out else np.zeros(0)


def recalibrate_batchnorm(params: TwoStreamParams, frames: np.ndarray, poses: np.ndarray, batch_size: int) -> None:
    """Replace the running statistics by the plain average of per-batch statistics over a fixed pass.

    The exponential average trails the weights while they move quickly; one
    pass with frozen weights gives inference statistics that match them.
    """
    saved = {k: s.momentum for k, s in params.bn.items()}
    try:
        for s in params.bn.values():
            s.updates, s.momentum = 0, 1.0  # keep = 1 - 1/n: a cumulative mean
        for i in range(0, len(frames), batch_size):
            forward_batch(params, frames[i : i + batch_size], poses[i : i + batch_size], training=True)
    finally:
        for k, s in params.bn.items():
            s.momentum = saved[k]


def train_step(params: TwoStreamParams, optimizer, frames, poses, labels) -> tuple[float, np.ndarray]:
    """One optimizer step on a batch; returns the loss and the pre-step probabilities."""
    params.zero_grad()
    res = forward_batch(params, frames, poses, training=True)
    loss = bce_loss(res.prob, labels)
    loss.backward()
    optimizer.step(params.tensors)
    return loss.item(), np.asarray(res.prob.data, dtype=np.float64)


def train_fold(
    train: Sequence[Clip],
    val: Sequence[Clip],
    model_cfg: TwoStreamConfig,
    cfg: TrainConfig,
    init_seed: int | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train from a fresh seeded initialization and return the best-validation-F1 checkpoint.

    An epoch improves only if its validation F1 is strictly higher than every
    earlier one. Training stops once ``patience`` consecutive epochs fail to
    improve, or after ``max_epochs``.
    """
    if not train or not val:
        raise ConfigurationError("train_fold: training and validation sets must both be non-empty")
    overlap = _subjects(train) & _subjects(val)
    if overlap:
        raise ConfigurationError(f"train_fold: subjects in both training and validation: {sorted(overlap)}")
    seed = cfg.seed if init_seed is None else init_seed
    params = TwoStreamParams.init(model_cfg, seed)
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    frames, poses, labels = stack_clips(train)
    val_labels = np.array([c.label for c in val])

    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_f1, since_best = -np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([seed, epoch]).permutation(len(train))
        losses, correct = [], 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, prob = train_step(params, optimizer, frames[idx], poses[idx], labels[idx])
            losses.append(loss * len(idx))
            correct += int(np.sum((prob >= 0.5) == (labels[idx] == 1)))
        if cfg.bn_recalibrate:
            recalibrate_batchnorm(params, frames, poses, cfg.batch_size)
        val_report = classification_metrics(predict(params, val, workers=cfg.workers), val_labels)
        improved = val_report.f1 > best_f1
        if improved:
            best_f1, since_best = val_report.f1, 0
            best = Checkpoint(
                params=params.copy(),
                train_config=cfg.to_dict(),
                optimizer=optimizer.kind,
                optimizer_state={k: v.copy() for k, v in optimizer.state().items()},
                optimizer_steps=optimizer.steps,
                epoch=epoch,
                rng={"seed": seed, "epoch": epoch},
                meta={"val_f1": val_report.f1},
            )
        else:
            since_best += 1
        rec = EpochRecord(
            epoch=epoch,
            train_loss=float(np.sum(losses) / len(train)),
            train_accuracy=correct / len(train),
            val_f1=val_report.f1,
            val_accuracy=val_report.accuracy,
            improved=improved,
            seconds=time.perf_counter() - t0,
        )
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if since_best >= cfg.patience:
            break
    assert best is not None
    return best, history


@dataclass
class FoldResult:
    fold: int
    clip: EvalReport
    video: EvalReport
    best_epoch: int
    epochs_run: int
    max_train_accuracy: float
    history: list[EpochRecord] = field(default_factory=list)
    checkpoint: Checkpoint | None = None

    def record(self) -> dict:
        return {
            "record": "fold",
            "fold": self.fold,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "max_train_accuracy": self.max_train_accuracy,
            "clip": self.clip.as_dict(),
            "video": self.video.as_dict(),
        }


@dataclass
class CrossvalReport:
    folds: list[FoldResult]
    plan: FoldPlan

    def aggregate(self) -> dict:
        out = {"record": "aggregate", "n_folds": len(self.folds)}
        for level in ("clip", "video"):
            for metric in ("f1", "accuracy"):
                mean, std = summarize([getattr(getattr(f, level), metric) for f in self.folds])
                out[f"{level}_{metric}_mean"] = mean
                out[f"{level}_{metric}_std"] = std
        return out

    def records(self) -> list[dict]:
        return [f.record() for f in self.folds] + [self.aggregate()]

    def table(self) -> str:
        """Human-readable summary, figures in percent as mean±std."""
        agg = self.aggregate()
        lines = ["fold  clip-F1  clip-acc  video-F1  video-acc  best-epoch"]
        for f in self.folds:
            lines.append(
                f"{f.fold:>4}  {100 * f.clip.f1:7.1f}  {100 * f.clip.accuracy:8.1f}  "
                f"{100 * f.video.f1:8.1f}  {100 * f.video.accuracy:9.1f}  {f.best_epoch:>10}"
            )
        for level in ("clip", "video"):
            lines.append(
                f"{level:>5}: F1 {100 * agg[f'{level}_f1_mean']:.1f}±{100 * agg[f'{level}_f1_std']:.1f}  "
                f"accuracy {100 * agg[f'{level}_accuracy_mean']:.1f}±{100 * agg[f'{level}_accuracy_std']:.1f}"
            )
        return "\n".join(lines)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def evaluate(params: TwoStreamParams, clips: Sequence[Clip], workers: int = 1) -> tuple[EvalReport, EvalReport, np.ndarray]:
    """Clip-level and video-level (majority vote) reports plus the raw probabilities."""
    prob = predict(params, clips, workers=workers)
    labels = np.array([c.label for c in clips])
    videos = [c.video or c.subject_id for c in clips]
    return classification_metrics(prob, labels), video_metrics(prob, labels, videos), prob


def crossval(
    clips: Sequence[Clip],
    model_cfg: TwoStreamConfig,
    cfg: TrainConfig,
    plan: FoldPlan | None = None,
    folds: Sequence[int] | None = None,
    on_epoch: Callable[[int, EpochRecord], None] | None = None,
    keep_checkpoints: bool = False,
) -> CrossvalReport:
    """Train each fold of a subject-wise plan and score its best checkpoint on the held-out test subjects.

    Args:
        plan: fold plan; built from the clips' subjects with ``cfg.seed`` when omitted.
        folds: subset of fold indices to run (all by default).
    """
    if plan is None:
        labels: dict[str, int] = {}
        for c in clips:
            labels[c.subject_id] = c.label
        plan = make_splits(labels, seed=cfg.seed)
    by_subject: dict[str, list[Clip]] = {}
    for c in clips:
        by_subject.setdefault(c.subject_id, []).append(c)
    test = [c for s in plan.test_subjects for c in by_subject.get(s, [])]
    if not test:
        raise ConfigurationError("crossval: no clips for the test subjects")
    results = []
    for k, (train_ids, val_ids) in enumerate(plan.folds):
        if folds is not None and k not in folds:
            continue
        # re-assert subject disjointness at the harness level
        if set(train_ids) & set(val_ids) or (set(train_ids) | set(val_ids)) & set(plan.test_subjects):
            raise ConfigurationError(f"fold {k}: subject sets overlap")
        train = [c for s in train_ids for c in by_subject.get(s, [])]
        val = [c for s in val_ids for c in by_subject.get(s, [])]
        cb = (lambda rec, k=k: on_epoch(k, rec)) if on_epoch else None
        best, history = train_fold(train, val, model_cfg, cfg, init_seed=fold_seed(cfg.seed, k), on_epoch=cb)
        clip_rep, video_rep, _ = evaluate(best.params, test, cfg.workers)
        log.info("fold %d: clip F1 %.3f, accuracy %.3f", k, clip_rep.f1, clip_rep.accuracy)
        results.append(
            FoldResult(
                fold=k,
                clip=clip_rep,
                video=video_rep,
                best_epoch=best.epoch,
                epochs_run=len(history),
                max_train_accuracy=max(h.train_accuracy for h in history),
                history=history,
                checkpoint=best if keep_checkpoints else None,
            )
        )
    return CrossvalReport(results, plan)
