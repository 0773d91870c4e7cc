"""Classification metrics (pain is the positive class) and keypoint PCK."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from dogpain.errors import ContractError
from dogpain.skeleton import HEAD, LEG_JOINTS, N_KEYPOINTS, SPINE

THRESHOLD = 0.5
PCK_ALPHA = 0.10
PCK_GROUPS = {"Head": HEAD, "Spine": SPINE, "Legs": LEG_JOINTS, "Total": tuple(range(N_KEYPOINTS))}


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts and the figures derived from them."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall, f1=self.f1)
        return d


def confusion(predicted: np.ndarray, labels: np.ndarray) -> EvalReport:
    predicted, labels = np.asarray(predicted, dtype=bool), np.asarray(labels, dtype=bool)
    return EvalReport(
        tp=int(np.sum(predicted & labels)),
        fp=int(np.sum(predicted & ~labels)),
        tn=int(np.sum(~predicted & ~labels)),
        fn=int(np.sum(~predicted & labels)),
    )


def _checked(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0:
        raise ContractError("classification_metrics: empty input")
    if p.size != y.size:
        raise ContractError(f"classification_metrics: {p.size} predictions vs {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("classification_metrics: labels must be 0 or 1")
    return p, y.astype(int)


def classification_metrics(predictions, labels, threshold: float = THRESHOLD) -> EvalReport:
    """Threshold probabilities (ties count as pain) and tally the confusion matrix."""
    p, y = _checked(predictions, labels)
    return confusion(p >= threshold, y == 1)


def video_metrics(predictions, labels, videos: Sequence[str], threshold: float = THRESHOLD) -> EvalReport:
    """Majority vote of clip decisions per video; a split vote counts as pain."""
    p, y = _checked(predictions, labels)
    if len(videos) != p.size:
        raise ContractError(f"video_metrics: {len(videos)} video ids vs {p.size} predictions")
    votes: dict[str, list[int]] = {}
    truth: dict[str, int] = {}
    for pi, yi, v in zip(p, y, videos):
        votes.setdefault(v, []).append(int(pi >= threshold))
        if truth.setdefault(v, int(yi)) != yi:
            raise ContractError(f"video {v!r} has clips with different labels")
    keys = sorted(votes)
    decided = np.array([2 * sum(votes[k]) >= len(votes[k]) for k in keys])
    return confusion(decided, np.array([truth[k] == 1 for k in keys]))


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value).

    The statistics module works in exact rational arithmetic, so identical
    fold results give a standard deviation of exactly 0.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise ContractError("summarize: no values")
    return float(statistics.mean(vals)), statistics.stdev(vals) if len(vals) > 1 else 0.0


def _bbox_scale(box) -> float:
    if box is None:
        raise ContractError("pck: missing bounding box for a frame")
    b = np.asarray(box, dtype=np.float64)
    if b.shape != (4,) or not np.isfinite(b).all():
        raise ContractError(f"pck: bounding box must be 4 finite numbers, got {box!r}")
    area = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    return float(np.sqrt(area))


@dataclass(frozen=True)
class PckResult:
    correct: dict[str, int]
    scored: dict[str, int]

    def percent(self, group: str) -> float:
        n = self.scored[group]
        return 100.0 * self.correct[group] / n if n else float("nan")

    def as_dict(self) -> dict:
        return {g: {"correct": self.correct[g], "scored": self.scored[g], "pck": self.percent(g)} for g in PCK_GROUPS}


def pck(predicted, truth, visible, bboxes, alpha: float = PCK_ALPHA) -> PckResult:
    """Percentage of correct keypoints within ``alpha * sqrt(bbox area)``, boundary inclusive.

    Args:
        predicted, truth: ``F×17×2`` coordinates.
        visible: ``F×17`` mask; only ground-truth-visible keypoints are scored.
        bboxes: one ``(x0, y0, x1, y1)`` per frame.
        alpha: radius as a fraction of the box scale.
    """
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    vis = np.asarray(visible, dtype=bool)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[1:] != (N_KEYPOINTS, 2):
        raise ContractError(f"pck: expected matching F×17×2 arrays, got {pred.shape} and {gt.shape}")
    if vis.shape != pred.shape[:2]:
        raise ContractError(f"pck: visibility mask must be {pred.shape[:2]}, got {vis.shape}")
    if len(bboxes) != pred.shape[0]:
        raise ContractError(f"pck: {len(bboxes)} bounding boxes for {pred.shape[0]} frames")
    if alpha < 0:
        raise ContractError("pck: alpha must be non-negative")
    radius = np.array([alpha * _bbox_scale(b) for b in bboxes])
    dist = np.sqrt(((pred - gt) ** 2).sum(axis=-1))
    hit = (dist <= radius[:, None]) & vis
    correct, scored = {}, {}
    for g, idx in PCK_GROUPS.items():
        idx = list(idx)
        correct[g] = int(hit[:, idx].sum())
        scored[g] = int(vis[:, idx].sum())
    return PckResult(correct, scored)
