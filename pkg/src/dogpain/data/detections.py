"""Detector output handling: confidence filtering and bounding-box expansion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from dogpain.errors import ContractError

CONFIDENCE_THRESHOLD = 0.25
EXPAND_FACTOR = 0.10


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    bbox: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ContractError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> float:
        x1, y1, x2, y2 = self.bbox
        return (x2 - x1) * (y2 - y1)


def filter_detections(
    records: Iterable[DetectionRecord], threshold: float = CONFIDENCE_THRESHOLD
) -> list[DetectionRecord]:
    """Keep the single most confident detection above ``threshold`` for each frame.

    The comparison is strict. Equal confidences keep the earliest record.
    """
    best: dict[int, DetectionRecord] = {}
    for r in records:
        if r.confidence <= threshold:
            continue
        cur = best.get(r.frame_index)
        if cur is None or r.confidence > cur.confidence:
            best[r.frame_index] = r
    return [best[k] for k in sorted(best)]


def expand_bbox(bbox, factor: float = EXPAND_FACTOR, width: float | None = None, height: float | None = None):
    """Grow width and height by ``factor`` about the box centre, clamped to the image."""
    x1, y1, x2, y2 = bbox
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    hw, hh = (x2 - x1) * (1 + factor) / 2, (y2 - y1) * (1 + factor) / 2
    out = [cx - hw, cy - hh, cx + hw, cy + hh]
    out[0], out[1] = max(out[0], 0.0), max(out[1], 0.0)
    if width is not None:
        out[2] = min(out[2], float(width))
    if height is not None:
        out[3] = min(out[3], float(height))
    return tuple(out)
