"""Clip slicing and conversion of one video's detector outputs into model inputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

from dogpain.data.detections import DetectionRecord, expand_bbox, filter_detections
from dogpain.data.io import VideoEntry, load_detections, load_frames, load_keypoints
from dogpain.errors import ContractError, DegeneratePoseError
from dogpain.skeleton import SkeletonFrame, clip_discard_reason, normalize, pose_matrix, repair

CLIP_LEN = 8
OVERLAP = 2
STRIDE = CLIP_LEN - OVERLAP
DEFAULT_IMAGE_SIZE = 64


@dataclass
class Clip:
    """Eight aligned frames: ``frames`` is ``8×3×H×W`` in [0, 1], ``poses`` is ``8×34``."""

    frames: np.ndarray
    poses: np.ndarray
    label: int
    subject_id: str = ""
    video: str = ""
    start: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] != CLIP_LEN or self.frames.shape[1] != 3:
            raise ContractError(f"clip frames must be {CLIP_LEN}×3×H×W, got {self.frames.shape}")
        if self.poses.shape != (CLIP_LEN, 34):
            raise ContractError(f"clip poses must be {CLIP_LEN}×34, got {self.poses.shape}")
        if self.label not in (0, 1):
            raise ContractError(f"clip label must be 0 or 1, got {self.label}")


def clip_starts(n_frames: int, length: int = CLIP_LEN, stride: int = STRIDE) -> list[int]:
    """Window starts from frame 0; trailing partial windows are dropped."""
    if n_frames < length:
        return []
    return list(range(0, n_frames - length + 1, stride))


def slice_clips(n_frames: int) -> list[tuple[int, int]]:
    """``(start, stop)`` spans of the 8-frame, 2-frame-overlap windows."""
    return [(s, s + CLIP_LEN) for s in clip_starts(n_frames)]


def crop_resize(frame: np.ndarray, det: DetectionRecord | None, size: int, crop: bool = True) -> np.ndarray:
    """Crop a ``H×W×3`` uint8 frame to the expanded detection and resize to ``3×size×size`` in [0, 1]."""
    h, w = frame.shape[:2]
    img = Image.fromarray(frame, mode="RGB")
    if crop and det is not None:
        x1, y1, x2, y2 = expand_bbox(det.bbox, width=w, height=h)
        box = (int(np.floor(x1)), int(np.floor(y1)), int(np.ceil(x2)), int(np.ceil(y2)))
        if box[2] > box[0] and box[3] > box[1]:
            img = img.crop(box)
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0


@dataclass
class ClipBuildLog:
    kept: list[int] = field(default_factory=list)
    dropped: list[tuple[int, str]] = field(default_factory=list)


def build_clips(
    frames_u8: np.ndarray,
    skeleton: Sequence[SkeletonFrame],
    detections: Sequence[DetectionRecord],
    label: int,
    *,
    subject_id: str = "",
    video: str = "",
    image_size: int = DEFAULT_IMAGE_SIZE,
    crop: bool = True,
) -> tuple[list[Clip], ClipBuildLog]:
    """Slice a video into clips, repairing and normalizing each clip's skeleton on its own.

    Clips containing a discarded or degenerate frame are dropped and logged.
    """
    if len(frames_u8) != len(skeleton):
        raise ContractError(f"{video}: {len(frames_u8)} frames but {len(skeleton)} keypoint lines")
    dets = {d.frame_index: d for d in filter_detections(detections)}
    log = ClipBuildLog()
    clips = []
    for start, stop in slice_clips(len(skeleton)):
        repaired, reports = repair(list(skeleton[start:stop]))
        reason = clip_discard_reason(reports)
        if reason is None:
            try:
                poses = pose_matrix([normalize(f) for f in repaired])
            except DegeneratePoseError:
                reason = "degenerate-pose"
        if reason is not None:
            log.dropped.append((start, reason))
            continue
        imgs = np.stack(
            [crop_resize(frames_u8[t], dets.get(skeleton[t].frame_index), image_size, crop) for t in range(start, stop)]
        )
        clips.append(Clip(imgs, poses, label, subject_id, video, start))
        log.kept.append(start)
    return clips, log


def load_video_clips(entry: VideoEntry, image_size: int = DEFAULT_IMAGE_SIZE, crop: bool = True):
    skeleton = load_keypoints(entry.keypoint_path)
    detections = load_detections(entry.detection_path)
    frames = load_frames(entry.frame_dir, [f.frame_index for f in skeleton])
    return build_clips(
        frames, skeleton, detections, entry.y,
        subject_id=entry.subject_id, video=entry.subject_id, image_size=image_size, crop=crop,
    )  # fmt: skip


def stack_clips(clips: Sequence[Clip]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays ``(N×8×3×H×W, N×8×34, N)``."""
    return (
        np.stack([c.frames for c in clips]),
        np.stack([c.poses for c in clips]),
        np.array([c.label for c in clips]),
    )
