"""Seeded stick-figure gait videos with known pain labels.

The dog is seen from above, spine roughly horizontal and head to the right,
left legs on one side of the spine and right legs on the other. Legs swing
along the spine in a trot. For the pain class the swing amplitude is
multiplied by ``attenuation`` and the head bobs vertically with amplitude
``head_bob * (1 - attenuation)`` spine lengths, so ``attenuation=1`` makes the
two classes identically distributed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence
from pathlib import Path

import numpy as np
from PIL import Image

from dogpain.data.clips import CLIP_LEN, Clip, build_clips
from dogpain.data.detections import DetectionRecord
from dogpain.data.io import (
    VideoEntry,
    save_detections,
    save_frames,
    save_keypoints,
    save_manifest,
)
from dogpain.errors import ConfigurationError
from dogpain.skeleton import LEGS, NECK, TAIL, SkeletonFrame

# body-frame layout in spine lengths: u along the spine (head +), v lateral (left +)
_HEAD = {0: (0.70, 0.08), 1: (0.70, -0.08), 2: (0.82, 0.0)}
_LEG_ROOT_U = {"LF": 0.35, "RF": 0.35, "LB": -0.35, "RB": -0.35}
_LEG_SIDE = {"LF": 1.0, "RF": -1.0, "LB": 1.0, "RB": -1.0}
_LEG_PHASE = {"LF": 0.0, "RB": 0.0, "RF": np.pi, "LB": np.pi}
_JOINT_V = (0.18, 0.32, 0.46)  # elbow, knee, paw lateral reach
_JOINT_SWING = (0.3, 1.0, 1.6)  # share of the knee swing
_BONES = [(NECK, TAIL), (NECK, 2), (2, 0), (2, 1)]


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 20
    frames_per_video: int = 20
    image_size: int = 64
    attenuation: float = 0.5
    head_bob: float = 0.2
    noise_sigma: float = 0.01
    occlusion_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.frames_per_video < 1 or self.image_size < 8:
            raise ConfigurationError("n_subjects, frames_per_video must be >= 1 and image_size >= 8")
        if not 0 < self.attenuation <= 1:
            raise ConfigurationError(f"attenuation must lie in (0, 1], got {self.attenuation}")
        if self.head_bob < 0 or self.noise_sigma < 0 or not 0 <= self.occlusion_rate < 1:
            raise ConfigurationError("head_bob, noise_sigma must be >= 0 and occlusion_rate in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SubjectParams:
    spine: float  # neck-tail distance, px
    center: tuple[float, float]
    heading: float
    period: float  # frames per gait cycle
    phase: float
    swing: float  # knee swing amplitude, spine lengths
    drift: float
    drift_period: float
    bob_phase: float
    texture_seed: int


@dataclass
class SynthVideo:
    entry: VideoEntry
    params: SubjectParams
    truth: np.ndarray  # T×17×2 noise-free keypoints
    keypoints: list[SkeletonFrame]
    detections: list[DetectionRecord]
    frames: np.ndarray  # T×H×W×3 uint8
    label: int = field(default=0)


def draw_subject(rng: np.random.Generator, image_size: int) -> SubjectParams:
    s = image_size
    return SubjectParams(
        spine=float(rng.uniform(0.32, 0.40) * s),
        center=(float(s / 2 + rng.uniform(-0.04, 0.04) * s), float(s / 2 + rng.uniform(-0.04, 0.04) * s)),
        heading=float(rng.uniform(-0.15, 0.15)),
        period=float(rng.uniform(3.0, 5.0)),
        phase=float(rng.uniform(0, 2 * np.pi)),
        swing=float(rng.uniform(0.22, 0.28)),
        drift=float(rng.uniform(0.0, 0.04) * s),
        drift_period=float(rng.uniform(20.0, 40.0)),
        bob_phase=float(rng.uniform(0, 2 * np.pi)),
        texture_seed=int(rng.integers(2**31)),
    )


def gait_keypoints(p: SubjectParams, label: int, n_frames: int, attenuation: float, head_bob: float) -> np.ndarray:
    """Noise-free ``T×17×2`` pixel keypoints for one subject under one label."""
    t = np.arange(n_frames, dtype=float)
    omega = 2 * np.pi / p.period
    swing = p.swing * (attenuation if label == 1 else 1.0)
    bob = head_bob * (1.0 - attenuation) if label == 1 else 0.0

    body = np.zeros((n_frames, 17, 2))
    body[:, NECK] = (0.5, 0.0)
    body[:, TAIL] = (-0.5, 0.0)
    for j, uv in _HEAD.items():
        body[:, j] = uv
    for leg, joints in LEGS.items():
        s = np.sin(omega * t + p.phase + _LEG_PHASE[leg])
        for j, v, share in zip(joints, _JOINT_V, _JOINT_SWING):
            body[:, j, 0] = _LEG_ROOT_U[leg] + share * swing * s
            body[:, j, 1] = _LEG_SIDE[leg] * v

    c, sn = np.cos(p.heading), np.sin(p.heading)
    rot = np.array([[c, -sn], [sn, c]])
    # image y grows downwards; left side (v > 0) is drawn above the spine
    img = p.spine * body @ rot.T * np.array([1.0, -1.0])
    cx = p.center[0] + p.drift * np.sin(2 * np.pi * t / p.drift_period)
    img[..., 0] += cx[:, None]
    img[..., 1] += p.center[1]
    if bob:
        img[:, list(_HEAD), 1] += (bob * p.spine * np.sin(2 * omega * t + p.bob_phase))[:, None]
    return img


def _texture(seed: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    coarse = (rng.uniform(0.15, 0.55, size=(6, 6, 3)) * 255).astype(np.uint8)
    smooth = np.asarray(Image.fromarray(coarse, mode="RGB").resize((size, size), Image.BILINEAR), dtype=np.float64)
    return smooth / 255.0 + rng.normal(0.0, 0.02, size=(size, size, 3))


def _segment_coverage(yy, xx, a, b, width: float) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of a segment of the given width."""
    d = b - a
    L2 = float(d @ d)
    px, py = xx - a[0], yy - a[1]
    t = np.clip((px * d[0] + py * d[1]) / L2, 0.0, 1.0) if L2 > 0 else np.zeros_like(px)
    dist = np.hypot(px - t * d[0], py - t * d[1])
    return np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)


def render_frame(points: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Draw the stick figure over ``background`` (``H×W×3`` floats) and quantize to uint8."""
    size = background.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(float) + 0.5
    width = max(1.0, size / 40)
    img = background.copy()
    segments = [(points[a], points[b], (0.95, 0.92, 0.80)) for a, b in _BONES]
    for leg, (elbow, knee, paw) in LEGS.items():
        hip = points[NECK] + (points[TAIL] - points[NECK]) * (0.5 - _LEG_ROOT_U[leg])
        color = (0.95, 0.80, 0.25) if _LEG_SIDE[leg] > 0 else (0.30, 0.85, 0.95)
        segments += [(hip, points[elbow], color), (points[elbow], points[knee], color), (points[knee], points[paw], color)]
    for a, b, color in segments:
        cov = _segment_coverage(yy, xx, a, b, width)[..., None]
        img = img * (1 - cov) + np.asarray(color) * cov
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _detections(rng, truth: np.ndarray, size: int) -> list[DetectionRecord]:
    out = []
    for i, pts in enumerate(truth):
        x1, y1 = np.maximum(pts.min(axis=0) - 2.0, 0.0)
        x2, y2 = np.minimum(pts.max(axis=0) + 2.0, float(size))
        out.append(DetectionRecord(i, (float(x1), float(y1), float(x2), float(y2)), float(rng.uniform(0.5, 0.99))))
        if rng.random() < 0.3:
            a = rng.uniform(0, size / 2, 2)
            b = a + rng.uniform(4, size / 2, 2)
            out.append(DetectionRecord(i, (float(a[0]), float(a[1]), float(b[0]), float(b[1])), float(rng.uniform(0.01, 0.25))))
    return out


def synth_generate(cfg: SynthConfig) -> list[SynthVideo]:
    """Generate ``2 * n_subjects`` videos (pain subjects first), fully determined by ``cfg.seed``."""
    children = np.random.SeedSequence(cfg.seed).spawn(2 * cfg.n_subjects)
    videos = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        label = 1 if i < cfg.n_subjects else 0
        params = draw_subject(rng, cfg.image_size)
        subtype_draw = rng.random()
        truth = gait_keypoints(params, label, cfg.frames_per_video, cfg.attenuation, cfg.head_bob)
        noisy = truth + rng.normal(0.0, 1.0, size=truth.shape) * cfg.noise_sigma * params.spine
        occluded = rng.random(truth.shape[:2]) < cfg.occlusion_rate
        keypoints = [SkeletonFrame(noisy[t], (~occluded[t]).astype(int), t) for t in range(len(truth))]
        detections = _detections(rng, truth, cfg.image_size)
        background = _texture(params.texture_seed, cfg.image_size)
        frames = np.stack([render_frame(pts, background) for pts in truth])
        subject = f"dog{i:03d}"
        subtype = ("orthopedic" if subtype_draw < 0.6 else "neurological") if label else "none"
        entry = VideoEntry(
            subject, "pain" if label else "no-pain", subtype,
            Path(subject) / "frames", Path(subject) / "keypoints.txt", Path(subject) / "detections.txt",
        )  # fmt: skip
        videos.append(SynthVideo(entry, params, truth, keypoints, detections, frames, label))
    return videos


def write_synth(videos: list[SynthVideo], out_dir, cfg: SynthConfig | None = None) -> Path:
    """Write frames, keypoint/detection files and ``manifest.txt`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in videos:
        e = v.entry
        root = out / e.subject_id
        root.mkdir(parents=True, exist_ok=True)
        save_frames(out / e.frame_dir, v.frames)
        save_keypoints(out / e.keypoint_path, v.keypoints)
        save_detections(out / e.detection_path, v.detections)
        entries.append(VideoEntry(e.subject_id, e.label, e.pain_subtype, out / e.frame_dir, out / e.keypoint_path, out / e.detection_path))
    save_manifest(out / "manifest.txt", entries)
    return out / "manifest.txt"


# ------------------------------------------------------------- blob task


@dataclass
class BlobClip:
    clip: Clip
    boxes: np.ndarray  # 8×4 (x1, y1, x2, y2) pixel boxes of the planted blob; NaN without blob


def synth_blob_clips(n_clips: int, image_size: int = 32, blob_size: int = 10, seed: int = 0, positive_share: float = 0.5):
    """Clips whose label says whether a bright square drifts through textured frames.

    Poses are all zero so only the RGB stream carries signal.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_clips):
        label = int(rng.random() < positive_share)
        background = _texture(int(rng.integers(2**31)), image_size)
        start = rng.uniform(0, image_size - blob_size, 2)
        velocity = rng.uniform(-1.0, 1.0, 2)
        frames, boxes = [], []
        for t in range(CLIP_LEN):
            img = background.copy()
            if label:
                x, y = np.clip(start + velocity * t, 0, image_size - blob_size)
                x0, y0 = int(round(x)), int(round(y))
                img[y0 : y0 + blob_size, x0 : x0 + blob_size] = (1.0, 0.15, 0.1)
                boxes.append((x0, y0, x0 + blob_size, y0 + blob_size))
            else:
                boxes.append((np.nan,) * 4)
            frames.append((np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))
        arr = np.stack(frames).astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        clip = Clip(arr, np.zeros((CLIP_LEN, 34)), label, subject_id=f"blob{i:04d}", video=f"blob{i:04d}")
        out.append(BlobClip(clip, np.array(boxes, dtype=float)))
    return out


def synth_clips(videos: Sequence[SynthVideo], image_size: int | None = None, crop: bool = True) -> list[Clip]:
    """In-memory equivalent of writing the videos and loading them back as clips."""
    out: list[Clip] = []
    for v in videos:
        clips, _ = build_clips(
            v.frames, v.keypoints, v.detections, v.label,
            subject_id=v.entry.subject_id, video=v.entry.subject_id,
            image_size=image_size or v.frames.shape[1], crop=crop,
        )  # fmt: skip
        out += clips
    return out
