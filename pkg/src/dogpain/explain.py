"""Grad-CAM saliency for the RGB stream's last ConvLSTM layer, with heatmap overlays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image

from dogpain.container import save_tensors
from dogpain.data.clips import Clip
from dogpain.errors import ContractError
from dogpain.model import TwoStreamParams, forward_batch

COLORMAP = "jet"
OPACITY = 0.5


@dataclass
class SaliencyClip:
    maps: np.ndarray  # T×h×w in [0, 1]
    overlays: list[np.ndarray]  # T images H×W×3 uint8
    class_index: int
    confidence: float  # model probability of pain

    def peaks(self) -> list[tuple[int, int]]:
        """(row, col) of each frame's maximum on the upsampled grid."""
        h, w = self.overlays[0].shape[:2]
        out = []
        for m in self.maps:
            up = upsample(m, h, w)
            out.append(tuple(int(i) for i in np.unravel_index(np.argmax(up), up.shape)))
        return out


def cam_maps(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Rectified gradient-weighted channel sums.

    Args:
        activations, gradients: ``T×C×h×w`` feature maps and the class-score
            adjoints at the same tensor.

    Returns:
        ``T×h×w`` maps, each ``relu(sum_k mean(grad_k) * A_k)``; unnormalized.
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.shape != g.shape or a.ndim != 4:
        raise ContractError(f"cam_maps: expected matching T×C×h×w arrays, got {a.shape} and {g.shape}")
    weights = g.mean(axis=(2, 3))  # T×C
    return np.maximum(np.einsum("tc,tchw->thw", weights, a), 0.0)


def gradcam(params: TwoStreamParams, clip: Clip, class_index: int = 1) -> SaliencyClip:
    """Per-frame Grad-CAM of one clip, max-normalized over the whole clip.

    The class score is the logit for class 1 (pain) and its negation for
    class 0. The network runs in inference mode.
    """
    if class_index not in (0, 1):
        raise ContractError(f"gradcam: class_index must be 0 or 1, got {class_index!r}")
    params.zero_grad()
    res = forward_batch(params, clip.frames[None], clip.poses[None], training=False, keep_hidden=True)
    score = res.logit if class_index == 1 else res.logit * -1.0
    score.backward()
    acts = np.stack([h.data[0] for h in res.last_hidden])
    grads = np.stack([np.zeros(h.shape[1:]) if h.grad is None else h.grad[0] for h in res.last_hidden])
    params.zero_grad()
    maps = cam_maps(acts, grads)
    top = maps.max()
    maps = maps / top if top > 0 else np.zeros_like(maps)
    frames = (np.clip(clip.frames.transpose(0, 2, 3, 1), 0, 1) * 255 + 0.5).astype(np.uint8)
    overlays = [upsample_overlay(m, f) for m, f in zip(maps, frames)]
    return SaliencyClip(maps, overlays, class_index, float(res.prob.data[0]))


def upsample(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner pixels aligned, separable in rows and columns."""
    m = np.asarray(m, dtype=np.float64)
    h, w = m.shape

    def axis_weights(n_in, n_out):
        pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, height)
    c0, c1, fc = axis_weights(w, width)
    rows = m[r0] * (1 - fr)[:, None] + m[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc) + rows[:, c1] * fc


def upsample_overlay(m: np.ndarray, frame: np.ndarray, opacity: float = OPACITY) -> np.ndarray:
    """Blend a ``[0, 1]`` saliency map, upsampled to the frame, over an ``H×W×3`` uint8 frame."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ContractError(f"upsample_overlay: frame must be H×W×3, got {frame.shape}")
    up = np.clip(upsample(m, frame.shape[0], frame.shape[1]), 0.0, 1.0)
    heat = matplotlib.colormaps[COLORMAP](up)[..., :3]
    base = frame.astype(np.float64) / 255.0
    return (np.clip((1 - opacity) * base + opacity * heat, 0, 1) * 255 + 0.5).astype(np.uint8)


def save_saliency(sal: SaliencyClip, out_dir, stem: str = "clip") -> list[Path]:
    """Write one PNG overlay per time step and the raw maps as a tensor container."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, img in enumerate(sal.overlays):
        p = out / f"{stem}_t{t}.png"
        Image.fromarray(img).save(p)
        paths.append(p)
    raw = out / f"{stem}_maps.bin"
    save_tensors(
        raw, {"maps": sal.maps}, kind="saliency", meta={"class_index": sal.class_index, "confidence": sal.confidence}
    )
    paths.append(raw)
    return paths


def peak_in_box(peak: tuple[int, int], box) -> bool:
    """Whether a (row, col) pixel lies in an ``(x0, y0, x1, y1)`` half-open pixel box."""
    r, c = peak
    x0, y0, x1, y1 = box
    return bool(x0 <= c < x1 and y0 <= r < y1)
