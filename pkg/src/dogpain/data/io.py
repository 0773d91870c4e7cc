"""Line-delimited interchange files: keypoints, detections, manifests, frames.

Every file opens with a ``#dogpain-<kind> v<version>`` header. Keypoint files
carry one frame per line (``frame_index`` then 17 ``x y v`` triples); detection
files one detection per line (``frame_index x1 y1 x2 y2 confidence``); the
manifest one tab-separated video per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from dogpain.data.detections import DetectionRecord
from dogpain.errors import ContractError, LoadError, ParseError, SchemaVersionError
from dogpain.skeleton import KEYPOINT_NAMES, N_KEYPOINTS, SkeletonFrame

SCHEMA_VERSION = 1
LABELS = ("pain", "no-pain")
SUBTYPES = ("orthopedic", "neurological", "none")
FRAME_DIGITS = 6


@dataclass(frozen=True)
class VideoEntry:
    subject_id: str
    label: str
    pain_subtype: str
    frame_dir: Path
    keypoint_path: Path
    detection_path: Path

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.pain_subtype not in SUBTYPES:
            raise ContractError(f"subtype must be one of {SUBTYPES}, got {self.pain_subtype!r}")
        if (self.label == "pain") == (self.pain_subtype == "none"):
            raise ContractError(f"subtype {self.pain_subtype!r} inconsistent with label {self.label!r}")

    @property
    def y(self) -> int:
        return int(self.label == "pain")


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(kind: str, extra: str = "") -> str:
    return f"#dogpain-{kind} v{SCHEMA_VERSION}" + (f" {extra}" if extra else "")


def _read_lines(path, kind: str) -> list[tuple[int, str]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, 1, f"not valid UTF-8 ({exc.reason})") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(path, 1, f"missing #dogpain-{kind} header")
    head = lines[0].split()
    if len(head) < 2 or head[0] != f"#dogpain-{kind}":
        raise ParseError(path, 1, f"missing #dogpain-{kind} header")
    if head[1] != f"v{SCHEMA_VERSION}":
        raise SchemaVersionError(f"{path}: schema {head[1]!r}, this reader supports v{SCHEMA_VERSION}")
    if kind == "keypoints":
        expected = "order=" + ",".join(KEYPOINT_NAMES)
        if len(head) != 3 or head[2] != expected:
            raise ParseError(path, 1, "keypoint ordering in header does not match the 17-point schema")
    elif len(head) != 2:
        raise ParseError(path, 1, f"unexpected header fields {head[2:]}")
    return [(i + 1, ln) for i, ln in enumerate(lines) if i > 0 and ln.strip()]


def _num(path, line_no, token: str, what: str, allow_nan: bool = False) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(path, line_no, f"{what}: {token!r} is not a number") from None
    if math.isinf(v) or (math.isnan(v) and not allow_nan):
        raise ParseError(path, line_no, f"{what}: non-finite value {token!r}")
    return v


def _int(path, line_no, token: str, what: str) -> int:
    try:
        v = int(token)
    except ValueError:
        raise ParseError(path, line_no, f"{what}: {token!r} is not an integer") from None
    if v < 0:
        raise ParseError(path, line_no, f"{what}: negative value {v}")
    return v


# ---------------------------------------------------------------- keypoints


def save_keypoints(path, frames: Iterable[SkeletonFrame]) -> None:
    out = [_header("keypoints", "order=" + ",".join(KEYPOINT_NAMES))]
    for f in frames:
        parts = [str(f.frame_index)]
        for (x, y), v in zip(f.xy, f.vis):
            parts += ["nan", "nan", "0"] if v == 0 else [_fmt(x), _fmt(y), str(int(v))]
        out.append(" ".join(parts))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_keypoints(path) -> list[SkeletonFrame]:
    """Parse a keypoint file. ``v`` is 0 missing, 1 detected, 2 filled by repair."""
    frames = []
    last = -1
    for line_no, line in _read_lines(path, "keypoints"):
        tok = line.split()
        if len(tok) != 1 + 3 * N_KEYPOINTS:
            n = (len(tok) - 1) / 3
            shown = int(n) if n == int(n) else f"{n:.2f}"
            raise ParseError(path, line_no, f"expected {N_KEYPOINTS} keypoint triples, found {shown}")
        idx = _int(path, line_no, tok[0], "frame_index")
        if idx <= last:
            raise ParseError(path, line_no, f"frame_index {idx} not increasing")
        last = idx
        xy = np.empty((N_KEYPOINTS, 2))
        vis = np.empty(N_KEYPOINTS, dtype=int)
        for j in range(N_KEYPOINTS):
            x, y, v = tok[1 + 3 * j : 4 + 3 * j]
            if v not in ("0", "1", "2"):
                raise ParseError(path, line_no, f"keypoint {j}: visibility {v!r} not in {{0,1,2}}")
            vis[j] = int(v)
            xy[j, 0] = _num(path, line_no, x, f"keypoint {j} x", allow_nan=vis[j] == 0)
            xy[j, 1] = _num(path, line_no, y, f"keypoint {j} y", allow_nan=vis[j] == 0)
        frames.append(SkeletonFrame(xy, vis, idx))
    return frames


# ---------------------------------------------------------------- detections


def save_detections(path, records: Iterable[DetectionRecord]) -> None:
    out = [_header("detections")]
    for r in records:
        out.append(" ".join([str(r.frame_index), *map(_fmt, r.bbox), _fmt(r.confidence)]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_detections(path) -> list[DetectionRecord]:
    records = []
    for line_no, line in _read_lines(path, "detections"):
        tok = line.split()
        if len(tok) != 6:
            raise ParseError(path, line_no, f"expected 6 fields (frame x1 y1 x2 y2 confidence), found {len(tok)}")
        idx = _int(path, line_no, tok[0], "frame_index")
        vals = [_num(path, line_no, t, name) for t, name in zip(tok[1:], ("x1", "y1", "x2", "y2", "confidence"))]
        try:
            records.append(DetectionRecord(idx, tuple(vals[:4]), vals[4]))
        except ContractError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return records


# ------------------------------------------------------------------ manifest


def save_manifest(path, entries: Sequence[VideoEntry]) -> None:
    base = Path(path).parent
    out = [_header("manifest")]
    for e in entries:
        fields = [e.subject_id, e.label, e.pain_subtype]
        for p in (e.frame_dir, e.keypoint_path, e.detection_path):
            p = Path(p)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            fields.append(p.as_posix())
        out.append("\t".join(fields))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_manifest(path, check_paths: bool = True) -> list[VideoEntry]:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    entries, seen = [], set()
    for line_no, line in _read_lines(path, "manifest"):
        tok = line.split("\t")
        if len(tok) != 6:
            raise ParseError(path, line_no, f"expected 6 tab-separated fields, found {len(tok)}")
        subject, label, subtype = tok[:3]
        if subject in seen:
            raise ParseError(path, line_no, f"subject {subject!r} listed twice (one video per subject)")
        seen.add(subject)
        paths = [base / t for t in tok[3:]]
        try:
            entry = VideoEntry(subject, label, subtype, *paths)
        except ContractError as exc:
            raise ParseError(path, line_no, str(exc)) from None
        if check_paths:
            for p in paths:
                if not p.exists():
                    raise LoadError(f"manifest {path} line {line_no}: missing file {p}")
        entries.append(entry)
    return entries


# -------------------------------------------------------------------- frames


def frame_path(frame_dir, index: int) -> Path:
    return Path(frame_dir) / f"{index:0{FRAME_DIGITS}d}.png"


def save_frames(frame_dir, frames: np.ndarray) -> None:
    """Write a ``T×H×W×3`` uint8 stack as zero-padded PNGs."""
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(frames):
        Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(frame_path(frame_dir, i), optimize=False)


def load_frames(frame_dir, indices: Sequence[int]) -> np.ndarray:
    out = []
    for i in indices:
        p = frame_path(frame_dir, i)
        try:
            with Image.open(p) as im:
                out.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
        except (OSError, ValueError) as exc:
            raise LoadError(f"cannot read frame {p}: {exc}") from exc
    return np.stack(out)
