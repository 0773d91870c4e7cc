"""17-keypoint dog skeleton: missing-keypoint repair and root-centred normalization.

Keypoint order::

    0 left eye      1 right eye     2 nose tip      3 neck (withers)   4 tail end
    5-7  LF elbow, knee, paw        8-10  RF elbow, knee, paw
    11-13 LB elbow, knee, paw       14-16 RB elbow, knee, paw
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from dogpain.errors import ContractError, DegeneratePoseError

N_KEYPOINTS = 17
KEYPOINT_NAMES = (
    "left_eye", "right_eye", "nose", "neck", "tail_end",
    "lf_elbow", "lf_knee", "lf_paw",
    "rf_elbow", "rf_knee", "rf_paw",
    "lb_elbow", "lb_knee", "lb_paw",
    "rb_elbow", "rb_knee", "rb_paw",
)  # fmt: skip
NECK, TAIL = 3, 4
HEAD = (0, 1, 2)
SPINE = (NECK, TAIL)
LEGS = {"LF": (5, 6, 7), "RF": (8, 9, 10), "LB": (11, 12, 13), "RB": (14, 15, 16)}
LEG_JOINTS = tuple(j for leg in LEGS.values() for j in leg)
MIRROR_PARTNER = {"LF": "RF", "RF": "LF", "LB": "RB", "RB": "LB"}
SAME_SIDE_PARTNER = {"LF": "LB", "LB": "LF", "RF": "RB", "RB": "RF"}

MISSING, VISIBLE, INFERRED = 0, 1, 2
MAX_MISSING = 9
MIN_SPINE_LENGTH = 1e-6


@dataclass(frozen=True)
class SkeletonFrame:
    """One frame of keypoints in pixels.

    ``vis`` holds 0 (missing), 1 (detected) or 2 (filled by repair). Missing
    points carry NaN coordinates.
    """

    xy: np.ndarray
    vis: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64).reshape(-1, 2)
        vis = np.array(self.vis, dtype=np.int8).reshape(-1)
        if xy.shape[0] != N_KEYPOINTS or vis.shape[0] != N_KEYPOINTS:
            raise ContractError(f"expected {N_KEYPOINTS} keypoints, got {xy.shape[0]}")
        if not np.isin(vis, (MISSING, VISIBLE, INFERRED)).all():
            raise ContractError(f"visibility flags must be 0, 1 or 2, got {sorted(set(vis.tolist()))}")
        present = vis != MISSING
        if not np.isfinite(xy[present]).all():
            raise ContractError("present keypoints must have finite coordinates")
        xy[~present] = np.nan
        xy.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "vis", vis)

    @property
    def present(self) -> np.ndarray:
        return self.vis != MISSING

    @property
    def n_missing(self) -> int:
        return int((self.vis == MISSING).sum())

    def with_points(self, updates: dict[int, tuple[np.ndarray, int]]) -> "SkeletonFrame":
        xy, vis = self.xy.copy(), self.vis.copy()
        for j, (p, v) in updates.items():
            xy[j] = p
            vis[j] = v
        return replace(self, xy=xy, vis=vis)

    def same_as(self, other: "SkeletonFrame") -> bool:
        return (
            self.frame_index == other.frame_index
            and np.array_equal(self.vis, other.vis)
            and np.array_equal(self.xy, other.xy, equal_nan=True)
        )


@dataclass(frozen=True)
class NormalizedFrame:
    """Root-centred, spine-length-scaled keypoints (dimensionless)."""

    xy: np.ndarray
    vis: np.ndarray
    frame_index: int = 0

    def pose_vector(self) -> np.ndarray:
        """Flatten to 34 values ``x0, y0, x1, y1, ...``; missing points become 0."""
        return np.nan_to_num(self.xy, nan=0.0).reshape(-1)


@dataclass
class RepairReport:
    interpolated: int = 0
    leg_inferred: int = 0
    symmetry_filled: int = 0
    discarded: bool = False
    reason: str | None = None

    def as_dict(self) -> dict:
        return {
            "interpolated": self.interpolated,
            "leg_inferred": self.leg_inferred,
            "symmetry_filled": self.symmetry_filled,
            "discarded": self.discarded,
            "reason": self.reason,
        }


def frame_from_arrays(xy, vis, frame_index: int = 0) -> SkeletonFrame:
    return SkeletonFrame(np.asarray(xy, float), np.asarray(vis), frame_index)


# ------------------------------------------------------------------ rule 1


def interpolate_missing(seq: Sequence[SkeletonFrame]) -> tuple[list[SkeletonFrame], list[RepairReport]]:
    """Fill missing keypoints from detected occurrences elsewhere in the sequence.

    A gap bounded on both sides is filled linearly in frame index; a gap open on
    one side holds the nearest detection. Only detected (not previously filled)
    points serve as anchors, so the result is stable under re-application.
    """
    if not seq:
        raise ContractError("interpolate_missing: empty sequence")
    idx = np.array([f.frame_index for f in seq], dtype=float)
    if np.any(np.diff(idx) <= 0):
        raise ContractError("interpolate_missing: frames must be strictly ordered by frame_index")
    xy = np.stack([f.xy for f in seq])
    vis = np.stack([f.vis for f in seq])
    counts = np.zeros(len(seq), dtype=int)
    for j in range(N_KEYPOINTS):
        anchors = np.flatnonzero(vis[:, j] == VISIBLE)
        if anchors.size == 0:
            continue
        for t in np.flatnonzero(vis[:, j] == MISSING):
            after = anchors[anchors > t]
            before = anchors[anchors < t]
            if before.size and after.size:
                a, b = before[-1], after[0]
                w = (idx[t] - idx[a]) / (idx[b] - idx[a])
                xy[t, j] = xy[a, j] + w * (xy[b, j] - xy[a, j])
            else:
                xy[t, j] = xy[before[-1] if before.size else after[0], j]
            vis[t, j] = INFERRED
            counts[t] += 1
    frames = [SkeletonFrame(xy[t], vis[t], f.frame_index) for t, f in enumerate(seq)]
    return frames, [RepairReport(interpolated=int(c)) for c in counts]


# ------------------------------------------------------------------ rule 2


def discard_reason(f: SkeletonFrame) -> str | None:
    if not (f.present[NECK] and f.present[TAIL]):
        return "spine-missing"
    if f.n_missing > MAX_MISSING:
        return "too-many-missing"
    return None


def should_discard(f: SkeletonFrame) -> bool:
    """True when more than nine keypoints are missing or either spine point is."""
    return discard_reason(f) is not None


# ------------------------------------------------------------------ rule 3


def _leg_joints(leg: str) -> tuple[int, int, int]:
    if leg not in LEGS:
        raise ContractError(f"unknown leg {leg!r}; expected one of {sorted(LEGS)}")
    return LEGS[leg]


def infer_leg_joint(f: SkeletonFrame, leg: str) -> SkeletonFrame:
    """Rebuild the single missing joint of ``leg`` from the other two.

    A knee is the elbow-paw midpoint; an end joint is the other end reflected
    through the knee.
    """
    elbow, knee, paw = _leg_joints(leg)
    missing = [j for j in (elbow, knee, paw) if not f.present[j]]
    if len(missing) != 1:
        raise ContractError(f"infer_leg_joint: leg {leg} has {len(missing)} missing joints, need exactly 1")
    j = missing[0]
    p = f.xy
    if j == knee:
        new = 0.5 * (p[elbow] + p[paw])
    elif j == elbow:
        new = p[knee] + (p[knee] - p[paw])
    else:
        new = p[knee] + (p[knee] - p[elbow])
    return f.with_points({j: (new, INFERRED)})


# ------------------------------------------------------------------ rule 4


def reflect_across(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mirror ``points`` across the line through ``a`` and ``b``."""
    u = (b - a) / np.linalg.norm(b - a)
    rel = np.atleast_2d(points) - a
    proj = np.outer(rel @ u, u)
    return (a + 2 * proj - rel).reshape(np.shape(points))


def symmetry_fill(f: SkeletonFrame, leg: str) -> SkeletonFrame:
    """Fill a leg with two or more missing joints from the body's symmetry.

    Each missing joint is first taken from the left/right partner leg mirrored
    across the neck-tail line. Failing that, the front/back leg on the same side
    is translated by the offset between the two legs' elbows (or knees).
    Joints with no donor stay missing.
    """
    joints = _leg_joints(leg)
    missing = [k for k, j in enumerate(joints) if not f.present[j]]
    if len(missing) < 2:
        raise ContractError(f"symmetry_fill: leg {leg} has {len(missing)} missing joints, need at least 2")
    if not (f.present[NECK] and f.present[TAIL]):
        raise ContractError("symmetry_fill: spine keypoints missing")
    neck, tail = f.xy[NECK], f.xy[TAIL]
    if np.linalg.norm(tail - neck) <= MIN_SPINE_LENGTH:
        raise DegeneratePoseError("symmetry_fill: neck and tail end coincide")

    mirror = LEGS[MIRROR_PARTNER[leg]]
    side = LEGS[SAME_SIDE_PARTNER[leg]]
    offset = None
    for k in (0, 1):  # elbows, then knees
        if f.present[joints[k]] and f.present[side[k]]:
            offset = f.xy[joints[k]] - f.xy[side[k]]
            break

    updates = {}
    for k in missing:
        if f.present[mirror[k]]:
            updates[joints[k]] = (reflect_across(f.xy[mirror[k]], neck, tail), INFERRED)
        elif offset is not None and f.present[side[k]]:
            updates[joints[k]] = (f.xy[side[k]] + offset, INFERRED)
    return f.with_points(updates) if updates else f


# ------------------------------------------------------------------ driver


def _fill_legs(f: SkeletonFrame, report: RepairReport) -> SkeletonFrame:
    # rules 3 then 4, repeated until nothing changes so a second pass has nothing left to do
    while True:
        before = f.n_missing
        for leg, joints in LEGS.items():
            if sum(not f.present[j] for j in joints) == 1:
                f = infer_leg_joint(f, leg)
                report.leg_inferred += 1
        for leg, joints in LEGS.items():
            if sum(not f.present[j] for j in joints) >= 2:
                filled = symmetry_fill(f, leg)
                report.symmetry_filled += f.n_missing - filled.n_missing
                f = filled
        if f.n_missing == before:
            return f


def repair(seq: Sequence[SkeletonFrame]) -> tuple[list[SkeletonFrame], list[RepairReport]]:
    """Apply the four repair rules in order to one clip.

    Returns the repaired frames and one report per frame. Frames that fail the
    discard test are returned interpolated-only with ``discarded`` set; callers
    drop the clip (see :func:`clip_discard_reason`).
    """
    frames, reports = interpolate_missing(seq)
    out = []
    for f, rep in zip(frames, reports):
        reason = discard_reason(f)
        if reason is not None:
            rep.discarded, rep.reason = True, reason
            out.append(f)
            continue
        out.append(_fill_legs(f, rep))
    return out, reports


def clip_discard_reason(reports: Sequence[RepairReport]) -> str | None:
    for r in reports:
        if r.discarded:
            return r.reason
    return None


# ------------------------------------------------------------- normalize


def normalize(f: SkeletonFrame) -> NormalizedFrame:
    """Centre on the neck/tail midpoint and divide by the neck-tail distance."""
    if not (f.present[NECK] and f.present[TAIL]):
        raise ContractError("normalize: neck and tail end must be present")
    neck, tail = f.xy[NECK], f.xy[TAIL]
    scale = float(np.linalg.norm(neck - tail))
    if scale <= MIN_SPINE_LENGTH:
        raise DegeneratePoseError(
            f"frame {f.frame_index}: neck and tail end coincide (distance {scale:.3g} px)"
        )
    root = 0.5 * (neck + tail)
    xy = (f.xy - root) / scale
    xy.flags.writeable = False
    return NormalizedFrame(xy, f.vis, f.frame_index)


def pose_matrix(frames: Sequence[NormalizedFrame]) -> np.ndarray:
    """Stack normalized frames into a ``T×34`` array."""
    return np.stack([nf.pose_vector() for nf in frames])
