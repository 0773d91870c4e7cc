"""Random skeleton generators shared by the geometry tests."""

import numpy as np

from dogpain.skeleton import LEGS, MIRROR_PARTNER, NECK, TAIL, SkeletonFrame


def random_frame(rng, frame_index=0, p_missing=0.0):
    xy = rng.uniform(-200, 200, size=(17, 2))
    vis = (rng.random(17) >= p_missing).astype(int)
    vis[[NECK, TAIL]] = 1
    return SkeletonFrame(xy, vis, frame_index)


def reflection_matrix(theta):
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return np.array([[c, s], [s, -c]])


def mirror_symmetric_frame(rng):
    """Frame whose right legs are exact mirror images of the left legs across the spine."""
    neck = rng.uniform(-100, 100, 2)
    theta = rng.uniform(0, 2 * np.pi)
    tail = neck + rng.uniform(20, 80) * np.array([np.cos(theta), np.sin(theta)])
    xy = rng.uniform(-150, 150, size=(17, 2))
    xy[NECK], xy[TAIL] = neck, tail
    r = reflection_matrix(theta)
    for leg in ("LF", "LB"):
        for a, b in zip(LEGS[leg], LEGS[MIRROR_PARTNER[leg]]):
            xy[b] = neck + r @ (xy[a] - neck)
    return SkeletonFrame(xy, np.ones(17, int))
