"""Subject-wise test hold-out and stratified five-fold train/validation plan."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from dogpain.errors import ConfigurationError, LoadError

TEST_FRACTION = 0.13
N_FOLDS = 5
MIN_SUBJECTS_PER_CLASS = 7


@dataclass(frozen=True)
class FoldPlan:
    test_subjects: tuple[str, ...]
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "test": list(self.test_subjects),
                "folds": [{"train": list(t), "validation": list(v)} for t, v in self.folds],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        try:
            d = json.loads(text)
            return cls(
                tuple(d["test"]),
                tuple((tuple(f["train"]), tuple(f["validation"])) for f in d["folds"]),
                int(d["seed"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise LoadError(f"malformed fold plan: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FoldPlan":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_splits(
    subjects: Mapping[str, int],
    test_fraction: float = TEST_FRACTION,
    n_folds: int = N_FOLDS,
    seed: int = 0,
) -> FoldPlan:
    """Plan a subject-disjoint test set and ``n_folds`` train/validation splits.

    Args:
        subjects: subject id -> class label (one video per subject).

    Per class, ``round(test_fraction * n)`` subjects (at least one) go to the
    test set. The remaining subjects are dealt into ``n_folds`` validation
    chunks, so every one of them validates exactly once and trains in the
    other folds (an 80/20 split for five folds).
    """
    by_class: dict[int, list[str]] = {}
    for s, y in sorted(subjects.items()):
        by_class.setdefault(int(y), []).append(s)
    if len(by_class) < 2:
        raise ConfigurationError("make_splits needs subjects from both classes")
    for y, members in by_class.items():
        if len(members) < MIN_SUBJECTS_PER_CLASS:
            raise ConfigurationError(
                f"class {y} has {len(members)} subjects; at least {MIN_SUBJECTS_PER_CLASS} per class are required"
            )
    rng = np.random.default_rng(seed)
    test: list[str] = []
    chunks: list[list[str]] = [[] for _ in range(n_folds)]
    for y in sorted(by_class):
        members = by_class[y]
        order = [members[i] for i in rng.permutation(len(members))]
        n_test = max(1, round_half_up(len(members) * test_fraction))
        if len(members) - n_test < n_folds:
            raise ConfigurationError(f"class {y}: too few subjects left for {n_folds} folds")
        test += order[:n_test]
        for k, part in enumerate(np.array_split(np.array(order[n_test:], dtype=object), n_folds)):
            chunks[k] += list(part)
    pool = sorted(s for c in chunks for s in c)
    folds = []
    for k in range(n_folds):
        val = sorted(chunks[k])
        train = [s for s in pool if s not in set(val)]
        folds.append((tuple(train), tuple(val)))
    return FoldPlan(tuple(sorted(test)), tuple(folds), seed)
