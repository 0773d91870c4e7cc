"""Central finite-difference verification of analytic adjoints."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from dogpain.errors import ContractError
from dogpain.numerics.tensor import Tensor, get_precision


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(
    fn: Callable[..., Tensor],
    point: Tensor | np.ndarray | Sequence[Tensor | np.ndarray],
    epsilon: float = 1e-5,
    *,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``fn`` receives one tensor per entry of ``point`` and must return a single
    element. The relative error of a coordinate is
    ``|a - n| / max(1, |a|, |n|)``.

    ``max_coords`` limits the probed coordinates per input to a random subset,
    which keeps checks of large networks affordable.
    """
    if get_precision() != "float64":
        raise ContractError("grad_check requires float64 precision")
    single = isinstance(point, (Tensor, np.ndarray))
    points = [point] if single else list(point)
    bases = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in points]

    leaves = [Tensor(b, requires_grad=True) for b in bases]
    out = fn(*leaves)
    _scalar(out)
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(b) for leaf, b in zip(leaves, bases)]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for i, base in enumerate(bases):
        flat_idx = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            flat_idx = rng.choice(base.size, size=max_coords, replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, base.shape)
            vals, steps = [], []
            for sign in (1.0, -1.0):
                probe = base.copy()
                probe[idx] += sign * epsilon
                steps.append(probe[idx])
                args = [Tensor(probe) if k == i else Tensor(bases[k]) for k in range(len(bases))]
                vals.append(_scalar(fn(*args)))
            # divide by the representable step, not the nominal one
            numeric = (vals[0] - vals[1]) / (steps[0] - steps[1])
            a = float(analytic[i][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
