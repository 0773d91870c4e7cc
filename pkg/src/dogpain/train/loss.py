"""Binary cross-entropy on the sigmoid output."""

from __future__ import annotations

import numpy as np

import dogpain.numerics as nx
from dogpain.errors import ContractError
from dogpain.numerics import Tensor

P_MIN = 1e-7


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean of ``-[y ln p + (1-y) ln(1-p)]`` with ``p`` clamped to ``[1e-7, 1-1e-7]``.

    Args:
        p: probabilities, any shape.
        y: labels of the same shape, each exactly 0 or 1.
    """
    p = nx.as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        y = y.reshape(p.shape) if y.size == p.size else y
    if y.shape != p.shape:
        raise ContractError(f"bce_loss: labels {y.shape} do not match probabilities {p.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ContractError("bce_loss: labels must be 0 or 1")
    pc = nx.clamp(p, P_MIN, 1.0 - P_MIN)
    yt = Tensor(y)
    ll = yt * nx.log(pc) + (1.0 - yt) * nx.log(1.0 - pc)
    return nx.mul(nx.mean(ll), -1.0)
