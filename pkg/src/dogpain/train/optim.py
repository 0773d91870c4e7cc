"""First-order optimizers over a name -> Tensor parameter dictionary."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from dogpain.errors import ConfigurationError
from dogpain.numerics import Tensor


def _assign(t: Tensor, value: np.ndarray) -> None:
    arr = np.asarray(value, dtype=t.data.dtype)
    arr.flags.writeable = False
    t.data = arr


class SGDMomentum:
    """Heavy-ball SGD: ``v = mu*v + g``, ``w -= lr*v``."""

    kind = "sgd-momentum"

    def __init__(self, lr: float = 1e-3, momentum: float = 0.9):
        if lr <= 0 or not 0 <= momentum < 1:
            raise ConfigurationError(f"sgd-momentum: bad lr {lr} or momentum {momentum}")
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, params: Mapping[str, Tensor]) -> None:
        self.steps += 1
        for name, t in params.items():
            if t.grad is None:
                continue
            v = self.velocity.get(name)
            v = t.grad if v is None else self.momentum * v + t.grad
            self.velocity[name] = v
            _assign(t, t.data - self.lr * v)

    def state(self) -> dict[str, np.ndarray]:
        return {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_state(self, tensors: Mapping[str, np.ndarray], steps: int) -> None:
        self.velocity = {k.split("/", 1)[1]: np.array(v) for k, v in tensors.items() if k.startswith("velocity/")}
        self.steps = steps


class Adam:
    """Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8)."""

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigurationError(f"adam: bad lr {lr} or betas ({beta1}, {beta2})")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, params: Mapping[str, Tensor]) -> None:
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for name, t in params.items():
            g = t.grad
            if g is None:
                continue
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            _assign(t, t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))

    def state(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    def load_state(self, tensors: Mapping[str, np.ndarray], steps: int) -> None:
        self.m = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("v/")}
        self.steps = steps


def make_optimizer(kind: str, lr: float, momentum: float = 0.9):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd-momentum":
        return SGDMomentum(lr, momentum)
    raise ConfigurationError(f"unknown optimizer {kind!r}; expected adam or sgd-momentum")
