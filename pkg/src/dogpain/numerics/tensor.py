"""Dense tensor with a reverse-mode tape.

Every `Tensor` produced by an operation remembers the tensors it was computed
from and a closure that maps the output adjoint to input adjoints. Calling
`backward()` on a scalar walks that graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from dogpain.errors import ContractError, NonFiniteError

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype = np.float32


def set_precision(name: str) -> None:
    """Select the global element type: ``"float64"`` (verification) or ``"float32"`` (training)."""
    global _dtype
    if name not in _PRECISIONS:
        raise ContractError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "float64" if _dtype is np.float64 else "float32"


def dtype():
    return _dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global precision."""
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    """Immutable n-dimensional array node.

    Args:
        data: array-like values, cast to the current global precision.
        requires_grad: mark a leaf whose adjoint should be kept.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_retain")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        op: str = "leaf",
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        _checked: bool = False,
    ):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not _checked:
            check_finite(arr, op)
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward
        self._retain = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _not_scalar(self)
        return float(self.data.reshape(-1)[0])

    def retain_grad(self) -> "Tensor":
        """Keep this intermediate node's adjoint in ``grad`` after backward."""
        self._retain = True
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data, _checked=True)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Accumulate adjoints into every leaf with ``requires_grad``.

        Without a seed the tensor must hold exactly one element.
        """
        if seed is None:
            if self.size != 1:
                _not_scalar(self)
            seed_arr = np.ones(self.shape, dtype=_dtype)
        else:
            seed_arr = np.broadcast_to(np.asarray(seed, dtype=self.data.dtype), self.shape).copy()

        order = _topological(self)
        adjoints: dict[int, np.ndarray] = {id(self): seed_arr}
        for node in order:
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            if node._retain or not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if not node._parents:
                continue
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg

    # operator sugar, resolved lazily to avoid an import cycle
    def __add__(self, other):
        from dogpain.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from dogpain.numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from dogpain.numerics import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from dogpain.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from dogpain.numerics import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from dogpain.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from dogpain.numerics import ops

        return ops.getitem(self, index)


def _not_scalar(t: Tensor):
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def _topological(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first), iterative to survive deep unrolls."""
    seen: set[int] = set()
    post: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    post.reverse()
    return post


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
