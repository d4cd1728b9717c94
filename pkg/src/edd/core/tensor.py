"""Dense tensors with a recorded computation tape and reverse-mode gradients.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to parent gradients.
:func:`backward` walks that tape once in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes do not conform."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BackwardError(RuntimeError):
    """Raised for misuse of the gradient tape."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op: str | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        op = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}{op})"

    # arithmetic sugar used by losses and tests
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, self.dtype)))

    __radd__ = __add__

    def __mul__(self, other):
        from . import functional as F

        return F.scale(self, float(other))

    __rmul__ = __mul__


def from_op(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str,
) -> Tensor:
    """Wrap an op result; the tape is only recorded when some parent needs grads."""
    parents = tuple(parents)
    out = Tensor(data, dtype=data.dtype)
    out._op = op
    out._parents = parents
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf tensor that requires gradients.

    The loss must be a scalar produced by a recorded operation. A tape can be
    replayed only once, and leaves must have their gradients cleared (for
    example by an optimizer step) before another backward pass writes to them.
    """
    if loss._op is None:
        raise BackwardError("backward() called on a tensor with no recorded computation")
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if loss._consumed:
        raise BackwardError("backward() already called on this graph")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor that requires grad")

    order = _toposort(loss)
    leaves = [n for n in order if n._backward is None]
    stale = [n.name or repr(n) for n in leaves if n.grad is not None]
    if stale:
        raise BackwardError(f"gradients not reset before backward(): {stale[:3]}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.data.dtype)
            if pg.shape != p.data.shape:
                raise ShapeError("backward", pg.shape, p.data.shape, detail=f"gradient of {node._op}")
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._consumed = True
    loss._consumed = True
