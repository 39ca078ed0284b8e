"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of operations a PointNet-style encoder, a folding decoder
and the set losses need are provided. There is no general broadcasting:
every binary operation states exactly which shapes it accepts.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_default_dtype = np.dtype(np.float32)
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported compute dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the compute width, e.g. to float64 for gradient checks."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if self.data.ndim != 0:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar; each delegates to a module-level op
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
    order.reverse()
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS switches to gemv for a single row, which rounds differently from
    # gemm; padding keeps every output row bitwise independent of m.
    if a.shape[0] == 1:
        return (np.concatenate([a, a]) @ b)[:1]
    return a @ b


# ---------------------------------------------------------------- operations

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for x of shape (b, i), weight (i, o), bias (o,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = _matmul(xd, wd) + bias.data

    def backward(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _result(out, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN, so a diverged layer still surfaces in the loss
    out = np.maximum(x.data, 0).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * mask,))


def shared_mlp(points: Tensor, layers: Sequence[tuple[Tensor, Tensor]], final_relu: bool = False) -> Tensor:
    """Apply the same stack of linear layers to every row of ``points``.

    ReLU follows every layer except the last (unless ``final_relu``).
    """
    h = points
    for i, (w, b) in enumerate(layers):
        if h.shape[1] != w.shape[0]:
            raise ShapeError(f"shared_mlp: layer {i} expects width {w.shape[0]}, got {h.shape}")
        h = linear(h, w, b)
        if i < len(layers) - 1 or final_relu:
            h = relu(h)
    return h


def max_pool_points(features: Tensor) -> tuple[Tensor, np.ndarray]:
    """Column-wise max over rows. Ties resolve to the lowest row index."""
    if features.data.ndim != 2:
        raise ShapeError(f"max_pool_points expects a matrix, got {features.shape}")
    m, k = features.shape
    if m == 0:
        raise ValueError("max_pool_points: empty input (no rows)")
    argmax = np.argmax(features.data, axis=0)
    cols = np.arange(k)
    pooled = features.data[argmax, cols]

    def backward(g):
        gf = np.zeros_like(features.data)
        gf[argmax, cols] = g
        return (gf,)

    return _result(pooled, (features,), backward), argmax


def concat_feature(rows: Tensor, glob: Tensor) -> Tensor:
    """Append the vector ``glob`` to every row of ``rows``."""
    if rows.data.ndim != 2 or glob.data.ndim != 1:
        raise ShapeError(f"concat_feature: rows {rows.shape}, global {glob.shape}")
    m, a = rows.shape
    out = np.concatenate([rows.data, np.broadcast_to(glob.data, (m, glob.shape[0]))], axis=1)

    def backward(g):
        return g[:, :a], g[:, a:].sum(axis=0)

    return _result(out, (rows, glob), backward)


def concat_cols(*parts: Tensor) -> Tensor:
    """Horizontal concatenation of matrices with equal row counts."""
    m = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != m:
            raise ShapeError(f"concat_cols: row counts differ: {[q.shape for q in parts]}")
    out = np.concatenate([p.data for p in parts], axis=1)
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _result(out, parts, backward)


def gather_rows(x: Tensor, index) -> Tensor:
    """Rows of ``x`` selected (with repetition) by an integer index array."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _result(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    if out.size != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return _result(out, (x,), lambda g: (g.reshape(src),))


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor, or scaling by a Python number."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
        ad, bd = a.data, b.data
        return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    c = float(b)
    return _result((a.data * c).astype(a.dtype), (a,), lambda g: ((g * c).astype(g.dtype),))


def total(x: Tensor) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _result(out, (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    shape = x.shape
    out = np.asarray(x.data.sum() / n, dtype=x.dtype)
    return _result(out, (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def row_norms(x: Tensor) -> Tensor:
    """Euclidean norm of every row; the gradient at a zero row is taken as zero."""
    if x.data.ndim != 2:
        raise ShapeError(f"row_norms expects a matrix, got {x.shape}")
    xd = x.data
    norms = np.sqrt((xd * xd).sum(axis=1))

    def backward(g):
        safe = np.where(norms > 0, norms, 1)
        scale = np.where(norms > 0, g / safe, 0).astype(xd.dtype)
        return (xd * scale[:, None],)

    return _result(norms, (x,), backward)
