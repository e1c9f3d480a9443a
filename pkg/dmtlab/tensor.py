"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that requires a gradient records its parents and
a backward rule on the output. ``backward(loss)`` walks those records into a
``Tape`` (parents before children) and visits each node once in reverse.
Gradients accumulate into the ``grad`` buffer of leaf tensors only.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dmtlab.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardRule | None = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple[Tensor, ...], rule: BackwardRule, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = rule
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    def __radd__(self, other):
        return shift(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other: float):
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- elementwise ---


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a: Tensor, c: float) -> Tensor:
    return Tensor._result(a.data + float(c), (a,), lambda g: (g,), "shift")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def square(a: Tensor) -> Tensor:
    return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "square": square,
}


def elementwise(op: str, *args) -> Tensor:
    """Apply a named pointwise operation."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"Unknown elementwise op {op!r}") from None
    return fn(*args)


# --- reductions and shape ---


def sum_all(a: Tensor) -> Tensor:
    return Tensor._result(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return Tensor._result(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


def sum_rows(a: Tensor) -> Tensor:
    """Sum over every axis but the first: [n, ...] -> [n]."""
    axes = tuple(range(1, a.data.ndim))
    return Tensor._result(
        a.data.sum(axis=axes),
        (a,),
        lambda g: (np.broadcast_to(g.reshape((-1,) + (1,) * len(axes)), a.shape).copy(),),
        "sum_rows",
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


# --- linear algebra ---


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return Tensor._result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a row bias ``b[k]`` to every row of ``x[n, k]``."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    return Tensor._result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add ``b[c]`` or per-sample ``b[n, c]`` to a feature map ``x[n, c, h, w]``."""
    if x.data.ndim != 4:
        raise DimensionError(f"add_channel_bias: expected [n, c, h, w], got {x.shape}")
    n, c = x.shape[:2]
    if b.shape == (c,):
        out = x.data + b.data[None, :, None, None]
        return Tensor._result(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_channel_bias")
    if b.shape == (n, c):
        out = x.data + b.data[:, :, None, None]
        return Tensor._result(out, (x, b), lambda g: (g, g.sum(axis=(2, 3))), "add_channel_bias")
    raise DimensionError(f"add_channel_bias: bias {b.shape} does not fit {x.shape}")


# --- convolutional ---


def _im2col(x: np.ndarray) -> np.ndarray:
    """[n, c, h, w] -> [n*h*w, c*9] patches of the zero-padded map."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    patches = cols.reshape(n, h, w, c, 3, 3)
    padded = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            padded[:, :, i : i + h, j : j + w] += patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return padded[:, :, 1:-1, 1:-1]


def conv2d(x: Tensor, k: Tensor) -> Tensor:
    """3x3 cross-correlation with zero padding 1.

    ``x`` is [c_in, h, w] or a batch [n, c_in, h, w]; ``k`` is [c_out, c_in, 3, 3].
    """
    unbatched = x.data.ndim == 3
    if unbatched:
        return reshape(conv2d(reshape(x, (1,) + x.shape), k), (k.shape[0],) + x.shape[1:])
    if x.data.ndim != 4 or k.data.ndim != 4 or k.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: unsupported shapes {x.shape} and {k.shape}")
    if k.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d: kernel expects {k.shape[1]} input channels, got {x.shape[1]}")
    n, _, h, w = x.shape
    c_out = k.shape[0]
    cols = _im2col(x.data)
    kmat = k.data.reshape(c_out, -1)
    out = (cols @ kmat.T).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)

    def rule(g: np.ndarray):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        dk = (g2.T @ cols).reshape(k.shape)
        dx = _col2im(g2 @ kmat, x.shape) if x.requires_grad else None
        return dx, dk

    return Tensor._result(np.ascontiguousarray(out), (x, k), rule, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 on [n, c, h, w]."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: spatial dims of {x.shape} must be even")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return Tensor._result(
        out,
        (x,),
        lambda g: (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,),
        "avg_pool2",
    )


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling on [n, c, h, w]."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return Tensor._result(
        out,
        (x,),
        lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),),
        "upsample2",
    )


# --- backward pass ---


class Tape:
    """Operations reachable from a root, ordered so inputs precede outputs."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def record(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run(self, seed: np.ndarray) -> None:
        root = self.nodes[-1]
        pending = {id(root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that is not on the tape")
    Tape.record(loss).run(np.ones_like(loss.data))


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from ``params`` on every call. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    perturbed.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(coords.size)
        for n, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + h
            up = fn().item()
            flat[idx] = orig - h
            down = fn().item()
            flat[idx] = orig
            numeric[n] = (up - down) / (2.0 * h)
        exact = ga.reshape(-1)[coords]
        denom = max(np.linalg.norm(exact), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(exact - numeric) / denom))
    logger.debug("gradient check over %d tensors: max rel err %.3e", len(params), worst)
    return worst
