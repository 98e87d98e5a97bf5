"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values live in numpy arrays. A :class:`Tape` records every primitive applied to
tensors that were registered with it (``tape.watch``); tensors without a tape are
constants and cost nothing beyond the numpy call. A fresh tape is built for every
forward pass.

Broadcasting is deliberately limited to *scalar with tensor* and *equal shapes*.
Row-wise bias addition goes through :func:`tile_rows` (or :func:`add_rowwise`)
so every expansion is explicit.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "softplus",
    "exp",
    "log",
    "square",
    "sqrt",
    "elementwise",
    "sum",
    "mean",
    "concat",
    "tile_rows",
    "add_rowwise",
    "reshape",
    "transpose",
    "take",
    "softmax",
    "backward",
    "gradient_check",
]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Operations are appended as they execute, so the list is topologically
    ordered by construction. :meth:`backward` walks it once in reverse.
    """

    def __init__(self) -> None:
        self._records: List[Tuple[int, Tuple[Optional[int], ...], BackwardFn]] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def _new_node(self) -> int:
        node = self._next_id
        self._next_id += 1
        return node

    def watch(self, value) -> "Tensor":
        """Register a leaf tensor whose gradient is wanted."""
        return Tensor(value, tape=self, node=self._new_node())

    def watch_all(self, params: Mapping[str, np.ndarray]) -> Dict[str, "Tensor"]:
        return {name: self.watch(value) for name, value in params.items()}

    def _record(self, inputs: Sequence["Tensor"], backward_fn: BackwardFn) -> int:
        out = self._new_node()
        self._records.append((out, tuple(t.node for t in inputs), backward_fn))
        return out

    def backward(self, loss: "Tensor", wrt: Mapping[str, "Tensor"]) -> Dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors the loss does not depend on receive an all-zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        for name, leaf in wrt.items():
            if leaf.tape is not self:
                raise ContractError(f"parameter {name!r} is not watched by this tape")
        grads: Dict[int, np.ndarray] = {}
        if loss.tape is self:
            grads[loss.node] = np.ones_like(loss.data)
            for out, inputs, fn in reversed(self._records):
                g = grads.pop(out, None)
                if g is None:
                    continue
                for node, gi in zip(inputs, fn(g)):
                    if node is None or gi is None:
                        continue
                    if node in grads:
                        grads[node] = grads[node] + gi
                    else:
                        grads[node] = gi
        return {
            name: grads.get(leaf.node, np.zeros_like(leaf.data)) for name, leaf in wrt.items()
        }


class Tensor:
    """Immutable float64 array value, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, data, tape: Optional[Tape] = None, node: Optional[int] = None) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @classmethod
    def _wrap(cls, data: np.ndarray, tape: Optional[Tape], node: Optional[int]) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.tape = tape
        t.node = node
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = "" if self.tape is None else f", node={self.node}"
        return f"Tensor({self.data!r}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(value) -> Tensor:
    """Constant tensor (not recorded on any tape)."""
    return value if isinstance(value, Tensor) else Tensor(value)


def as_tensor(value) -> Tensor:
    """Wrap without copying when ``value`` is already a float64 array."""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64), None, None)


def _tape_of(inputs: Iterable[Tensor]) -> Optional[Tape]:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands are recorded on different tapes")
            tape = t.tape
    return tape


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor._wrap(data, None, None)
    return Tensor._wrap(data, tape, tape._record(inputs, backward_fn))


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not equal and neither is a scalar")


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # only scalar-with-tensor broadcasting exists, so reduction is a full sum
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b), lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("div: division by zero")
    out = ad / bd
    return _result(
        out,
        (a, b),
        lambda g: (_reduce_to(g / bd, ad.shape), _reduce_to(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product of ``(m, k) @ (k, n)``; 1-d operands act as a row/column vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    # constants (data, pooling matrices) never need a gradient
    need_a, need_b = a.tape is not None, b.tape is not None

    def backward_fn(g):
        a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
        b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape) if need_a else None
        gb = (a2.T @ g2).reshape(bd.shape) if need_b else None
        return ga, gb

    return _result(ad @ bd, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(np.logaddexp(0.0, a.data), (a,), lambda g: (g * sig,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp: result overflows float64")
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError(f"log: non-positive input (min {a.data.min():.6g})")
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("sqrt: non-positive input (gradient undefined at 0)")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
}


def elementwise(op: str, *inputs) -> Tensor:
    """Apply the named elementwise primitive, e.g. ``elementwise("relu", x)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; known: {sorted(_ELEMENTWISE)}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return _result(
        out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    )


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return mul(sum(a, axis), 1.0 / n)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def tile_rows(v, n: int) -> Tensor:
    """Stack ``n`` copies of a 1-d tensor into an ``(n, d)`` matrix."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"tile_rows expects a 1-d tensor, got shape {v.shape}")
    return _result(np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),))


def add_rowwise(x, b) -> Tensor:
    """``x + b`` for every row of a 2-d ``x`` and a 1-d ``b`` (a linear-layer bias)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim == 1:
        return add(x, b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_rowwise: shapes {x.shape} and {b.shape} do not match")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def take(a, index) -> Tensor:
    """Index or slice a tensor; the gradient scatters back (repeats accumulate)."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise ContractError("take: index must be an int, slice or integer array, not a Tensor")
    out = np.array(a.data[index], dtype=np.float64)
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (a,), backward_fn)


def softmax(a, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (boolean, same shape) marks admissible entries; excluded entries
    get probability exactly 0. Every row must keep at least one entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} != input shape {x.shape}")
        if not np.all(mask.any(axis=-1)):
            raise ContractError("softmax: a row has no admissible entries")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (a,), backward_fn)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def backward(loss: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """``d loss / d p`` for every named leaf in ``wrt``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        tapes = {id(t.tape): t.tape for t in wrt.values() if t.tape is not None}
        if len(tapes) != 1:
            raise ContractError("loss is constant and the parameters share no tape")
        tape = next(iter(tapes.values()))
    return tape.backward(loss, wrt)


def gradient_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-6,
) -> float:
    """Compare tape gradients of ``f`` with central finite differences.

    ``f`` maps a dict of tensors to a scalar tensor and must be deterministic.
    Returns ``max |g_ad - g_fd| / max(1, |g_ad| + |g_fd|)`` over all coordinates;
    a large error is reported, never raised.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    leaves = tape.watch_all(base)
    analytic = backward(f(leaves), leaves)

    def value(point):
        return f({k: Tensor._wrap(v, None, None) for k, v in point.items()}).item()

    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        g_ad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value(base)
            flat[i] = orig - eps
            down = value(base)
            flat[i] = orig
            g_fd = (up - down) / (2.0 * eps)
            err = abs(g_ad[i] - g_fd) / max(1.0, abs(g_ad[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst
