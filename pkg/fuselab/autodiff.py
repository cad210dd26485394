"""Dense float64 tensors with reverse-mode gradient propagation.

Every differentiable operation records a node on the active ``Graph``. The
graph is an ordered tape: ``backward`` replays it in reverse execution order
and then marks it consumed. A new graph is started transparently by the first
operation recorded after consumption.
"""

from __future__ import annotations

import builtins
import contextlib
import contextvars
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, GraphError, InvalidArgumentError, NumericDomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """One executed operation on the tape."""

    __slots__ = ("op", "inputs", "needs_grad", "output", "backward_rule", "graph", "index")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], output: "Tensor",
                 backward_rule: BackwardRule, graph: "Graph", index: int):
        self.op = op
        self.inputs = inputs
        # requires_grad as it was when the op ran; freezing a module only affects
        # operations recorded while it is frozen.
        self.needs_grad = tuple(t.requires_grad for t in inputs)
        self.output = output
        self.backward_rule = backward_rule
        self.graph = graph
        self.index = index


class Graph:
    """Ordered record of executed operations."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.consumed = False

    def record(self, op: str, inputs: Tuple["Tensor", ...], output: "Tensor",
               backward_rule: BackwardRule) -> Node:
        node = Node(op, inputs, output, backward_rule, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def __len__(self) -> int:
        return len(self.nodes)


_active_graph: contextvars.ContextVar[Optional[Graph]] = contextvars.ContextVar(
    "fuselab_active_graph", default=None
)
_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "fuselab_grad_enabled", default=True
)


def current_graph() -> Graph:
    """Return the live graph, starting a fresh one if the last was consumed."""
    graph = _active_graph.get()
    if graph is None or graph.consumed:
        graph = Graph()
        _active_graph.set(graph)
    return graph


def reset_graph() -> Graph:
    """Discard whatever is on the tape and start a new graph."""
    graph = Graph()
    _active_graph.set(graph)
    return graph


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording operations."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Dense row-major float64 array taking part in a differentiation graph."""

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, node: Optional[Node] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(value: Union["Tensor", ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor],
                backward_rule: BackwardRule) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it when gradients are needed.

    ``backward_rule`` maps the output gradient to one gradient per input (``None``
    for inputs that receive nothing).
    """
    inputs = tuple(inputs)
    requires = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out.node = current_graph().record(op, inputs, out, backward_rule)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor t."""
    if loss.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        if not loss.requires_grad:
            raise GraphError("loss is not attached to a live graph")
        loss.accumulate_grad(seed)
        return

    graph = loss.node.graph
    if graph.consumed:
        raise GraphError("graph already consumed by a previous backward()")

    pending = {id(loss): seed}
    for node in reversed(graph.nodes[: loss.node.index + 1]):
        grad = pending.pop(id(node.output), None)
        if grad is None:
            continue
        node.output.accumulate_grad(grad)
        input_grads = node.backward_rule(grad)
        for tensor, needed, tensor_grad in zip(node.inputs, node.needs_grad, input_grads):
            if tensor_grad is None or not needed:
                continue
            if tensor.node is not None and tensor.node.graph is graph:
                key = id(tensor)
                pending[key] = pending[key] + tensor_grad if key in pending else tensor_grad
            else:
                tensor.accumulate_grad(tensor_grad)

    graph.consumed = True
    graph.nodes = []
    logger.debug("backward pass consumed graph")


# broadcasting

def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(b) <= len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    if len(a) == len(b) and all(x == y or x == 1 or y == 1 for x, y in zip(a, b)):
        return tuple(builtins.max(x, y) for x, y in zip(a, b))
    raise DimensionError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# binary elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    return make_result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    return make_result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    return make_result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    if np.any(b.data == 0.0):
        raise NumericDomainError("div: division by zero")
    return make_result(
        "div", a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    if not float(exponent).is_integer() and np.any(a.data <= 0.0):
        raise NumericDomainError(f"power: non-integer exponent {exponent} needs positive inputs")
    out = a.data ** exponent
    return make_result(
        "power", out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),)
    )


# unary elementwise

def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: ArrayLike, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data >= 0.0, 1.0, alpha)
    return make_result("leaky_relu", a.data * slope, (a,), lambda g: (g * slope,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericDomainError("exp: result overflows float64")
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericDomainError("log: inputs must be strictly positive")
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a: ArrayLike, low: float, high: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return make_result(
        "clamp", np.clip(a.data, low, high), (a,), lambda g: (np.where(inside, g, 0.0),)
    )


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "exp": exp,
    "log": log,
}


def elementwise(op: str, *args: ArrayLike, **kwargs: float) -> Tensor:
    """Dispatch one of the named elementwise operations."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise InvalidArgumentError(f"unknown elementwise op '{op}'") from None
    return fn(*args, **kwargs)


# linear algebra and structure

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 operands, or a batched product of rank-3 operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise DimensionError(f"matmul: unsupported shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")

    def rule(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result("matmul", a.data @ b.data, (a, b), rule)


def _normalize_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    ndim = tensors[0].ndim
    axis = _normalize_axis(axis, ndim, "concat")
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat: incompatible shapes {tensors[0].shape} and {t.shape} along axis {axis}"
            )
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g: np.ndarray) -> List[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack: empty tensor list")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: incompatible shapes {tensors[0].shape} and {t.shape}")
    axis = _normalize_axis(axis, tensors[0].ndim + 1, "stack")

    def rule(g: np.ndarray) -> List[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return make_result("stack", np.stack([t.data for t in tensors], axis=axis), tensors, rule)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return make_result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def narrow(a: Tensor, start: int, length: int, axis: int = -1) -> Tensor:
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "narrow")
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise DimensionError(f"narrow: [{start}, {start + length}) outside axis of size {a.shape[axis]}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result("narrow", a.data[index], (a,), rule)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a rank-2 table; gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return make_result("take_rows", table.data[ids], (table,), rule)


# reductions

def _reduce_axis(a: Tensor, axis: Optional[int], op: str) -> Optional[int]:
    return None if axis is None else _normalize_axis(axis, a.ndim, op)


def _expand(g: np.ndarray, a: Tensor, axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axis = _reduce_axis(a, axis, "sum")
    return make_result(
        "sum", a.data.sum(axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand(g, a, axis, keepdims).copy(),),
    )


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _reduce_axis(a, axis, "mean")
    count = a.size if axis is None else a.shape[axis]
    return make_result(
        "mean", a.data.mean(axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand(g, a, axis, keepdims) / count,),
    )


def max(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axis = _reduce_axis(a, axis, "max")
    out = a.data.max(axis=axis, keepdims=True)
    winners = (a.data == out).astype(np.float64)
    winners /= winners.sum(axis=axis, keepdims=True)
    result = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))
    return make_result(
        "max", result, (a,), lambda g: (_expand(g, a, axis, keepdims) * winners,)
    )


def reduce(op: str, a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    reducers = {"sum": sum, "mean": mean, "max": max}
    if op not in reducers:
        raise InvalidArgumentError(f"unknown reduction '{op}'")
    return reducers[op](a, axis=axis, keepdims=keepdims)


# normalizers

def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get exactly 0."""
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "softmax")
    logits = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if np.any(~mask.any(axis=axis)):
            raise NumericDomainError("softmax: every position along the axis is masked")
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    out = weights / weights.sum(axis=axis, keepdims=True)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", out, (a,), rule)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_result("log_softmax", out, (a,), rule)
