"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Everything here is define-by-run: operations execute eagerly on numpy
arrays and, while a :class:`Tape` is active, append one node per operation.
``backward`` replays the tape in reverse, visiting each node exactly once,
and accumulates gradients into the ``grad`` field of every tensor that
requires them.

Design notes:

* float64 everywhere; the networks are tiny and the extra precision keeps
  finite-difference checks tight.
* ``matmul`` accumulates its inner products in naive k-order (compiled via
  numba when available) so results are bit-identical to a triple-loop
  reference; BLAS reassociation/FMA would break that.
* ``sum_tensors`` sums its operands in a value-canonical order, which makes
  aggregations invariant to operand permutation at the bit level.
* Tapes are tracked per thread; independent runs in separate threads do not
  share state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")


class DomainError(ValueError):
    """Input values fall outside the operation's documented domain."""


class TapeError(RuntimeError):
    """Raised when recording or replaying a tape is impossible."""


class MissingGradientError(RuntimeError):
    """An optimizer step found a parameter without a populated gradient."""


class Tensor:
    """Dense float64 array with an optional accumulated gradient.

    ``data`` is a numpy array (flat storage, shape carried by numpy);
    ``grad`` is either None or an array of the same shape. Tensors compare
    and hash by identity.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def clear_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Constant copy sharing no gradient path with this tensor."""
        return Tensor(self.data.copy(), requires_grad=False)

    def __add__(self, other: "Tensor") -> "Tensor":
        return elementwise("add", self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return elementwise("sub", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return elementwise("mul", self, other)

    def __neg__(self) -> "Tensor":
        return elementwise("negate", self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


@dataclass
class TapeNode:
    """One recorded operation: inputs, output, and its local gradient rule.

    ``grad_fn`` maps the output gradient to one gradient per input (None
    for inputs that do not need one).
    """

    inputs: tuple
    output: Tensor
    grad_fn: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; ops executed inside record themselves onto
    the innermost active tape. Nodes are stored in execution order, which
    is a topological order by construction.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self.last_visit_count = 0

    def __enter__(self) -> "Tape":
        _state_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _state_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_LOCAL = threading.local()


def _state_stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def _grad_enabled() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording inside its block."""

    def __enter__(self) -> None:
        self._prev = _grad_enabled()
        _LOCAL.grad_enabled = False

    def __exit__(self, exc_type, exc, tb) -> None:
        _LOCAL.grad_enabled = self._prev


def active_tape() -> Optional[Tape]:
    stack = _state_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple, grad_fn: Callable) -> Tensor:
    """Mark *out* differentiable and record the node if tracking applies."""
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        tape = active_tape()
        if tape is None:
            raise TapeError(
                "differentiable operation outside a Tape context; "
                "wrap the forward pass in `with Tape():` or `with no_grad():`"
            )
        out.requires_grad = True
        tape.nodes.append(TapeNode(inputs, out, grad_fn))
    return out


# --- matmul kernel: naive k-order accumulation ------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _matmul_naive(a, b):  # pragma: no cover - compiled
        m, k = a.shape
        _, n = b.shape
        out = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                s = 0.0
                for kk in range(k):
                    s += a[i, kk] * b[kk, j]
                out[i, j] = s
        return out

else:

    def _matmul_naive(a, b):
        # Vectorised over (i, j), sequential over k: identical rounding
        # sequence to the scalar triple loop.
        m, n = a.shape[0], b.shape[1]
        out = np.zeros((m, n))
        for kk in range(a.shape[1]):
            out += a[:, kk : kk + 1] * b[kk : kk + 1, :]
        return out


_UNARY_KINDS = ("relu", "tanh", "exp", "log", "square", "negate")
_BINARY_KINDS = ("add", "sub", "mul")


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Elementwise op over one or two same-shape tensors.

    Binary kinds: add, sub, mul. Unary kinds: relu, tanh, exp, log,
    square, negate. ``log`` requires strictly positive inputs.
    """
    if kind in _BINARY_KINDS:
        if b is None:
            raise ValueError(f"elementwise '{kind}' needs two operands")
        if a.shape != b.shape:
            raise ShapeError(kind, a.shape, b.shape)
        if kind == "add":
            out = Tensor(a.data + b.data)
            return _record(out, (a, b), lambda g: (g, g))
        if kind == "sub":
            out = Tensor(a.data - b.data)
            return _record(out, (a, b), lambda g: (g, -g))
        ad, bd = a.data, b.data
        out = Tensor(ad * bd)
        return _record(out, (a, b), lambda g: (g * bd, g * ad))

    if kind not in _UNARY_KINDS:
        raise ValueError(f"unknown elementwise kind '{kind}'")
    if b is not None:
        raise ValueError(f"elementwise '{kind}' is unary")

    x = a.data
    if kind == "relu":
        out = Tensor(np.maximum(x, 0.0))
        return _record(out, (a,), lambda g: (g * (x > 0.0),))
    if kind == "tanh":
        y = np.tanh(x)
        out = Tensor(y)
        return _record(out, (a,), lambda g: (g * (1.0 - y * y),))
    if kind == "exp":
        y = np.exp(x)
        out = Tensor(y)
        return _record(out, (a,), lambda g: (g * y,))
    if kind == "log":
        if np.any(x <= 0.0):
            raise DomainError(f"log: inputs must be strictly positive, min={x.min()}")
        out = Tensor(np.log(x))
        return _record(out, (a,), lambda g: (g / x,))
    if kind == "square":
        out = Tensor(x * x)
        return _record(out, (a,), lambda g: (g * (2.0 * x),))
    # negate
    out = Tensor(-x)
    return _record(out, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    return elementwise("relu", a)


def tanh(a: Tensor) -> Tensor:
    return elementwise("tanh", a)


def exp(a: Tensor) -> Tensor:
    return elementwise("exp", a)


def log(a: Tensor) -> Tensor:
    return elementwise("log", a)


def square(a: Tensor) -> Tensor:
    return elementwise("square", a)


def negate(a: Tensor) -> Tensor:
    return elementwise("negate", a)


def expm1(a: Tensor) -> Tensor:
    """exp(x) - 1, accurate near zero (never below x there by rounding)."""
    x = a.data
    out = Tensor(np.expm1(x))
    return _record(out, (a,), lambda g: (g * np.exp(x),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of (m, k) by (k, n), naive k-order accumulation."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = Tensor(_matmul_naive(ad, bd))
    # Backward products have no exactness contract; BLAS is fine there.
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reduce(kind: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum or mean over one axis, or over all elements when axis is None."""
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduce kind '{kind}'")
    nd = a.data.ndim
    if axis is not None:
        if not isinstance(axis, int) or not (-nd <= axis < nd):
            raise ShapeError(f"reduce[{kind}] axis={axis}", a.shape)
        axis = axis % nd
    count = a.data.size if axis is None else a.shape[axis]
    if kind == "sum":
        out = Tensor(np.sum(a.data, axis=axis))
    else:
        out = Tensor(np.mean(a.data, axis=axis))
    shape = a.shape

    def grad_fn(g):
        if axis is None:
            gx = np.broadcast_to(g, shape).copy()
        else:
            gx = np.broadcast_to(np.expand_dims(g, axis), shape).copy()
        if kind == "mean":
            gx /= count
        return (gx,)

    return _record(out, (a,), grad_fn)


def tsum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    return reduce("sum", a, axis)


def tmean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    return reduce("mean", a, axis)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    """Add a python scalar constant."""
    c = float(c)
    out = Tensor(a.data + c)
    return _record(out, (a,), lambda g: (g,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the bounds."""
    x = a.data
    out = Tensor(np.clip(x, lo, hi))
    mask = (x > lo) & (x < hi)
    return _record(out, (a,), lambda g: (g * mask,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast add of a (1, d) bias onto a (B, d) batch."""
    if x.data.ndim != 2 or b.shape != (1, x.shape[1]):
        raise ShapeError("add_bias", x.shape, b.shape)
    out = Tensor(x.data + b.data)
    return _record(out, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row of a (B, n) tensor; returns (B, 1)."""
    if x.data.ndim != 2:
        raise ShapeError("gather", x.shape)
    idx = np.asarray(index, dtype=np.intp)
    if idx.shape != (x.shape[0],):
        raise ShapeError("gather", x.shape, idx.shape)
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx][:, None])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g[:, 0]
        return (gx,)

    return _record(out, (x,), grad_fn)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def grad_fn(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), grad_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    if x.data.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_cols[{start}:{stop}]", x.shape)
    out = Tensor(x.data[:, start:stop].copy())

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _record(out, (x,), grad_fn)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat_cols: empty operand list")
    rows = ts[0].shape[0]
    for t in ts:
        if t.data.ndim != 2 or t.shape[0] != rows:
            raise ShapeError("concat_cols", *(u.shape for u in ts))
    widths = [t.shape[1] for t in ts]
    out = Tensor(np.concatenate([t.data for t in ts], axis=1))
    splits = np.cumsum(widths)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, splits, axis=1))

    return _record(out, tuple(ts), grad_fn)


def sum_tensors(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors, invariant to operand order at the bit level.

    For three or more operands the summands are sorted componentwise before
    sequential accumulation, so any permutation of the input list yields a
    bit-identical result (equal values are interchangeable).
    """
    ts = list(tensors)
    if not ts:
        raise ValueError("sum_tensors: empty operand list")
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError("sum_tensors", shape, t.shape)
    if len(ts) == 1:
        data = ts[0].data.copy()
    elif len(ts) == 2:
        data = ts[0].data + ts[1].data
    else:
        stacked = np.sort(np.stack([t.data for t in ts]), axis=0)
        data = stacked[0].copy()
        for i in range(1, stacked.shape[0]):
            data += stacked[i]
    out = Tensor(data)
    n = len(ts)
    return _record(out, tuple(ts), lambda g: (g,) * n)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all components (scalar output)."""
    return tmean(square(elementwise("sub", a, b)))


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for all ancestors.

    ``loss`` must be a scalar produced on the given (or innermost active)
    tape. Each node is visited exactly once, in reverse execution order.
    Repeated calls keep accumulating; callers reset grads between steps.
    """
    tp = tape if tape is not None else active_tape()
    if tp is None:
        raise TapeError("backward called with no active tape")
    if loss.data.size != 1:
        raise ShapeError("backward: loss must be scalar", loss.shape)
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any differentiable input")

    def deposit(t: Tensor, g: np.ndarray) -> None:
        t.grad = g.copy() if t.grad is None else t.grad + g

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    output_ids: set[int] = set()
    tp.last_visit_count = 0
    for node in reversed(tp.nodes):
        tp.last_visit_count += 1
        output_ids.add(id(node.output))
        g_out = pending.pop(id(node.output), None)
        if g_out is None:
            continue
        deposit(node.output, g_out)
        for inp, gi in zip(node.inputs, node.grad_fn(g_out)):
            if gi is None:
                continue
            key = id(inp)
            pending[key] = pending[key] + gi if key in pending else gi
            by_id[key] = inp

    # Entries still pending are leaves the loss actually reaches.
    for key, g in pending.items():
        if by_id[key].requires_grad:
            deposit(by_id[key], g)
    # On-tape requires_grad leaves the loss never reached read as zero.
    for node in tp.nodes:
        for inp in node.inputs:
            if inp.requires_grad and inp.grad is None and id(inp) not in output_ids:
                inp.grad = np.zeros_like(inp.data)


@dataclass
class OptimizerConfig:
    """Settings for the parameter update rule.

    ``weight_decay`` is decoupled (applied directly to the parameters,
    not through the gradient moments); it tames feature-scale drift in
    losses that are invariant to common shifts of the latents.
    """

    kind: str = "adam"  # "adam" or "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind '{self.kind}'")


class Optimizer:
    """SGD or Adam (standard bias correction) over a fixed parameter list.

    ``step`` updates every parameter in place from its ``grad`` and then
    clears the grads. Adam moment state lives here, indexed by position.
    """

    def __init__(self, params: Sequence[Tensor], config: OptimizerConfig) -> None:
        self.params = list(params)
        self.config = config
        self._t = 0
        if config.kind == "adam":
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradientError(
                    f"parameter {i} (shape {p.shape}) has no gradient; "
                    "run backward() before stepping"
                )
        cfg = self.config
        if cfg.weight_decay > 0.0:
            for p in self.params:
                p.data -= cfg.lr * cfg.weight_decay * p.data
        if cfg.kind == "sgd":
            for p in self.params:
                p.data -= cfg.lr * p.grad
        else:
            self._t += 1
            bc1 = 1.0 - cfg.beta1**self._t
            bc2 = 1.0 - cfg.beta2**self._t
            for i, p in enumerate(self.params):
                g = p.grad
                self._m[i] = cfg.beta1 * self._m[i] + (1.0 - cfg.beta1) * g
                self._v[i] = cfg.beta2 * self._v[i] + (1.0 - cfg.beta2) * (g * g)
                m_hat = self._m[i] / bc1
                v_hat = self._v[i] / bc2
                p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        for p in self.params:
            p.grad = None


def sgd_adam_step(params: Sequence[Tensor], optimizer: Optimizer) -> None:
    """One in-place update of ``params`` under ``optimizer``'s rule.

    The list must match the optimizer's own parameter list (Adam state is
    positional).
    """
    if len(params) != len(optimizer.params) or any(
        a is not b for a, b in zip(params, optimizer.params)
    ):
        raise ValueError("parameter list does not match optimizer state")
    optimizer.step()


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
