"""
Tape-based differentiation engine.

Every value produced by an operation is appended to its Tape, so creation order
is a topological order and a backward pass is a single reverse sweep.
Adjoints are written with the same operations as the forward pass. A backward
pass run with ``create_graph=True`` is therefore itself recorded and can be
differentiated again; span marginals (gradients of the log-partition function)
and the gradients of losses built on them come out of this nesting.

All arithmetic is float64.
"""
from __future__ import annotations

from collections import Counter
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from vcpcfg.errors import ContractError

ArrayLike = Union[float, int, np.ndarray]
Operand = Union["TapeValue", float, int, np.ndarray]
VJP = Callable[["TapeValue"], Sequence[Optional["TapeValue"]]]


class TapeValue:
    """A value recorded on a Tape (or a transient constant while recording is paused)."""

    __slots__ = ("tape", "value", "node_id", "parents", "vjp", "op", "requires_grad", "tangent", "name")

    def __init__(self, tape: "Tape", value: np.ndarray, parents: Tuple["TapeValue", ...] = (),
                 vjp: Optional[VJP] = None, op: str = "leaf", requires_grad: bool = False,
                 name: Optional[str] = None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self.tangent: Optional[np.ndarray] = None
        self.name = name
        self.node_id = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"TapeValue(id={self.node_id}, op={label}, shape={self.shape})"

    # arithmetic sugar
    def __add__(self, other: Operand) -> "TapeValue":
        return add(self, other)

    def __radd__(self, other: Operand) -> "TapeValue":
        return add(other, self)

    def __sub__(self, other: Operand) -> "TapeValue":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "TapeValue":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "TapeValue":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "TapeValue":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "TapeValue":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "TapeValue":
        return div(other, self)

    def __neg__(self) -> "TapeValue":
        return neg(self)

    def __getitem__(self, index) -> "TapeValue":
        return getitem(self, index)


class GradientMap(dict):
    """Parameter name -> gradient array, one entry per parameter leaf."""

    def accumulate(self, other: "GradientMap") -> "GradientMap":
        for name, g in other.items():
            if name in self:
                self[name] = self[name] + g
            else:
                self[name] = np.array(g, dtype=np.float64)
        return self

    def scaled(self, factor: float) -> "GradientMap":
        return GradientMap({name: g * factor for name, g in self.items()})

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values())))


class Tape:
    """Records one computation. Confined to a single thread."""

    def __init__(self, recording: bool = True):
        self._nodes: List[TapeValue] = []
        self._params: Dict[str, TapeValue] = {}
        self._recording = recording
        self.instrumented: Optional[TapeValue] = None
        self.counters: Counter = Counter()

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def recording(self) -> bool:
        return self._recording

    @property
    def params(self) -> Dict[str, TapeValue]:
        return dict(self._params)

    @contextmanager
    def paused(self):
        """Run operations without recording them; results are constants."""
        previous = self._recording
        self._recording = False
        try:
            yield self
        finally:
            self._recording = previous

    @contextmanager
    def _recording_as(self, flag: bool):
        previous = self._recording
        self._recording = flag
        try:
            yield self
        finally:
            self._recording = previous

    def _append(self, node: TapeValue) -> TapeValue:
        node.node_id = len(self._nodes)
        self._nodes.append(node)
        return node

    def count(self, key: str, amount: int = 1) -> None:
        self.counters[key] += int(amount)

    def constant(self, value: ArrayLike) -> TapeValue:
        node = TapeValue(self, np.asarray(value, dtype=np.float64), op="const")
        if self._recording:
            self._append(node)
        return node

    def param(self, name: str, value: ArrayLike) -> TapeValue:
        """Register a trainable leaf; it appears in every GradientMap of this tape."""
        if name in self._params:
            raise ContractError(f"parameter '{name}' is already on this tape")
        node = TapeValue(self, np.array(value, dtype=np.float64), op="param", requires_grad=True, name=name)
        self._append(node)
        self._params[name] = node
        return node

    def instrument(self, value: Union[ArrayLike, TapeValue], name: str = "span_potentials") -> TapeValue:
        """Mark the leaf whose gradient directional_grad contracts against a direction."""
        if isinstance(value, TapeValue):
            node = value
            node.requires_grad = True
        else:
            node = TapeValue(self, np.array(value, dtype=np.float64), op="instrumented",
                             requires_grad=True, name=name)
            self._append(node)
        self.instrumented = node
        return node

    def owns(self, node: TapeValue) -> bool:
        return (node.tape is self and 0 <= node.node_id < len(self._nodes)
                and self._nodes[node.node_id] is node)


# ---------------------------------------------------------------------------
# recording helpers
# ---------------------------------------------------------------------------

def _tape_of(*operands: Operand) -> Tape:
    tape = None
    for x in operands:
        if isinstance(x, TapeValue):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands live on different tapes")
    if tape is None:
        raise ContractError("at least one operand must be a TapeValue")
    return tape


def _lift(tape: Tape, x: Operand) -> TapeValue:
    if isinstance(x, TapeValue):
        return x
    return tape.constant(x)


def _record(tape: Tape, value: np.ndarray, parents: Tuple[TapeValue, ...], vjp: VJP, op: str) -> TapeValue:
    value = np.asarray(value, dtype=np.float64)
    if not tape.recording:
        return TapeValue(tape, value, op=op)
    tracked = any(p.requires_grad for p in parents)
    node = TapeValue(tape, value, parents if tracked else (), vjp if tracked else None, op, tracked)
    return tape._append(node)


def _expand_reduced(g: TapeValue, shape: Tuple[int, ...], axis, keepdims: bool) -> TapeValue:
    """Broadcast the adjoint of a reduction back to the reduced operand's shape."""
    if not keepdims:
        if axis is None:
            kept = (1,) * len(shape)
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(a % len(shape) for a in axes)
            kept = tuple(1 if d in axes else s for d, s in enumerate(shape))
        g = reshape(g, kept)
    return broadcast_to(g, shape)


# ---------------------------------------------------------------------------
# shape operations
# ---------------------------------------------------------------------------

def sum_to(x: TapeValue, shape: Tuple[int, ...]) -> TapeValue:
    """Sum a broadcast result back down to ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(lead + d for d, s in enumerate(shape) if s == 1 and x.shape[lead + d] != 1)
    value = np.sum(x.value, axis=axes, keepdims=True)
    value = value.reshape(shape)
    return _record(x.tape, value, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x: TapeValue, shape: Tuple[int, ...]) -> TapeValue:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    value = np.broadcast_to(x.value, shape).copy()
    return _record(x.tape, value, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


def reshape(x: TapeValue, shape: Tuple[int, ...]) -> TapeValue:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return _record(x.tape, x.value.reshape(shape), (x,), lambda g: (reshape(g, x.shape),), "reshape")


def transpose(x: TapeValue) -> TapeValue:
    if x.ndim != 2:
        raise ContractError(f"transpose expects a matrix, got shape {x.shape}")
    return _record(x.tape, x.value.T.copy(), (x,), lambda g: (transpose(g),), "transpose")


def getitem(x: TapeValue, index) -> TapeValue:
    value = np.array(x.value[index], dtype=np.float64)
    return _record(x.tape, value, (x,), lambda g: (scatter(g, index, x.shape),), "getitem")


def scatter(x: TapeValue, index, shape: Tuple[int, ...]) -> TapeValue:
    """Zeros of ``shape`` with ``x`` added at ``index`` (repeated indices accumulate)."""
    value = np.zeros(shape, dtype=np.float64)
    np.add.at(value, index, x.value)
    return _record(x.tape, value, (x,), lambda g: (getitem(g, index),), "scatter")


def concat(xs: Sequence[Operand], axis: int = 0) -> TapeValue:
    tape = _tape_of(*xs)
    parts = [_lift(tape, x) for x in xs]
    value = np.concatenate([p.value for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g: TapeValue):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(start), int(stop))
            grads.append(getitem(g, tuple(index)))
        return grads

    return _record(tape, value, tuple(parts), vjp, "concat")


def stack(xs: Sequence[Operand], axis: int = 0) -> TapeValue:
    tape = _tape_of(*xs)
    parts = [_lift(tape, x) for x in xs]
    expanded = []
    for p in parts:
        shape = list(p.shape)
        shape.insert(axis % (p.ndim + 1), 1)
        expanded.append(reshape(p, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> TapeValue:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _record(tape, a.value + b.value, (a, b),
                   lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a: Operand, b: Operand) -> TapeValue:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _record(tape, a.value - b.value, (a, b),
                   lambda g: (sum_to(g, a.shape), neg(sum_to(g, b.shape))), "sub")


def neg(a: TapeValue) -> TapeValue:
    return _record(a.tape, -a.value, (a,), lambda g: (neg(g),), "neg")


def mul(a: Operand, b: Operand) -> TapeValue:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _record(tape, a.value * b.value, (a, b),
                   lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)), "mul")


def div(a: Operand, b: Operand) -> TapeValue:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    out = None

    def vjp(g: TapeValue):
        return (sum_to(div(g, b), a.shape), sum_to(neg(div(mul(g, out), b)), b.shape))

    out = _record(tape, a.value / b.value, (a, b), vjp, "div")
    return out


def exp(a: TapeValue) -> TapeValue:
    out = None

    def vjp(g: TapeValue):
        return (mul(g, out),)

    out = _record(a.tape, np.exp(a.value), (a,), vjp, "exp")
    return out


def log(a: TapeValue) -> TapeValue:
    with np.errstate(divide="ignore"):
        value = np.log(a.value)
    return _record(a.tape, value, (a,), lambda g: (div(g, a),), "log")


def sqrt(a: TapeValue) -> TapeValue:
    out = None

    def vjp(g: TapeValue):
        return (div(mul(g, 0.5), out),)

    out = _record(a.tape, np.sqrt(a.value), (a,), vjp, "sqrt")
    return out


def tanh(a: TapeValue) -> TapeValue:
    out = None

    def vjp(g: TapeValue):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _record(a.tape, np.tanh(a.value), (a,), vjp, "tanh")
    return out


def sigmoid(a: TapeValue) -> TapeValue:
    out = None

    def vjp(g: TapeValue):
        return (mul(g, mul(out, sub(1.0, out))),)

    value = np.where(a.value >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.value))),
                     np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))
    out = _record(a.tape, value, (a,), vjp, "sigmoid")
    return out


def relu(a: TapeValue) -> TapeValue:
    mask = (a.value > 0).astype(np.float64)
    return _record(a.tape, a.value * mask, (a,), lambda g: (mul(g, mask),), "relu")


def hinge(a: TapeValue) -> TapeValue:
    """[a]_+ elementwise."""
    return relu(a)


def finite_or(a: TapeValue, fill: float = 0.0) -> TapeValue:
    """Replace non-finite entries by ``fill``; they carry no gradient."""
    mask = np.isfinite(a.value)
    value = np.where(mask, a.value, fill)
    return _record(a.tape, value, (a,), lambda g: (mul(g, mask.astype(np.float64)),), "finite_or")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(a: TapeValue, axis=None, keepdims: bool = False) -> TapeValue:
    value = np.sum(a.value, axis=axis, keepdims=keepdims)
    return _record(a.tape, value, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),), "sum")


def mean(a: TapeValue, axis=None, keepdims: bool = False) -> TapeValue:
    count = a.size if axis is None else int(np.prod([a.shape[d] for d in np.atleast_1d(axis)]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_pool(a: TapeValue, axis: int = 0) -> TapeValue:
    """Max over one axis; the adjoint flows to the first maximising entry."""
    winners = np.argmax(a.value, axis=axis)
    mask = np.zeros_like(a.value)
    np.put_along_axis(mask, np.expand_dims(winners, axis), 1.0, axis=axis)
    value = np.max(a.value, axis=axis)
    return _record(a.tape, value, (a,),
                   lambda g: (mul(_expand_reduced(g, a.shape, axis, False), mask),), "max_pool")


def mean_pool(a: TapeValue, axis: int = 0) -> TapeValue:
    return mean(a, axis=axis)


def logsumexp(a: TapeValue, axis=None, keepdims: bool = False) -> TapeValue:
    shift = np.max(a.value, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        value = np.log(np.sum(np.exp(a.value - shift), axis=axis, keepdims=True)) + shift
    if not keepdims:
        value = np.squeeze(value, axis=axis) if axis is not None else value.reshape(())
    out = None

    def vjp(g: TapeValue):
        full = _expand_reduced(finite_or(out), a.shape, axis, keepdims)
        weights = exp(sub(a, full))
        return (mul(_expand_reduced(g, a.shape, axis, keepdims), weights),)

    out = _record(a.tape, value, (a,), vjp, "logsumexp")
    return out


def log_softmax(a: TapeValue, axis: int = -1) -> TapeValue:
    return sub(a, broadcast_to(logsumexp(a, axis=axis, keepdims=True), a.shape))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _matmul2d(a: TapeValue, b: TapeValue) -> TapeValue:
    return _record(a.tape, a.value @ b.value, (a, b),
                   lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)), "matmul")


def matmul(a: Operand, b: Operand) -> TapeValue:
    """Matrix product for 1-D/2-D operands (vectors are promoted and squeezed back)."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.ndim > 2 or b.ndim > 2:
        raise ContractError(f"matmul supports rank <= 2, got {a.shape} @ {b.shape}")
    a2 = reshape(a, (1, a.shape[0])) if a.ndim == 1 else a
    b2 = reshape(b, (b.shape[0], 1)) if b.ndim == 1 else b
    if a2.shape[1] != b2.shape[0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = _matmul2d(a2, b2)
    if a.ndim == 1 and b.ndim == 1:
        return reshape(out, ())
    if a.ndim == 1:
        return reshape(out, (b2.shape[1],))
    if b.ndim == 1:
        return reshape(out, (a2.shape[0],))
    return out


def affine(x: TapeValue, weight: TapeValue, bias: Optional[TapeValue] = None) -> TapeValue:
    """x @ weight.T + bias for a weight stored as (out, in); x is (in,) or (rows, in)."""
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = add(out, bias)
    return out


def cosine(a: TapeValue, b: TapeValue, eps: float = 1e-12) -> TapeValue:
    """Cosine similarity of two vectors; 0 (with zero gradient) when either norm is below eps."""
    if a.shape != b.shape:
        raise ContractError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    tape = _tape_of(a, b)
    norm_a = np.sqrt(np.sum(a.value * a.value))
    norm_b = np.sqrt(np.sum(b.value * b.value))
    if norm_a < eps or norm_b < eps:
        return tape.constant(0.0)
    dot = reduce_sum(mul(a, b))
    return div(dot, mul(sqrt(reduce_sum(mul(a, a))), sqrt(reduce_sum(mul(b, b)))))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _check_output(tape: Tape, output: TapeValue) -> None:
    if not isinstance(output, TapeValue) or not tape.owns(output):
        raise ContractError("output is not a node of this tape")
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")


def grad(tape: Tape, output: TapeValue, wrt: Sequence[TapeValue], create_graph: bool = False) -> List[TapeValue]:
    """
    Adjoints of ``output`` with respect to each node in ``wrt``.

    With create_graph=True the adjoint computation is recorded, so the returned
    values can feed further operations and be differentiated again.
    """
    _check_output(tape, output)
    for node in wrt:
        if not tape.owns(node):
            raise ContractError(f"{node!r} is not a node of this tape")
    wanted = {node.node_id for node in wrt}
    results: Dict[int, TapeValue] = {}
    with tape._recording_as(create_graph):
        adjoints: Dict[int, TapeValue] = {output.node_id: tape.constant(np.ones_like(output.value))}
        for node in reversed(tape._nodes[: output.node_id + 1]):
            g = adjoints.pop(node.node_id, None)
            if g is None:
                continue
            if node.node_id in wanted:
                results[node.node_id] = g
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = adjoints.get(parent.node_id)
                adjoints[parent.node_id] = pg if prev is None else add(prev, pg)
        zeros = [tape.constant(np.zeros_like(node.value)) for node in wrt if node.node_id not in results]
    out, z = [], iter(zeros)
    for node in wrt:
        out.append(results[node.node_id] if node.node_id in results else next(z))
    return out


def backward(tape: Tape, output: TapeValue) -> GradientMap:
    """Exact gradients of a scalar output with respect to every parameter leaf of the tape."""
    _check_output(tape, output)
    names = list(tape._params)
    grads = grad(tape, output, [tape._params[name] for name in names])
    return GradientMap({name: np.array(g.value, dtype=np.float64).reshape(tape._params[name].shape)
                        for name, g in zip(names, grads)})


def directional_grad(tape: Tape, output: TapeValue, direction: Operand) -> Tuple[float, GradientMap]:
    """
    Directional derivative of ``output`` along the instrumented leaf, and its gradient.

    The direction may be a constant or a TapeValue that depends on parameters;
    either way the returned GradientMap differentiates the contracted scalar end
    to end. A direction with one entry per span is broadcast over trailing
    label axes of the instrumented leaf.
    """
    _check_output(tape, output)
    target = tape.instrumented
    if target is None:
        raise ContractError("no instrumented leaf on this tape")
    direction = _lift(tape, direction)
    if direction.shape != target.shape:
        lead = target.shape[: direction.ndim]
        if lead != direction.shape:
            raise ContractError(f"direction shape {direction.shape} does not match instrumented {target.shape}")
        pad = direction.shape + (1,) * (target.ndim - direction.ndim)
        direction = broadcast_to(reshape(direction, pad), target.shape)
    (marginal,) = grad(tape, output, [target], create_graph=True)
    scalar = reduce_sum(mul(marginal, direction))
    return float(scalar.value), backward(tape, scalar)


def jvp(tape: Tape, output: TapeValue, wrt: TapeValue, direction: ArrayLike) -> float:
    """Forward-mode derivative of a scalar output along ``direction``; stored as ``output.tangent``."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != wrt.shape:
        raise ContractError(f"direction shape {direction.shape} does not match {wrt.shape}")
    (g,) = grad(tape, output, [wrt])
    value = float(np.sum(g.value * direction))
    output.tangent = np.asarray(value)
    return value


def value_of(x: Union[TapeValue, ArrayLike]) -> np.ndarray:
    return x.value if isinstance(x, TapeValue) else np.asarray(x, dtype=np.float64)


def lift_all(tape: Tape, values: Iterable[Operand]) -> List[TapeValue]:
    return [_lift(tape, v) for v in values]
