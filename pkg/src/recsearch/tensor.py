"""Dense float64 tensor engine with a recording tape and hand-derived gradients.

Values are plain ``numpy.ndarray`` objects of dtype float64 with one or two
axes (vector or batch x features).  Every primitive appends a node to a
:class:`Tape`; :func:`backprop` walks the tape in reverse and returns the
gradient of a scalar loss with respect to each trainable :class:`Parameter`.

The primitive set is closed.  Apart from the scalar ``scale`` there is no
broadcasting; the two row-wise helpers :func:`add_bias` and :func:`row_scale`
are explicit primitives rather than implicit broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "TensorError",
    "DimensionError",
    "NonFiniteError",
    "UnsupportedPrimitive",
    "ContractError",
    "as_tensor",
    "Parameter",
    "Node",
    "Tape",
    "matmul",
    "embedding_gather",
    "pointwise",
    "shape_op",
    "add_bias",
    "row_scale",
    "attention",
    "mse_loss",
    "logloss",
    "backprop",
    "AdamState",
    "adam_update",
    "grad_check",
    "check_gradients",
    "LOGLOSS_EPS",
]

LOGLOSS_EPS = 1e-7


class TensorError(Exception):
    """Base class for engine errors."""


class DimensionError(TensorError, ValueError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    pass


class UnsupportedPrimitive(TensorError, ValueError):
    pass


class ContractError(TensorError, ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a float64 array with 1 or 2 positive extents."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise DimensionError(f"tensors must have 1 or 2 axes, got shape {arr.shape}")
    if any(n <= 0 for n in arr.shape):
        raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
    return arr


@dataclass
class Parameter:
    id: str
    value: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.value = as_tensor(self.value)

    @property
    def size(self) -> int:
        return int(self.value.size)


class Node:
    """One recorded primitive application on a tape."""

    __slots__ = ("tape", "id", "op", "inputs", "value", "saved", "param")

    def __init__(self, tape, id, op, inputs, value, saved=None, param=None):
        self.tape = tape
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.saved = saved
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive applications.

    Node ids are assigned in creation order, so inputs always precede the
    nodes that consume them.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_nodes: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def release(self) -> None:
        """Drop the recorded nodes.

        Nodes point back at their tape, so an abandoned tape is only
        reclaimed by the cycle collector; hot loops release explicitly to
        free their activations at once.
        """
        self.nodes = []
        self._param_nodes = {}

    def _record(self, op, inputs, value, saved=None, param=None) -> Node:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"primitive {op!r} produced a non-finite value")
        node = Node(self, len(self.nodes), op, tuple(n.id for n in inputs), value, saved, param)
        self.nodes.append(node)
        return node

    def constant(self, x) -> Node:
        return self._record("const", (), as_tensor(x))

    def parameter(self, p: Parameter) -> Node:
        """Leaf node for ``p``; repeated calls on one tape share the node."""
        node = self._param_nodes.get(p.id)
        if node is None:
            node = self._record("param", (), p.value, param=p)
            self._param_nodes[p.id] = node
        elif node.param is not p:
            raise ContractError(f"two distinct parameters share id {p.id!r}")
        return node


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("inputs live on different tapes")
    return tape


def _require_equal_shapes(name, a: Node, b: Node):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# Primitives


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return tape._record("matmul", (a, b), a.value @ b.value)


def embedding_gather(table: Node, indices) -> Node:
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("embedding_gather expects a 1-D integer index vector")
    if table.value.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    vocab = table.shape[0]
    bad = np.flatnonzero((idx < 0) | (idx >= vocab))
    if bad.size:
        row = int(bad[0])
        raise IndexError(f"index {int(idx[row])} at row {row} out of range for table with {vocab} rows")
    return table.tape._record("gather", (table,), table.value[idx], saved=idx)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_UNARY = {"relu", "sigmoid", "tanh", "scale"}
_BINARY = {"add", "sub", "mul", "max", "min"}


def pointwise(name: str, *inputs: Node, factor: Optional[float] = None) -> Node:
    if name in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{name} takes 2 inputs, got {len(inputs)}")
        a, b = inputs
        tape = _same_tape(a, b)
        _require_equal_shapes(name, a, b)
        x, y = a.value, b.value
        if name == "add":
            out = x + y
        elif name == "sub":
            out = x - y
        elif name == "mul":
            out = x * y
        elif name == "max":
            out = np.maximum(x, y)
        else:
            out = np.minimum(x, y)
        return tape._record(name, (a, b), out)
    if name in _UNARY:
        if len(inputs) != 1:
            raise ContractError(f"{name} takes 1 input, got {len(inputs)}")
        (a,) = inputs
        x = a.value
        if name == "relu":
            out = np.maximum(x, 0.0)
        elif name == "sigmoid":
            out = _sigmoid(x)
        elif name == "tanh":
            out = np.tanh(x)
        else:
            if factor is None:
                raise ContractError("scale requires a factor")
            out = x * float(factor)
        return a.tape._record(name, (a,), out, saved=factor)
    raise UnsupportedPrimitive(f"unknown pointwise primitive {name!r}")


def add(a, b):
    return pointwise("add", a, b)


def mul(a, b):
    return pointwise("mul", a, b)


def relu(a):
    return pointwise("relu", a)


def shape_op(name: str, *inputs: Node) -> Node:
    if not inputs:
        raise ContractError(f"{name}: needs at least one input")
    if name == "concat_last":
        tape = _same_tape(*inputs)
        ndims = {n.value.ndim for n in inputs}
        if len(ndims) != 1:
            raise DimensionError("concat_last: inputs mix vectors and matrices")
        if ndims == {2} and len({n.shape[0] for n in inputs}) != 1:
            raise DimensionError(
                "concat_last: batch extents differ: " + ", ".join(str(n.shape) for n in inputs)
            )
        if len(inputs) == 1:
            out = inputs[0].value.copy()
        else:
            out = np.concatenate([n.value for n in inputs], axis=-1)
        widths = [n.shape[-1] for n in inputs]
        return tape._record(name, inputs, out, saved=widths)
    if len(inputs) != 1:
        raise ContractError(f"{name} takes 1 input, got {len(inputs)}")
    (a,) = inputs
    x = a.value
    if name == "reduce_sum_last":
        out = x.sum(axis=-1, keepdims=True)
    elif name == "reduce_mean_last":
        out = x.mean(axis=-1, keepdims=True)
    elif name == "softmax_last":
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        out = z / z.sum(axis=-1, keepdims=True)
    else:
        raise UnsupportedPrimitive(f"unknown shape primitive {name!r}")
    return a.tape._record(name, (a,), out)


def add_bias(x: Node, b: Node) -> Node:
    """Row-wise ``x + b`` for ``x`` of shape (batch, n) and ``b`` of shape (n,)."""
    tape = _same_tape(x, b)
    if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: shapes {x.shape} and {b.shape} are incompatible")
    return tape._record("add_bias", (x, b), x.value + b.value)


def row_scale(s: Node, x: Node) -> Node:
    """Multiply every row of ``x`` (batch, n) by the matching entry of ``s`` (batch, 1)."""
    tape = _same_tape(s, x)
    if s.value.ndim != 2 or s.shape[1] != 1 or x.value.ndim != 2 or s.shape[0] != x.shape[0]:
        raise DimensionError(f"row_scale: shapes {s.shape} and {x.shape} are incompatible")
    return tape._record("row_scale", (s, x), s.value * x.value)


def attention(x: Node, wq: Node, wk: Node, wv: Node, n_fields: int, heads: int) -> Node:
    """Multi-head scaled dot-product attention across fields.

    ``x`` has shape (batch, n_fields * d) holding the field embeddings side by
    side; the projections are (d, d).  The output has the same layout as ``x``.
    """
    tape = _same_tape(x, wq, wk, wv)
    if x.value.ndim != 2 or x.shape[1] % n_fields:
        raise DimensionError(f"attention: width {x.shape} not divisible into {n_fields} fields")
    d = x.shape[1] // n_fields
    for w in (wq, wk, wv):
        if w.shape != (d, d):
            raise DimensionError(f"attention: projection shape {w.shape}, expected {(d, d)}")
    if d % heads:
        raise DimensionError(f"attention: dim {d} not divisible by {heads} heads")
    batch = x.shape[0]
    dh = d // heads
    # one (batch*fields, d) x (d, 3d) product for all three projections
    QKV = x.value.reshape(batch * n_fields, d) @ np.concatenate([wq.value, wk.value, wv.value], axis=1)
    QKV = np.ascontiguousarray(QKV.reshape(batch, n_fields, 3, heads, dh).transpose(2, 0, 3, 1, 4))
    Q, K, V = QKV[0], QKV[1], QKV[2]
    A = Q @ K.transpose(0, 1, 3, 2)
    A *= 1.0 / math.sqrt(dh)
    A -= A.max(axis=-1, keepdims=True)
    np.exp(A, out=A)
    A /= A.sum(axis=-1, keepdims=True)
    O = A @ V
    out = O.transpose(0, 2, 1, 3).reshape(batch, n_fields * d)
    return tape._record(
        "attention", (x, wq, wk, wv), out, saved=(n_fields, heads, Q, K, V, A)
    )


def _as_column_targets(pred: Node, target) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.value.size != t.size or (pred.value.ndim == 2 and pred.shape[1] != 1):
        raise DimensionError(f"predictions {pred.shape} do not match {t.size} targets")
    return t.reshape(pred.shape)


def mse_loss(pred: Node, target) -> Node:
    t = _as_column_targets(pred, target)
    diff = pred.value - t
    out = np.array([np.mean(diff * diff)])
    return pred.tape._record("mse", (pred,), out, saved=diff)


def logloss(prob: Node, labels) -> Node:
    """Mean binary cross-entropy with probabilities clipped to [eps, 1 - eps]."""
    y = _as_column_targets(prob, labels)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logloss labels must be 0 or 1")
    p = prob.value
    pc = np.clip(p, LOGLOSS_EPS, 1.0 - LOGLOSS_EPS)
    out = np.array([-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))])
    return prob.tape._record("logloss", (prob,), out, saved=(y, pc))


# --------------------------------------------------------------------------
# Vector-Jacobian products, one per primitive.


def _vjp_matmul(node, g, a, b):
    return g @ b.value.T, a.value.T @ g


def _vjp_gather(node, g, table):
    grad = np.zeros_like(table.value)
    np.add.at(grad, node.saved, g)
    return (grad,)


def _vjp_add(node, g, a, b):
    return g, g


def _vjp_sub(node, g, a, b):
    return g, -g


def _vjp_mul(node, g, a, b):
    return g * b.value, g * a.value


def _vjp_max(node, g, a, b):
    pick_a = a.value >= b.value
    return np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)


def _vjp_min(node, g, a, b):
    pick_a = a.value <= b.value
    return np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)


def _vjp_relu(node, g, a):
    return (np.where(a.value > 0.0, g, 0.0),)


def _vjp_sigmoid(node, g, a):
    s = node.value
    return (g * s * (1.0 - s),)


def _vjp_tanh(node, g, a):
    return (g * (1.0 - node.value**2),)


def _vjp_scale(node, g, a):
    return (g * node.saved,)


def _vjp_concat(node, g, *inputs):
    bounds = np.cumsum(node.saved)[:-1]
    return tuple(np.split(g, bounds, axis=-1))


def _vjp_reduce_sum(node, g, a):
    return (np.broadcast_to(g, a.shape).copy(),)


def _vjp_reduce_mean(node, g, a):
    return (np.broadcast_to(g / a.shape[-1], a.shape).copy(),)


def _vjp_softmax(node, g, a):
    s = node.value
    return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)


def _vjp_add_bias(node, g, x, b):
    return g, g.sum(axis=0)


def _vjp_row_scale(node, g, s, x):
    return np.sum(g * x.value, axis=1, keepdims=True), g * s.value


def _vjp_attention(node, g, x, wq, wk, wv):
    n_fields, heads, Q, K, V, A = node.saved
    batch = x.shape[0]
    d = x.shape[1] // n_fields
    dh = d // heads
    gO = g.reshape(batch, n_fields, heads, dh).transpose(0, 2, 1, 3)
    gA = gO @ V.transpose(0, 1, 3, 2)
    gS = A * (gA - np.sum(gA * A, axis=-1, keepdims=True)) / math.sqrt(dh)
    # written straight into the (batch, fields, 3, heads, dh) layout of the
    # fused forward projection
    gQKV = np.empty((batch, n_fields, 3, heads, dh))
    view = gQKV.transpose(2, 0, 3, 1, 4)
    np.matmul(gS, K, out=view[0])
    np.matmul(gS.transpose(0, 1, 3, 2), Q, out=view[1])
    np.matmul(A.transpose(0, 1, 3, 2), gO, out=view[2])
    gQKV = gQKV.reshape(batch * n_fields, 3 * d)
    W = np.concatenate([wq.value, wk.value, wv.value], axis=1)
    gX = gQKV @ W.T
    gW = x.value.reshape(batch * n_fields, d).T @ gQKV
    return gX.reshape(x.shape), gW[:, :d], gW[:, d : 2 * d], gW[:, 2 * d :]


def _vjp_mse(node, g, pred):
    diff = node.saved
    return (g[0] * 2.0 * diff / diff.size,)


def _vjp_logloss(node, g, prob):
    y, pc = node.saved
    p = prob.value
    inside = (p >= LOGLOSS_EPS) & (p <= 1.0 - LOGLOSS_EPS)
    dp = (-y / pc + (1.0 - y) / (1.0 - pc)) / y.size
    return (g[0] * np.where(inside, dp, 0.0),)


_VJP: Dict[str, Callable] = {
    "matmul": _vjp_matmul,
    "gather": _vjp_gather,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "max": _vjp_max,
    "min": _vjp_min,
    "relu": _vjp_relu,
    "sigmoid": _vjp_sigmoid,
    "tanh": _vjp_tanh,
    "scale": _vjp_scale,
    "concat_last": _vjp_concat,
    "reduce_sum_last": _vjp_reduce_sum,
    "reduce_mean_last": _vjp_reduce_mean,
    "softmax_last": _vjp_softmax,
    "add_bias": _vjp_add_bias,
    "row_scale": _vjp_row_scale,
    "attention": _vjp_attention,
    "mse": _vjp_mse,
    "logloss": _vjp_logloss,
}


def backprop(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of the scalar ``loss`` for every trainable parameter on ``tape``.

    Parameters that the loss does not depend on get a zero gradient;
    non-trainable parameters are left out of the result.
    """
    if loss.tape is not tape:
        raise ContractError("loss node belongs to a different tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be a 1-element tensor, got shape {loss.shape}")
    nodes = tape.nodes
    grads: list[Optional[np.ndarray]] = [None] * (loss.id + 1)
    grads[loss.id] = np.ones_like(loss.value)
    for node in reversed(nodes[: loss.id + 1]):
        g = grads[node.id]
        if g is None or not node.inputs:
            continue
        ins = [nodes[i] for i in node.inputs]
        for i, gi in zip(node.inputs, _VJP[node.op](node, g, *ins)):
            if gi is None:
                continue
            if grads[i] is None:
                grads[i] = gi
            else:
                grads[i] = grads[i] + gi
    out = {}
    for pid, node in tape._param_nodes.items():
        if not node.param.trainable:
            continue
        g = grads[node.id] if node.id <= loss.id else None
        out[pid] = np.zeros_like(node.value) if g is None else g
    return out


# --------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_update(
    params: Mapping[str, Parameter],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam step.  A missing gradient counts as zero."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for pid, p in params.items():
        if not p.trainable:
            continue
        m = state.m.get(pid)
        if m is None:
            m = state.m[pid] = np.zeros_like(p.value)
            state.v[pid] = np.zeros_like(p.value)
        v = state.v[pid]
        g = grads.get(pid)
        m *= beta1
        v *= beta2
        if g is not None:
            m += (1.0 - beta1) * g
            v += (1.0 - beta2) * (g * g)
        if lr == 0.0:
            continue
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --------------------------------------------------------------------------
# Finite-difference verification


def check_gradients(
    build_loss: Callable[[Tape, Dict[str, Node]], Node],
    params: Sequence[Parameter],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``build_loss(tape, nodes)`` must record a scalar loss on ``tape`` given the
    parameter nodes keyed by id.  The relative error of each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.  With ``max_coords`` set, a
    random subset of coordinates per parameter is checked.
    """

    def evaluate() -> tuple[Tape, Node]:
        tape = Tape()
        nodes = {p.id: tape.parameter(p) for p in params}
        return tape, build_loss(tape, nodes)

    tape, loss = evaluate()
    analytic = backprop(tape, loss)
    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        base = p.value.copy()
        ga = analytic[p.id].reshape(-1)
        for c in coords:
            vals = []
            for delta in (h, -h):
                bumped = base.copy().reshape(-1)
                bumped[c] += delta
                p.value = bumped.reshape(base.shape)
                try:
                    f = float(evaluate()[1].value.reshape(-1)[0])
                except NonFiniteError as exc:
                    p.value = base
                    raise NonFiniteError("loss is not finite near the check point") from exc
                vals.append(f)
            p.value = base
            numeric = (vals[0] - vals[1]) / (2.0 * h)
            err = abs(ga[c] - numeric) / max(1.0, abs(ga[c]))
            worst = max(worst, err)
    return worst


def grad_check(f: Callable[[Node], Node], x0, h: float = 1e-5) -> float:
    """Max relative gradient error of the scalar function ``f`` at ``x0``.

    ``f`` receives the parameter node and returns a 1-element loss node.

    >>> grad_check(lambda x: shape_op("reduce_sum_last", mul(x, x)), [3.0]) < 1e-9
    True
    """
    p = Parameter("x", np.array(x0, dtype=np.float64).reshape(-1))
    return check_gradients(lambda tape, nodes: f(nodes["x"]), [p], h=h)
