"""Mapper, interactor and head blocks.

Each block declares its tunable hyperparameters, the shapes of the
parameters it needs for a given hyperparameter binding, and a forward pass
written against the primitives in :mod:`recsearch.tensor`.  Blocks hold no
parameter values themselves; a materialized model owns the parameter store
and hands each block its own slice of it.
"""

from __future__ import annotations

from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .space import Choice, ConfigError, as_domain
from .tensor import DimensionError, Node

# (local name, domain, optional (local parent, required value))
HPDecl = Tuple[str, Any, Optional[Tuple[str, Any]]]
# local parameter name -> (shape, "normal" | "zeros")
ParamShapes = Dict[str, Tuple[Tuple[int, ...], str]]

INTERACTOR_CHOICES = ("MLP", "Concatenate", "FM", "CrossNet", "SelfAttention", "Elementwise")


class DataError(ValueError):
    """Input data violates a block or schema contract."""


# --------------------------------------------------------------------------
# Interaction math as plain functions over nodes.


def concat(inputs: Sequence[Node]) -> Node:
    if len(inputs) == 1:
        return inputs[0]
    return T.shape_op("concat_last", *inputs)


def _require_equal_dims(kind: str, inputs: Sequence[Node]):
    dims = [n.shape[-1] for n in inputs]
    if len(set(dims)) > 1:
        raise DimensionError(f"{kind} needs equal input dims, got {dims}")


def fm_interaction(inputs: Sequence[Node]) -> Node:
    """Sum of pairwise inner products, via 1/2 * sum_k[(sum_i v_ik)^2 - sum_i v_ik^2]."""
    _require_equal_dims("FM interaction", inputs)
    total = inputs[0]
    squares = T.mul(inputs[0], inputs[0])
    for v in inputs[1:]:
        total = T.add(total, v)
        squares = T.add(squares, T.mul(v, v))
    diff = T.pointwise("sub", T.mul(total, total), squares)
    return T.pointwise("scale", T.shape_op("reduce_sum_last", diff), factor=0.5)


def mlp_interaction(inputs: Sequence[Node], weights: Sequence[Tuple[Node, Node]]) -> Node:
    x = concat(inputs)
    for w, b in weights:
        x = T.relu(T.add_bias(T.matmul(x, w), b))
    return x


def crossnet_interaction(inputs: Sequence[Node], weights: Sequence[Tuple[Node, Node]]) -> Node:
    """Stack of ``x_{l+1} = x_0 * (x_l . w_l) + b_l + x_l``."""
    x0 = concat(inputs)
    x = x0
    for w, b in weights:
        x = T.add(T.add_bias(T.row_scale(T.matmul(x, w), x0), b), x)
    return x


def self_attention_interaction(
    inputs: Sequence[Node], weights: Sequence[Tuple[Node, Node, Node]], heads: int
) -> Node:
    _require_equal_dims("self-attention interaction", inputs)
    n = len(inputs)
    x = concat(inputs)
    for wq, wk, wv in weights:
        x = T.relu(T.add(T.attention(x, wq, wk, wv, n_fields=n, heads=heads), x))
    return x


def elementwise_interaction(inputs: Sequence[Node], mode: str) -> Node:
    _require_equal_dims("elementwise interaction", inputs)
    op = {"sum": "add", "average": "add", "multiply": "mul", "max": "max", "min": "min"}.get(mode)
    if op is None:
        raise ConfigError(f"unknown elementwise mode {mode!r}")
    out = inputs[0]
    for v in inputs[1:]:
        out = T.pointwise(op, out, v)
    if mode == "average" and len(inputs) > 1:
        out = T.pointwise("scale", out, factor=1.0 / len(inputs))
    return out


# --------------------------------------------------------------------------
# Blocks


class Block:
    kind: ClassVar[str]
    type_name: ClassVar[str]
    # default domains for the block's own hyperparameters
    defaults: ClassVar[Dict[str, Any]] = {}

    def __init__(self, name: str, inputs: Sequence[str] = (), **hparams):
        if not name or "/" in name:
            raise ConfigError(f"invalid block name {name!r}")
        self.name = name
        self.inputs = list(inputs)
        unknown = set(hparams) - set(self.defaults)
        if unknown:
            raise ConfigError(f"{self.type_name} {name!r}: unknown hyperparameters {sorted(unknown)}")
        self.hparams = {k: as_domain(hparams.get(k, v)) for k, v in self.defaults.items()}

    def hyperparameters(self, n_inputs: int) -> List[HPDecl]:
        return [(k, d, None) for k, d in self.hparams.items()]

    def output_dims(self, hp: Dict[str, Any], in_dims: List[int]) -> List[int]:
        raise NotImplementedError

    def param_shapes(self, hp: Dict[str, Any], in_dims: List[int]) -> ParamShapes:
        return {}

    def __repr__(self):
        return f"{self.type_name}({self.name!r}, inputs={self.inputs})"


class Mapper(Block):
    kind = "mapper"

    def __init__(self, name: str, columns: Sequence[str] | None = None, dim=None):
        super().__init__(name)
        self.columns = list(columns) if columns is not None else None
        self.dim = None if dim is None else as_domain(dim)

    def hyperparameters(self, n_inputs):
        return [] if self.dim is None else [("dim", self.dim, None)]

    def n_outputs(self, n_columns: int) -> int:
        return 1


class LatentFactorMapper(Mapper):
    """Embedding lookup for one id column; row 0 of the table is the OOV row."""

    type_name = "LatentFactorMapper"

    def __init__(self, name, column: str, dim=None):
        super().__init__(name, [column], dim)

    def output_dims(self, hp, in_dims):
        return [hp["dim"]]

    def param_shapes(self, hp, in_dims):
        (vocab,) = in_dims
        return {"table": ((vocab + 1, hp["dim"]), "normal")}

    def forward(self, hp, params, features):
        return [T.embedding_gather(params["table"], features[0])]


class DenseFeatureMapper(Mapper):
    """Affine map of the numeric columns to one ``dim``-wide vector."""

    type_name = "DenseFeatureMapper"

    def output_dims(self, hp, in_dims):
        if hp["dim"] <= 0:
            raise ConfigError(f"{self.name}: dim must be positive")
        return [hp["dim"]]

    def param_shapes(self, hp, in_dims):
        f = len(in_dims)
        return {"w": ((f, hp["dim"]), "normal"), "b": ((hp["dim"],), "zeros")}

    def forward(self, hp, params, features):
        (x,) = features
        return [T.add_bias(T.matmul(x, params["w"]), params["b"])]


class SparseFeatureMapper(Mapper):
    """One independent embedding table per categorical column."""

    type_name = "SparseFeatureMapper"

    def n_outputs(self, n_columns):
        return n_columns

    def output_dims(self, hp, in_dims):
        return [hp["dim"]] * len(in_dims)

    def param_shapes(self, hp, in_dims):
        return {
            f"table_{col}": ((vocab + 1, hp["dim"]), "normal")
            for col, vocab in zip(self.columns, in_dims)
        }

    def forward(self, hp, params, features):
        (ids,) = features
        if ids.ndim != 2 or ids.shape[1] != len(self.columns):
            raise DataError(
                f"{self.name}: expected {len(self.columns)} categorical columns, got shape {ids.shape}"
            )
        return [
            T.embedding_gather(params[f"table_{col}"], ids[:, j])
            for j, col in enumerate(self.columns)
        ]


class Interactor(Block):
    kind = "interactor"

    def forward(self, hp, params, inputs: List[Node]) -> Node:
        raise NotImplementedError


class MLPInteraction(Interactor):
    type_name = "MLPInteraction"
    defaults = {"layers": Choice([1, 2, 3]), "units": Choice([16, 32, 64, 128, 256])}

    def output_dims(self, hp, in_dims):
        return [hp["units"]]

    def param_shapes(self, hp, in_dims):
        shapes = {}
        width = sum(in_dims)
        for i in range(hp["layers"]):
            shapes[f"w{i}"] = ((width, hp["units"]), "normal")
            shapes[f"b{i}"] = ((hp["units"],), "zeros")
            width = hp["units"]
        return shapes

    def forward(self, hp, params, inputs):
        weights = [(params[f"w{i}"], params[f"b{i}"]) for i in range(hp["layers"])]
        return mlp_interaction(inputs, weights)


class ConcatenateInteraction(Interactor):
    type_name = "ConcatenateInteraction"

    def output_dims(self, hp, in_dims):
        return [sum(in_dims)]

    def forward(self, hp, params, inputs):
        return concat(inputs)


class FMInteraction(Interactor):
    type_name = "FMInteraction"

    def output_dims(self, hp, in_dims):
        if len(set(in_dims)) > 1:
            raise DimensionError(f"{self.name}: FM inputs {self.inputs} have unequal dims {in_dims}")
        return [1]

    def forward(self, hp, params, inputs):
        return fm_interaction(inputs)


class CrossNetInteraction(Interactor):
    type_name = "CrossNetInteraction"
    defaults = {"layers": Choice([1, 2, 3, 4])}

    def output_dims(self, hp, in_dims):
        return [sum(in_dims)]

    def param_shapes(self, hp, in_dims):
        d = sum(in_dims)
        shapes = {}
        for i in range(hp["layers"]):
            shapes[f"w{i}"] = ((d, 1), "normal")
            shapes[f"b{i}"] = ((d,), "zeros")
        return shapes

    def forward(self, hp, params, inputs):
        weights = [(params[f"w{i}"], params[f"b{i}"]) for i in range(hp["layers"])]
        return crossnet_interaction(inputs, weights)


class SelfAttentionInteraction(Interactor):
    type_name = "SelfAttentionInteraction"
    defaults = {"heads": Choice([1, 2, 4]), "blocks": Choice([1, 2, 3])}

    def output_dims(self, hp, in_dims):
        if len(set(in_dims)) > 1:
            raise DimensionError(
                f"{self.name}: self-attention inputs {self.inputs} have unequal dims {in_dims}"
            )
        if in_dims[0] % hp["heads"]:
            raise ConfigError(f"{self.name}: dim {in_dims[0]} not divisible by {hp['heads']} heads")
        return [sum(in_dims)]

    def param_shapes(self, hp, in_dims):
        d = in_dims[0]
        shapes = {}
        for i in range(hp["blocks"]):
            for p in ("q", "k", "v"):
                shapes[f"w{p}{i}"] = ((d, d), "normal")
        return shapes

    def forward(self, hp, params, inputs):
        weights = [
            (params[f"wq{i}"], params[f"wk{i}"], params[f"wv{i}"]) for i in range(hp["blocks"])
        ]
        return self_attention_interaction(inputs, weights, hp["heads"])


class ElementwiseInteraction(Interactor):
    type_name = "ElementwiseInteraction"
    defaults = {"mode": Choice(["sum", "average", "multiply", "max", "min"])}

    def output_dims(self, hp, in_dims):
        if len(set(in_dims)) > 1:
            raise DimensionError(
                f"{self.name}: elementwise inputs {self.inputs} have unequal dims {in_dims}"
            )
        return [in_dims[0]]

    def forward(self, hp, params, inputs):
        return elementwise_interaction(inputs, hp["mode"])


class RandomSelectInteraction(Interactor):
    """Pass one input through; which one is a searchable choice."""

    type_name = "RandomSelectInteraction"

    def hyperparameters(self, n_inputs):
        return [("index", Choice(range(n_inputs)), None)]

    def output_dims(self, hp, in_dims):
        return [in_dims[hp["index"]]]

    def forward(self, hp, params, inputs):
        return inputs[hp["index"]]


class HyperInteraction(Interactor):
    """Interactor whose type is itself a hyperparameter.

    The child hyperparameters are declared under ``<child key>/<name>`` and
    are only active when ``interactor_type`` selects that child.
    """

    type_name = "HyperInteraction"
    children = {
        "MLP": ("mlp", MLPInteraction),
        "Concatenate": ("concatenate", ConcatenateInteraction),
        "FM": ("fm", FMInteraction),
        "CrossNet": ("crossnet", CrossNetInteraction),
        "SelfAttention": ("self_attention", SelfAttentionInteraction),
        "Elementwise": ("elementwise", ElementwiseInteraction),
    }

    def __init__(self, name, inputs=(), interactor_type=None, **child_hparams):
        Block.__init__(self, name, inputs)
        self.hparams = {
            "interactor_type": as_domain(interactor_type or Choice(INTERACTOR_CHOICES))
        }
        domain = self.hparams["interactor_type"]
        allowed = domain.values if isinstance(domain, Choice) else (domain.value,)
        for t in allowed:
            if t not in self.children:
                raise ConfigError(f"{name}: unsupported interactor type {t!r}")
        self._children = {}
        for t in allowed:
            key, cls = self.children[t]
            own = {
                k.split("/", 1)[1]: v for k, v in child_hparams.items() if k.startswith(key + "/")
            }
            self._children[t] = cls(name, inputs, **own)
        claimed = {k for k in child_hparams if k.split("/", 1)[0] in {self.children[t][0] for t in allowed}}
        if set(child_hparams) - claimed:
            raise ConfigError(f"{name}: unknown hyperparameters {sorted(set(child_hparams) - claimed)}")

    def hyperparameters(self, n_inputs):
        decls = [("interactor_type", self.hparams["interactor_type"], None)]
        for t, child in self._children.items():
            key = self.children[t][0]
            for k, d, _ in child.hyperparameters(n_inputs):
                decls.append((f"{key}/{k}", d, ("interactor_type", t)))
        return decls

    def child(self, hp) -> Tuple[Interactor, Dict[str, Any]]:
        t = hp["interactor_type"]
        key = self.children[t][0]
        child_hp = {k.split("/", 1)[1]: v for k, v in hp.items() if k.startswith(key + "/")}
        return self._children[t], child_hp

    def output_dims(self, hp, in_dims):
        child, child_hp = self.child(hp)
        return child.output_dims(child_hp, in_dims)

    def param_shapes(self, hp, in_dims):
        child, child_hp = self.child(hp)
        return child.param_shapes(child_hp, in_dims)

    def forward(self, hp, params, inputs):
        child, child_hp = self.child(hp)
        return child.forward(child_hp, params, inputs)


class Head(Block):
    kind = "head"

    def output_dims(self, hp, in_dims):
        return [1]


class RatingHead(Head):
    """Rating prediction scored by mean squared error."""

    type_name = "RatingHead"
    task = "rating"
    defaults = {"head_type": Choice(["sum", "linear"])}

    def param_shapes(self, hp, in_dims):
        if hp["head_type"] == "sum":
            return {}
        return {"w": ((sum(in_dims), 1), "normal"), "b": ((1,), "zeros")}

    def predict(self, hp, params, inputs):
        x = concat(inputs)
        if hp["head_type"] == "sum":
            return T.shape_op("reduce_sum_last", x)
        return T.add_bias(T.matmul(x, params["w"]), params["b"])

    def loss(self, pred: Node, targets) -> Node:
        return T.mse_loss(pred, targets)


class CTRHead(Head):
    """Click probability through a logistic output, scored by clipped logloss."""

    type_name = "CTRHead"
    task = "ctr"

    def param_shapes(self, hp, in_dims):
        return {"w": ((sum(in_dims), 1), "normal"), "b": ((1,), "zeros")}

    def predict(self, hp, params, inputs):
        x = concat(inputs)
        return T.pointwise("sigmoid", T.add_bias(T.matmul(x, params["w"]), params["b"]))

    def loss(self, pred: Node, targets) -> Node:
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        bad = np.flatnonzero((y != 0.0) & (y != 1.0))
        if bad.size:
            raise DataError(f"non-binary label {y[bad[0]]!r} at batch row {int(bad[0])}")
        return T.logloss(pred, y)


BLOCK_TYPES = {
    cls.type_name: cls
    for cls in (
        LatentFactorMapper,
        DenseFeatureMapper,
        SparseFeatureMapper,
        MLPInteraction,
        ConcatenateInteraction,
        FMInteraction,
        CrossNetInteraction,
        SelfAttentionInteraction,
        ElementwiseInteraction,
        RandomSelectInteraction,
        HyperInteraction,
        RatingHead,
        CTRHead,
    )
}
