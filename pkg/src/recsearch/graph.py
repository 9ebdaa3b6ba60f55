"""Block graphs: validation, the induced search space, and materialization."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .blocks import Block, DenseFeatureMapper, Head, LatentFactorMapper, Mapper, SparseFeatureMapper
from .data import Schema
from .space import Assignment, ConfigError, Fixed, FloatRange, HyperSpace, as_domain
from .tensor import DimensionError, Parameter, Tape

LEARNING_RATE = "train/learning_rate"
EMBEDDING_DIM = "train/embedding_dim"
INIT_SCALE = 0.05


class GraphError(ConfigError):
    """All violations found in one graph, reported together."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MaterializationError(ConfigError):
    pass


class GraphSpec:
    """A DAG of blocks over the columns of ``schema`` with exactly one head.

    Blocks are listed in evaluation order: every interactor or head input
    must name an earlier block.
    """

    def __init__(
        self,
        blocks: Sequence[Block],
        schema: Schema,
        embedding_dim=64,
        learning_rate=FloatRange(1e-4, 1e-1, log=True),
    ):
        self.schema = schema
        self.blocks = []
        for b in blocks:
            if isinstance(b, Mapper) and b.columns is None:
                b = copy.copy(b)
                b.columns = self.schema.dense if isinstance(b, DenseFeatureMapper) else self.schema.categorical
            self.blocks.append(b)
        self.embedding_dim = as_domain(embedding_dim)
        self.learning_rate = as_domain(learning_rate)

    def __getitem__(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def head(self) -> Head:
        heads = [b for b in self.blocks if isinstance(b, Head)]
        if len(heads) != 1:
            raise GraphError([f"expected exactly one head, found {len(heads)}"])
        return heads[0]

    @property
    def task(self) -> str:
        return self.head.task

    def mapper_columns(self, block: Mapper) -> List[str]:
        return list(block.columns)

    def n_outputs(self, block: Block) -> int:
        if isinstance(block, Mapper):
            return block.n_outputs(len(self.mapper_columns(block)))
        return 1

    def n_inputs(self, block: Block) -> int:
        return sum(self.n_outputs(self[name]) for name in block.inputs)

    def validate(self) -> List[str]:
        return validate_graph(self)

    @cached_property
    def space(self) -> HyperSpace:
        self.validate()
        space = HyperSpace()
        space.declare(LEARNING_RATE, self.learning_rate)
        space.declare(EMBEDDING_DIM, self.embedding_dim)
        for block in self.blocks:
            for local, domain, cond in block.hyperparameters(self.n_inputs(block)):
                condition = None if cond is None else (f"{block.name}/{cond[0]}", cond[1])
                space.declare(f"{block.name}/{local}", domain, condition)
        return space

    def local_hparams(self, block: Block, assignment: Assignment) -> Dict[str, Any]:
        prefix = block.name + "/"
        hp = {k[len(prefix):]: v for k, v in assignment.items() if k.startswith(prefix)}
        if isinstance(block, Mapper) and "dim" not in hp:
            hp["dim"] = assignment[EMBEDDING_DIM]
        return hp


def _check_mapper(graph: GraphSpec, block: Mapper) -> List[str]:
    problems = []
    if block.inputs:
        problems.append(f"mapper {block.name!r} must take feature columns, not blocks")
    cols = graph.mapper_columns(block)
    if not cols:
        problems.append(f"mapper {block.name!r} has no columns to map")
    roles = {c.name: c.role for c in graph.schema.columns}
    for col in cols:
        role = roles.get(col)
        if role is None:
            problems.append(f"mapper {block.name!r}: column {col!r} not in schema")
        elif isinstance(block, DenseFeatureMapper) and role != "dense":
            problems.append(f"mapper {block.name!r}: column {col!r} is {role}, expected dense")
        elif isinstance(block, (LatentFactorMapper, SparseFeatureMapper)) and role not in (
            "user_id", "item_id", "categorical",
        ):
            problems.append(f"mapper {block.name!r}: column {col!r} is {role}, expected categorical")
    return problems


def _fixed_value(domain):
    if isinstance(domain, Fixed):
        return domain.value
    values = getattr(domain, "values", None)
    if values is not None and len(values) == 1:
        return values[0]
    raise LookupError


def _static_dims(graph: GraphSpec, block: Block, upstream: Dict[str, Optional[List[int]]]):
    """Output dims when every hyperparameter that matters is fixed, else None."""
    try:
        hp = {}
        for local, domain, cond in block.hyperparameters(graph.n_inputs(block)):
            if cond is None:
                hp[local] = _fixed_value(domain)
        if isinstance(block, Mapper):
            if "dim" not in hp:
                hp["dim"] = _fixed_value(graph.embedding_dim)
            cols = graph.mapper_columns(block)
            return block.output_dims(hp, [1] * len(cols))
        in_dims = []
        for name in block.inputs:
            dims = upstream.get(name)
            if dims is None:
                return None
            in_dims.extend(dims)
        return block.output_dims(hp, in_dims)
    except (LookupError, TypeError):
        return None


def validate_graph(graph: GraphSpec) -> List[str]:
    """Return the evaluation order, or raise :class:`GraphError` listing every violation."""
    problems: List[str] = []
    seen: Dict[str, int] = {}
    names = [b.name for b in graph.blocks]
    for pos, block in enumerate(graph.blocks):
        if block.name in seen:
            problems.append(f"duplicate block name {block.name!r}")
        seen.setdefault(block.name, pos)
    heads = [b for b in graph.blocks if isinstance(b, Head)]
    if not heads:
        problems.append("no head")
    elif len(heads) > 1:
        problems.append("multiple heads: " + ", ".join(h.name for h in heads))

    for pos, block in enumerate(graph.blocks):
        if isinstance(block, Mapper):
            problems.extend(_check_mapper(graph, block))
            continue
        if not block.inputs:
            problems.append(f"{block.kind} {block.name!r} has no inputs")
        for ref in block.inputs:
            if ref not in seen:
                problems.append(f"{block.name!r} consumes unknown block {ref!r}")
            elif seen[ref] >= pos:
                problems.append(f"cycle: {block.name!r} consumes {ref!r}, which is not evaluated before it")
            elif isinstance(graph.blocks[seen[ref]], Head):
                problems.append(f"{block.name!r} consumes head {ref!r}")

    for h in heads:
        if h.task != graph.schema.task:
            problems.append(
                f"head {h.name!r} is a {h.task} head but the data target is {graph.schema.target.role}"
            )

    if len(heads) == 1:
        reachable = set()
        stack = [heads[0].name]
        while stack:
            name = stack.pop()
            if name in reachable or name not in seen:
                continue
            reachable.add(name)
            stack.extend(graph.blocks[seen[name]].inputs)
        for name in names:
            if name not in reachable:
                problems.append(f"block {name!r} is unreachable from the head")

    if not problems:
        dims: Dict[str, Optional[List[int]]] = {}
        for block in graph.blocks:
            try:
                dims[block.name] = _static_dims(graph, block, dims)
            except (DimensionError, ConfigError) as exc:
                problems.append(f"dimension mismatch: {exc}")
                dims[block.name] = None

    if problems:
        raise GraphError(problems)
    return names


# --------------------------------------------------------------------------
# Materialization


def init_generator(seed: int, param_id: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, parameter id)."""
    digest = hashlib.sha256(f"{seed}\x00{param_id}".encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))


@dataclass
class _Step:
    block: Block
    hp: Dict[str, Any]
    params: Dict[str, str]  # local name -> parameter id
    columns: List[int]  # column positions for mappers


class ConcreteModel:
    """A graph with every hyperparameter bound and its parameters initialized."""

    def __init__(self, graph: GraphSpec, assignment: Assignment, steps: List[_Step], params: Dict[str, Parameter]):
        self.graph = graph
        self.assignment = dict(assignment)
        self.task = graph.task
        self._steps = steps
        self.params = params
        self.learning_rate = float(assignment[LEARNING_RATE])

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, batch, tape: Optional[Tape] = None):
        """Record the forward pass; returns (tape, prediction node)."""
        tape = tape or Tape()
        outputs: Dict[str, List[T.Node]] = {}
        pred = None
        for step in self._steps:
            block = step.block
            nodes = {local: tape.parameter(self.params[pid]) for local, pid in step.params.items()}
            if isinstance(block, Mapper):
                if isinstance(block, DenseFeatureMapper):
                    feats = [tape.constant(batch.dense[:, step.columns])]
                elif isinstance(block, SparseFeatureMapper):
                    feats = [batch.cat[:, step.columns]]
                else:
                    feats = [batch.cat[:, step.columns[0]]]
                outputs[block.name] = block.forward(step.hp, nodes, feats)
                continue
            inputs = [n for ref in block.inputs for n in outputs[ref]]
            if isinstance(block, Head):
                pred = block.predict(step.hp, nodes, inputs)
            else:
                outputs[block.name] = [block.forward(step.hp, nodes, inputs)]
        return tape, pred

    def loss(self, batch):
        """Returns (tape, prediction node, loss node)."""
        tape, pred = self.forward(batch)
        return tape, pred, self.graph.head.loss(pred, batch.target)

    def predict(self, batch) -> np.ndarray:
        tape, pred = self.forward(batch)
        out = pred.value.reshape(-1)
        tape.release()
        return out

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {pid: p.value.copy() for pid, p in self.params.items()}

    def restore(self, snap: Dict[str, np.ndarray]) -> None:
        for pid, value in snap.items():
            self.params[pid].value = value.copy()


def materialize_model(graph: GraphSpec, assignment: Assignment, seed: int, features) -> ConcreteModel:
    """Bind ``assignment`` to ``graph`` and initialize parameters.

    ``features`` describes the encoded data: ``cat_columns``,
    ``dense_columns`` and ``vocab_sizes`` (an :class:`EncodedDataset` works).
    Weights and embedding tables are drawn from Normal(0, 0.05^2) with a
    generator keyed by (seed, parameter id); biases start at zero.
    """
    graph.space.validate(assignment)
    cat_pos = {c: i for i, c in enumerate(features.cat_columns)}
    dense_pos = {c: i for i, c in enumerate(features.dense_columns)}
    dims: Dict[str, List[int]] = {}
    steps: List[_Step] = []
    params: Dict[str, Parameter] = {}
    for block in graph.blocks:
        hp = graph.local_hparams(block, assignment)
        columns: List[int] = []
        try:
            if isinstance(block, Mapper):
                cols = graph.mapper_columns(block)
                if isinstance(block, DenseFeatureMapper):
                    columns = [dense_pos[c] for c in cols]
                    in_dims = [1] * len(cols)
                else:
                    columns = [cat_pos[c] for c in cols]
                    in_dims = [int(features.vocab_sizes[c]) for c in cols]
            else:
                in_dims = [d for ref in block.inputs for d in dims[ref]]
            dims[block.name] = block.output_dims(hp, in_dims)
            shapes = block.param_shapes(hp, in_dims)
        except KeyError as exc:
            raise MaterializationError(f"block {block.name!r}: column {exc} missing from the data") from None
        except (DimensionError, ConfigError) as exc:
            raise MaterializationError(f"block {block.name!r}: {exc}") from exc
        ids = {}
        for local, (shape, init) in shapes.items():
            pid = f"{block.name}/{local}"
            if init == "zeros":
                value = np.zeros(shape)
            else:
                value = init_generator(seed, pid).normal(0.0, INIT_SCALE, size=shape)
            params[pid] = Parameter(pid, value)
            ids[local] = pid
        steps.append(_Step(block, hp, ids, columns))
    return ConcreteModel(graph, assignment, steps, params)
