"""Named searchable pipelines for common recommendation models."""

from __future__ import annotations

from typing import List

from .blocks import (
    ConcatenateInteraction,
    CrossNetInteraction,
    CTRHead,
    DenseFeatureMapper,
    ElementwiseInteraction,
    FMInteraction,
    HyperInteraction,
    LatentFactorMapper,
    Mapper,
    MLPInteraction,
    RatingHead,
    SelfAttentionInteraction,
    SparseFeatureMapper,
)
from .data import Schema
from .graph import GraphSpec
from .space import ConfigError

RATING_RECIPES = ("mf", "mlp", "ncf", "autorec_rp")
CTR_RECIPES = ("deepfm", "dlrm", "autoint", "crossnet", "autorec_ctr")
RECIPES = ("mf", "mlp", "ncf", "deepfm", "dlrm", "autoint", "crossnet", "autorec_rp", "autorec_ctr")


def recipe_task(name: str) -> str:
    if name in RATING_RECIPES:
        return "rating"
    if name in CTR_RECIPES:
        return "ctr"
    raise ConfigError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")


def _single(schema: Schema, role: str, recipe: str) -> str:
    cols = schema.with_role(role)
    if len(cols) != 1:
        raise ConfigError(f"recipe {recipe!r} needs exactly one {role} column, found {len(cols)}")
    return cols[0]


def _rating_mappers(schema: Schema, recipe: str, extras: bool = True) -> List[Mapper]:
    mappers: List[Mapper] = [
        LatentFactorMapper("user", _single(schema, "user_id", recipe)),
        LatentFactorMapper("item", _single(schema, "item_id", recipe)),
    ]
    if extras:
        others = schema.with_role("categorical")
        if others:
            mappers.append(SparseFeatureMapper("sparse", others))
        if schema.dense:
            mappers.append(DenseFeatureMapper("dense"))
    return mappers


def _ctr_mappers(schema: Schema) -> List[Mapper]:
    mappers: List[Mapper] = []
    if schema.categorical:
        mappers.append(SparseFeatureMapper("sparse"))
    if schema.dense:
        mappers.append(DenseFeatureMapper("dense"))
    return mappers


def build_recipe(name: str, schema: Schema, **graph_options) -> GraphSpec:
    """Validated searchable graph for recipe ``name`` over ``schema``.

    ``graph_options`` are passed to :class:`GraphSpec` (``embedding_dim``,
    ``learning_rate``).
    """
    task = recipe_task(name)
    if task != schema.task:
        raise ConfigError(
            f"recipe {name!r} is a {task} recipe but the data target is {schema.target.role}"
        )
    if task == "rating":
        if name == "mf":
            maps = _rating_mappers(schema, name, extras=False)
        else:
            maps = _rating_mappers(schema, name)
    else:
        maps = _ctr_mappers(schema)
        if name in ("deepfm", "autoint"):
            # these two read the categorical fields only
            maps = [m for m in maps if isinstance(m, SparseFeatureMapper)]
    names = [m.name for m in maps]

    if name == "mf":
        blocks = maps + [
            ElementwiseInteraction("multiply", ["user", "item"], mode="multiply"),
            RatingHead("head", ["multiply"], head_type="sum"),
        ]
    elif name == "mlp":
        blocks = maps + [MLPInteraction("mlp", names), RatingHead("head", ["mlp"], head_type="linear")]
    elif name == "ncf":
        blocks = maps + [
            ElementwiseInteraction("gmf", ["user", "item"], mode="multiply"),
            MLPInteraction("mlp", names),
            ConcatenateInteraction("concat", ["gmf", "mlp"]),
            RatingHead("head", ["concat"], head_type="linear"),
        ]
    elif name == "deepfm":
        blocks = maps + [
            FMInteraction("fm", names),
            MLPInteraction("mlp", names),
            ConcatenateInteraction("concat", ["fm", "mlp"]),
            CTRHead("head", ["concat"]),
        ]
    elif name == "dlrm":
        # FM stands in for DLRM's pairwise-dot interaction
        blocks = maps + [
            FMInteraction("fm", names),
            ConcatenateInteraction("concat", names),
            MLPInteraction("mlp", ["fm", "concat"]),
            CTRHead("head", ["mlp"]),
        ]
    elif name == "autoint":
        blocks = maps + [SelfAttentionInteraction("attention", names), CTRHead("head", ["attention"])]
    elif name == "crossnet":
        blocks = maps + [CrossNetInteraction("crossnet", names), CTRHead("head", ["crossnet"])]
    elif name == "autorec_rp":
        blocks = maps + [HyperInteraction("hyper", names), RatingHead("head", ["hyper"], head_type="linear")]
    else:
        blocks = maps + [HyperInteraction("hyper", names), CTRHead("head", ["hyper"])]

    graph = GraphSpec(blocks, schema, **graph_options)
    graph.validate()
    return graph
