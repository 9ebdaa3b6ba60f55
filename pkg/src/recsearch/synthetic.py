"""Synthetic rating and click logs with known generating models."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Column, RawTable, Schema


@dataclass
class SyntheticCTR:
    table: RawTable
    prob: np.ndarray  # true click probability per row

    def bayes_logloss(self, idx=None) -> float:
        """Expected logloss of the true probabilities (mean binary entropy)."""
        p = self.prob if idx is None else self.prob[np.asarray(idx)]
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return float(-np.mean(p * np.log(p) + (1 - p) * np.log1p(-p)))


def _tokens(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{v}" for v in range(n)]


def logistic_fm_table(
    n_rows: int,
    n_fields: int = 10,
    vocab: int = 50,
    dim: int = 8,
    seed: int = 0,
    factor_scale: float = 0.1,
    linear_scale: float = 0.5,
    bias: float = -1.0,
    n_dense: int = 0,
) -> SyntheticCTR:
    """Clicks drawn from ``sigmoid(bias + sum_i w_i + sum_{i<j} <v_i, v_j>)``.

    Field values are uniform over ``vocab`` tokens.  With ``n_dense`` > 0,
    extra standard-normal numeric columns enter the logit linearly.  The
    default scales give a pairwise logit std of about 0.19 next to a linear
    std of about 1.6; stronger pairwise terms are harder to recover.
    """
    rng = np.random.default_rng(seed)
    factors = rng.normal(0.0, factor_scale, size=(n_fields, vocab, dim))
    weights = rng.normal(0.0, linear_scale, size=(n_fields, vocab))
    ids = rng.integers(vocab, size=(n_rows, n_fields))
    emb = factors[np.arange(n_fields), ids]  # (rows, fields, dim)
    total = emb.sum(axis=1)
    pair = 0.5 * (np.sum(total * total, axis=1) - np.sum(emb * emb, axis=(1, 2)))
    logit = bias + weights[np.arange(n_fields), ids].sum(axis=1) + pair
    dense = {}
    if n_dense:
        x = rng.normal(size=(n_rows, n_dense))
        coef = rng.normal(0.0, 0.3, size=n_dense)
        logit = logit + x @ coef
        dense = {f"I{j + 1}": np.abs(x[:, j]) * 3.0 for j in range(n_dense)}
    prob = 1.0 / (1.0 + np.exp(-logit))
    label = (rng.random(n_rows) < prob).astype(np.float64)
    cols = [Column("label", "label_target")]
    cols += [Column(f"I{j + 1}", "dense") for j in range(n_dense)]
    cols += [Column(f"C{f + 1}", "categorical") for f in range(n_fields)]
    schema = Schema(cols, delimiter="\t")
    table = RawTable(
        schema,
        {f"C{f + 1}": ids[:, f].astype(np.int64) for f in range(n_fields)},
        {f"C{f + 1}": _tokens(f"c{f + 1}_", vocab) for f in range(n_fields)},
        dense,
        label,
    )
    return SyntheticCTR(table, prob)


def rating_table(
    n_rows: int,
    n_users: int = 200,
    n_items: int = 100,
    rank: int = 4,
    noise: float = 0.5,
    seed: int = 0,
) -> RawTable:
    """Integer 1-5 ratings from a low-rank user-item model plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, 0.5, size=(n_users, rank))
    v = rng.normal(0.0, 0.5, size=(n_items, rank))
    users = rng.integers(n_users, size=n_rows)
    items = rng.integers(n_items, size=n_rows)
    raw = 3.5 + np.sum(u[users] * v[items], axis=1) + rng.normal(0.0, noise, size=n_rows)
    rating = np.clip(np.rint(raw), 1, 5)
    schema = Schema(
        [
            Column("user", "user_id"),
            Column("item", "item_id"),
            Column("rating", "rating_target"),
            Column("timestamp", "ignore"),
        ],
        delimiter="::",
    )
    return RawTable(
        schema,
        {"user": users.astype(np.int64), "item": items.astype(np.int64)},
        {"user": [str(i + 1) for i in range(n_users)], "item": [str(i + 1) for i in range(n_items)]},
        {},
        rating,
    )


def write_table(table: RawTable, path, schema: Optional[Schema] = None) -> None:
    """Write ``table`` in its schema's delimited format (header when flagged)."""
    schema = schema or table.schema
    n = len(table)
    columns = []
    for col in schema.columns:
        if col.name in table.codes:
            lut = table.tokens[col.name]
            columns.append([lut[c] for c in table.codes[col.name]])
        elif col.name in table.dense:
            columns.append([repr(float(x)) for x in table.dense[col.name]])
        elif col.role in ("rating_target", "label_target"):
            columns.append([str(int(t)) if float(t).is_integer() else repr(float(t)) for t in table.target])
        else:
            columns.append([str(978300000 + i) for i in range(n)])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        if schema.header:
            fh.write(schema.delimiter.join(c.name for c in schema.columns) + "\n")
        for row in zip(*columns):
            fh.write(schema.delimiter.join(row) + "\n")
