"""Delimited-log ingestion, vocabulary fitting, encoding, splitting and batching.

Raw tables are stored column-wise.  Categorical columns are interned while
parsing (one integer code per distinct token, in first-appearance order) so
that half a million Criteo rows fit in memory comfortably; vocabularies are
then fitted on the training rows only and applied through a lookup table.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .blocks import DataError
from .space import ConfigError

ROLES = ("user_id", "item_id", "categorical", "dense", "rating_target", "label_target", "ignore")
CATEGORICAL_ROLES = ("user_id", "item_id", "categorical")
TARGET_ROLES = ("rating_target", "label_target")


@dataclass(frozen=True)
class Column:
    name: str
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass
class Schema:
    columns: List[Column]
    delimiter: str = ","
    header: bool = False

    def __post_init__(self):
        self.columns = [c if isinstance(c, Column) else Column(*c) for c in self.columns]
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate column names in schema: {names}")
        targets = [c for c in self.columns if c.role in TARGET_ROLES]
        if len(targets) != 1:
            raise ConfigError(f"schema needs exactly one target column, found {len(targets)}")
        if not self.categorical and not self.dense:
            raise ConfigError("schema needs at least one feature column")

    @property
    def target(self) -> Column:
        return next(c for c in self.columns if c.role in TARGET_ROLES)

    @property
    def task(self) -> str:
        return "rating" if self.target.role == "rating_target" else "ctr"

    @property
    def categorical(self) -> List[str]:
        return [c.name for c in self.columns if c.role in CATEGORICAL_ROLES]

    @property
    def dense(self) -> List[str]:
        return [c.name for c in self.columns if c.role == "dense"]

    def with_role(self, role: str) -> List[str]:
        return [c.name for c in self.columns if c.role == role]


def movielens_schema() -> Schema:
    return Schema(
        [
            Column("user", "user_id"),
            Column("item", "item_id"),
            Column("rating", "rating_target"),
            Column("timestamp", "ignore"),
        ],
        delimiter="::",
    )


def criteo_schema() -> Schema:
    cols = [Column("label", "label_target")]
    cols += [Column(f"I{i}", "dense") for i in range(1, 14)]
    cols += [Column(f"C{i}", "categorical") for i in range(1, 27)]
    return Schema(cols, delimiter="\t")


def avazu_schema(header: Sequence[str]) -> Schema:
    """Avazu CSV: ``click`` is the label, ``id`` is dropped, the rest are categorical."""
    roles = {"click": "label_target", "id": "ignore"}
    return Schema([Column(h, roles.get(h, "categorical")) for h in header], delimiter=",", header=True)


@dataclass
class RawTable:
    """Column-wise parsed table; categorical columns hold interned codes."""

    schema: Schema
    codes: Dict[str, np.ndarray]
    tokens: Dict[str, List[str]]
    dense: Dict[str, np.ndarray]
    target: np.ndarray

    def __len__(self):
        return int(self.target.shape[0])

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx)
        return RawTable(
            self.schema,
            {k: v[idx] for k, v in self.codes.items()},
            self.tokens,
            {k: v[idx] for k, v in self.dense.items()},
            self.target[idx],
        )

    def column_tokens(self, name: str) -> np.ndarray:
        lut = np.asarray(self.tokens[name], dtype=object)
        return lut[self.codes[name]]


def _parse_float(text: str, line_no: int, column: str) -> float:
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {line_no}: column {column!r} value {text!r} is not numeric") from None


def load_table(path, schema: Optional[Schema] = None, fmt: Optional[str] = None, max_rows: Optional[int] = None) -> RawTable:
    """Parse a delimited file.

    ``fmt`` selects a preset schema (``movielens``, ``criteo``, ``avazu``)
    when ``schema`` is not given.  Rows whose field count differs from the
    schema are rejected with their line numbers.  Only the first
    ``max_rows`` data rows are read when it is set.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        first = fh.readline()
        if not first.strip():
            raise DataError(f"{path}: file is empty")
        if schema is None:
            if fmt == "movielens":
                schema = movielens_schema()
            elif fmt == "criteo":
                schema = criteo_schema()
            elif fmt == "avazu":
                schema = avazu_schema(first.rstrip("\r\n").split(","))
            else:
                raise ConfigError(f"no schema given and unknown format {fmt!r}")
        names = [c.name for c in schema.columns]
        roles = [c.role for c in schema.columns]
        n_cols = len(names)
        delim = schema.delimiter
        interned: Dict[str, Dict[str, int]] = {n: {} for n, r in zip(names, roles) if r in CATEGORICAL_ROLES}
        cat_codes: Dict[str, list] = {n: [] for n in interned}
        dense_vals: Dict[str, list] = {n: [] for n, r in zip(names, roles) if r == "dense"}
        target: list = []
        ragged: list = []

        def lines():
            line_no = 1
            if not schema.header:
                yield line_no, first
            for line in fh:
                line_no += 1
                yield line_no, line

        n_rows = 0
        for line_no, line in lines():
            line = line.rstrip("\r\n")
            if not line:
                continue
            if max_rows is not None and n_rows >= max_rows:
                break
            fields = line.split(delim)
            if len(fields) != n_cols:
                ragged.append(line_no)
                if len(ragged) >= 20:
                    break
                continue
            for name, role, text in zip(names, roles, fields):
                if role in CATEGORICAL_ROLES:
                    table = interned[name]
                    code = table.get(text)
                    if code is None:
                        code = table[text] = len(table)
                    cat_codes[name].append(code)
                elif role == "dense":
                    dense_vals[name].append(_parse_float(text, line_no, name))
                elif role in TARGET_ROLES:
                    value = _parse_float(text, line_no, name)
                    if math.isnan(value):
                        raise DataError(f"line {line_no}: missing target value")
                    target.append(value)
            n_rows += 1
    if ragged:
        raise DataError(
            f"{path}: rows with a field count other than {n_cols} at lines "
            + ", ".join(map(str, ragged))
        )
    if n_rows == 0:
        raise DataError(f"{path}: no data rows")
    return RawTable(
        schema,
        {k: np.asarray(v, dtype=np.int64) for k, v in cat_codes.items()},
        {k: list(v) for k, v in interned.items()},
        {k: np.asarray(v, dtype=np.float64) for k, v in dense_vals.items()},
        np.asarray(target, dtype=np.float64),
    )


def stable_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class Vocabulary:
    """Token to index map; index 0 is shared by unseen and rare tokens."""

    index: Dict[str, int] = field(default_factory=dict)
    hash_buckets: Optional[int] = None

    @classmethod
    def fit(cls, tokens: Sequence[str], min_count: int = 1, hash_buckets: Optional[int] = None) -> "Vocabulary":
        if hash_buckets:
            return cls({}, int(hash_buckets))
        counts: Dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        index: Dict[str, int] = {}
        for tok, n in counts.items():  # dict order is first appearance
            if n >= min_count:
                index[tok] = len(index) + 1
        return cls(index)

    @property
    def size(self) -> int:
        return self.hash_buckets if self.hash_buckets else len(self.index)

    def lookup(self, token: str) -> int:
        if self.hash_buckets:
            return 1 + stable_hash(token) % self.hash_buckets
        return self.index.get(token, 0)


def fit_vocabulary(tokens, min_count: int = 1, hash_buckets: Optional[int] = None) -> Vocabulary:
    return Vocabulary.fit(tokens, min_count, hash_buckets)


def dense_transform(x: np.ndarray) -> np.ndarray:
    """Missing to 0, negatives clamped to 0, then ``ln(1 + x)``."""
    x = np.nan_to_num(np.asarray(x, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    return np.log1p(np.maximum(x, 0.0))


@dataclass
class EncodedDataset:
    cat: np.ndarray  # (N, C) int64
    dense: np.ndarray  # (N, D) float64
    target: np.ndarray  # (N,)
    cat_columns: List[str]
    dense_columns: List[str]
    vocab_sizes: Dict[str, int]
    task: str

    def __len__(self):
        return int(self.target.shape[0])

    def take(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx)
        return EncodedDataset(
            self.cat[idx], self.dense[idx], self.target[idx],
            self.cat_columns, self.dense_columns, self.vocab_sizes, self.task,
        )


class Preprocessor:
    """Fits vocabularies and dense statistics on training rows, then encodes."""

    def __init__(self, schema: Schema, min_count: int = 1, hash_buckets: Optional[int] = None):
        self.schema = schema
        self.min_count = min_count
        self.hash_buckets = hash_buckets
        self.vocabs: Dict[str, Vocabulary] = {}
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None

    def fit(self, train: RawTable) -> "Preprocessor":
        for col in self.schema.categorical:
            self.vocabs[col] = Vocabulary.fit(train.column_tokens(col), self.min_count, self.hash_buckets)
        dense = self._dense_matrix(train)
        self.mean = dense.mean(axis=0) if dense.shape[1] else np.zeros(0)
        self.std = dense.std(axis=0) if dense.shape[1] else np.zeros(0)
        return self

    def _dense_matrix(self, table: RawTable) -> np.ndarray:
        cols = [dense_transform(table.dense[c]) for c in self.schema.dense]
        if not cols:
            return np.zeros((len(table), 0))
        return np.stack(cols, axis=1)

    def transform(self, table: RawTable) -> EncodedDataset:
        if self.mean is None:
            raise RuntimeError("Preprocessor.transform called before fit")
        n = len(table)
        cat = np.zeros((n, len(self.schema.categorical)), dtype=np.int64)
        for j, col in enumerate(self.schema.categorical):
            vocab = self.vocabs[col]
            lut = np.fromiter((vocab.lookup(t) for t in table.tokens[col]), dtype=np.int64, count=len(table.tokens[col]))
            cat[:, j] = lut[table.codes[col]]
        dense = self._dense_matrix(table)
        if dense.shape[1]:
            safe = np.where(self.std > 0, self.std, 1.0)
            dense = np.where(self.std > 0, (dense - self.mean) / safe, 0.0)
        target = table.target.astype(np.float64)
        if self.schema.task == "ctr":
            bad = np.flatnonzero((target != 0.0) & (target != 1.0))
            if bad.size:
                raise DataError(f"row {int(bad[0])}: label {target[bad[0]]!r} is not 0 or 1")
        return EncodedDataset(
            cat, dense, target,
            list(self.schema.categorical), list(self.schema.dense),
            {c: self.vocabs[c].size for c in self.schema.categorical},
            self.schema.task,
        )


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded permutation cut 8:1:1; the test split takes the remainder."""
    if n < 10:
        raise ConfigError(f"need at least 10 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (8 * n) // 10
    n_val = n // 10
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split_dataset(data, seed: int):
    """Split anything with ``take`` and ``len`` into (train, val, test)."""
    return tuple(data.take(idx) for idx in split_indices(len(data), seed))


def prepare_splits(
    table: RawTable, seed: int, min_count: int = 1, hash_buckets: Optional[int] = None
) -> tuple[EncodedDataset, EncodedDataset, EncodedDataset]:
    train, val, test = split_dataset(table, seed)
    prep = Preprocessor(table.schema, min_count, hash_buckets).fit(train)
    return prep.transform(train), prep.transform(val), prep.transform(test)


@dataclass
class Batch:
    cat: np.ndarray
    dense: np.ndarray
    target: np.ndarray

    def __len__(self):
        return int(self.target.shape[0])


def iterate_batches(
    data: EncodedDataset, batch_size: int, shuffle_seed: Optional[int] = None, epoch: int = 0
) -> Iterator[Batch]:
    """Mini-batches in order, or reshuffled per epoch when ``shuffle_seed`` is set.

    The last partial batch is kept.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    n = len(data)
    if shuffle_seed is None:
        order = None
    else:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        if order is None:
            sl = slice(start, start + batch_size)
            yield Batch(data.cat[sl], data.dense[sl], data.target[sl])
        else:
            idx = order[start : start + batch_size]
            yield Batch(data.cat[idx], data.dense[idx], data.target[idx])
