"""Embedded relations: set-semantics content tables row-aligned with embeddings."""

from __future__ import annotations

import csv
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LoadError, SchemaError
from .tensor import Key, ParameterStore, Tensor, concat_rows, index_select

_TAG_RANK = {"int": 0, "float": 1, "bool": 2, "str": 3}


def value_tag(value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, np.integer)):
        return "int"
    if isinstance(value, (float, np.floating)):
        return "float"
    if isinstance(value, str):
        return "str"
    raise SchemaError(f"unsupported content value {value!r}")


def value_key(value) -> tuple:
    return (_TAG_RANK[value_tag(value)], value)


def row_key(row: tuple) -> tuple:
    return tuple(value_key(v) for v in row)


def canonical_order(rows: Sequence[tuple]) -> list[int]:
    """Positions of ``rows`` sorted lexicographically (int < float < bool < str)."""
    return sorted(range(len(rows)), key=lambda i: row_key(rows[i]))


@dataclass(frozen=True)
class RelationSchema:
    attrs: tuple[str, ...]
    dim: int

    @property
    def arity(self) -> int:
        return len(self.attrs)

    def __post_init__(self):
        if len(set(self.attrs)) != len(self.attrs):
            raise SchemaError(f"duplicate attribute names in {self.attrs}")
        if self.dim < 0:
            raise SchemaError(f"negative embedding dimension {self.dim}")


@dataclass
class Schema:
    entries: dict[str, RelationSchema] = field(default_factory=dict)

    def add(self, name: str, entry: RelationSchema) -> None:
        if name in self.entries:
            raise SchemaError(f"relation {name!r} declared twice")
        self.entries[name] = entry

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> RelationSchema:
        return self.entries[name]


class EmbeddedRelation:
    """Content rows (canonical order, no duplicates) plus an ``n x d`` embedding.

    ``learnable`` lists one parameter key per row when the embedding is a
    trainable per-tuple vector; :meth:`embedding` then rebuilds it from the
    store so gradients reach the parameters.
    """

    __slots__ = ("attrs", "rows", "emb", "name", "learnable")

    def __init__(self, attrs, rows, emb: Tensor, name: str | None = None,
                 learnable: tuple[Key, ...] | None = None):
        self.attrs = tuple(attrs)
        self.rows = tuple(rows)
        self.emb = emb
        self.name = name
        self.learnable = learnable

    @classmethod
    def from_rows(cls, attrs: Sequence[str], rows: Iterable[Sequence], emb=None, dim: int | None = None,
                  name: str | None = None) -> "EmbeddedRelation":
        """Validating constructor; sorts rows canonically and permutes ``emb`` to match."""
        attrs = tuple(attrs)
        RelationSchema(attrs, 0)
        rows = [tuple(r) for r in rows]
        for r in rows:
            if len(r) != len(attrs):
                raise SchemaError(f"row {r!r} does not have arity {len(attrs)}")
        if len(set(rows)) != len(rows):
            seen, dup = set(), None
            for r in rows:
                if r in seen:
                    dup = r
                    break
                seen.add(r)
            raise SchemaError(f"duplicate content tuple {dup!r}")
        if not attrs and len(rows) > 1:
            raise SchemaError("a relation with no attributes holds at most one row")
        _check_column_tags(attrs, rows)
        if emb is None:
            emb = Tensor(np.zeros((len(rows), dim or 0)))
        elif not isinstance(emb, Tensor):
            arr = np.asarray(emb, dtype=np.float64)
            if arr.ndim != 2:
                arr = arr.reshape(len(rows), -1) if len(rows) else np.zeros((0, dim or 0))
            emb = Tensor(arr)
        if emb.shape[0] != len(rows):
            raise SchemaError(f"{emb.shape[0]} embedding rows for {len(rows)} content rows")
        if dim is not None and emb.shape[1] != dim:
            raise SchemaError(f"embedding width {emb.shape[1]} != declared {dim}")
        order = canonical_order(rows)
        if order != list(range(len(rows))):
            rows = [rows[i] for i in order]
            emb = index_select(emb, order)
        return cls(attrs, rows, emb, name=name)

    @property
    def k(self) -> int:
        return len(self.attrs)

    @property
    def d(self) -> int:
        return self.emb.shape[1]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def schema(self) -> RelationSchema:
        return RelationSchema(self.attrs, self.d)

    def embedding(self, store: ParameterStore | None = None) -> Tensor:
        if self.learnable is None:
            return self.emb
        if store is None:
            raise SchemaError(f"relation {self.name!r} has learnable embeddings; a store is required")
        if not self.learnable:
            return Tensor(np.zeros((0, self.d)))
        return concat_rows(*(store[k] for k in self.learnable))

    def with_name(self, name: str) -> "EmbeddedRelation":
        return EmbeddedRelation(self.attrs, self.rows, self.emb, name=name, learnable=self.learnable)

    def column_tag(self, attr: str) -> str | None:
        i = self.attrs.index(attr)
        return value_tag(self.rows[0][i]) if self.rows else None

    def to_dict(self) -> dict[tuple, np.ndarray]:
        return {r: self.emb.data[i].copy() for i, r in enumerate(self.rows)}

    def __repr__(self) -> str:
        label = self.name or "relation"
        return f"<{label}({', '.join(self.attrs)}) n={len(self.rows)} d={self.d}>"


def _check_column_tags(attrs, rows) -> None:
    if not rows:
        return
    for i, a in enumerate(attrs):
        tags = {value_tag(r[i]) for r in rows}
        if len(tags) > 1:
            raise SchemaError(f"column {a!r} mixes value types {sorted(tags)}")


@dataclass
class Database:
    schema: Schema = field(default_factory=Schema)
    relations: dict[str, EmbeddedRelation] = field(default_factory=dict)

    def add(self, name: str, rel: EmbeddedRelation) -> None:
        self.schema.add(name, rel.schema)
        self.relations[name] = rel.with_name(name) if rel.name != name else rel

    def __contains__(self, name: str) -> bool:
        return name in self.relations

    def __getitem__(self, name: str) -> EmbeddedRelation:
        return self.relations[name]

    def contents(self) -> dict[str, tuple[tuple[str, ...], tuple[tuple, ...]]]:
        return {n: (r.attrs, r.rows) for n, r in self.relations.items()}


# ----------------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------------

ROLES = {"content", "feature", "numeric-feature", "skip"}


def parse_content_column(values: list[str]) -> list:
    """Infer one tag for a whole column: int, then float, then bool, else str."""
    if not values:
        return []
    try:
        return [int(v) for v in values]
    except ValueError:
        pass
    try:
        parsed = [float(v) for v in values]
        if all(math.isfinite(p) for p in parsed):
            return parsed
    except ValueError:
        pass
    lowered = [v.strip().lower() for v in values]
    if all(v in ("true", "false") for v in lowered):
        return [v == "true" for v in lowered]
    return list(values)


def load_relation_csv(path, name: str, decl) -> EmbeddedRelation:
    """Read a headed CSV; ``decl`` maps every header column to a role.

    Content columns become attributes, feature columns are concatenated (in
    declaration order) into a constant initial embedding, skip columns are
    ignored.
    """
    pairs = list(decl.items()) if isinstance(decl, Mapping) else [tuple(p) for p in decl]
    for col, role in pairs:
        if role not in ROLES:
            raise LoadError(f"{name}: unknown column role {role!r} for {col!r}")
    if not os.path.exists(path):
        raise LoadError(f"{name}: file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"{name}: {path} has no header row") from None
        records = [r for r in reader if r and any(c.strip() for c in r)]
    declared = [c for c, _ in pairs]
    if sorted(declared) != sorted(header) or len(set(declared)) != len(declared):
        raise LoadError(f"{name}: header {header} does not match declared columns {declared}")
    col_index = {h: i for i, h in enumerate(header)}
    for lineno, rec in enumerate(records, start=2):
        if len(rec) != len(header):
            raise LoadError(f"{name}: line {lineno} has {len(rec)} fields, header has {len(header)}")
    content_cols = [c for c in header if dict(pairs)[c] == "content"]
    feature_cols = [c for c, role in pairs if role in ("feature", "numeric-feature")]

    columns = [parse_content_column([rec[col_index[c]].strip() for rec in records]) for c in content_cols]
    rows = list(zip(*columns)) if columns else [() for _ in records]
    feats = np.zeros((len(records), len(feature_cols)))
    for j, c in enumerate(feature_cols):
        for i, rec in enumerate(records):
            raw = rec[col_index[c]].strip()
            try:
                feats[i, j] = float(raw)
            except ValueError:
                raise LoadError(f"{name}: non-numeric value {raw!r} in feature column {c!r}") from None
    try:
        return EmbeddedRelation.from_rows(content_cols, rows, Tensor(feats), dim=len(feature_cols), name=name)
    except SchemaError as exc:
        raise LoadError(f"{name}: {exc}") from None


def attach_learnable_embeddings(rel: EmbeddedRelation, d: int, store: ParameterStore, rng_seed: int,
                                replace: bool = False) -> EmbeddedRelation:
    """Give every tuple a trainable ``d``-vector drawn i.i.d. from N(0, 1/d).

    Row ``i`` (canonical order) is stored under key ``(name, (i,))``.
    """
    if d <= 0:
        raise SchemaError(f"learnable embedding dimension must be positive, got {d}")
    if rel.name is None:
        raise SchemaError("learnable embeddings need a named relation")
    if rel.d and not replace:
        raise SchemaError(f"relation {rel.name!r} already has feature embeddings (d={rel.d})")
    rng = np.random.default_rng([int(rng_seed) & 0xFFFFFFFF, zlib.crc32(rel.name.encode("utf-8"))])
    init = rng.normal(0.0, math.sqrt(1.0 / d), size=(len(rel.rows), d))
    keys = []
    for i in range(len(rel.rows)):
        key = (rel.name, (i,))
        store.register(key, init[i:i + 1])
        keys.append(key)
    return EmbeddedRelation(rel.attrs, rel.rows, Tensor(init), name=rel.name, learnable=tuple(keys))
