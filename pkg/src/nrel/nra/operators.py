"""NRA operators on embedded relations.

Each operator is split in two: a *content* function that works on attribute
names and row tuples only and returns integer index vectors, and an embedding
step that replays those indices with differentiable tensor ops.  The physical
executor caches the content half; the functions at the bottom of this module
compose both halves for direct use.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ExecError, SchemaError
from ..relmodel import EmbeddedRelation, canonical_order, row_key, value_tag
from ..tensor import ParameterStore, Tensor, concat_cols, concat_rows, index_select, scatter_reduce, slice_cols
from .exprs import Transformation
from .predicates import conjunction_holds

AGG_KINDS = ("sum", "mean", "max")

Rows = tuple  # tuple of content tuples


# ----------------------------------------------------------------------------
# content phase
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class JoinIndex:
    attrs: tuple[str, ...]
    rows: Rows
    left: np.ndarray
    right: np.ndarray


def _column_tags(attrs, rows) -> dict[str, str]:
    if not rows:
        return {}
    return {a: value_tag(rows[0][i]) for i, a in enumerate(attrs)}


def join_content(lattrs, lrows, rattrs, rrows) -> JoinIndex:
    """Hash join on shared attribute names; output in canonical order."""
    shared = [a for a in lattrs if a in rattrs]
    ltags, rtags = _column_tags(lattrs, lrows), _column_tags(rattrs, rrows)
    for a in shared:
        if a in ltags and a in rtags and ltags[a] != rtags[a]:
            raise SchemaError(f"join attribute {a!r} has incompatible types {ltags[a]} and {rtags[a]}")
    lpos = [lattrs.index(a) for a in shared]
    rpos = [rattrs.index(a) for a in shared]
    extra = [i for i, a in enumerate(rattrs) if a not in lattrs]
    out_attrs = tuple(lattrs) + tuple(rattrs[i] for i in extra)

    table: dict[tuple, list[int]] = defaultdict(list)
    for j, r in enumerate(rrows):
        table[tuple(r[p] for p in rpos)].append(j)
    rows, li, ri = [], [], []
    for i, l in enumerate(lrows):
        for j in table.get(tuple(l[p] for p in lpos), ()):
            rows.append(tuple(l) + tuple(rrows[j][p] for p in extra))
            li.append(i)
            ri.append(j)
    order = canonical_order(rows)
    return JoinIndex(out_attrs, tuple(rows[o] for o in order),
                     np.asarray([li[o] for o in order], dtype=np.int64),
                     np.asarray([ri[o] for o in order], dtype=np.int64))


@dataclass(frozen=True)
class GroupIndex:
    attrs: tuple[str, ...]
    rows: Rows
    group: np.ndarray  # one entry per input row, inputs stacked in order
    n_groups: int


def union_content(inputs: Sequence[tuple[Sequence[str], Rows]], attrs: Sequence[str]) -> GroupIndex:
    """Group the stacked rows of all inputs by their projection onto ``attrs``."""
    attrs = tuple(attrs)
    keys: list[tuple] = []
    for in_attrs, rows in inputs:
        missing = [a for a in attrs if a not in in_attrs]
        if missing:
            raise SchemaError(f"projection attributes {missing} missing from input {tuple(in_attrs)}")
        pos = [list(in_attrs).index(a) for a in attrs]
        keys.extend(tuple(r[p] for p in pos) for r in rows)
    tags: dict[int, set] = defaultdict(set)
    for k in keys:
        for i, v in enumerate(k):
            tags[i].add(value_tag(v))
    for i, t in tags.items():
        if len(t) > 1:
            raise SchemaError(f"union column {attrs[i]!r} mixes types {sorted(t)}")
    distinct = sorted(set(keys), key=row_key)
    slot = {k: g for g, k in enumerate(distinct)}
    group = np.asarray([slot[k] for k in keys], dtype=np.int64)
    return GroupIndex(attrs, tuple(distinct), group, len(distinct))


def select_content(attrs, rows, preds) -> np.ndarray:
    keep = []
    for i, r in enumerate(rows):
        env = dict(zip(attrs, r))
        if conjunction_holds(preds, env):
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def _aligned(lattrs, rattrs, rrows) -> list[tuple]:
    if sorted(lattrs) != sorted(rattrs) or len(lattrs) != len(rattrs):
        raise SchemaError(f"difference over different schemas {tuple(lattrs)} and {tuple(rattrs)}")
    pos = [list(rattrs).index(a) for a in lattrs]
    return [tuple(r[p] for p in pos) for r in rrows]


def difference_content(lattrs, lrows, rattrs, rrows) -> np.ndarray:
    """Positions of left rows whose content is absent on the right."""
    gone = set(_aligned(lattrs, rattrs, rrows))
    return np.asarray([i for i, r in enumerate(lrows) if tuple(r) not in gone], dtype=np.int64)


def rename_attrs(attrs, mapping: Mapping[str, str]) -> tuple[str, ...]:
    unknown = [a for a in mapping if a not in attrs]
    if unknown:
        raise SchemaError(f"rename of unknown attributes {unknown}")
    out = tuple(mapping.get(a, a) for a in attrs)
    if len(set(out)) != len(out):
        raise SchemaError(f"rename {dict(mapping)} is not injective over {tuple(attrs)}")
    return out


@dataclass(frozen=True)
class EncodeItem:
    """One bracketed item: an attribute, optionally one-hot over ``vocab``."""

    attr: str
    vocab: tuple | None = None

    @property
    def width(self) -> int:
        return len(self.vocab) if self.vocab is not None else 1


def encode_content(attrs, rows, items: Sequence[EncodeItem]) -> np.ndarray:
    """Constant matrix of encoded values, one row per content tuple."""
    width = sum(it.width for it in items)
    out = np.zeros((len(rows), width))
    col = 0
    for it in items:
        if it.attr not in attrs:
            raise SchemaError(f"encode of unknown attribute {it.attr!r}")
        p = list(attrs).index(it.attr)
        if it.vocab is not None:
            slot = {v: i for i, v in enumerate(it.vocab)}
            for r, row in enumerate(rows):
                v = row[p]
                if v not in slot:
                    raise ExecError(f"value {v!r} of {it.attr!r} is not in its vocabulary")
                out[r, col + slot[v]] = 1.0
        else:
            for r, row in enumerate(rows):
                v = row[p]
                tag = value_tag(v)
                if tag == "str":
                    raise ExecError(f"attribute {it.attr!r} holds text; declare a vocabulary to one-hot encode it")
                out[r, col] = float(v)
        col += it.width
    return out


def decode_content(rows, values: np.ndarray) -> Rows:
    """Append decoded float columns; canonical order is unchanged because rows were distinct."""
    return tuple(tuple(r) + tuple(float(x) for x in v) for r, v in zip(rows, values))


def group_ids(attrs, rows, group_attrs) -> tuple[np.ndarray, int]:
    """Group index for a grouped softmax over ``group_attrs``."""
    missing = [a for a in group_attrs if a not in attrs]
    if missing:
        raise SchemaError(f"softmax grouping attributes {missing} missing from {tuple(attrs)}")
    pos = [list(attrs).index(a) for a in group_attrs]
    slot: dict[tuple, int] = {}
    ids = [slot.setdefault(tuple(r[p] for p in pos), len(slot)) for r in rows]
    return np.asarray(ids, dtype=np.int64), len(slot)


# ----------------------------------------------------------------------------
# composed operators
# ----------------------------------------------------------------------------


def _mk(attrs, rows, emb: Tensor) -> EmbeddedRelation:
    return EmbeddedRelation(attrs, rows, emb)


def join(left: EmbeddedRelation, right: EmbeddedRelation) -> EmbeddedRelation:
    ix = join_content(left.attrs, left.rows, right.attrs, right.rows)
    parts = [index_select(left.emb, ix.left), index_select(right.emb, ix.right)]
    return _mk(ix.attrs, ix.rows, concat_cols(*parts))


def projected_union(inputs: Sequence[EmbeddedRelation], attrs: Sequence[str], agg: str = "sum") -> EmbeddedRelation:
    if agg not in AGG_KINDS:
        raise SchemaError(f"unknown aggregator {agg!r}")
    if not inputs:
        raise SchemaError("projected union of no inputs")
    widths = {r.d for r in inputs}
    if len(widths) != 1:
        raise SchemaError(f"projected union over embedding widths {sorted(widths)}")
    ix = union_content([(r.attrs, r.rows) for r in inputs], attrs)
    stacked = inputs[0].emb if len(inputs) == 1 else concat_rows(*(r.emb for r in inputs))
    return _mk(ix.attrs, ix.rows, scatter_reduce(stacked, ix.group, ix.n_groups, agg))


def transform(rel: EmbeddedRelation, tau: Transformation, store: ParameterStore) -> EmbeddedRelation:
    groups = None
    if tau.group_attrs is not None:
        groups = group_ids(rel.attrs, rel.rows, tau.group_attrs)
    return _mk(rel.attrs, rel.rows, tau.apply(rel.emb, store, groups))


def select(rel: EmbeddedRelation, preds) -> EmbeddedRelation:
    if not preds:
        return rel
    keep = select_content(rel.attrs, rel.rows, preds)
    return _mk(rel.attrs, tuple(rel.rows[i] for i in keep), index_select(rel.emb, keep))


def difference(left: EmbeddedRelation, right: EmbeddedRelation) -> EmbeddedRelation:
    keep = difference_content(left.attrs, left.rows, right.attrs, right.rows)
    return _mk(left.attrs, tuple(left.rows[i] for i in keep), index_select(left.emb, keep))


def rename(rel: EmbeddedRelation, mapping: Mapping[str, str]) -> EmbeddedRelation:
    return _mk(rename_attrs(rel.attrs, mapping), rel.rows, rel.emb)


def encode(rel: EmbeddedRelation, items: Sequence[EncodeItem]) -> EmbeddedRelation:
    enc = Tensor(encode_content(rel.attrs, rel.rows, items))
    emb = concat_cols(rel.emb, enc) if rel.d else enc
    return _mk(rel.attrs, rel.rows, emb)


def decode(rel: EmbeddedRelation, start: int, stop: int, names: Sequence[str]) -> EmbeddedRelation:
    if not (0 <= start < stop <= rel.d):
        raise SchemaError(f"decode slice [{start}:{stop}) out of range for width {rel.d}")
    if len(names) != stop - start:
        raise SchemaError("decode needs one attribute name per decoded column")
    clash = [n for n in names if n in rel.attrs]
    if clash:
        raise SchemaError(f"decoded attributes {clash} already exist")
    values = slice_cols(rel.emb, start, stop).data
    return _mk(rel.attrs + tuple(names), decode_content(rel.rows, values), rel.emb)
