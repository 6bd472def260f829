"""Syntax tree for neuro-relational programs.

Positions are carried for diagnostics but excluded from equality, so two
trees built from differently formatted sources compare equal when they mean
the same thing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


def _pos():
    return field(default=(0, 0), compare=False, repr=False)


# ----------------------------------------------------------------------------
# expressions (transformations, alias bodies, template arguments, filters)
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: int | float
    pos: tuple = _pos()


@dataclass(frozen=True)
class Str:
    value: str
    pos: tuple = _pos()


@dataclass(frozen=True)
class Name:
    """Identifier, optionally with template arguments: ``KLin<L,tau_s,i>``."""

    id: str
    targs: tuple | None = None
    pos: tuple = _pos()


@dataclass(frozen=True)
class Call:
    func: "Expr"
    args: tuple
    pos: tuple = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    a: "Expr"
    b: "Expr"
    pos: tuple = _pos()


@dataclass(frozen=True)
class Neg:
    a: "Expr"
    pos: tuple = _pos()


@dataclass(frozen=True)
class Transpose:
    a: "Expr"
    pos: tuple = _pos()


@dataclass(frozen=True)
class Splat:
    name: str
    pos: tuple = _pos()


@dataclass(frozen=True)
class Bracket:
    """Encoding bracket ``[a, b]`` inside a transformation expression."""

    items: tuple
    pos: tuple = _pos()


Expr = Union[Num, Str, Name, Call, BinOp, Neg, Transpose, Splat, Bracket]


# ----------------------------------------------------------------------------
# rule parts
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RelRef:
    name: str
    targs: tuple | None = None
    pos: tuple = _pos()


@dataclass(frozen=True)
class RangeDomain:
    var: str
    lo: Expr
    hi: Expr
    pos: tuple = _pos()


@dataclass(frozen=True)
class RelDomain:
    rel: RelRef
    vars: tuple[str, ...]
    pos: tuple = _pos()


@dataclass(frozen=True)
class Replicator:
    kind: str  # ',' (join) or '|' (union)
    domain: Union[RangeDomain, RelDomain]
    pos: tuple = _pos()


WILDCARD = "_"


@dataclass(frozen=True)
class Atom:
    """``R(x, y; z)``, ``F(A, B)(x; z)`` or ``Softmax(R)(s, t; z)`` in a rule body.

    ``content`` holds variable names (str), ``"_"`` or literal ``Num``/``Str``
    constants.  ``emb`` is the embedding variable, ``"_"`` or ``None`` when
    the atom has no ``;`` section.
    """

    rel: RelRef
    content: tuple
    emb: str | None = None
    call_args: tuple[RelRef, ...] | None = None
    replicator: Replicator | None = None
    pos: tuple = _pos()


@dataclass(frozen=True)
class Comparison:
    op: str
    lhs: Expr
    rhs: Expr
    pos: tuple = _pos()


@dataclass(frozen=True)
class Decode:
    """Decoding bracket ``[c]`` in a head content position."""

    vars: tuple[str, ...]
    pos: tuple = _pos()


@dataclass(frozen=True)
class Head:
    rel: RelRef
    content: tuple  # str | Decode
    agg: str | None = None
    tau: Expr | None = None
    has_emb: bool = True  # False when the head has no ';' section
    pos: tuple = _pos()


# ----------------------------------------------------------------------------
# statements
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    head: Head
    atoms: tuple[Atom, ...]
    filters: tuple[Comparison, ...] = ()
    union: bool = False
    pos: tuple = _pos()


@dataclass(frozen=True)
class Alias:
    name: str
    expr: Expr
    targs: tuple | None = None
    pos: tuple = _pos()


@dataclass(frozen=True)
class FuncDef:
    name: str
    params: tuple[str, ...]
    body: tuple
    targs: tuple | None = None
    pos: tuple = _pos()


@dataclass(frozen=True)
class Fit:
    kwargs: tuple[tuple[str, Expr], ...]
    target: RelRef
    pos: tuple = _pos()


@dataclass(frozen=True)
class Pred:
    target: RelRef
    pos: tuple = _pos()


Statement = Union[Rule, Alias, FuncDef, Fit, Pred]

AGGREGATORS = ("sum", "mean", "max")


def census(stmts) -> dict[str, int]:
    """Count top-level statements by kind (aliases, functions, rules, fits, preds)."""
    out = {"alias": 0, "function": 0, "rule": 0, "fit": 0, "pred": 0}
    kinds = {Alias: "alias", FuncDef: "function", Rule: "rule", Fit: "fit", Pred: "pred"}
    for s in stmts:
        out[kinds[type(s)]] += 1
    return out
