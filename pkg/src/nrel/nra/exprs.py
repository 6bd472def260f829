"""Compiled transformation expressions.

A transformation maps every row of an ``n x d`` embedding matrix to a new
row.  Expression nodes carry a static type:

* ``const``   a scalar known at compile time,
* ``fixed``   an ``r x c`` tensor that does not vary per row (parameters),
* ``rows``    an ``n x w`` per-row value,
* ``rowsT``   the transpose of a per-row value, legal only right of ``@``.

Broadcasting is resolved here, at the expression level, into explicit tensor
ops; the tensor layer itself never broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..tensor import (Key, ParameterStore, Tensor, add, concat_cols, gelu, index_select,
                      log_softmax_rows, matmul, mul_elementwise, relu, scale, sigmoid, slice_cols,
                      softmax_rows_grouped, sub, tanh)

ACTIVATIONS = ("relu", "sigmoid", "gelu", "tanh")


@dataclass(frozen=True)
class Ty:
    kind: str
    rows: int | None = None  # fixed only
    width: int = 0

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed({self.rows}x{self.width})"
        if self.kind == "const":
            return "const"
        return f"{self.kind}({self.width})"


CONST = Ty("const", None, 1)


def rows_ty(w: int) -> Ty:
    return Ty("rows", None, w)


def fixed_ty(r: int, c: int) -> Ty:
    return Ty("fixed", r, c)


class TExpr:
    ty: Ty

    def children(self) -> tuple["TExpr", ...]:
        return ()

    def params(self) -> list[tuple[Key, str]]:
        """(key, kind) of every parameter referenced, in syntactic order."""
        out: list[tuple[Key, str]] = []
        for c in self.children():
            for p in c.params():
                if p not in out:
                    out.append(p)
        return out

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()


@dataclass(frozen=True)
class Input(TExpr):
    start: int
    width: int
    label: str = "z"
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ty", rows_ty(self.width))

    def describe(self) -> str:
        return self.label


@dataclass(frozen=True)
class Const(TExpr):
    value: float
    ty: Ty = field(init=False, compare=False, default=CONST)

    def describe(self) -> str:
        v = self.value
        return str(int(v)) if float(v).is_integer() else repr(v)


@dataclass(frozen=True)
class Param(TExpr):
    key: Key
    shape: tuple[int, int]
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ty", fixed_ty(*self.shape))

    def params(self):
        return [(self.key, "parameter")]

    def describe(self) -> str:
        return _key_label(self.key)


@dataclass(frozen=True)
class Linear(TExpr):
    key: Key
    in_dim: int
    out_dim: int
    arg: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        t = self.arg.ty
        if t.kind not in ("rows", "fixed") or t.width != self.in_dim:
            raise ShapeError(f"Linear({self.in_dim},{self.out_dim}) applied to {t}")
        object.__setattr__(self, "ty", rows_ty(self.out_dim) if t.kind == "rows" else fixed_ty(t.rows, self.out_dim))

    def children(self):
        return (self.arg,)

    def params(self):
        return [(self.key, "linear")] + [p for p in self.arg.params() if p != (self.key, "linear")]

    def describe(self) -> str:
        return f"Linear({self.in_dim},{self.out_dim})({self.arg.describe()})"


@dataclass(frozen=True)
class Act(TExpr):
    fn: str
    arg: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        if self.fn not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.fn!r}")
        if self.arg.ty.kind not in ("rows", "fixed"):
            raise ShapeError(f"{self.fn} applied to {self.arg.ty}")
        object.__setattr__(self, "ty", self.arg.ty)

    def children(self):
        return (self.arg,)

    def describe(self) -> str:
        return f"{_ACT_NAMES[self.fn]}({self.arg.describe()})"


_ACT_NAMES = {"relu": "ReLU", "sigmoid": "Sigmoid", "gelu": "GELU", "tanh": "Tanh"}


@dataclass(frozen=True)
class Concat(TExpr):
    args: tuple[TExpr, ...]
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        if not self.args:
            raise ShapeError("Concat of nothing")
        kinds = {a.ty.kind for a in self.args}
        if kinds - {"rows", "fixed"}:
            raise ShapeError(f"Concat of {[str(a.ty) for a in self.args]}")
        width = sum(a.ty.width for a in self.args)
        if "rows" in kinds:
            for a in self.args:
                if a.ty.kind == "fixed" and a.ty.rows != 1:
                    raise ShapeError(f"cannot broadcast {a.ty} across rows")
            object.__setattr__(self, "ty", rows_ty(width))
        else:
            heights = {a.ty.rows for a in self.args}
            if len(heights) != 1:
                raise ShapeError(f"Concat of fixed tensors with differing rows {heights}")
            object.__setattr__(self, "ty", fixed_ty(heights.pop(), width))

    def children(self):
        return self.args

    def describe(self) -> str:
        return f"Concat({', '.join(a.describe() for a in self.args)})"


def _broadcast_ty(op: str, a: Ty, b: Ty) -> Ty:
    if a.kind == "const":
        return b
    if b.kind == "const":
        return a
    if "rowsT" in (a.kind, b.kind):
        raise ShapeError(f"transposed value only allowed right of '@' (got {a} {op} {b})")
    if a.kind == "rows" or b.kind == "rows":
        for t in (a, b):
            if t.kind == "fixed" and t.rows != 1:
                raise ShapeError(f"cannot broadcast {t} across rows in '{op}'")
        wa, wb = a.width, b.width
        if wa != wb and 1 not in (wa, wb):
            raise ShapeError(f"width mismatch in '{op}': {a} vs {b}")
        return rows_ty(max(wa, wb))
    if (a.rows, a.width) == (b.rows, b.width):
        return a
    if (a.rows, a.width) == (1, 1):
        return b
    if (b.rows, b.width) == (1, 1):
        return a
    raise ShapeError(f"shape mismatch in '{op}': {a} vs {b}")


@dataclass(frozen=True)
class Binary(TExpr):
    op: str
    a: TExpr
    b: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        if self.op not in "+-*/":
            raise ShapeError(f"unknown operator {self.op!r}")
        if self.op == "/" and self.b.ty.kind != "const":
            raise ShapeError("division is only supported by compile-time constants")
        object.__setattr__(self, "ty", _broadcast_ty(self.op, self.a.ty, self.b.ty))

    def children(self):
        return (self.a, self.b)

    def describe(self) -> str:
        return f"({self.a.describe()} {self.op} {self.b.describe()})"


@dataclass(frozen=True)
class Transpose(TExpr):
    arg: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        if self.arg.ty.kind != "rows":
            raise ShapeError(f".T is only supported on per-row values, got {self.arg.ty}")
        object.__setattr__(self, "ty", Ty("rowsT", None, self.arg.ty.width))

    def children(self):
        return (self.arg,)

    def describe(self) -> str:
        return f"{self.arg.describe()}.T"


@dataclass(frozen=True)
class MatMul(TExpr):
    a: TExpr
    b: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        a, b = self.a.ty, self.b.ty
        if b.kind == "rowsT":
            if a.kind == "rows" or (a.kind == "fixed" and a.rows == 1):
                if a.width != b.width:
                    raise ShapeError(f"'@' width mismatch {a} @ {b}")
                ty = rows_ty(1)
            else:
                raise ShapeError(f"unsupported '@' operands {a} @ {b}")
        elif b.kind == "fixed" and a.kind in ("rows", "fixed"):
            if a.width != b.rows:
                raise ShapeError(f"'@' inner dimensions differ: {a} @ {b}")
            ty = rows_ty(b.width) if a.kind == "rows" else fixed_ty(a.rows, b.width)
        else:
            raise ShapeError(f"unsupported '@' operands {a} @ {b}")
        object.__setattr__(self, "ty", ty)

    def children(self):
        return (self.a, self.b)

    def describe(self) -> str:
        return f"({self.a.describe()} @ {self.b.describe()})"


@dataclass(frozen=True)
class CrossEntropy(TExpr):
    logits: TExpr
    target: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        lt, tt = self.logits.ty, self.target.ty
        if lt.kind != "rows" or tt.kind not in ("rows", "fixed") or lt.width != tt.width:
            raise ShapeError(f"CrossEntropyLoss over {lt} and {tt}")
        if tt.kind == "fixed" and tt.rows != 1:
            raise ShapeError(f"cannot broadcast target {tt} across rows")
        object.__setattr__(self, "ty", rows_ty(1))

    def children(self):
        return (self.logits, self.target)

    def describe(self) -> str:
        return f"CrossEntropyLoss()({self.logits.describe()}, {self.target.describe()})"


@dataclass(frozen=True)
class GroupedSoftmax(TExpr):
    """Softmax across the rows sharing a value of ``group_attrs``, per column."""

    arg: TExpr
    group_attrs: tuple[str, ...]
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        if self.arg.ty.kind != "rows":
            raise ShapeError(f"grouped softmax over {self.arg.ty}")
        object.__setattr__(self, "ty", self.arg.ty)

    def children(self):
        return (self.arg,)

    def describe(self) -> str:
        return f"Softmax[{','.join(self.group_attrs)}]({self.arg.describe()})"


@dataclass(frozen=True)
class Broadcast(TExpr):
    """Spread a fixed ``1 x c`` value or a constant over every row."""

    arg: TExpr
    ty: Ty = field(init=False, compare=False)

    def __post_init__(self):
        t = self.arg.ty
        if t.kind == "fixed" and t.rows == 1:
            object.__setattr__(self, "ty", rows_ty(t.width))
        elif t.kind == "const":
            object.__setattr__(self, "ty", rows_ty(1))
        else:
            raise ShapeError(f"cannot broadcast {t} over rows")

    def children(self):
        return (self.arg,)

    def describe(self) -> str:
        return self.arg.describe()


def _key_label(key: Key) -> str:
    name, args = key
    return f"{name}<{','.join(map(str, args))}>" if args else name


# ----------------------------------------------------------------------------
# transformation wrapper and batched evaluation
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Transformation:
    """A per-tuple map from width ``in_width`` to ``expr.ty.width``."""

    expr: TExpr
    in_width: int

    def __post_init__(self):
        if self.expr.ty.kind != "rows":
            object.__setattr__(self, "expr", Broadcast(self.expr))
        for node in self.expr.walk():
            if isinstance(node, Input) and node.start + node.width > self.in_width:
                raise ShapeError(f"input slice {node.label} exceeds embedding width {self.in_width}")

    @property
    def out_width(self) -> int:
        return self.expr.ty.width

    @property
    def group_attrs(self) -> tuple[str, ...] | None:
        for node in self.expr.walk():
            if isinstance(node, GroupedSoftmax):
                return node.group_attrs
        return None

    def params(self) -> list[tuple[Key, str]]:
        return self.expr.params()

    def is_identity(self) -> bool:
        e = self.expr
        return isinstance(e, Input) and e.start == 0 and e.width == self.in_width

    def describe(self) -> str:
        return self.expr.describe()

    def apply(self, emb: Tensor, store: ParameterStore, groups: tuple[np.ndarray, int] | None = None) -> Tensor:
        if emb.shape[1] != self.in_width:
            raise ShapeError(f"transformation expects width {self.in_width}, got {emb.shape[1]}")
        return _Evaluator(emb, store, groups).rows(self.expr)


def identity(width: int) -> Transformation:
    return Transformation(Input(0, width), width)


class _Evaluator:
    def __init__(self, emb: Tensor, store: ParameterStore, groups):
        self.emb = emb
        self.n = emb.shape[0]
        self.store = store
        self.groups = groups

    def _param(self, key: Key) -> Tensor:
        try:
            return self.store[key]
        except KeyError:
            raise ShapeError(f"unresolved parameter {key!r}") from None

    def value(self, e: TExpr):
        """Evaluate to a float (const) or a Tensor (fixed / rows)."""
        if isinstance(e, Const):
            return float(e.value)
        if isinstance(e, Input):
            if e.start == 0 and e.width == self.emb.shape[1]:
                return self.emb
            return slice_cols(self.emb, e.start, e.start + e.width)
        if isinstance(e, Param):
            return self._param(e.key)
        if isinstance(e, Broadcast):
            return self.rows(e)
        if isinstance(e, Linear):
            x = self.value(e.arg)
            w = self._param(e.key)
            if w.shape != (e.in_dim + 1, e.out_dim):
                raise ShapeError(f"Linear parameter {e.key!r} has shape {w.shape}")
            m = x.shape[0]
            weight = index_select(w, np.arange(e.in_dim))
            bias = index_select(w, np.full(m, e.in_dim))
            return add(matmul(x, weight), bias)
        if isinstance(e, Act):
            x = self.value(e.arg)
            return {"relu": relu, "sigmoid": sigmoid, "gelu": gelu, "tanh": tanh}[e.fn](x)
        if isinstance(e, Concat):
            if e.ty.kind == "rows":
                return concat_cols(*(self.rows(a) for a in e.args))
            return concat_cols(*(self.value(a) for a in e.args))
        if isinstance(e, Binary):
            return self._binary(e)
        if isinstance(e, MatMul):
            if e.b.ty.kind == "rowsT":
                left = self.rows(e.a)
                right = self.rows(e.b.arg)
                w = left.shape[1]
                return matmul(mul_elementwise(left, right), Tensor(np.ones((w, 1))))
            return matmul(self.value(e.a), self.value(e.b))
        if isinstance(e, CrossEntropy):
            logits = self.rows(e.logits)
            target = self.rows(e.target)
            logp = log_softmax_rows(logits)
            per_row = matmul(mul_elementwise(target, logp), Tensor(np.ones((logits.shape[1], 1))))
            return scale(per_row, -1.0)
        if isinstance(e, GroupedSoftmax):
            if self.groups is None:
                raise ShapeError("grouped softmax evaluated without group indices")
            gidx, n_groups = self.groups
            return softmax_rows_grouped(self.rows(e.arg), gidx, n_groups)
        raise TypeError(f"cannot evaluate {type(e).__name__}")

    def rows(self, e: TExpr) -> Tensor:
        """Evaluate ``e`` and spread it to an ``n x w`` per-row tensor."""
        if isinstance(e, Broadcast):
            e = e.arg
        v = self.value(e)
        if isinstance(v, float):
            return Tensor(np.full((self.n, 1), v))
        if e.ty.kind == "fixed":
            if v.shape[0] != 1:
                raise ShapeError(f"cannot spread {v.shape} over rows")
            return index_select(v, np.zeros(self.n, dtype=np.int64))
        return v

    def _expand(self, v: Tensor, ty: Ty, out: Ty) -> Tensor:
        if out.kind == "rows":
            if ty.kind == "fixed":
                v = index_select(v, np.zeros(self.n, dtype=np.int64))
            if v.shape[1] == 1 and out.width != 1:
                v = matmul(v, Tensor(np.ones((1, out.width))))
            return v
        if v.shape == (1, 1) and (out.rows, out.width) != (1, 1):
            v = index_select(v, np.zeros(out.rows, dtype=np.int64))
            v = matmul(v, Tensor(np.ones((1, out.width))))
        return v

    def _binary(self, e: Binary):
        a, b = self.value(e.a), self.value(e.b)
        op = e.op
        if isinstance(a, float) and isinstance(b, float):
            return _fold(op, a, b)
        if isinstance(b, float):
            if op == "*":
                return scale(a, b)
            if op == "/":
                return scale(a, 1.0 / b)
            fill = Tensor(np.full(a.shape, b))
            return add(a, fill) if op == "+" else sub(a, fill)
        if isinstance(a, float):
            if op == "*":
                return scale(b, a)
            fill = Tensor(np.full(b.shape, a))
            return add(fill, b) if op == "+" else sub(fill, b)
        a = self._expand(a, e.a.ty, e.ty)
        b = self._expand(b, e.b.ty, e.ty)
        return {"+": add, "-": sub, "*": mul_elementwise}[op](a, b)


def _fold(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b
