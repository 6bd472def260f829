"""Filter predicates over content variables."""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Mapping

from ..errors import ExecError
from ..relmodel import value_tag

COMPARATORS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class Term:
    def variables(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Var(Term):
    name: str

    def variables(self):
        return {self.name}

    def eval(self, row: Mapping):
        return row[self.name]

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Lit(Term):
    value: object

    def eval(self, row):
        return self.value

    def __str__(self):
        return repr(self.value) if isinstance(self.value, str) else str(self.value)


@dataclass(frozen=True)
class Arith(Term):
    op: str
    a: Term
    b: Term

    def variables(self):
        return self.a.variables() | self.b.variables()

    def eval(self, row):
        x, y = self.a.eval(row), self.b.eval(row)
        for v in (x, y):
            if value_tag(v) not in ("int", "float"):
                raise ExecError(f"arithmetic '{self.op}' on non-numeric value {v!r}")
        if self.op == "+":
            return x + y
        if self.op == "-":
            return x - y
        if self.op == "*":
            return x * y
        if self.op == "/":
            if y == 0:
                raise ExecError("division by zero in filter")
            return x / y
        if self.op == "%":
            return x % y
        raise ExecError(f"unknown arithmetic operator {self.op!r}")

    def __str__(self):
        return f"({self.a} {self.op} {self.b})"


def _kind(v) -> str:
    t = value_tag(v)
    return "num" if t in ("int", "float") else t


@dataclass(frozen=True)
class Comparison:
    op: str
    lhs: Term
    rhs: Term

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.op!r}")

    def variables(self) -> set[str]:
        return self.lhs.variables() | self.rhs.variables()

    def holds(self, row: Mapping) -> bool:
        x, y = self.lhs.eval(row), self.rhs.eval(row)
        if _kind(x) != _kind(y):
            raise ExecError(f"type mismatch in comparison {x!r} {self.op} {y!r}")
        return bool(COMPARATORS[self.op](x, y))

    def __str__(self):
        return f"{self.lhs} {self.op} {self.rhs}"


def conjunction_holds(preds, row: Mapping) -> bool:
    return all(p.holds(row) for p in preds)
