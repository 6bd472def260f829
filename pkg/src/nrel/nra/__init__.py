"""Neuro-relational algebra: operators, transformation expressions and term graphs."""

from __future__ import annotations

from .exprs import Transformation, identity
from .operators import (AGG_KINDS, EncodeItem, decode, difference, encode, join, projected_union, rename,
                        select, transform)
from .predicates import Arith, Comparison, Lit, Var
from .termgraph import LogicalPlan, TermGraph, TGNode

__all__ = ["AGG_KINDS", "Arith", "Comparison", "EncodeItem", "Lit", "LogicalPlan", "TGNode", "TermGraph",
           "Transformation", "Var", "decode", "difference", "encode", "identity", "join", "projected_union",
           "rename", "select", "transform"]
