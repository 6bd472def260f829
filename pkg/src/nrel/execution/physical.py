"""Physical plans: NRA nodes expanded into index-producing and tensor instructions.

Content instructions (merge, group-by, masks) produce integer index vectors
and never touch the tape.  Embedding instructions (gather, scatter, layer)
replay those indices with differentiable tensor ops.  Because content does
not depend on parameters, an :class:`Executor` computes the content
instructions once and reuses them on later evaluations, except downstream of
a decode, where content is read off embedding values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CompileError, ExecError, NrelError
from ..nra.operators import (difference_content, decode_content, encode_content, group_ids, join_content,
                             rename_attrs, select_content, union_content)
from ..nra.termgraph import LogicalPlan
from ..relmodel import Database, EmbeddedRelation
from ..tensor import ParameterStore, Tensor, concat_cols, concat_rows, index_select, scatter_reduce, slice_cols

CONTENT_OPS = {"scan", "merge", "filter_mask", "groupby", "anti_join", "relabel", "encode", "decode"}


@dataclass(frozen=True)
class Instr:
    op: str
    node: int
    dst: str
    src: tuple[str, ...] = ()
    arg: object = None

    def __str__(self) -> str:
        extra = f" [{self.arg}]" if isinstance(self.arg, (str, int)) else ""
        return f"{self.dst} = {self.op}{extra}({', '.join(self.src)})"


@dataclass
class PhysicalPlan:
    logical: LogicalPlan
    instrs: list[Instr]
    dynamic: set[int] = field(default_factory=set)

    @property
    def ops(self) -> list[str]:
        return [i.op for i in self.instrs]

    def dump(self) -> str:
        return "\n".join(str(i) for i in self.instrs)


def compile_physical(plan: LogicalPlan) -> PhysicalPlan:
    """Expand each plan node, in topological order, into its instruction sequence.

    Registers: ``c<n>`` content (attrs, rows), ``e<n>`` embedding tensor,
    ``i<n>``/``g<n>`` index vectors, ``t<n>.*`` temporaries.
    """
    out: list[Instr] = []
    graph = plan.graph
    for node in plan.nodes():
        n = node.id
        ch = node.children
        if node.op == "leaf":
            out.append(Instr("scan", n, f"c{n}", (), node.relation))
        elif node.op == "join":
            a, b = ch
            out.append(Instr("merge", n, f"i{n}", (f"c{a}", f"c{b}")))
            out.append(Instr("gather", n, f"t{n}.l", (f"e{a}", f"i{n}.left")))
            out.append(Instr("gather", n, f"t{n}.r", (f"e{b}", f"i{n}.right")))
            out.append(Instr("concat", n, f"e{n}", (f"t{n}.l", f"t{n}.r")))
        elif node.op == "select":
            out.append(Instr("filter_mask", n, f"i{n}", (f"c{ch[0]}",), node.preds))
            out.append(Instr("gather", n, f"e{n}", (f"e{ch[0]}", f"i{n}")))
        elif node.op == "union":
            src = f"e{ch[0]}"
            if len(ch) > 1:
                src = f"t{n}.stack"
                out.append(Instr("concat_rows", n, src, tuple(f"e{c}" for c in ch)))
            out.append(Instr("groupby", n, f"g{n}", tuple(f"c{c}" for c in ch), node.attrs))
            out.append(Instr(f"scatter_{node.agg}", n, f"e{n}", (src, f"g{n}")))
        elif node.op == "transform":
            src = (f"e{ch[0]}",)
            if node.tau.group_attrs is not None:
                out.append(Instr("groupby", n, f"g{n}", (f"c{ch[0]}",), ("softmax", node.tau.group_attrs)))
                src += (f"g{n}",)
            out.append(Instr("layer", n, f"e{n}", src, node.tau))
        elif node.op == "difference":
            a, b = ch
            out.append(Instr("anti_join", n, f"i{n}", (f"c{a}", f"c{b}")))
            out.append(Instr("gather", n, f"e{n}", (f"e{a}", f"i{n}")))
        elif node.op == "rename":
            out.append(Instr("relabel", n, f"c{n}", (f"c{ch[0]}",), dict(node.mapping)))
        elif node.op == "encode":
            out.append(Instr("encode", n, f"t{n}.enc", (f"c{ch[0]}",), node.items))
            out.append(Instr("concat", n, f"e{n}", (f"e{ch[0]}", f"t{n}.enc")))
        elif node.op == "decode":
            out.append(Instr("decode", n, f"c{n}", (f"c{ch[0]}", f"e{ch[0]}"), node.slice))
        else:
            raise CompileError(f"no physical translation for {node.op!r} (node n{n})")
    return PhysicalPlan(plan, out, graph.dynamic_nodes() & set(plan.node_ids))


def unit_relation() -> EmbeddedRelation:
    """One empty tuple with a zero-width embedding: the body of a fact."""
    return EmbeddedRelation((), ((),), Tensor(np.zeros((1, 0))), name="Unit()")


class Executor:
    """Runs a physical plan; keeps content results of parameter-independent nodes."""

    def __init__(self, phys: PhysicalPlan, db: Database, cache_content: bool = True):
        self.phys = phys
        self.db = db
        self.cache_content = cache_content
        self._cache: dict[int, dict] = {}
        self.content_runs = 0  # how many content instructions actually ran

    def evaluate(self, store: ParameterStore) -> EmbeddedRelation:
        plan = self.phys.logical
        graph = plan.graph
        regs: dict[str, object] = {}
        last = {ins.node: i for i, ins in enumerate(self.phys.instrs)}
        for i, ins in enumerate(self.phys.instrs):
            if i in self._cache:
                regs.update(self._cache[i])
            else:
                before = set(regs)
                try:
                    self._run(ins, regs, store, graph)
                except NrelError as exc:
                    raise ExecError(f"node n{ins.node} ({graph[ins.node].op}, {ins.op}): {exc}") from None
                except (ValueError, IndexError) as exc:
                    raise ExecError(f"node n{ins.node} ({ins.op}): {exc}") from None
                if (self.cache_content and ins.op in CONTENT_OPS and ins.op != "scan"
                        and ins.node not in self.phys.dynamic):
                    self._cache[i] = {k: regs[k] for k in set(regs) - before}
            if last[ins.node] == i:
                # rename and decode pass the embedding through; select, layer
                # and difference keep their input's content unless they set it
                n, node = ins.node, graph[ins.node]
                if node.children:
                    regs.setdefault(f"e{n}", regs.get(f"e{node.children[0]}"))
                    regs.setdefault(f"c{n}", regs.get(f"c{node.children[0]}"))
        root = plan.root
        attrs, rows = regs[f"c{root}"]
        return EmbeddedRelation(attrs, rows, regs[f"e{root}"], name=plan.target)

    # -- instruction semantics ----------------------------------------------

    def _run(self, ins: Instr, regs: dict, store: ParameterStore, graph) -> None:
        op, n = ins.op, ins.node
        node = graph[n]
        if op == "scan":
            rel = self._leaf(ins.arg, node)
            regs[f"c{n}"] = (node.attrs, rel.rows)
            regs[f"e{n}"] = rel.embedding(store)
        elif op == "merge":
            (la, lr), (ra, rr) = regs[ins.src[0]], regs[ins.src[1]]
            ix = join_content(la, lr, ra, rr)
            self.content_runs += 1
            regs[ins.dst] = ix
            regs[f"{ins.dst}.left"], regs[f"{ins.dst}.right"] = ix.left, ix.right
            regs[f"c{n}"] = (ix.attrs, ix.rows)
        elif op == "gather":
            src, idx = regs[ins.src[0]], regs[ins.src[1]]
            regs[ins.dst] = index_select(src, idx)
        elif op == "concat":
            a, b = regs[ins.src[0]], regs[ins.src[1]]
            regs[ins.dst] = b if a.shape[1] == 0 else a if b.shape[1] == 0 else concat_cols(a, b)
        elif op == "filter_mask":
            attrs, rows = regs[ins.src[0]]
            keep = select_content(attrs, rows, ins.arg)
            self.content_runs += 1
            regs[ins.dst] = keep
            regs[f"c{n}"] = (attrs, tuple(rows[i] for i in keep))
        elif op == "concat_rows":
            regs[ins.dst] = concat_rows(*(regs[s] for s in ins.src))
        elif op == "groupby":
            self.content_runs += 1
            if isinstance(ins.arg, tuple) and ins.arg and ins.arg[0] == "softmax":
                attrs, rows = regs[ins.src[0]]
                regs[ins.dst] = group_ids(attrs, rows, ins.arg[1])
            else:
                gi = union_content([regs[s] for s in ins.src], ins.arg)
                regs[ins.dst] = gi
                regs[f"c{n}"] = (gi.attrs, gi.rows)
        elif op.startswith("scatter_"):
            src, gi = regs[ins.src[0]], regs[ins.src[1]]
            regs[ins.dst] = scatter_reduce(src, gi.group, gi.n_groups, op[len("scatter_"):])
        elif op == "layer":
            emb = regs[ins.src[0]]
            groups = regs[ins.src[1]] if len(ins.src) > 1 else None
            regs[ins.dst] = ins.arg.apply(emb, store, groups)
        elif op == "anti_join":
            (la, lr), (ra, rr) = regs[ins.src[0]], regs[ins.src[1]]
            keep = difference_content(la, lr, ra, rr)
            self.content_runs += 1
            regs[ins.dst] = keep
            regs[f"c{n}"] = (la, tuple(lr[i] for i in keep))
        elif op == "relabel":
            attrs, rows = regs[ins.src[0]]
            regs[ins.dst] = (rename_attrs(attrs, ins.arg), rows)
        elif op == "encode":
            attrs, rows = regs[ins.src[0]]
            self.content_runs += 1
            regs[ins.dst] = Tensor(encode_content(attrs, rows, ins.arg))
        elif op == "decode":
            (attrs, rows), emb = regs[ins.src[0]], regs[ins.src[1]]
            start, stop = ins.arg
            values = slice_cols(emb, start, stop).data
            regs[ins.dst] = (attrs + node.names, decode_content(rows, values))
        else:
            raise ExecError(f"unknown instruction {op!r}")

    def _leaf(self, name: str, node) -> EmbeddedRelation:
        if name == "Unit()" and name not in self.db:
            return unit_relation()
        if name not in self.db:
            raise ExecError(f"relation {name!r} is not in the database")
        rel = self.db[name]
        if rel.attrs != node.attrs or rel.d != node.dim:
            raise ExecError(f"relation {name!r} has schema ({', '.join(rel.attrs)}; d={rel.d}), "
                            f"plan expects ({', '.join(node.attrs)}; d={node.dim})")
        return rel


def evaluate(plan: LogicalPlan, db: Database, store: ParameterStore) -> EmbeddedRelation:
    """One-shot evaluation of a logical plan."""
    return Executor(compile_physical(plan), db, cache_content=False).evaluate(store)
