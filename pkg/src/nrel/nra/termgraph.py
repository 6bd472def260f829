"""Term graph: a DAG of NRA operators over named leaf relations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..errors import SchemaError
from .exprs import Transformation
from .operators import AGG_KINDS, EncodeItem, rename_attrs


@dataclass(eq=False)
class TGNode:
    id: int
    op: str
    children: tuple[int, ...]
    attrs: tuple[str, ...]
    dim: int
    # op-specific payload
    relation: str | None = None  # leaf
    agg: str | None = None  # union
    tau: Transformation | None = None  # transform
    preds: tuple = ()  # select
    mapping: tuple[tuple[str, str], ...] = ()  # rename
    items: tuple[EncodeItem, ...] = ()  # encode
    slice: tuple[int, int] | None = None  # decode
    names: tuple[str, ...] = ()  # decode
    defines: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.attrs)

    def detail(self) -> str:
        if self.op == "leaf":
            return self.relation or ""
        if self.op == "union":
            return f"{self.agg} by ({','.join(self.attrs)})"
        if self.op == "transform":
            return self.tau.describe()
        if self.op == "select":
            return ", ".join(str(p) for p in self.preds)
        if self.op == "rename":
            return ", ".join(f"{a}->{b}" for a, b in self.mapping)
        if self.op == "encode":
            return ", ".join(f"{it.attr}" + (f"/{len(it.vocab)}" if it.vocab else "") for it in self.items)
        if self.op == "decode":
            return f"emb[{self.slice[0]}:{self.slice[1]}] as {','.join(self.names)}"
        return ""


class TermGraph:
    """Append-only DAG.  Node ids follow creation order, which is topological."""

    def __init__(self) -> None:
        self.nodes: list[TGNode] = []
        self.names: dict[str, int] = {}
        self._leaves: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, nid: int) -> TGNode:
        return self.nodes[nid]

    def _add(self, op: str, children: Sequence[int], attrs, dim: int, **payload) -> int:
        for c in children:
            if not 0 <= c < len(self.nodes):
                raise SchemaError(f"unknown child node n{c}")
        node = TGNode(len(self.nodes), op, tuple(children), tuple(attrs), int(dim), **payload)
        self.nodes.append(node)
        return node.id

    # -- constructors with static schema derivation -------------------------

    def leaf(self, name: str, attrs: Sequence[str], dim: int) -> int:
        if name in self._leaves:
            node = self.nodes[self._leaves[name]]
            if node.attrs != tuple(attrs) or node.dim != dim:
                raise SchemaError(f"leaf {name!r} declared with two schemas")
            return node.id
        nid = self._add("leaf", (), attrs, dim, relation=name)
        self._leaves[name] = nid
        return nid

    def join(self, left: int, right: int) -> int:
        l, r = self.nodes[left], self.nodes[right]
        attrs = l.attrs + tuple(a for a in r.attrs if a not in l.attrs)
        return self._add("join", (left, right), attrs, l.dim + r.dim)

    def union(self, inputs: Sequence[int], attrs: Sequence[str], agg: str) -> int:
        if agg not in AGG_KINDS:
            raise SchemaError(f"unknown aggregator {agg!r}")
        if not inputs:
            raise SchemaError("projected union of no inputs")
        dims = {self.nodes[i].dim for i in inputs}
        if len(dims) != 1:
            raise SchemaError(f"projected union over embedding widths {sorted(dims)}")
        for i in inputs:
            missing = [a for a in attrs if a not in self.nodes[i].attrs]
            if missing:
                raise SchemaError(f"projection attributes {missing} missing from n{i} {self.nodes[i].attrs}")
        if len(set(attrs)) != len(attrs):
            raise SchemaError(f"repeated projection attribute in {tuple(attrs)}")
        return self._add("union", tuple(inputs), attrs, dims.pop(), agg=agg)

    def transform(self, child: int, tau: Transformation) -> int:
        c = self.nodes[child]
        if tau.in_width != c.dim:
            raise SchemaError(f"transformation expects width {tau.in_width}, input n{child} has {c.dim}")
        if tau.group_attrs is not None:
            missing = [a for a in tau.group_attrs if a not in c.attrs]
            if missing:
                raise SchemaError(f"softmax grouping attributes {missing} missing from {c.attrs}")
        return self._add("transform", (child,), c.attrs, tau.out_width, tau=tau)

    def select(self, child: int, preds) -> int:
        c = self.nodes[child]
        for p in preds:
            missing = p.variables() - set(c.attrs)
            if missing:
                raise SchemaError(f"filter {p} references unknown attributes {sorted(missing)}")
        return self._add("select", (child,), c.attrs, c.dim, preds=tuple(preds))

    def difference(self, left: int, right: int) -> int:
        l, r = self.nodes[left], self.nodes[right]
        if sorted(l.attrs) != sorted(r.attrs):
            raise SchemaError(f"difference over different schemas {l.attrs} and {r.attrs}")
        return self._add("difference", (left, right), l.attrs, l.dim)

    def rename(self, child: int, mapping: Mapping[str, str]) -> int:
        c = self.nodes[child]
        attrs = rename_attrs(c.attrs, mapping)
        pairs = tuple((a, b) for a, b in mapping.items() if a != b)
        return self._add("rename", (child,), attrs, c.dim, mapping=pairs)

    def encode(self, child: int, items: Sequence[EncodeItem]) -> int:
        c = self.nodes[child]
        for it in items:
            if it.attr not in c.attrs:
                raise SchemaError(f"encode of unknown attribute {it.attr!r}")
        width = sum(it.width for it in items)
        return self._add("encode", (child,), c.attrs, c.dim + width, items=tuple(items))

    def decode(self, child: int, start: int, stop: int, names: Sequence[str]) -> int:
        c = self.nodes[child]
        if not (0 <= start < stop <= c.dim):
            raise SchemaError(f"decode slice [{start}:{stop}) out of range for width {c.dim}")
        if len(names) != stop - start or any(n in c.attrs for n in names):
            raise SchemaError(f"bad decoded attribute names {tuple(names)}")
        return self._add("decode", (child,), c.attrs + tuple(names), c.dim, slice=(start, stop), names=tuple(names))

    # -- naming and plans ----------------------------------------------------

    def bind(self, name: str, nid: int) -> None:
        if name in self.names:
            raise SchemaError(f"relation {name!r} is already defined")
        self.names[name] = nid
        self.nodes[nid].defines.append(name)

    def node_for(self, name: str) -> int:
        try:
            return self.names[name]
        except KeyError:
            raise SchemaError(f"undefined relation {name!r}") from None

    def extract_plan(self, target: str) -> "LogicalPlan":
        root = self.node_for(target)
        seen: set[int] = set()
        stack = [root]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self.nodes[n].children)
        return LogicalPlan(self, target, root, tuple(sorted(seen)))

    def dynamic_nodes(self) -> set[int]:
        """Nodes whose content depends on embedding values (downstream of a decode)."""
        dyn: set[int] = set()
        for n in self.nodes:
            if n.op == "decode" or any(c in dyn for c in n.children):
                dyn.add(n.id)
        return dyn


@dataclass(frozen=True)
class LogicalPlan:
    graph: TermGraph
    target: str
    root: int
    node_ids: tuple[int, ...]  # ascending = topological

    def nodes(self) -> list[TGNode]:
        return [self.graph[i] for i in self.node_ids]

    def out_degree(self, nid: int) -> int:
        return sum(self.graph[j].children.count(nid) for j in self.node_ids)

    def leaves(self) -> list[str]:
        return [n.relation for n in self.nodes() if n.op == "leaf"]

    def params(self) -> list:
        out = []
        for n in self.nodes():
            if n.tau is not None:
                for p in n.tau.params():
                    if p not in out:
                        out.append(p)
        return out

    def dump(self) -> str:
        lines = [f"plan {self.target}: {len(self.node_ids)} nodes, root n{self.root}"]
        for n in self.nodes():
            kids = ", ".join(f"n{c}" for c in n.children)
            head = f"  n{n.id} = {n.op}"
            if n.detail():
                head += f"[{n.detail()}]"
            head += f"({kids})"
            schema = f"({','.join(n.attrs)}; d={n.dim})"
            tag = f"  => {', '.join(n.defines)}" if n.defines else ""
            lines.append(f"{head} :: {schema}{tag}")
        return "\n".join(lines) + "\n"
