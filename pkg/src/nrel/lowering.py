"""Lower flat rules into a term graph and allocate their parameters.

Join rules become a left-deep join chain in body order, then a selection for
the filters, then a transformation for the head expression, then a projected
union onto the head variables.  Union rules project first and filter and
transform afterwards.

Parameter keys are ``(name, template_args)`` pairs:

* a parameterized alias ``A<args> = Linear(...)`` owns ``("A", args)``; a
  second layer inside the same alias gets ``("A#1", args)`` and so on;
* a layer literal written inside a rule head gets ``("Head#k", args)`` where
  ``Head<args>`` is the rule's head and ``k`` counts literals in the head
  expression, callee before arguments, left to right.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from .errors import LowerError, NrelError, SchemaError, ShapeError
from .frontend import ast as A
from .frontend.expand import canon, literal_value
from .nra import exprs as X
from .nra.operators import EncodeItem
from .nra.predicates import Arith, Comparison, Lit, Var
from .nra.termgraph import TermGraph
from .tensor import Key, ParameterStore

UNIT = "Unit()"  # leaf feeding bodiless facts: one empty tuple, width 0
DEFAULT_AGG = "mean"

ACTIVATION_NAMES = {"ReLU": "relu", "Sigmoid": "sigmoid", "GELU": "gelu", "Tanh": "tanh"}
BUILTINS = {"Linear", "Parameter", "Concat", "CrossEntropyLoss", "sqrt", "Softmax", *ACTIVATION_NAMES}


def _where(node) -> str:
    pos = getattr(node, "pos", (0, 0))
    return f" (line {pos[0]}, column {pos[1]})" if pos and pos[0] else ""


def targs_values(targs) -> tuple:
    return () if targs is None else tuple(literal_value(a) for a in targs)


@dataclass(frozen=True)
class Layer:
    """A callable alias value such as ``Linear(2, 3)`` or ``ReLU(Linear(2, 3))``."""

    arity: int
    fn: Callable
    label: str

    def __call__(self, args, where=None):
        if len(args) != self.arity:
            raise LowerError(f"{self.label} takes {self.arity} argument(s), got {len(args)}{_where(where)}")
        for a in args:
            if not isinstance(a, X.TExpr):
                raise LowerError(f"{self.label} applied to a non-tensor argument{_where(where)}")
        return self.fn(list(args))


@dataclass
class Action:
    kind: str  # "fit" or "pred"
    target: str
    kwargs: dict = field(default_factory=dict)
    pos: tuple = (0, 0)


@dataclass
class LoweredProgram:
    graph: TermGraph
    store: ParameterStore
    actions: list[Action]
    statements: list  # the flat statements that were lowered
    aliases: dict[str, object]

    def plan(self, target: str):
        return self.graph.extract_plan(target)


class _KeyGen:
    """Hands out parameter keys for the layer literals of one alias or rule head."""

    def __init__(self, base: str, args: tuple, own_first: bool):
        self.base, self.args, self.k = base, args, 0
        self.own_first = own_first

    def next(self) -> Key:
        k = self.k
        self.k += 1
        if self.own_first:
            name = self.base if k == 0 else f"{self.base}#{k}"
        else:
            name = f"{self.base}#{k}"
        return (name, self.args)


def _as_int(v, what: str, where) -> int:
    if isinstance(v, Fraction) and v.denominator == 1:
        v = int(v)
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise LowerError(f"{what} must be a positive integer, got {v}{_where(where)}")
    return v


def _is_scalar(v) -> bool:
    return isinstance(v, (Fraction, float, int)) and not isinstance(v, bool)


class Lowerer:
    def __init__(self, schema: Mapping[str, tuple[tuple[str, ...], int]], store: ParameterStore | None = None,
                 vocabs: Mapping[tuple[str, str], tuple] | None = None):
        """``schema`` maps database relation names to ``(attrs, dim)``."""
        self.schema = dict(schema)
        self.store = store if store is not None else ParameterStore()
        self.vocabs = dict(vocabs or {})
        self.graph = TermGraph()
        self.aliases: dict[str, object] = {}
        self.actions: list[Action] = []
        self.fresh = 0

    # -- statements ----------------------------------------------------------

    def lower(self, stmts) -> LoweredProgram:
        for s in stmts:
            try:
                self.statement(s)
            except (ShapeError, SchemaError) as exc:
                raise LowerError(f"{exc}{_where(s)}") from None
        return LoweredProgram(self.graph, self.store, self.actions, list(stmts), self.aliases)

    def statement(self, s) -> None:
        if isinstance(s, A.Alias):
            name = canon(s.name, s.targs)
            if name in self.aliases:
                raise LowerError(f"alias {name!r} is already defined{_where(s)}")
            keys = _KeyGen(s.name, targs_values(s.targs), own_first=True)
            self.aliases[name] = self.value(s.expr, {}, keys, {})
        elif isinstance(s, A.Rule):
            self.rule(s)
        elif isinstance(s, (A.Fit, A.Pred)):
            target = canon(s.target.name, s.target.targs)
            self.relation(target, s.target)
            if isinstance(s, A.Fit):
                kwargs = {}
                for k, v in s.kwargs:
                    lit = literal_value(v)
                    if lit is None:
                        try:
                            lit = self._scalar(self.value(v, {}, None, {}), v)
                        except LowerError:
                            raise LowerError(f"fit argument {k!r} is not a constant{_where(v)}") from None
                    kwargs[k] = lit
                self.actions.append(Action("fit", target, kwargs, s.pos))
            else:
                self.actions.append(Action("pred", target, {}, s.pos))
        elif isinstance(s, A.FuncDef):
            raise LowerError(f"function definitions must be inlined before lowering{_where(s)}")
        else:
            raise TypeError(s)

    def _scalar(self, v, where):
        if not _is_scalar(v):
            raise LowerError(f"expected a constant{_where(where)}")
        if isinstance(v, Fraction):
            return int(v) if v.denominator == 1 else float(v)
        return v

    # -- relations -----------------------------------------------------------

    def relation(self, name: str, where=None) -> int:
        if name in self.graph.names:
            return self.graph.names[name]
        if name in self.schema:
            attrs, dim = self.schema[name]
            nid = self.graph.leaf(name, attrs, dim)
            self.graph.bind(name, nid)
            return nid
        raise LowerError(f"undefined relation {name!r}; relations must be defined before use{_where(where)}")

    def _fresh(self, stem: str) -> str:
        self.fresh += 1
        return f"{stem}~{self.fresh}"

    def atom(self, a: A.Atom) -> tuple[int, dict]:
        """Node for one body atom with attributes renamed to its variables.

        Returns the node id and ``{var: (relation, attribute)}`` for the
        named content variables.
        """
        if a.call_args is not None:
            if a.rel.name != "Softmax" or a.rel.targs is not None or len(a.call_args) != 1:
                raise LowerError(f"unexpected call atom {a.rel.name}(...){_where(a)}")
            inner = a.call_args[0]
            rel_name = canon(inner.name, inner.targs)
        else:
            rel_name = canon(a.rel.name, a.rel.targs)
        nid = self.relation(rel_name, a)
        node = self.graph[nid]
        if len(a.content) != node.k:
            raise LowerError(f"{rel_name} has {node.k} content attributes, atom gives {len(a.content)}{_where(a)}")
        mapping, preds, seen, origin = {}, [], set(), {}
        for attr, slot in zip(node.attrs, a.content):
            if isinstance(slot, str) and slot != A.WILDCARD:
                if slot in seen:
                    var = self._fresh(slot)
                    preds.append(Comparison("=", Var(slot), Var(var)))
                else:
                    var = slot
                    seen.add(slot)
                    origin[slot] = (rel_name, attr)
            elif slot == A.WILDCARD:
                var = self._fresh("_")
            else:
                var = self._fresh("#c")
                preds.append(Comparison("=", Var(var), Lit(literal_value(slot))))
            mapping[attr] = var
        if any(k != v for k, v in mapping.items()):
            nid = self.graph.rename(nid, mapping)
        if a.call_args is not None:
            # normalize over the whole relation before any constant is bound
            attrs = self.graph[nid].attrs
            dim = self.graph[nid].dim
            if dim == 0:
                raise LowerError(f"Softmax over {rel_name}, which has no embedding{_where(a)}")
            tau = X.Transformation(X.GroupedSoftmax(X.Input(0, dim, a.emb or "z"), tuple(attrs[1:])), dim)
            nid = self.graph.transform(nid, tau)
        if preds:
            nid = self.graph.select(nid, preds)
        return nid, origin

    # -- rules ---------------------------------------------------------------

    def rule(self, r: A.Rule) -> int:
        name = canon(r.head.rel.name, r.head.rel.targs)
        if name in self.graph.names or name in self.schema:
            raise LowerError(f"relation {name!r} is already defined; use a union rule to combine derivations"
                             f"{_where(r)}")
        if r.head.agg is not None and r.head.agg not in A.AGGREGATORS:
            raise LowerError(f"unknown aggregator {r.head.agg!r}{_where(r)}")
        keys = _KeyGen(r.head.rel.name, targs_values(r.head.rel.targs), own_first=False)
        nid = self.union_rule(r, keys) if r.union else self.join_rule(r, keys)
        self.graph.bind(name, nid)
        return nid

    def join_rule(self, r: A.Rule, keys: _KeyGen) -> int:
        embs: dict[str, tuple[int, int]] = {}
        origin: dict[str, tuple[str, str]] = {}
        node = None
        width = 0
        if not r.atoms:
            node = self.relation(UNIT) if UNIT in self.graph.names else self._unit()
        for a in r.atoms:
            nid, orig = self.atom(a)
            for v, o in orig.items():
                origin.setdefault(v, o)
            d = self.graph[nid].dim
            if a.emb not in (None, A.WILDCARD):
                if a.emb in embs:
                    raise LowerError(f"embedding variable {a.emb!r} bound twice{_where(a)}")
                embs[a.emb] = (width, d)
            width += d
            node = nid if node is None else self.graph.join(node, nid)
        attrs = self.graph[node].attrs
        if r.filters:
            node = self.graph.select(node, [self.predicate(c, attrs) for c in r.filters])
        head_attrs = []
        for c in r.head.content:
            if isinstance(c, str):
                head_attrs.append(c)
                continue
            for v in c.vars:
                if v not in embs:
                    raise LowerError(f"decoded variable {v!r} is not a body embedding variable{_where(c)}")
                start, w = embs[v]
                names = (v,) if w == 1 else tuple(f"{v}_{j}" for j in range(w))
                node = self.graph.decode(node, start, start + w, names)
                head_attrs.extend(names)
        node = self._transform(r, node, embs, origin, keys)
        missing = [v for v in head_attrs if v not in self.graph[node].attrs]
        if missing:
            raise LowerError(f"head variables {missing} are not bound by the body{_where(r)}")
        return self.graph.union([node], head_attrs, r.head.agg or DEFAULT_AGG)

    def _unit(self) -> int:
        nid = self.graph.leaf(UNIT, (), 0)
        self.graph.bind(UNIT, nid)
        return nid

    def union_rule(self, r: A.Rule, keys: _KeyGen) -> int:
        head_attrs = list(r.head.content)
        if any(not isinstance(c, str) for c in head_attrs):
            raise LowerError(f"decoding brackets are not supported in union rules{_where(r)}")
        inputs, origin = [], {}
        emb_names = {a.emb for a in r.atoms}
        if len(emb_names) != 1:
            raise LowerError(f"union alternatives must share one embedding variable, got {sorted(map(str, emb_names))}"
                             f"{_where(r)}")
        var_sets = []
        for a in r.atoms:
            nid, orig = self.atom(a)
            for v, o in orig.items():
                origin.setdefault(v, o)
            inputs.append(nid)
            var_sets.append({v for v in a.content if isinstance(v, str) and v != A.WILDCARD})
        if any(vs != var_sets[0] for vs in var_sets):
            raise LowerError(f"union alternatives bind different variables{_where(r)}")
        dims = {self.graph[i].dim for i in inputs}
        if len(dims) != 1:
            raise LowerError(f"union alternatives have embedding widths {sorted(dims)}{_where(r)}")
        missing = [v for v in head_attrs if v not in var_sets[0]]
        if missing:
            raise LowerError(f"head variables {missing} are not bound by the alternatives{_where(r)}")
        node = self.graph.union(inputs, head_attrs, r.head.agg or DEFAULT_AGG)
        if r.filters:
            node = self.graph.select(node, [self.predicate(c, head_attrs) for c in r.filters])
        z = emb_names.pop()
        embs = {} if z in (None, A.WILDCARD) else {z: (0, dims.pop())}
        return self._transform(r, node, embs, origin, keys)

    def _transform(self, r: A.Rule, node: int, embs, origin, keys: _KeyGen) -> int:
        head = r.head
        in_width = self.graph[node].dim
        if head.tau is None:
            tau = X.Transformation(X.Input(0, 0, "()"), in_width)
            return node if tau.is_identity() else self.graph.transform(node, tau)
        brackets: list[A.Bracket] = [e for e in _walk(head.tau) if isinstance(e, A.Bracket)]
        bracket_inputs: dict[int, X.TExpr] = {}
        if brackets:
            attrs = self.graph[node].attrs
            items: list[EncodeItem] = []
            col = in_width
            for b in brackets:
                parts = []
                for it in b.items:
                    if not (isinstance(it, A.Name) and it.targs is None):
                        raise LowerError(f"only content attributes can be encoded; rich-type encoders are not "
                                         f"supported{_where(it)}")
                    if it.id not in attrs:
                        raise LowerError(f"encoded attribute {it.id!r} is not a body content variable{_where(it)}")
                    vocab = self.vocabs.get(origin.get(it.id, ("", "")))
                    item = EncodeItem(it.id, tuple(vocab) if vocab is not None else None)
                    items.append(item)
                    parts.append(X.Input(col, item.width, f"[{it.id}]"))
                    col += item.width
                bracket_inputs[id(b)] = parts[0] if len(parts) == 1 else X.Concat(tuple(parts))
            node = self.graph.encode(node, items)
            in_width = self.graph[node].dim
        env = {v: X.Input(s, w, v) for v, (s, w) in embs.items()}
        try:
            out = self.value(head.tau, env, keys, bracket_inputs)
        except ShapeError as exc:
            raise LowerError(f"{exc}{_where(r)}") from None
        if isinstance(out, Layer):
            raise LowerError(f"{out.label} is a layer; apply it to an embedding{_where(head)}")
        if _is_scalar(out):
            out = X.Const(float(out))
        try:
            tau = X.Transformation(out, in_width)
        except ShapeError as exc:
            raise LowerError(f"{exc}{_where(r)}") from None
        if tau.is_identity():
            return node
        return self.graph.transform(node, tau)

    # -- filters -------------------------------------------------------------

    def predicate(self, c: A.Comparison, attrs) -> Comparison:
        return Comparison(c.op, self._term(c.lhs, attrs), self._term(c.rhs, attrs))

    def _term(self, e, attrs):
        if isinstance(e, (A.Num, A.Str)):
            return Lit(e.value)
        if isinstance(e, A.Name) and e.targs is None:
            if e.id in attrs:
                return Var(e.id)
            if e.id in self.aliases and _is_scalar(self.aliases[e.id]):
                return Lit(self._scalar(self.aliases[e.id], e))
            raise LowerError(f"filter variable {e.id!r} is not bound by the body{_where(e)}")
        if isinstance(e, A.BinOp) and e.op in "+-*/%":
            return Arith(e.op, self._term(e.a, attrs), self._term(e.b, attrs))
        if isinstance(e, A.Neg):
            return Arith("-", Lit(0), self._term(e.a, attrs))
        raise LowerError(f"unsupported filter term{_where(e)}")

    # -- expressions ---------------------------------------------------------

    def value(self, e, env: Mapping[str, X.TExpr], keys: _KeyGen | None, brackets):
        """Compile an alias or head expression to a scalar, a TExpr or a Layer."""
        if isinstance(e, A.Num):
            return Fraction(e.value) if isinstance(e.value, int) else float(e.value)
        if isinstance(e, A.Str):
            raise LowerError(f"string {e.value!r} in an expression{_where(e)}")
        if isinstance(e, A.Name):
            name = canon(e.id, e.targs)
            if e.targs is None and e.id in env:
                return env[e.id]
            if name in self.aliases:
                return self.aliases[name]
            if e.targs is None and e.id in ACTIVATION_NAMES:
                fn = ACTIVATION_NAMES[e.id]
                return Layer(1, lambda xs, fn=fn: X.Act(fn, xs[0]), e.id)
            raise LowerError(f"unknown name {name!r}{_where(e)}")
        if isinstance(e, A.Call):
            return self._call(e, env, keys, brackets)
        if isinstance(e, A.BinOp):
            a = self.value(e.a, env, keys, brackets)
            b = self.value(e.b, env, keys, brackets)
            if isinstance(a, Layer) or isinstance(b, Layer):
                raise LowerError(f"operator '{e.op}' applied to a layer{_where(e)}")
            if _is_scalar(a) and _is_scalar(b):
                if e.op == "@":
                    raise LowerError(f"'@' between constants{_where(e)}")
                if e.op in "/%" and b == 0:
                    raise LowerError(f"division by zero{_where(e)}")
                return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: a / b,
                        "%": lambda: a % b}[e.op]()
            a = X.Const(float(a)) if _is_scalar(a) else a
            b = X.Const(float(b)) if _is_scalar(b) else b
            if e.op == "@":
                return X.MatMul(a, b)
            if e.op == "%":
                raise LowerError(f"'%' is only defined on constants{_where(e)}")
            return X.Binary(e.op, a, b)
        if isinstance(e, A.Neg):
            v = self.value(e.a, env, keys, brackets)
            if _is_scalar(v):
                return -v
            if isinstance(v, Layer):
                raise LowerError(f"negation of a layer{_where(e)}")
            return X.Binary("*", X.Const(-1.0), v)
        if isinstance(e, A.Transpose):
            v = self.value(e.a, env, keys, brackets)
            if not isinstance(v, X.TExpr):
                raise LowerError(f".T needs an embedding value{_where(e)}")
            return X.Transpose(v)
        if isinstance(e, A.Bracket):
            if id(e) not in brackets:
                raise LowerError(f"encoding brackets are only allowed in rule heads{_where(e)}")
            return brackets[id(e)]
        if isinstance(e, A.Splat):
            raise LowerError(f"unexpanded splat *{e.name}{_where(e)}")
        raise LowerError(f"unsupported expression {type(e).__name__}{_where(e)}")

    def _alloc(self, keys: _KeyGen | None, where) -> Key:
        if keys is None:
            raise LowerError(f"layers cannot appear here{_where(where)}")
        return keys.next()

    def _call(self, e: A.Call, env, keys, brackets):
        f = e.func
        builtin = (isinstance(f, A.Name) and f.targs is None and f.id in BUILTINS
                   and f.id not in env and f.id not in self.aliases)
        if builtin:
            name = f.id
            if name == "Linear":
                if len(e.args) != 2:
                    raise LowerError(f"Linear takes (in, out){_where(e)}")
                n_in = _as_int(self.value(e.args[0], env, None, brackets), "Linear input width", e)
                n_out = _as_int(self.value(e.args[1], env, None, brackets), "Linear output width", e)
                key = self._alloc(keys, e)
                self.store.get_or_create(key, (n_in + 1, n_out), "linear")
                return Layer(1, lambda xs: X.Linear(key, n_in, n_out, xs[0]), f"Linear({n_in},{n_out})")
            if name == "Parameter":
                if len(e.args) not in (1, 2):
                    raise LowerError(f"Parameter takes one or two sizes{_where(e)}")
                dims = [_as_int(self.value(a, env, None, brackets), "Parameter size", e) for a in e.args]
                shape = (1, dims[0]) if len(dims) == 1 else (dims[0], dims[1])
                key = self._alloc(keys, e)
                self.store.get_or_create(key, shape, "parameter")
                return X.Param(key, shape)
            if name in ACTIVATION_NAMES:
                if len(e.args) != 1:
                    raise LowerError(f"{name} takes one argument{_where(e)}")
                fn = ACTIVATION_NAMES[name]
                arg = self.value(e.args[0], env, keys, brackets)
                if isinstance(arg, Layer):
                    return Layer(arg.arity, lambda xs, inner=arg: X.Act(fn, inner(xs)), f"{name}({arg.label})")
                if not isinstance(arg, X.TExpr):
                    raise LowerError(f"{name} of a constant{_where(e)}")
                return X.Act(fn, arg)
            if name == "Concat":
                parts = [self.value(a, env, keys, brackets) for a in e.args]
                if not parts or any(not isinstance(p, X.TExpr) for p in parts):
                    raise LowerError(f"Concat takes embedding arguments{_where(e)}")
                return X.Concat(tuple(parts))
            if name == "CrossEntropyLoss":
                if e.args:
                    raise LowerError(f"CrossEntropyLoss() takes no configuration arguments{_where(e)}")
                return Layer(2, lambda xs: X.CrossEntropy(xs[0], xs[1]), "CrossEntropyLoss()")
            if name == "sqrt":
                if len(e.args) != 1:
                    raise LowerError(f"sqrt takes one argument{_where(e)}")
                v = self.value(e.args[0], env, keys, brackets)
                if not _is_scalar(v) or v < 0:
                    raise LowerError(f"sqrt needs a non-negative constant{_where(e)}")
                return float(v) ** 0.5
            raise LowerError(f"{name} cannot be used inside an expression{_where(e)}")
        if isinstance(f, A.Name) and f.targs is None and f.id in A.AGGREGATORS:
            raise LowerError(f"aggregator {f.id} must wrap the whole head expression{_where(e)}")
        callee = self.value(f, env, keys, brackets)
        if not isinstance(callee, Layer):
            raise LowerError(f"{_label(f)} is not callable{_where(e)}")
        args = [self.value(a, env, keys, brackets) for a in e.args]
        return callee(args, e)


def _label(e) -> str:
    if isinstance(e, A.Name):
        return canon(e.id, e.targs)
    return type(e).__name__


def _walk(e):
    yield e
    if isinstance(e, A.Call):
        yield from _walk(e.func)
        for a in e.args:
            yield from _walk(a)
    elif isinstance(e, A.BinOp):
        yield from _walk(e.a)
        yield from _walk(e.b)
    elif isinstance(e, (A.Neg, A.Transpose)):
        yield from _walk(e.a)
    elif isinstance(e, A.Bracket):
        for i in e.items:
            yield from _walk(i)


def lower(stmts, schema, store: ParameterStore | None = None, vocabs=None) -> LoweredProgram:
    """Lower flat statements against database ``schema`` ({name: (attrs, dim)})."""
    try:
        return Lowerer(schema, store, vocabs).lower(stmts)
    except LowerError:
        raise
    except NrelError as exc:
        raise LowerError(str(exc)) from None
