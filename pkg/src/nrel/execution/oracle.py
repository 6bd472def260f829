"""Naive reference evaluator used to cross-check the compiled engine.

It works straight from flat statements: nested-loop matching of body atoms
with backtracking, explicit multiset aggregation in dictionaries, and plain
numpy arithmetic on one tuple at a time.  It shares no code with lowering or
the physical executor beyond naming helpers, the parameter store and the
database; parameter keys follow the same scheme so both read the same values.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass

import numpy as np

from ..errors import ExecError
from ..frontend import ast as A
from ..frontend.expand import canon, literal_value
from ..relmodel import Database
from ..tensor import ParameterStore


@dataclass
class Rel:
    attrs: tuple
    data: dict  # content tuple -> 1-D float array
    d: int


_CMP = {"=": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le, ">": operator.gt,
        ">=": operator.ge}

_ACTS = {
    "ReLU": lambda x: np.maximum(x, 0.0),
    "Sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "Tanh": np.tanh,
    "GELU": lambda x: 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0))),
}


class _Layer:
    def __init__(self, arity, fn):
        self.arity, self.fn = arity, fn


class _Keys:
    def __init__(self, base, args, own_first):
        self.base, self.args, self.own_first, self.k = base, args, own_first, 0

    def next(self):
        k = self.k
        self.k += 1
        if self.own_first and k == 0:
            return (self.base, self.args)
        return (f"{self.base}#{k}", self.args)


def _targs(targs):
    return () if targs is None else tuple(literal_value(a) for a in targs)


def _row_sort_key(row):
    rank = {int: 0, float: 1, bool: 2, str: 3}
    return tuple((rank[type(v)] if type(v) in rank else 0, v) for v in row)


class Oracle:
    def __init__(self, stmts, db: Database, store: ParameterStore, vocabs=None):
        self.stmts = list(stmts)
        self.db = db
        self.store = store
        self.vocabs = dict(vocabs or {})

    # -- whole-program evaluation -------------------------------------------

    def run(self) -> dict[str, Rel]:
        self.rels: dict[str, Rel] = {}
        for name, rel in self.db.relations.items():
            emb = rel.embedding(self.store).data
            self.rels[name] = Rel(rel.attrs, {r: emb[i].copy() for i, r in enumerate(rel.rows)}, rel.d)
        self.aliases: dict[str, object] = {}
        self.evars: set[str] = set()
        for s in self.stmts:
            if isinstance(s, A.Alias):
                keys = _Keys(s.name, _targs(s.targs), True)
                self.evars = set()
                self.aliases[canon(s.name, s.targs)] = self.compile(s.expr, keys, None)
            elif isinstance(s, A.Rule):
                name = canon(s.head.rel.name, s.head.rel.targs)
                keys = _Keys(s.head.rel.name, _targs(s.head.rel.targs), False)
                self.rels[name] = self.union_rule(s, keys) if s.union else self.join_rule(s, keys)
        return self.rels

    # -- expressions: compiled once (allocating keys), applied per tuple -----

    def compile(self, e, keys, brackets):
        """Return a function env -> value, a float, or a _Layer."""
        if isinstance(e, A.Num):
            return float(e.value)
        if isinstance(e, A.Name):
            n = canon(e.id, e.targs)
            if e.targs is None and (n in self.evars or (n not in self.aliases and n not in _ACTS)):
                return lambda env, n=n: env[n]
            if n in self.aliases:
                return self.aliases[n]
            act = _ACTS[n]
            return _Layer(1, lambda xs, act=act: lambda env: act(xs[0](env)))
        if isinstance(e, A.Bracket):
            return brackets[id(e)]
        if isinstance(e, A.Neg):
            a = self.compile(e.a, keys, brackets)
            return -a if isinstance(a, float) else (lambda env: -a(env))
        if isinstance(e, A.Transpose):
            a = self.compile(e.a, keys, brackets)
            return lambda env: a(env).T
        if isinstance(e, A.BinOp):
            a = self.compile(e.a, keys, brackets)
            b = self.compile(e.b, keys, brackets)
            if isinstance(a, float) and isinstance(b, float):
                return _fold(e.op, a, b)
            fa = a if callable(a) else (lambda env, v=a: np.array([[v]]))
            fb = b if callable(b) else (lambda env, v=b: np.array([[v]]))
            if e.op == "@":
                return lambda env: fa(env) @ fb(env)
            f = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv}[e.op]
            return lambda env: f(fa(env), fb(env))
        if isinstance(e, A.Call):
            f = e.func
            if isinstance(f, A.Name) and f.targs is None and f.id not in self.aliases:
                if f.id == "Linear":
                    n_in, n_out = (int(self.compile(a, None, brackets)) for a in e.args)
                    key = keys.next()

                    def linear(xs, key=key):
                        x = xs[0]
                        return lambda env: x(env) @ self.store[key].data[:-1] + self.store[key].data[-1:]
                    return _Layer(1, linear)
                if f.id == "Parameter":
                    key = keys.next()
                    return lambda env, key=key: self.store[key].data
                if f.id == "Concat":
                    parts = [self.compile(a, keys, brackets) for a in e.args]
                    return lambda env: np.concatenate([p(env) for p in parts], axis=1)
                if f.id == "CrossEntropyLoss":
                    def ce(xs):
                        lg, tg = xs

                        def run(env):
                            z = lg(env)
                            m = z.max()
                            logp = z - (m + math.log(np.exp(z - m).sum()))
                            return np.array([[-(tg(env) * logp).sum()]])
                        return run
                    return _Layer(2, ce)
                if f.id == "sqrt":
                    return math.sqrt(self.compile(e.args[0], keys, brackets))
                if f.id in _ACTS and f.id not in self.aliases:
                    act = _ACTS[f.id]
                    inner = self.compile(e.args[0], keys, brackets)
                    if isinstance(inner, _Layer):
                        return _Layer(inner.arity, lambda xs, inner=inner: (lambda g: lambda env: act(g(env)))(
                            inner.fn(xs)))
                    return lambda env: act(inner(env))
            callee = self.compile(f, keys, brackets)
            args = [self.compile(a, keys, brackets) for a in e.args]
            return callee.fn(args)
        raise ExecError(f"oracle cannot evaluate {type(e).__name__}")

    # -- rules ----------------------------------------------------------------

    def _atom_rel(self, a: A.Atom) -> Rel:
        if a.call_args is not None:
            inner = a.call_args[0]
            return _softmax(self.rels[canon(inner.name, inner.targs)])
        return self.rels[canon(a.rel.name, a.rel.targs)]

    def _matches(self, a: A.Atom, rel: Rel, binding: dict):
        for row, vec in sorted(rel.data.items(), key=lambda kv: _row_sort_key(kv[0])):
            b = dict(binding)
            ok = True
            for slot, v in zip(a.content, row):
                if isinstance(slot, str):
                    if slot == A.WILDCARD:
                        continue
                    if slot in b:
                        if b[slot] != v:
                            ok = False
                            break
                    else:
                        b[slot] = v
                elif literal_value(slot) != v:
                    ok = False
                    break
            if ok:
                yield b, vec

    def _encoders(self, r: A.Rule):
        """Per-bracket functions reading content values from the binding."""
        out = {}
        origin = {}
        for a in r.atoms:
            rel = self._atom_rel(a)
            name = canon(a.call_args[0].name, a.call_args[0].targs) if a.call_args else canon(a.rel.name,
                                                                                                a.rel.targs)
            for slot, attr in zip(a.content, rel.attrs):
                if isinstance(slot, str) and slot != A.WILDCARD:
                    origin.setdefault(slot, (name, attr))

        def walk(e):
            if isinstance(e, A.Bracket):
                fns = []
                for it in e.items:
                    vocab = self.vocabs.get(origin.get(it.id))
                    if vocab is None:
                        fns.append(lambda env, v=it.id: np.array([[float(env["#content"][v])]]))
                    else:
                        fns.append(lambda env, v=it.id, vocab=vocab: np.array(
                            [[1.0 if env["#content"][v] == x else 0.0 for x in vocab]]))
                out[id(e)] = lambda env, fns=fns: np.concatenate([f(env) for f in fns], axis=1)
            for c in _children(e):
                walk(c)
        if r.head.tau is not None:
            walk(r.head.tau)
        return out

    def _head_fn(self, r: A.Rule, keys):
        if r.head.tau is None:
            return lambda env: np.zeros((1, 0))
        self.evars = {a.emb for a in r.atoms if a.emb not in (None, A.WILDCARD)}
        fn = self.compile(r.head.tau, keys, self._encoders(r))
        if isinstance(fn, float):
            return lambda env, v=fn: np.array([[v]])
        return fn

    def join_rule(self, r: A.Rule, keys) -> Rel:
        tau = self._head_fn(r, keys)
        bag: dict[tuple, list] = {}
        head_attrs = _head_attrs(r, self)

        def rec(i, binding, embs):
            if i == len(r.atoms):
                if not all(self._holds(c, binding) for c in r.filters):
                    return
                env = dict(embs)
                env["#content"] = binding
                content = []
                for c in r.head.content:
                    if isinstance(c, str):
                        content.append(binding[c])
                    else:
                        for v in c.vars:
                            content.extend(float(x) for x in env[v].reshape(-1))
                out = np.asarray(tau(env), dtype=np.float64).reshape(-1)
                bag.setdefault(tuple(content), []).append(out)
                return
            a = r.atoms[i]
            rel = self._atom_rel(a)
            for b, vec in self._matches(a, rel, binding):
                e2 = dict(embs)
                if a.emb not in (None, A.WILDCARD):
                    e2[a.emb] = vec.reshape(1, -1)
                rec(i + 1, b, e2)
        rec(0, {}, {})
        agg = r.head.agg or "mean"
        data = {k: _aggregate(v, agg) for k, v in bag.items()}
        d = len(next(iter(data.values()))) if data else 0
        return Rel(head_attrs, data, d)

    def union_rule(self, r: A.Rule, keys) -> Rel:
        tau = self._head_fn(r, keys)
        head = list(r.head.content)
        bag: dict[tuple, list] = {}
        z = r.atoms[0].emb
        for a in r.atoms:
            rel = self._atom_rel(a)
            for b, vec in self._matches(a, rel, {}):
                bag.setdefault(tuple(b[v] for v in head), []).append(vec)
        agg = r.head.agg or "mean"
        data = {}
        for k, vs in bag.items():
            binding = dict(zip(head, k))
            if not all(self._holds(c, binding) for c in r.filters):
                continue
            v = _aggregate(vs, agg)
            env = {"#content": binding}
            if z not in (None, A.WILDCARD):
                env[z] = v.reshape(1, -1)
            if r.head.tau is None:
                data[k] = np.zeros(0)
            else:
                data[k] = np.asarray(tau(env), dtype=np.float64).reshape(-1)
        d = len(next(iter(data.values()))) if data else 0
        return Rel(tuple(head), data, d)

    def _holds(self, c: A.Comparison, binding) -> bool:
        return bool(_CMP[c.op](self._term(c.lhs, binding), self._term(c.rhs, binding)))

    def _term(self, e, binding):
        if isinstance(e, (A.Num, A.Str)):
            return e.value
        if isinstance(e, A.Name):
            if e.id in binding:
                return binding[e.id]
            v = self.aliases[e.id]
            return int(v) if float(v).is_integer() else v
        if isinstance(e, A.Neg):
            return -self._term(e.a, binding)
        x, y = self._term(e.a, binding), self._term(e.b, binding)
        return {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv,
                "%": operator.mod}[e.op](x, y)


def _fold(op, a, b):
    return {"+": a + b, "-": a - b, "*": a * b}.get(op, a / b if op == "/" and b else float("nan"))


def _children(e):
    if isinstance(e, A.Call):
        return [e.func, *e.args]
    if isinstance(e, A.BinOp):
        return [e.a, e.b]
    if isinstance(e, (A.Neg, A.Transpose)):
        return [e.a]
    return []


def _head_attrs(r: A.Rule, oracle) -> tuple:
    names = []
    widths = {}
    for a in r.atoms:
        if a.emb not in (None, A.WILDCARD):
            widths[a.emb] = oracle._atom_rel(a).d
    for c in r.head.content:
        if isinstance(c, str):
            names.append(c)
        else:
            for v in c.vars:
                w = widths[v]
                names.extend([v] if w == 1 else [f"{v}_{j}" for j in range(w)])
    return tuple(names)


def _aggregate(vs, agg):
    m = np.stack(vs)
    if agg == "sum":
        return m.sum(axis=0)
    if agg == "mean":
        return m.sum(axis=0) / len(vs)
    return m.max(axis=0)


def _softmax(rel: Rel) -> Rel:
    groups: dict[tuple, list] = {}
    for row in rel.data:
        groups.setdefault(row[1:], []).append(row)
    out = {}
    for rows in groups.values():
        m = np.stack([rel.data[r] for r in rows])
        e = np.exp(m - m.max(axis=0))
        s = e / e.sum(axis=0)
        for r, v in zip(rows, s):
            out[r] = v
    return Rel(rel.attrs, out, rel.d)


# ----------------------------------------------------------------------------
# comparison against the engine
# ----------------------------------------------------------------------------


def diff_relation(engine_rel, oracle_rel: Rel, tol: float = 1e-9) -> list[str]:
    """Human-readable differences between an engine result and the oracle's."""
    problems = []
    mine = {r: engine_rel.emb.data[i] for i, r in enumerate(engine_rel.rows)}
    if tuple(engine_rel.attrs) != tuple(oracle_rel.attrs):
        problems.append(f"attributes {engine_rel.attrs} vs oracle {oracle_rel.attrs}")
    extra = set(mine) - set(oracle_rel.data)
    missing = set(oracle_rel.data) - set(mine)
    for r in sorted(extra, key=_row_sort_key)[:5]:
        problems.append(f"extra tuple {r}")
    for r in sorted(missing, key=_row_sort_key)[:5]:
        problems.append(f"missing tuple {r}")
    for r in sorted(set(mine) & set(oracle_rel.data), key=_row_sort_key):
        a, b = mine[r], oracle_rel.data[r]
        if a.shape != b.shape:
            problems.append(f"tuple {r}: width {a.shape[0]} vs oracle {b.shape[0]}")
        elif a.size and np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))) > tol:
            problems.append(f"tuple {r}: max deviation {np.max(np.abs(a - b)):.3g}")
    return problems
