"""Compile-time expansion: templates, body replicators and function inlining.

``expand_templates`` instantiates every templated statement that is referenced
with concrete arguments (memoized per argument tuple, so identical arguments
share one instance and therefore one set of parameters) and unrolls ``,...``
and ``|...`` replicators.  ``inline_functions`` then copies function bodies to
their call sites with freshened intermediate names.  The result is a flat list
of aliases, rules and fit/pred statements ready for lowering.
"""

from __future__ import annotations

import math
from dataclasses import replace
from fractions import Fraction
from typing import Mapping

from ..errors import ExpandError
from ..relmodel import row_key
from . import ast as A

MAX_DEPTH = 64


def _where(node) -> str:
    pos = getattr(node, "pos", (0, 0))
    return f" (line {pos[0]}, column {pos[1]})" if pos and pos[0] else ""


# ----------------------------------------------------------------------------
# literals, scalar arithmetic and canonical names
# ----------------------------------------------------------------------------


class NotScalar(Exception):
    pass


def eval_scalar(e, env: Mapping[str, object]):
    """Evaluate a compile-time arithmetic expression to a Fraction or float."""
    if isinstance(e, A.Num):
        return Fraction(e.value) if isinstance(e.value, int) else e.value
    if isinstance(e, A.Name) and e.targs is None:
        if e.id in env:
            return env[e.id]
        raise NotScalar(e.id)
    if isinstance(e, A.Neg):
        return -eval_scalar(e.a, env)
    if isinstance(e, A.BinOp) and e.op in "+-*/%":
        a, b = eval_scalar(e.a, env), eval_scalar(e.b, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0:
            raise ExpandError(f"division by zero in constant expression{_where(e)}")
        return a / b if e.op == "/" else a % b
    if (isinstance(e, A.Call) and isinstance(e.func, A.Name) and e.func.id == "sqrt"
            and e.func.targs is None and len(e.args) == 1):
        v = eval_scalar(e.args[0], env)
        if v < 0:
            raise ExpandError(f"sqrt of a negative value{_where(e)}")
        return math.sqrt(v)
    raise NotScalar(type(e).__name__)


def scalar_to_literal(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else float(v)
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def literal_node(v, pos=(0, 0)):
    return A.Str(v, pos=pos) if isinstance(v, str) else A.Num(v, pos=pos)


def literal_value(node):
    """Python value of a concrete template argument node, or None."""
    if isinstance(node, A.Str):
        return node.value
    if isinstance(node, A.Num):
        return node.value
    return None


def _lit_text(v) -> str:
    return f"'{v}'" if isinstance(v, str) else repr(v)


def canon(name: str, targs) -> str:
    """Canonical relation/alias name: ``AttHead<3>``, ``HGT<'Papers',0>``."""
    if targs is None:
        return name
    vals = [literal_value(a) for a in targs]
    if any(v is None for v in vals):
        raise ExpandError(f"template arguments of {name!r} are not concrete")
    return f"{name}<{','.join(_lit_text(v) for v in vals)}>"


def is_concrete(targs) -> bool:
    return targs is None or all(literal_value(a) is not None for a in targs)


# ----------------------------------------------------------------------------
# substitution
# ----------------------------------------------------------------------------


def subst_expr(e, binds: Mapping[str, object], protected=frozenset()):
    if isinstance(e, A.Name):
        if e.targs is None and e.id in binds and e.id not in protected:
            return literal_node(binds[e.id], e.pos)
        targs = None if e.targs is None else tuple(subst_expr(a, binds) for a in e.targs)
        return A.Name(e.id, targs, pos=e.pos)
    if isinstance(e, A.Call):
        return A.Call(subst_expr(e.func, binds, protected), tuple(subst_expr(a, binds, protected) for a in e.args),
                      pos=e.pos)
    if isinstance(e, A.BinOp):
        return A.BinOp(e.op, subst_expr(e.a, binds, protected), subst_expr(e.b, binds, protected), pos=e.pos)
    if isinstance(e, A.Neg):
        return A.Neg(subst_expr(e.a, binds, protected), pos=e.pos)
    if isinstance(e, A.Transpose):
        return A.Transpose(subst_expr(e.a, binds, protected), pos=e.pos)
    if isinstance(e, A.Bracket):
        return A.Bracket(tuple(subst_expr(i, binds, protected) for i in e.items), pos=e.pos)
    return e


def subst_relref(r: A.RelRef, binds) -> A.RelRef:
    name = r.name
    if r.targs is None and name in binds:
        v = binds[name]
        if not isinstance(v, str):
            raise ExpandError(f"template variable {name!r} names a relation but is bound to {v!r}{_where(r)}")
        name = v
    targs = None if r.targs is None else tuple(subst_expr(a, binds) for a in r.targs)
    return A.RelRef(name, targs, pos=r.pos)


def _rule_vars(rule: A.Rule) -> set[str]:
    out: set[str] = set()
    for a in rule.atoms:
        out.update(c for c in a.content if isinstance(c, str))
        if a.emb:
            out.add(a.emb)
    for c in rule.head.content:
        if isinstance(c, str):
            out.add(c)
        else:
            out.update(c.vars)
    return out


def _pattern_vars(targs) -> set[str]:
    if targs is None:
        return set()
    return {a.id for a in targs if isinstance(a, A.Name) and a.targs is None}


def subst_statement(s, binds: Mapping[str, object], nested: bool = False):
    """Substitute template variables throughout a statement.

    ``nested`` statements (inside a function body) keep their own template
    parameters unbound: those shadow the enclosing bindings.
    """
    if nested:
        own = _pattern_vars(_decl_name(s)[1]) if isinstance(s, (A.Alias, A.Rule, A.FuncDef)) else set()
        binds = {k: v for k, v in binds.items() if k not in own}
    if not binds:
        return s
    if isinstance(s, A.Alias):
        targs = None if s.targs is None else tuple(subst_expr(a, binds) for a in s.targs)
        return A.Alias(s.name, subst_expr(s.expr, binds), targs, pos=s.pos)
    if isinstance(s, A.Rule):
        protected = frozenset(_rule_vars(s))
        h = s.head
        head = A.Head(subst_relref(h.rel, binds) if h.rel.targs is not None else h.rel, h.content, h.agg,
                      None if h.tau is None else subst_expr(h.tau, binds, protected), h.has_emb, pos=h.pos)
        atoms = tuple(_subst_atom(a, binds) for a in s.atoms)
        filters = tuple(A.Comparison(c.op, subst_expr(c.lhs, binds, protected), subst_expr(c.rhs, binds, protected),
                                     pos=c.pos) for c in s.filters)
        return A.Rule(head, atoms, filters, s.union, pos=s.pos)
    if isinstance(s, A.FuncDef):
        targs = None if s.targs is None else tuple(subst_expr(a, binds) for a in s.targs)
        return A.FuncDef(s.name, s.params, tuple(subst_statement(b, binds, True) for b in s.body), targs, pos=s.pos)
    if isinstance(s, A.Fit):
        return A.Fit(tuple((k, subst_expr(v, binds)) for k, v in s.kwargs), subst_relref(s.target, binds), pos=s.pos)
    if isinstance(s, A.Pred):
        return A.Pred(subst_relref(s.target, binds), pos=s.pos)
    raise TypeError(s)


def _subst_atom(a: A.Atom, binds) -> A.Atom:
    rel_binds = binds
    rep = a.replicator
    if rep is not None:
        dom = rep.domain
        if isinstance(dom, A.RangeDomain):
            # the range variable shadows outer bindings inside the replicated atom
            rel_binds = {k: v for k, v in binds.items() if k != dom.var}
            dom = A.RangeDomain(dom.var, subst_expr(dom.lo, binds), subst_expr(dom.hi, binds), pos=dom.pos)
        else:
            # variables already bound act as constants that filter the domain tuples
            dom = A.RelDomain(subst_relref(dom.rel, binds),
                              tuple(literal_node(binds[v]) if isinstance(v, str) and v in binds else v
                                    for v in dom.vars), pos=dom.pos)
        rep = A.Replicator(rep.kind, dom, pos=rep.pos)
    call_args = None if a.call_args is None else tuple(subst_relref(r, rel_binds) for r in a.call_args)
    return A.Atom(subst_relref(a.rel, rel_binds), a.content, a.emb, call_args, rep, pos=a.pos)


# ----------------------------------------------------------------------------
# template expansion
# ----------------------------------------------------------------------------


class _Scope:
    def __init__(self, parent: "_Scope | None" = None):
        self.parent = parent
        self.templates: dict[str, list] = {}
        self.concrete: set[str] = set()
        self.scalars: dict[str, object] = {}
        self.out: list = []

    def chain(self):
        s = self
        while s is not None:
            yield s
            s = s.parent

    def scalar_env(self) -> dict[str, object]:
        env: dict[str, object] = {}
        for s in reversed(list(self.chain())):
            env.update(s.scalars)
        return env

    def knows(self, name: str) -> bool:
        return any(name in s.concrete for s in self.chain())


def _decl_name(s) -> tuple[str, tuple | None]:
    if isinstance(s, A.Rule):
        return s.head.rel.name, s.head.rel.targs
    return s.name, s.targs


def _match(pattern, args, outer: Mapping[str, object]):
    """Bind pattern variables against concrete args; None when they do not match."""
    if len(pattern) != len(args):
        return None
    binds: dict[str, object] = {}
    for p, a in zip(pattern, args):
        v = literal_value(a)
        if isinstance(p, A.Name) and p.targs is None and p.id not in outer:
            if p.id in binds and binds[p.id] != v:
                return None
            binds[p.id] = v
            continue
        try:
            pv = literal_value(p)
            if pv is None:
                pv = scalar_to_literal(eval_scalar(p, outer))
        except NotScalar:
            raise ExpandError(f"template pattern argument is not a variable or a constant{_where(p)}") from None
        if type(pv) is not type(v) and not (isinstance(pv, (int, float)) and isinstance(v, (int, float))):
            return None
        if isinstance(pv, str) != isinstance(v, str) or pv != v:
            return None
    return binds


class _Expander:
    def __init__(self, domains: Mapping[str, object] | None):
        self.domains = {}
        for name, rel in (domains or {}).items():
            rows = getattr(rel, "rows", rel)
            self.domains[name] = sorted((tuple(r) for r in rows), key=row_key)
        self.stack: list[str] = []

    # -- scopes --------------------------------------------------------------

    def run(self, stmts, scope: _Scope) -> list:
        for s in stmts:
            self.statement(s, scope)
        return scope.out

    def statement(self, s, scope: _Scope) -> None:
        if isinstance(s, A.Alias):
            if s.targs is not None:
                self._register(s, scope)
                return
            try:
                scope.scalars[s.name] = eval_scalar(s.expr, scope.scalar_env())
            except NotScalar:
                pass
            scope.out.append(A.Alias(s.name, self.resolve_expr(s.expr, scope), None, pos=s.pos))
            scope.concrete.add(s.name)
            return
        if isinstance(s, A.Rule):
            if s.head.rel.targs is not None:
                self._register(s, scope)
                return
            rule = self.instantiate_rule(s, {}, scope)
            scope.out.append(rule)
            scope.concrete.add(rule.head.rel.name)
            return
        if isinstance(s, A.FuncDef):
            if s.targs is not None:
                self._register(s, scope)
                return
            scope.out.append(self._function_body(s, scope))
            scope.concrete.add(s.name)
            return
        if isinstance(s, A.Fit):
            env = scope.scalar_env()
            kwargs = []
            for k, v in s.kwargs:
                try:
                    kwargs.append((k, literal_node(scalar_to_literal(eval_scalar(v, env)), v.pos)))
                except NotScalar:
                    kwargs.append((k, v))
            scope.out.append(A.Fit(tuple(kwargs), self.resolve_rel(s.target, scope), pos=s.pos))
            return
        if isinstance(s, A.Pred):
            scope.out.append(A.Pred(self.resolve_rel(s.target, scope), pos=s.pos))
            return
        raise TypeError(s)

    def _register(self, s, scope: _Scope) -> None:
        name, _ = _decl_name(s)
        scope.templates.setdefault(name, []).append(s)

    def _function_body(self, f: A.FuncDef, scope: _Scope) -> A.FuncDef:
        inner = _Scope(scope)
        body = self.run(f.body, inner)
        if not body or not isinstance(body[-1], A.Rule):
            raise ExpandError(f"function {canon(f.name, f.targs)!r} must end with a concrete rule{_where(f)}")
        return A.FuncDef(f.name, f.params, tuple(body), f.targs, pos=f.pos)

    # -- references ----------------------------------------------------------

    def concrete_targs(self, targs, scope: _Scope, where) -> tuple:
        env = scope.scalar_env()
        out = []
        for a in targs:
            v = literal_value(a)
            if v is None:
                if isinstance(a, A.Name) and a.targs is None and a.id not in env:
                    v = a.id  # bare label
                else:
                    try:
                        v = scalar_to_literal(eval_scalar(a, env))
                    except NotScalar as exc:
                        raise ExpandError(f"cannot evaluate template argument ({exc}){_where(where)}") from None
                    if isinstance(v, float):
                        raise ExpandError(f"template argument evaluates to a non-integer {v}{_where(where)}")
            out.append(literal_node(v, getattr(a, "pos", (0, 0))))
        return tuple(out)

    def resolve_rel(self, r: A.RelRef, scope: _Scope) -> A.RelRef:
        if r.targs is None:
            return r
        targs = self.concrete_targs(r.targs, scope, r)
        self.instantiate(r.name, targs, scope, r)
        return A.RelRef(r.name, targs, pos=r.pos)

    def resolve_expr(self, e, scope: _Scope):
        if isinstance(e, A.Name):
            if e.targs is None:
                return e
            targs = self.concrete_targs(e.targs, scope, e)
            self.instantiate(e.id, targs, scope, e)
            return A.Name(e.id, targs, pos=e.pos)
        if isinstance(e, A.Call):
            return A.Call(self.resolve_expr(e.func, scope), tuple(self.resolve_expr(a, scope) for a in e.args),
                          pos=e.pos)
        if isinstance(e, A.BinOp):
            return A.BinOp(e.op, self.resolve_expr(e.a, scope), self.resolve_expr(e.b, scope), pos=e.pos)
        if isinstance(e, A.Neg):
            return A.Neg(self.resolve_expr(e.a, scope), pos=e.pos)
        if isinstance(e, A.Transpose):
            return A.Transpose(self.resolve_expr(e.a, scope), pos=e.pos)
        if isinstance(e, A.Bracket):
            return A.Bracket(tuple(self.resolve_expr(i, scope) for i in e.items), pos=e.pos)
        return e

    def instantiate(self, name: str, targs: tuple, scope: _Scope, where) -> None:
        cname = canon(name, targs)
        if scope.knows(cname):
            return
        owner, best, binds = None, None, None
        for s in scope.chain():
            cands = s.templates.get(name)
            if not cands:
                continue
            env = s.scalar_env()
            scored = []
            for t in cands:
                b = _match(_decl_name(t)[1], targs, env)
                if b is not None:
                    n_const = len(targs) - len(b)
                    scored.append((n_const, t, b))
            if scored:
                top = max(c for c, _, _ in scored)
                winners = [(t, b) for c, t, b in scored if c == top]
                if len(winners) > 1:
                    raise ExpandError(f"ambiguous template instantiation {cname}{_where(where)}")
                owner, (best, binds) = s, winners[0]
                break
        if best is None:
            raise ExpandError(f"no template matches {cname}{_where(where)}")
        if cname in self.stack:
            cycle = " -> ".join(self.stack[self.stack.index(cname):] + [cname])
            raise ExpandError(f"recursive template instantiation: {cycle}")
        if len(self.stack) >= MAX_DEPTH:
            raise ExpandError(f"template instantiation deeper than {MAX_DEPTH} at {cname}")
        self.stack.append(cname)
        try:
            inst = subst_statement(best, binds)
            if isinstance(inst, A.Alias):
                out = A.Alias(name, self.resolve_expr(inst.expr, owner), targs, pos=inst.pos)
            elif isinstance(inst, A.Rule):
                head = replace(inst.head, rel=A.RelRef(name, targs, pos=inst.head.rel.pos))
                out = self.instantiate_rule(replace(inst, head=head), {}, owner)
            else:
                out = self._function_body(replace(inst, targs=targs), owner)
        finally:
            self.stack.pop()
        owner.out.append(out)
        owner.concrete.add(cname)

    # -- rules and replicators ----------------------------------------------

    def _domain(self, rep: A.Replicator, scope: _Scope) -> list[dict]:
        dom = rep.domain
        if isinstance(dom, A.RangeDomain):
            env = scope.scalar_env()
            try:
                lo = scalar_to_literal(eval_scalar(dom.lo, env))
                hi = scalar_to_literal(eval_scalar(dom.hi, env))
            except NotScalar as exc:
                raise ExpandError(f"unresolvable iteration range ({exc}){_where(dom)}") from None
            if not (isinstance(lo, int) and isinstance(hi, int)):
                raise ExpandError(f"iteration range bounds must be integers{_where(dom)}")
            return [{dom.var: v} for v in range(lo, hi + 1)]
        rel = canon(dom.rel.name, dom.rel.targs)
        if rel not in self.domains:
            raise ExpandError(f"unresolvable iteration domain {rel!r}: not a known metadata relation{_where(dom)}")
        out = []
        for row in self.domains[rel]:
            if len(row) != len(dom.vars):
                raise ExpandError(f"domain {rel} has arity {len(row)}, {len(dom.vars)} variables given{_where(dom)}")
            b: dict[str, object] = {}
            ok = True
            for var, val in zip(dom.vars, row):
                want = literal_value(var) if not isinstance(var, str) else b.get(var, val)
                if want != val or isinstance(want, str) != isinstance(val, str):
                    ok = False
                    break
                if isinstance(var, str):
                    b[var] = val
            if ok:
                out.append(b)
        return out

    def instantiate_rule(self, rule: A.Rule, binds, scope: _Scope) -> A.Rule:
        atoms: list[A.Atom] = []
        splats: dict[str, list[str]] = {}
        for a in rule.atoms:
            if a.replicator is None:
                atoms.append(self._resolve_atom(a, scope))
                continue
            replicas = self._domain(a.replicator, scope)
            if not replicas:
                raise ExpandError(f"empty iteration domain for {a.rel.name}{_where(a.replicator)}")
            base = A.Atom(a.rel, a.content, a.emb, a.call_args, None, pos=a.pos)
            names = []
            for j, b in enumerate(replicas, start=1):
                inst = _subst_atom(base, b)
                if a.replicator.kind == "," and a.emb not in (None, A.WILDCARD) and len(replicas) > 1:
                    inst = replace(inst, emb=f"{a.emb}_{j}")
                names.append(inst.emb)
                atoms.append(self._resolve_atom(inst, scope))
            if a.replicator.kind == "," and a.emb not in (None, A.WILDCARD):
                if a.emb in splats:
                    raise ExpandError(f"embedding variable {a.emb!r} replicated twice{_where(a)}")
                splats[a.emb] = names
        used = _rule_vars(rule)
        for z, names in splats.items():
            for n in names:
                if n != z and n in used:
                    raise ExpandError(f"replica variable {n!r} collides with an existing variable{_where(rule)}")
        head = rule.head
        tau = head.tau
        if tau is not None:
            tau = self.resolve_expr(_expand_splats(tau, splats, False), scope)
        head = A.Head(head.rel, head.content, head.agg, tau, head.has_emb, pos=head.pos)
        filters = tuple(A.Comparison(c.op, self.resolve_expr(c.lhs, scope), self.resolve_expr(c.rhs, scope),
                                     pos=c.pos) for c in rule.filters)
        return A.Rule(head, tuple(atoms), filters, rule.union, pos=rule.pos)

    def _resolve_atom(self, a: A.Atom, scope: _Scope) -> A.Atom:
        call_args = None if a.call_args is None else tuple(self.resolve_rel(r, scope) for r in a.call_args)
        return A.Atom(self.resolve_rel(a.rel, scope), a.content, a.emb, call_args, None, pos=a.pos)


def _expand_splats(e, splats: Mapping[str, list[str]], in_concat: bool):
    if isinstance(e, A.Splat):
        if not in_concat:
            raise ExpandError(f"splat *{e.name} is only allowed directly inside Concat{_where(e)}")
        if e.name not in splats:
            raise ExpandError(f"splat *{e.name} does not name a ',...' replicated variable{_where(e)}")
        return e
    if isinstance(e, A.Call):
        concat = isinstance(e.func, A.Name) and e.func.id == "Concat" and e.func.targs is None
        args = []
        for a in e.args:
            if concat and isinstance(a, A.Splat):
                _expand_splats(a, splats, True)
                args.extend(A.Name(n, None, pos=a.pos) for n in splats[a.name])
            else:
                args.append(_expand_splats(a, splats, False))
        return A.Call(_expand_splats(e.func, splats, False), tuple(args), pos=e.pos)
    if isinstance(e, A.BinOp):
        return A.BinOp(e.op, _expand_splats(e.a, splats, False), _expand_splats(e.b, splats, False), pos=e.pos)
    if isinstance(e, (A.Neg, A.Transpose)):
        return type(e)(_expand_splats(e.a, splats, False), pos=e.pos)
    if isinstance(e, A.Bracket):
        return A.Bracket(tuple(_expand_splats(i, splats, False) for i in e.items), pos=e.pos)
    return e


def expand_templates(stmts, domains: Mapping[str, object] | None = None) -> list:
    """Instantiate referenced templates and unroll replicators.

    ``domains`` maps metadata relation names to their rows (or to objects with
    a ``rows`` attribute) for ``[Rel(v1, ..., vn)]`` iteration domains.
    """
    return _Expander(domains).run(list(stmts), _Scope())


# ----------------------------------------------------------------------------
# function inlining
# ----------------------------------------------------------------------------


def _rename_expr(e, aliases: Mapping[str, str]):
    if isinstance(e, A.Name):
        key = canon(e.id, e.targs) if is_concrete(e.targs) else None
        if key in aliases:
            return A.Name(aliases[key], None, pos=e.pos)
        return e
    if isinstance(e, A.Call):
        return A.Call(_rename_expr(e.func, aliases), tuple(_rename_expr(a, aliases) for a in e.args), pos=e.pos)
    if isinstance(e, A.BinOp):
        return A.BinOp(e.op, _rename_expr(e.a, aliases), _rename_expr(e.b, aliases), pos=e.pos)
    if isinstance(e, (A.Neg, A.Transpose)):
        return type(e)(_rename_expr(e.a, aliases), pos=e.pos)
    if isinstance(e, A.Bracket):
        return A.Bracket(tuple(_rename_expr(i, aliases) for i in e.items), pos=e.pos)
    return e


def _rename_rel(r: A.RelRef, rels: Mapping[str, str]) -> A.RelRef:
    key = canon(r.name, r.targs) if is_concrete(r.targs) else None
    if key in rels:
        return A.RelRef(rels[key], None, pos=r.pos)
    return r


class _Inliner:
    def __init__(self):
        self.funcs: dict[str, A.FuncDef] = {}
        self.memo: dict[tuple, str] = {}
        self.counter: dict[str, int] = {}
        self.stack: list[str] = []
        self.out: list = []

    def run(self, stmts) -> list:
        for s in stmts:
            if isinstance(s, A.FuncDef):
                if is_concrete(s.targs):
                    self.funcs[canon(s.name, s.targs)] = s
                continue
            if isinstance(s, A.Rule):
                s = self.rule(s)
            self.out.append(s)
        return self.out

    def rule(self, r: A.Rule) -> A.Rule:
        atoms = []
        for a in r.atoms:
            name = canon(a.rel.name, a.rel.targs)
            if name in self.funcs:
                target = self.call(name, a)
                atoms.append(A.Atom(A.RelRef(target, None, pos=a.rel.pos), a.content, a.emb, None, None, pos=a.pos))
            elif a.call_args is not None and a.rel.name != "Softmax":
                raise ExpandError(f"call of unknown function {name!r}{_where(a)}")
            else:
                atoms.append(a)
        return replace(r, atoms=tuple(atoms))

    def call(self, name: str, a: A.Atom) -> str:
        f = self.funcs[name]
        args = tuple(canon(x.name, x.targs) for x in (a.call_args or ()))
        if len(args) != len(f.params):
            raise ExpandError(f"function {name!r} takes {len(f.params)} relation arguments, got {len(args)}{_where(a)}")
        key = (name, args)
        if key in self.memo:
            return self.memo[key]
        if name in self.stack:
            raise ExpandError(f"recursive function call: {' -> '.join(self.stack + [name])}{_where(a)}")
        n = self.counter[name] = self.counter.get(name, 0) + 1
        prefix = f"{name}#{n}"
        rels = dict(zip(f.params, args))
        aliases: dict[str, str] = {}
        for s in f.body:
            if isinstance(s, A.Rule):
                rels[canon(s.head.rel.name, s.head.rel.targs)] = f"{prefix}.{canon(s.head.rel.name, s.head.rel.targs)}"
            elif isinstance(s, A.Alias):
                aliases[canon(s.name, s.targs)] = f"{prefix}.{canon(s.name, s.targs)}"
        self.stack.append(name)
        try:
            result = None
            for s in f.body:
                if isinstance(s, A.Alias):
                    self.out.append(A.Alias(aliases[canon(s.name, s.targs)], _rename_expr(s.expr, aliases), None,
                                            pos=s.pos))
                    continue
                if not isinstance(s, A.Rule):
                    raise ExpandError(f"only rules and aliases may appear in function {name!r}{_where(s)}")
                renamed = self._rename_rule(s, rels, aliases)
                self.out.append(self.rule(renamed))
                result = renamed.head.rel.name
        finally:
            self.stack.pop()
        self.memo[key] = result
        return result

    @staticmethod
    def _rename_rule(s: A.Rule, rels, aliases) -> A.Rule:
        h = s.head
        head = A.Head(_rename_rel(h.rel, rels), h.content, h.agg,
                      None if h.tau is None else _rename_expr(h.tau, aliases), h.has_emb, pos=h.pos)
        atoms = tuple(A.Atom(_rename_rel(a.rel, rels), a.content, a.emb,
                             None if a.call_args is None else tuple(_rename_rel(x, rels) for x in a.call_args),
                             a.replicator, pos=a.pos) for a in s.atoms)
        filters = tuple(A.Comparison(c.op, _rename_expr(c.lhs, aliases), _rename_expr(c.rhs, aliases), pos=c.pos)
                        for c in s.filters)
        return A.Rule(head, atoms, filters, s.union, pos=s.pos)


def inline_functions(stmts) -> list:
    """Replace every function call by a freshly named copy of the function body.

    Calls with identical function and argument relations share one copy.
    """
    return _Inliner().run(list(stmts))


# ----------------------------------------------------------------------------
# checks and the combined pipeline
# ----------------------------------------------------------------------------


def check_range_restriction(rule: A.Rule) -> None:
    head_vars = [c for c in rule.head.content if isinstance(c, str)]
    decoded = [v for c in rule.head.content if isinstance(c, A.Decode) for v in c.vars]
    if rule.union:
        alt_vars = [{c for c in a.content if isinstance(c, str) and c != A.WILDCARD} for a in rule.atoms]
        if any(v != alt_vars[0] for v in alt_vars):
            raise ExpandError(f"union alternatives of {rule.head.rel.name!r} bind different variables{_where(rule)}")
        body = alt_vars[0] if alt_vars else set()
    else:
        body = {c for a in rule.atoms for c in a.content if isinstance(c, str) and c != A.WILDCARD}
    missing = [v for v in head_vars if v not in body]
    if missing:
        raise ExpandError(f"head variables {missing} of {rule.head.rel.name!r} do not occur in the body{_where(rule)}")
    embs = {a.emb for a in rule.atoms if a.emb not in (None, A.WILDCARD)}
    bad = [v for v in decoded if v not in embs]
    if bad:
        raise ExpandError(f"decoded variables {bad} are not body embedding variables{_where(rule)}")


def flatten(stmts, domains: Mapping[str, object] | None = None) -> list:
    """Template expansion, then function inlining, then a range-restriction check."""
    flat = inline_functions(expand_templates(stmts, domains))
    for s in flat:
        if isinstance(s, A.Rule):
            for a in s.atoms:
                if a.replicator is not None:
                    raise ExpandError(f"unexpanded replicator{_where(a)}")
            check_range_restriction(s)
    return flat
