"""Recursive-descent parser producing :mod:`nrel.frontend.ast` statements."""

from __future__ import annotations

from ..errors import ParseError
from . import ast as A
from .lexer import Token, tokenize

CMP_OPS = {"=": "=", "==": "=", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


class _Backtrack(Exception):
    pass


class Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.speculative = 0

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, value: str, kind: str = "OP") -> bool:
        t = self.tok
        return t.kind == kind and t.value == value

    def at_name(self, value: str | None = None) -> bool:
        return self.tok.kind == "NAME" and (value is None or self.tok.value == value)

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "EOF":
            self.i += 1
        return t

    def fail(self, msg: str, tok: Token | None = None):
        if self.speculative:
            raise _Backtrack()
        t = tok or self.tok
        raise ParseError(msg, t.line, t.col)

    def expect(self, value: str) -> Token:
        if not self.at(value):
            found = self.tok.value or "end of input"
            self.fail(f"expected {value!r}, found {found!r}")
        return self.advance()

    def expect_name(self, what: str = "identifier") -> Token:
        if self.tok.kind != "NAME":
            self.fail(f"expected {what}, found {self.tok.value or 'end of input'!r}")
        return self.advance()

    def pos(self, t: Token | None = None) -> tuple[int, int]:
        t = t or self.tok
        return (t.line, t.col)

    def attempt(self, fn):
        """Run ``fn`` speculatively; rewind and return None on failure."""
        start = self.i
        self.speculative += 1
        try:
            return fn()
        except _Backtrack:
            self.i = start
            return None
        finally:
            self.speculative -= 1

    # -- program -------------------------------------------------------------

    def program(self) -> list:
        out = []
        while self.tok.kind != "EOF":
            out.append(self.statement())
        return out

    def statement(self, in_function: bool = False):
        if self.at("?fit"):
            return self.fit()
        if self.at("?pred"):
            return self.pred()
        if self.at_name("def"):
            if in_function:
                self.fail("nested function definitions are not supported")
            return self.funcdef()
        if self.at_name("enddef"):
            self.fail("'enddef' without matching 'def'")
        if self.tok.kind != "NAME":
            self.fail(f"unknown statement form starting with {self.tok.value or 'end of input'!r}")
        alias = self.attempt(self._alias_prefix)
        if alias is not None:
            name, targs, start = alias
            expr = self.expr()
            self.expect(".")
            return A.Alias(name, expr, targs, pos=start)
        return self.rule()

    def _alias_prefix(self):
        start = self.pos()
        name = self.expect_name().value
        targs = self.template_args()
        self.expect("=")
        return name, targs, start

    def fit(self) -> A.Fit:
        start = self.pos(self.advance())
        kwargs = []
        if self.at("<") or self.at("⟨"):
            close = ">" if self.advance().value == "<" else "⟩"
        else:
            target = self.relref()
            self.expect(".")
            return A.Fit((), target, pos=start)
        seen = set()
        while not self.at(close):
            if kwargs:
                self.expect(",")
            key = self.expect_name("keyword argument")
            if key.value in seen:
                self.fail(f"duplicate keyword argument {key.value!r}", key)
            seen.add(key.value)
            self.expect("=")
            kwargs.append((key.value, self.expr()))
        self.advance()
        target = self.relref()
        self.expect(".")
        return A.Fit(tuple(kwargs), target, pos=start)

    def pred(self) -> A.Pred:
        start = self.pos(self.advance())
        target = self.relref()
        self.expect(".")
        return A.Pred(target, pos=start)

    def funcdef(self) -> A.FuncDef:
        start = self.pos(self.advance())
        name = self.expect_name("function name").value
        targs = self.template_args()
        self.expect("(")
        params = []
        while not self.at(")"):
            if params:
                self.expect(",")
            params.append(self.expect_name("parameter name").value)
        self.advance()
        self.expect(":")
        body = []
        while not self.at_name("enddef"):
            if self.tok.kind == "EOF":
                self.fail(f"missing 'enddef' for function {name!r}")
            body.append(self.statement(in_function=True))
        self.advance()
        if self.at("."):
            self.advance()
        if not body:
            self.fail(f"function {name!r} has an empty body")
        if not isinstance(body[-1], A.Rule):
            self.fail(f"the last statement of function {name!r} must be a rule")
        if len(set(params)) != len(params):
            self.fail(f"repeated parameter in function {name!r}")
        return A.FuncDef(name, tuple(params), tuple(body), targs, pos=start)

    # -- rules ---------------------------------------------------------------

    def relref(self) -> A.RelRef:
        t = self.expect_name("relation name")
        return A.RelRef(t.value, self.template_args(), pos=self.pos(t))

    def template_args(self):
        """``<a, b, ...>`` glued to the preceding identifier, or None."""
        prev = self.toks[self.i - 1]
        if not (self.at("<") and self.tok.start == prev.end):
            return None
        self.advance()
        args = [self.expr(in_targs=True)]
        while self.at(","):
            self.advance()
            args.append(self.expr(in_targs=True))
        if self.at(">="):
            # ``Name<i>= expr``: split the token
            t = self.tok
            self.toks[self.i] = Token("OP", "=", t.line, t.col + 1, t.start + 1, t.end)
            return tuple(args)
        self.expect(">")
        return tuple(args)

    def rule(self) -> A.Rule:
        start = self.pos()
        head = self.head()
        if self.at("."):
            self.advance()
            return A.Rule(head, (), (), False, pos=start)
        self.expect(":-")
        items, seps = [self.body_item()], []
        while self.at(",") or self.at("|"):
            seps.append(self.advance().value)
            items.append(self.body_item())
        self.expect(".")
        return self._classify(head, items, seps, start)

    def _classify(self, head, items, seps, start) -> A.Rule:
        union = "|" in seps or any(isinstance(it, A.Atom) and it.replicator and it.replicator.kind == "|"
                                   for it in items)
        if not union:
            atoms = tuple(it for it in items if isinstance(it, A.Atom))
            filters = tuple(it for it in items if isinstance(it, A.Comparison))
            return A.Rule(head, atoms, filters, False, pos=start)
        # alternatives joined by '|', then ',' separated filters
        atoms, filters = [items[0]], []
        for sep, it in zip(seps, items[1:]):
            if sep == "|":
                if filters:
                    self.fail("union alternatives must precede the filter list")
                atoms.append(it)
            else:
                filters.append(it)
        for a in atoms:
            if not isinstance(a, A.Atom):
                self.fail("union alternatives must be relation atoms")
            if a.replicator and a.replicator.kind == ",":
                self.fail("',...' replicator inside a union rule")
        for f in filters:
            if not isinstance(f, A.Comparison):
                self.fail("a union rule may only be followed by filter predicates")
        return A.Rule(head, tuple(atoms), tuple(filters), True, pos=start)

    def head(self) -> A.Head:
        start = self.pos()
        rel = self.relref()
        self.expect("(")
        content = []
        while not (self.at(";") or self.at(")")):
            if content:
                self.expect(",")
            if self.at("["):
                bt = self.advance()
                names = [self.expect_name("variable").value]
                while self.at(","):
                    self.advance()
                    names.append(self.expect_name("variable").value)
                self.expect("]")
                content.append(A.Decode(tuple(names), pos=self.pos(bt)))
            else:
                content.append(self.expect_name("head variable").value)
        has_emb = self.at(";")
        agg = tau = None
        if has_emb:
            self.advance()
            if not self.at(")"):
                tau = self.expr()
                if (isinstance(tau, A.Call) and isinstance(tau.func, A.Name) and tau.func.targs is None
                        and tau.func.id in A.AGGREGATORS and len(tau.args) == 1):
                    agg, tau = tau.func.id, tau.args[0]
        self.expect(")")
        return A.Head(rel, tuple(content), agg, tau, has_emb, pos=start)

    def body_item(self):
        atom = self.attempt(self.atom)
        if atom is not None:
            return atom
        return self.comparison()

    def _slot(self):
        t = self.tok
        if t.kind == "NAME":
            self.advance()
            return A.RelRef(t.value, self.template_args(), pos=self.pos(t))
        if t.kind == "NUMBER":
            self.advance()
            return A.Num(_number(t.value), pos=self.pos(t))
        if t.kind == "STRING":
            self.advance()
            return A.Str(t.value, pos=self.pos(t))
        if self.at("-") and self.peek().kind == "NUMBER":
            self.advance()
            n = self.advance()
            return A.Num(-_number(n.value), pos=self.pos(t))
        self.fail(f"unexpected {t.value or 'end of input'!r} in argument list")

    def _group(self):
        """``( slots [; emb] )`` returning (slots, emb_or_None, had_semicolon)."""
        self.expect("(")
        slots, emb, semi = [], None, False
        while not (self.at(")") or self.at(";")):
            if slots:
                self.expect(",")
            slots.append(self._slot())
        if self.at(";"):
            semi = True
            self.advance()
            if not self.at(")"):
                emb = self.expect_name("embedding variable").value
        self.expect(")")
        return slots, emb, semi

    def atom(self) -> A.Atom:
        start = self.pos()
        rel = self.relref()
        if not self.at("("):
            self.fail("expected '(' after relation name")
        slots, emb, semi = self._group()
        call_args = None
        if self.at("("):
            if semi:
                self.fail("unexpected ';' in call arguments")
            for s in slots:
                if not isinstance(s, A.RelRef):
                    self.fail("call arguments must be relation names")
            call_args = tuple(slots)
            slots, emb, semi = self._group()
        content = []
        for s in slots:
            if isinstance(s, A.RelRef):
                if s.targs is not None:
                    self.fail("template arguments on a variable")
                content.append(s.name)
            else:
                content.append(s)
        replicator = None
        if self.at(",...") or self.at("|..."):
            rt = self.advance()
            replicator = A.Replicator(rt.value[0], self.domain(), pos=self.pos(rt))
        return A.Atom(rel, tuple(content), emb if semi else None, call_args, replicator, pos=start)

    def domain(self):
        self.expect("[")
        start = self.pos()
        if self.tok.kind == "NAME" and self.peek().kind == "OP" and self.peek().value == "=":
            var = self.advance().value
            self.advance()
            lo = self.expr()
            if not self.at_name("to"):
                self.fail("expected 'to' in iteration range")
            self.advance()
            hi = self.expr()
            dom = A.RangeDomain(var, lo, hi, pos=start)
        else:
            rel = self.relref()
            self.expect("(")
            names = []
            while not self.at(")"):
                if names:
                    self.expect(",")
                names.append(self.expect_name("domain variable").value)
            self.advance()
            dom = A.RelDomain(rel, tuple(names), pos=start)
        self.expect("]")
        return dom

    def comparison(self) -> A.Comparison:
        start = self.pos()
        lhs = self.expr(filter_ctx=True)
        if not (self.tok.kind == "OP" and self.tok.value in CMP_OPS):
            self.fail(f"expected a relation atom or comparison, found {self.tok.value or 'end of input'!r}")
        op = CMP_OPS[self.advance().value]
        rhs = self.expr(filter_ctx=True)
        return A.Comparison(op, lhs, rhs, pos=start)

    # -- expressions ---------------------------------------------------------

    def expr(self, in_targs: bool = False, filter_ctx: bool = False):
        self._ctx = (in_targs, filter_ctx)
        return self._add()

    def _add(self):
        left = self._mul()
        while self.at("+") or self.at("-"):
            t = self.advance()
            left = A.BinOp(t.value, left, self._mul(), pos=self.pos(t))
        return left

    def _mul(self):
        left = self._unary()
        while self.at("*") or self.at("/") or self.at("@") or self.at("%"):
            t = self.advance()
            left = A.BinOp(t.value, left, self._unary(), pos=self.pos(t))
        return left

    def _unary(self):
        if self.at("-"):
            t = self.advance()
            inner = self._unary()
            if isinstance(inner, A.Num):
                return A.Num(-inner.value, pos=self.pos(t))
            return A.Neg(inner, pos=self.pos(t))
        if self.at("*"):
            t = self.advance()
            return A.Splat(self.expect_name("splat variable").value, pos=self.pos(t))
        return self._postfix()

    def _postfix(self):
        node = self._primary()
        while True:
            if self.at("(") and not self._ctx[1]:
                t = self.advance()
                args = []
                while not self.at(")"):
                    if args:
                        self.expect(",")
                    args.append(self._sub_expr())
                self.advance()
                node = A.Call(node, tuple(args), pos=self.pos(t))
            elif self.at(".T"):
                t = self.advance()
                node = A.Transpose(node, pos=self.pos(t))
            else:
                return node

    def _sub_expr(self):
        saved = self._ctx
        self._ctx = (False, saved[1])
        try:
            return self._add()
        finally:
            self._ctx = saved

    def _primary(self):
        t = self.tok
        if t.kind == "NUMBER":
            self.advance()
            return A.Num(_number(t.value), pos=self.pos(t))
        if t.kind == "STRING":
            self.advance()
            return A.Str(t.value, pos=self.pos(t))
        if t.kind == "NAME":
            self.advance()
            targs = None if self._ctx[1] else self._targs_nested()
            return A.Name(t.value, targs, pos=self.pos(t))
        if self.at("("):
            self.advance()
            inner = self._sub_expr()
            self.expect(")")
            return inner
        if self.at("["):
            self.advance()
            items = [self._sub_expr()]
            while self.at(","):
                self.advance()
                items.append(self._sub_expr())
            self.expect("]")
            return A.Bracket(tuple(items), pos=self.pos(t))
        self.fail(f"unexpected {t.value or 'end of input'!r} in expression")

    def _targs_nested(self):
        saved = self._ctx
        try:
            return self.template_args()
        finally:
            self._ctx = saved


def _number(text: str) -> int | float:
    if any(c in text for c in ".eE"):
        return float(text)
    return int(text)


def parse(source: str) -> list:
    """Parse a whole program into a list of statements."""
    return Parser(source).program()


def parse_expr(source: str):
    p = Parser(source)
    e = p.expr()
    if p.tok.kind != "EOF":
        p.fail(f"trailing input {p.tok.value!r}")
    return e
