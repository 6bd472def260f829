"""Pretty-printer: renders statements back to parseable source."""

from __future__ import annotations

from . import ast as A

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "@": 2, "%": 2}


def fmt_num(v) -> str:
    if isinstance(v, float):
        r = repr(v)
        return r if any(c in r for c in ".en") else r + ".0"
    return str(v)


def fmt_targs(targs) -> str:
    if targs is None:
        return ""
    return "<" + ", ".join(expr(a) for a in targs) + ">"


def expr(e, parent: int = 0, right: bool = False) -> str:
    if isinstance(e, A.Num):
        s = fmt_num(e.value)
        return f"({s})" if e.value < 0 and parent else s
    if isinstance(e, A.Str):
        q = "'" if "'" not in e.value else '"'
        return f"{q}{e.value}{q}"
    if isinstance(e, A.Name):
        return e.id + fmt_targs(e.targs)
    if isinstance(e, A.Call):
        return f"{expr(e.func, 3)}({', '.join(expr(a) for a in e.args)})"
    if isinstance(e, A.BinOp):
        p = _PREC[e.op]
        s = f"{expr(e.a, p)} {e.op} {expr(e.b, p, True)}"
        return f"({s})" if p < parent or (p == parent and right) else s
    if isinstance(e, A.Neg):
        s = f"-{expr(e.a, 3)}"
        return f"({s})" if parent else s
    if isinstance(e, A.Transpose):
        return f"{expr(e.a, 3)}.T"
    if isinstance(e, A.Splat):
        return f"*{e.name}"
    if isinstance(e, A.Bracket):
        return "[" + ", ".join(expr(i) for i in e.items) + "]"
    raise TypeError(f"cannot print {e!r}")


def relref(r: A.RelRef) -> str:
    return r.name + fmt_targs(r.targs)


def _slot(s) -> str:
    return s if isinstance(s, str) else expr(s)


def atom(a: A.Atom) -> str:
    head = relref(a.rel)
    if a.call_args is not None:
        head += "(" + ", ".join(relref(r) for r in a.call_args) + ")"
    inner = ", ".join(_slot(s) for s in a.content)
    if a.emb is not None:
        inner += f"; {a.emb}" if inner else f"; {a.emb}"
    text = f"{head}({inner})"
    if a.replicator is not None:
        text += f" {a.replicator.kind}... [{domain(a.replicator.domain)}]"
    return text


def domain(d) -> str:
    if isinstance(d, A.RangeDomain):
        return f"{d.var} = {expr(d.lo)} to {expr(d.hi)}"
    return f"{relref(d.rel)}({', '.join(_slot(v) for v in d.vars)})"


def head(h: A.Head) -> str:
    parts = []
    for c in h.content:
        parts.append(c if isinstance(c, str) else "[" + ", ".join(c.vars) + "]")
    inner = ", ".join(parts)
    if h.has_emb:
        tau = "" if h.tau is None else expr(h.tau)
        if h.agg is not None:
            tau = f"{h.agg}({tau})"
        inner += f"; {tau}" if tau else ";"
    return f"{relref(h.rel)}({inner})"


def comparison(c: A.Comparison) -> str:
    return f"{expr(c.lhs)} {c.op} {expr(c.rhs)}"


def statement(s, indent: str = "") -> str:
    if isinstance(s, A.Alias):
        return f"{indent}{s.name}{fmt_targs(s.targs)} = {expr(s.expr)} ."
    if isinstance(s, A.Fit):
        if not s.kwargs:
            return f"{indent}?fit {relref(s.target)} ."
        kw = ", ".join(f"{k}={expr(v)}" for k, v in s.kwargs)
        return f"{indent}?fit <{kw}> {relref(s.target)} ."
    if isinstance(s, A.Pred):
        return f"{indent}?pred {relref(s.target)} ."
    if isinstance(s, A.FuncDef):
        lines = [f"{indent}def {s.name}{fmt_targs(s.targs)}({', '.join(s.params)}):"]
        lines += [statement(b, indent + "  ") for b in s.body]
        lines.append(f"{indent}enddef")
        return "\n".join(lines)
    if isinstance(s, A.Rule):
        h = head(s.head)
        if not s.atoms and not s.filters:
            return f"{indent}{h} ."
        sep = " | " if s.union else ", "
        body = sep.join(atom(a) for a in s.atoms)
        if s.filters:
            body += ", " + ", ".join(comparison(c) for c in s.filters)
        return f"{indent}{h} :- {body} ."
    raise TypeError(f"cannot print {s!r}")


def program(stmts) -> str:
    return "\n".join(statement(s) for s in stmts) + ("\n" if stmts else "")
