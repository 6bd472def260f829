"""Compile program text against in-memory relations for the tests."""

from __future__ import annotations

import numpy as np

from nrel.execution.oracle import Oracle
from nrel.execution.runtime import Session
from nrel.frontend import flatten, parse
from nrel.lowering import lower
from nrel.relmodel import Database, EmbeddedRelation
from nrel.tensor import ParameterStore


def relation(attrs, mapping, d=None):
    """``mapping`` is ``{row: vector}``; a list of rows gives a d=0 relation."""
    if not isinstance(mapping, dict):
        mapping = {tuple(r): [] for r in mapping}
        d = 0
    rows = list(mapping)
    if d is None:
        d = len(next(iter(mapping.values()))) if rows else 0
    emb = np.array([mapping[r] for r in rows], dtype=float).reshape(len(rows), d)
    return EmbeddedRelation.from_rows(attrs, rows, emb, dim=d)


def database(rels) -> Database:
    db = Database()
    for name, rel in rels.items():
        db.add(name, rel)
    return db


def compile_program(src, rels, store=None, vocabs=None):
    """Returns ``(session, flat statements)``."""
    db = rels if isinstance(rels, Database) else database(rels)
    store = store if store is not None else ParameterStore(0)
    flat = flatten(parse(src), db.relations)
    prog = lower(flat, {n: (r.attrs, r.d) for n, r in db.relations.items()}, store, vocabs)
    return Session(prog, db, store), flat


def oracle_run(session, flat, vocabs=None):
    return Oracle(flat, session.db, session.store, vocabs).run()


def as_dict(rel):
    return {r: rel.emb.data[i].copy() for i, r in enumerate(rel.rows)}
