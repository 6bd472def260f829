"""Run manifests: where each input relation lives and how to read it.

A manifest is a line-oriented ``key=value`` file::

    # comments start with '#'
    seed=7
    output=out
    Drivers.path=drivers.csv
    Drivers.columns=id:content,age:feature
    Drivers.embed=16
    Cars.vocab.color=red|green|blue

Paths are relative to the manifest.  ``columns`` defaults to every header
column as content.  ``embed=N`` gives each tuple a learnable ``N``-vector;
a relation may have feature columns or learnable embeddings, not both.
``vocab.<attr>`` declares the one-hot vocabulary used by ``[attr]`` brackets.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

from .errors import LoadError, SchemaError
from .relmodel import Database, attach_learnable_embeddings, load_relation_csv, parse_content_column, value_tag
from .tensor import ParameterStore

GLOBAL_KEYS = {"seed", "output"}
RELATION_KEYS = {"path", "columns", "embed"}


@dataclass
class RelationDecl:
    name: str
    path: str | None = None
    columns: list[tuple[str, str]] | None = None
    embed: int | None = None
    vocabs: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass
class Manifest:
    base_dir: str = "."
    seed: int = 0
    output: str = "out"
    relations: dict[str, RelationDecl] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise LoadError(f"cannot read manifest {path}: {exc.strerror}") from None
        return cls.parse(text, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def parse(cls, text: str, base_dir: str = ".") -> "Manifest":
        m = cls(base_dir=base_dir)
        seen: set[str] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise LoadError(f"manifest line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in seen:
                raise LoadError(f"manifest line {lineno}: {key!r} given twice")
            seen.add(key)
            if key in GLOBAL_KEYS:
                if key == "seed":
                    try:
                        m.seed = int(value)
                    except ValueError:
                        raise LoadError(f"manifest line {lineno}: seed must be an integer") from None
                else:
                    m.output = value
                continue
            parts = key.split(".")
            if len(parts) < 2:
                raise LoadError(f"manifest line {lineno}: unknown key {key!r}")
            decl = m.relations.setdefault(parts[0], RelationDecl(parts[0]))
            field_name = parts[1]
            if field_name == "vocab" and len(parts) == 3:
                decl.vocabs[parts[2]] = tuple(v.strip() for v in value.split("|"))
            elif field_name not in RELATION_KEYS or len(parts) != 2:
                raise LoadError(f"manifest line {lineno}: unknown key {key!r}")
            elif field_name == "path":
                decl.path = value
            elif field_name == "columns":
                cols = []
                for item in value.split(","):
                    col, _, role = item.strip().partition(":")
                    cols.append((col.strip(), role.strip() or "content"))
                decl.columns = cols
            else:
                try:
                    decl.embed = int(value)
                except ValueError:
                    raise LoadError(f"manifest line {lineno}: embed must be an integer") from None
        for decl in m.relations.values():
            if decl.path is None:
                raise LoadError(f"manifest: relation {decl.name!r} has no path")
        return m

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def build(self, store: ParameterStore, seed: int | None = None):
        """Load every declared relation; returns ``(database, vocabularies)``.

        Vocabularies are keyed by ``(relation, attribute)`` with values coerced
        to the attribute's column type.
        """
        seed = self.seed if seed is None else seed
        db = Database()
        vocabs: dict[tuple[str, str], tuple] = {}
        for name, decl in self.relations.items():
            path = self.resolve(decl.path)
            columns = decl.columns if decl.columns is not None else [(c, "content") for c in _header(path, name)]
            rel = load_relation_csv(path, name, columns)
            if decl.embed is not None:
                try:
                    rel = attach_learnable_embeddings(rel, decl.embed, store, seed)
                except SchemaError as exc:
                    raise LoadError(f"{name}: {exc}") from None
            db.add(name, rel)
            for attr, values in decl.vocabs.items():
                if attr not in rel.attrs:
                    raise LoadError(f"{name}: vocabulary for unknown content attribute {attr!r}")
                typed = tuple(parse_content_column(list(values)))
                tag = rel.column_tag(attr)
                if tag is not None and typed and value_tag(typed[0]) != tag:
                    typed = tuple(values)
                if len(set(typed)) != len(typed):
                    raise LoadError(f"{name}: vocabulary for {attr!r} repeats a value")
                vocabs[(name, attr)] = typed
        return db, vocabs


def _header(path: str, name: str) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh))]
    except FileNotFoundError:
        raise LoadError(f"{name}: file not found: {path}") from None
    except StopIteration:
        raise LoadError(f"{name}: {path} has no header row") from None
