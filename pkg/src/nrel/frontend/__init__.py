"""Language front end: lexer, parser, printer and compile-time expansion."""

from __future__ import annotations

from .expand import expand_templates, flatten, inline_functions
from .parser import parse, parse_expr
from .printer import program as pretty

__all__ = ["expand_templates", "flatten", "inline_functions", "parse", "parse_expr", "pretty"]
