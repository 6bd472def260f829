"""Tokenizer for ``.relnn`` sources."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseError


@dataclass(frozen=True)
class Token:
    kind: str  # NAME, NUMBER, STRING, OP, EOF
    value: str
    line: int
    col: int
    start: int  # absolute offset of the first character
    end: int  # absolute offset one past the token


_UNICODE = {"⟨": "⟨", "⟩": "⟩", "≠": "!=", "≤": "<=", "≥": ">=", "←": ":-"}

# longest first
_OPS = [",...", "|...", ":-", "<=", ">=", "!=", "==", ".T", "?fit", "?pred",
        "(", ")", "<", ">", "=", ",", ";", ".", "|", "+", "-", "*", "/", "@", "[", "]", ":", "%"]

_NUMBER = re.compile(r"(\d+\.\d+|\d+)([eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, line_start = 0, 1, 0
    n = len(source)
    while i < n:
        ch = source[i]
        col = i - line_start + 1
        if ch == "\n":
            line += 1
            line_start = i + 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch in _UNICODE:
            tokens.append(Token("OP", _UNICODE[ch], line, col, i, i + 1))
            i += 1
            continue
        if ch.isdigit():
            m = _NUMBER.match(source, i)
            tokens.append(Token("NUMBER", m.group(0), line, col, i, m.end()))
            i = m.end()
            continue
        if ch.isalpha() or ch == "_":
            m = _NAME.match(source, i)
            tokens.append(Token("NAME", m.group(0), line, col, i, m.end()))
            i = m.end()
            continue
        if ch in "'\"":
            j = source.find(ch, i + 1)
            if j < 0 or "\n" in source[i + 1:j]:
                raise ParseError("unterminated string literal", line, col)
            tokens.append(Token("STRING", source[i + 1:j], line, col, i, j + 1))
            i = j + 1
            continue
        for op in _OPS:
            if source.startswith(op, i):
                if op == ".T":
                    # postfix transpose binds only directly after an operand
                    after = source[i + 2] if i + 2 < n else ""
                    glued = i > 0 and (source[i - 1].isalnum() or source[i - 1] in "_)")
                    if not glued or after.isalnum() or after == "_":
                        continue
                if op in ("?fit", "?pred"):
                    after = source[i + len(op)] if i + len(op) < n else ""
                    if after.isalnum() or after == "_":
                        continue
                tokens.append(Token("OP", op, line, col, i, i + len(op)))
                i += len(op)
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("EOF", "", line, i - line_start + 1, n, n))
    return tokens
