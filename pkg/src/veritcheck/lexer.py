"""SMT-LIB 2.6 tokenizer for proof scripts.

Produces parens, simple and |quoted| symbols, :keywords, numerals,
decimals and string literals; ; comments are skipped.  Every token
carries its 1-based line and column.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import LexError

SYMBOL_START = set("abcdefghijklmnopqrstuvwxyz"
                   "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
                   "~!@$%^&*_-+=<>.?/")
SYMBOL_CHARS = SYMBOL_START | set("0123456789")

LPAR = "lpar"
RPAR = "rpar"
SYMBOL = "symbol"
KEYWORD = "keyword"
NUMERAL = "numeral"
DECIMAL = "decimal"
STRING = "string"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int

    def __repr__(self):
        return f"{self.kind}({self.text!r})@{self.line}:{self.column}"


def tokenize(text: str) -> list[Token]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)

    def advance(k):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if c == ";":
            while i < n and text[i] != "\n":
                advance(1)
            continue
        start_line, start_col = line, col
        if c == "(":
            tokens.append(Token(LPAR, "(", start_line, start_col))
            advance(1)
            continue
        if c == ")":
            tokens.append(Token(RPAR, ")", start_line, start_col))
            advance(1)
            continue
        if c == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise LexError("unterminated quoted symbol",
                               line=start_line, column=start_col)
            body = text[i + 1:j]
            if "\\" in body:
                raise LexError("backslash inside quoted symbol",
                               line=start_line, column=start_col)
            advance(j + 1 - i)
            tokens.append(Token(SYMBOL, body, start_line, start_col))
            continue
        if c == '"':
            j = i + 1
            while True:
                j = text.find('"', j)
                if j < 0:
                    raise LexError("unterminated string literal",
                                   line=start_line, column=start_col)
                if j + 1 < n and text[j + 1] == '"':
                    j += 2
                    continue
                break
            body = text[i + 1:j].replace('""', '"')
            advance(j + 1 - i)
            tokens.append(Token(STRING, body, start_line, start_col))
            continue
        if c == ":":
            j = i + 1
            while j < n and text[j] in SYMBOL_CHARS:
                j += 1
            if j == i + 1:
                raise LexError("lone ':'", line=start_line, column=start_col)
            word = text[i:j]
            advance(j - i)
            tokens.append(Token(KEYWORD, word, start_line, start_col))
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                k = j + 1
                while k < n and text[k].isdigit():
                    k += 1
                if k == j + 1:
                    raise LexError("malformed decimal",
                                   line=start_line, column=start_col)
                word = text[i:k]
                if k < n and text[k] in SYMBOL_CHARS:
                    raise LexError(f"illegal token {word + text[k]!r}",
                                   line=start_line, column=start_col)
                advance(k - i)
                tokens.append(Token(DECIMAL, word, start_line, start_col))
                continue
            word = text[i:j]
            if j < n and text[j] in SYMBOL_CHARS:
                raise LexError(f"illegal token {word + text[j]!r}",
                               line=start_line, column=start_col)
            if len(word) > 1 and word[0] == "0":
                raise LexError(f"numeral with leading zero {word!r}",
                               line=start_line, column=start_col)
            advance(j - i)
            tokens.append(Token(NUMERAL, word, start_line, start_col))
            continue
        if c in SYMBOL_START:
            j = i
            while j < n and text[j] in SYMBOL_CHARS:
                j += 1
            word = text[i:j]
            advance(j - i)
            tokens.append(Token(SYMBOL, word, start_line, start_col))
            continue
        raise LexError(f"illegal character {c!r}",
                       line=start_line, column=start_col)
    return tokens
