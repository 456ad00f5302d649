"""Reader for the flat proof-command grammar, plus the purely syntactic
rewrites that run before sort inference: resolving :named sharing
annotations and expanding define-fun shorthands.

Commands come out of parse_proof with raw s-expression payloads
(nested lists of str / int / Fraction); infer_sorts in the sorts module
turns those into interned term ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import DefineError, NameResolutionError, ParseError
from .lexer import (DECIMAL, KEYWORD, LPAR, NUMERAL, RPAR, STRING, SYMBOL,
                    Token, tokenize)
from .terms import Sort, TermId

SExpr = object  # str | int | Fraction | list


# ----------------------------------------------------------------------
# raw commands (terms still s-expressions)

@dataclass
class RawAssume:
    index: str
    term: SExpr
    line: int = 0
    column: int = 0


@dataclass
class RawStep:
    index: str
    clause: list
    rule: str
    premises: list
    args: list
    line: int = 0
    column: int = 0


@dataclass
class RawAnchor:
    target: str
    args: list
    line: int = 0
    column: int = 0


@dataclass
class RawDefineFun:
    name: str
    params: list  # [(name, sort sexpr), ...]
    result_sort: SExpr
    body: SExpr
    expanded: bool = False
    line: int = 0
    column: int = 0


# ----------------------------------------------------------------------
# elaborated commands (terms interned)

@dataclass(frozen=True)
class TermArg:
    term: TermId


@dataclass(frozen=True)
class BindingArg:
    name: str
    term: TermId


@dataclass(frozen=True)
class SymbolArg:
    text: str


@dataclass(frozen=True)
class Assume:
    index: str
    term: TermId


@dataclass(frozen=True)
class Step:
    index: str
    clause: tuple[TermId, ...]
    rule: str
    premises: tuple[str, ...] = ()
    args: tuple = ()


@dataclass(frozen=True)
class Fixed:
    name: str
    sort: Sort


@dataclass(frozen=True)
class Mapped:
    name: str
    sort: Sort
    term: TermId


@dataclass(frozen=True)
class Anchor:
    target: str
    entries: tuple = ()


@dataclass(frozen=True)
class DefineFun:
    name: str
    params: tuple
    body: TermId
    expanded: bool = True


# ----------------------------------------------------------------------
# token reader

class _Reader:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise ParseError("unexpected end of input",
                             line=last.line if last else 1,
                             column=last.column if last else 1)
        self.pos += 1
        return tok

    def expect(self, kind, text=None):
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise ParseError(f"expected {want}, found {tok.text!r}",
                             line=tok.line, column=tok.column)
        return tok

    def at_end(self):
        return self.pos >= len(self.tokens)

    def read_sexpr(self) -> SExpr:
        tok = self.next()
        if tok.kind == LPAR:
            items = []
            while True:
                nxt = self.peek()
                if nxt is None:
                    raise ParseError("unclosed parenthesis",
                                     line=tok.line, column=tok.column)
                if nxt.kind == RPAR:
                    self.next()
                    return items
                items.append(self.read_sexpr())
        if tok.kind == RPAR:
            raise ParseError("unexpected ')'", line=tok.line,
                             column=tok.column)
        if tok.kind == NUMERAL:
            return int(tok.text)
        if tok.kind == DECIMAL:
            return Fraction(tok.text)
        if tok.kind == STRING:
            raise ParseError("string literal in term position",
                             line=tok.line, column=tok.column)
        return tok.text  # symbol or keyword


def parse_proof(tokens) -> list:
    """Parse a token list (or raw text) into raw proof commands."""
    if isinstance(tokens, (str, bytes)):
        tokens = tokenize(tokens)
    reader = _Reader(tokens)
    commands = []
    seen_indices = set()
    while not reader.at_end():
        open_tok = reader.expect(LPAR)
        head = reader.expect(SYMBOL)
        if head.text == "assume":
            index = reader.expect(SYMBOL).text
            term = reader.read_sexpr()
            reader.expect(RPAR)
            cmd = RawAssume(index, term, open_tok.line, open_tok.column)
        elif head.text == "step":
            cmd = _read_step(reader, open_tok)
        elif head.text == "anchor":
            cmd = _read_anchor(reader, open_tok)
        elif head.text == "define-fun":
            cmd = _read_define(reader, open_tok)
        else:
            raise ParseError(f"unknown command {head.text!r}",
                             line=head.line, column=head.column)
        if isinstance(cmd, (RawAssume, RawStep)):
            if cmd.index in seen_indices:
                raise ParseError(f"duplicate step index {cmd.index!r}",
                                 line=open_tok.line, column=open_tok.column)
            seen_indices.add(cmd.index)
        commands.append(cmd)
    return commands


def _read_step(reader, open_tok):
    index = reader.expect(SYMBOL).text
    clause_open = reader.expect(LPAR)
    head = reader.next()
    if head.kind != SYMBOL or head.text != "cl":
        raise ParseError(f"step clause must be headed by 'cl', "
                         f"found {head.text!r}",
                         line=head.line, column=head.column)
    literals = []
    while reader.peek() is not None and reader.peek().kind != RPAR:
        literals.append(reader.read_sexpr())
    reader.expect(RPAR)
    rule = None
    premises = []
    args = []
    while True:
        tok = reader.next()
        if tok.kind == RPAR:
            break
        if tok.kind != KEYWORD:
            raise ParseError(f"expected step annotation, found {tok.text!r}",
                             line=tok.line, column=tok.column)
        if tok.text == ":rule":
            if rule is not None:
                raise ParseError("duplicate :rule annotation",
                                 line=tok.line, column=tok.column)
            rule = reader.expect(SYMBOL).text
        elif tok.text == ":premises":
            reader.expect(LPAR)
            while reader.peek() is not None and reader.peek().kind != RPAR:
                premises.append(reader.expect(SYMBOL).text)
            reader.expect(RPAR)
            if not premises:
                raise ParseError(":premises needs at least one symbol",
                                 line=tok.line, column=tok.column)
        elif tok.text == ":args":
            argexpr = reader.read_sexpr()
            if not isinstance(argexpr, list) or not argexpr:
                raise ParseError(":args needs a parenthesised list",
                                 line=tok.line, column=tok.column)
            args = argexpr
        else:
            raise ParseError(f"unknown step annotation {tok.text}",
                             line=tok.line, column=tok.column)
    if rule is None:
        raise ParseError(f"step {index} has no :rule",
                         line=open_tok.line, column=open_tok.column)
    del clause_open
    return RawStep(index, literals, rule, premises, args,
                   open_tok.line, open_tok.column)


def _read_anchor(reader, open_tok):
    reader.expect(KEYWORD, ":step")
    target = reader.expect(SYMBOL).text
    args = []
    tok = reader.next()
    if tok.kind == KEYWORD and tok.text == ":args":
        argexpr = reader.read_sexpr()
        if not isinstance(argexpr, list) or not argexpr:
            raise ParseError(":args needs a parenthesised list",
                             line=tok.line, column=tok.column)
        args = argexpr
        tok = reader.next()
    if tok.kind != RPAR:
        raise ParseError(f"expected ')' closing anchor, found {tok.text!r}",
                         line=tok.line, column=tok.column)
    return RawAnchor(target, args, open_tok.line, open_tok.column)


def _read_define(reader, open_tok):
    name = reader.expect(SYMBOL).text
    reader.expect(LPAR)
    params = []
    while reader.peek() is not None and reader.peek().kind != RPAR:
        param = reader.read_sexpr()
        if not (isinstance(param, list) and len(param) == 2
                and isinstance(param[0], str)):
            raise ParseError("malformed define-fun parameter",
                             line=open_tok.line, column=open_tok.column)
        params.append((param[0], param[1]))
    reader.expect(RPAR)
    result_sort = reader.read_sexpr()
    body = reader.read_sexpr()
    reader.expect(RPAR)
    return RawDefineFun(name, params, result_sort, body,
                        False, open_tok.line, open_tok.column)


# ----------------------------------------------------------------------
# :named resolution

_BINDER_HEADS = ("forall", "exists", "choice", "let")


def _bound_names(expr):
    """Names introduced by a binder s-expression, or None."""
    if isinstance(expr, list) and len(expr) == 3 and expr[0] in _BINDER_HEADS:
        binds = expr[1]
        if isinstance(binds, list):
            return [b[0] for b in binds
                    if isinstance(b, list) and len(b) == 2
                    and isinstance(b[0], str)]
    return None


def _symbols_of(expr, acc):
    if isinstance(expr, str):
        acc.add(expr)
    elif isinstance(expr, list):
        for item in expr:
            _symbols_of(item, acc)


def _occurs_free(expr, name, shadowed=()):
    if isinstance(expr, str):
        return expr == name and name not in shadowed
    if not isinstance(expr, list):
        return False
    bound = _bound_names(expr)
    if bound is not None:
        if name in bound:
            inner = tuple(shadowed) + tuple(bound)
            return _occurs_free(expr[1], name, shadowed) or \
                _occurs_free(expr[2], name, inner)
        return any(_occurs_free(item, name, shadowed) for item in expr)
    return any(_occurs_free(item, name, shadowed) for item in expr)


class _NameWalker:
    def __init__(self):
        self.table = {}
        self.seen_symbols = set()

    def walk(self, expr, shadowed=frozenset()):
        if isinstance(expr, str):
            if expr in self.table and expr not in shadowed:
                return self.table[expr]
            if not expr.startswith(":"):
                self.seen_symbols.add(expr)
            return expr
        if not isinstance(expr, list):
            return expr
        if expr and expr[0] == "!":
            if len(expr) < 2:
                raise NameResolutionError("empty annotation")
            term = self.walk(expr[1], shadowed)
            i = 2
            while i < len(expr):
                key = expr[i]
                if key == ":named":
                    if i + 1 >= len(expr) or not isinstance(expr[i + 1], str):
                        raise NameResolutionError(":named needs a symbol")
                    name = expr[i + 1]
                    if name in self.table:
                        raise NameResolutionError(
                            f"name {name!r} defined twice")
                    if name in self.seen_symbols:
                        raise NameResolutionError(
                            f"name {name!r} used before its definition")
                    if _occurs_free(term, name):
                        raise NameResolutionError(
                            f"name {name!r} used inside its own definition")
                    self.table[name] = term
                    i += 2
                elif isinstance(key, str) and key.startswith(":"):
                    i += 2  # other annotations (e.g. :pattern) are dropped
                else:
                    raise NameResolutionError("malformed annotation")
            return term
        bound = _bound_names(expr)
        if bound is not None:
            inner = shadowed | set(bound)
            binds = [[b[0], self.walk(b[1], shadowed)]
                     if isinstance(b, list) and len(b) == 2 else b
                     for b in expr[1]]
            return [expr[0], binds, self.walk(expr[2], inner)]
        return [self.walk(item, shadowed) for item in expr]


def resolve_named(commands: list) -> list:
    """Register and strip (! t :named n) annotations, replacing every
    later bare occurrence of n by t.  The output contains no names."""
    walker = _NameWalker()
    out = []
    for cmd in commands:
        if isinstance(cmd, RawAssume):
            out.append(replace(cmd, term=walker.walk(cmd.term)))
        elif isinstance(cmd, RawStep):
            out.append(replace(
                cmd,
                clause=[walker.walk(t) for t in cmd.clause],
                args=[walker.walk(a) for a in cmd.args]))
        elif isinstance(cmd, RawAnchor):
            out.append(replace(cmd,
                               args=[walker.walk(a) for a in cmd.args]))
        elif isinstance(cmd, RawDefineFun):
            out.append(replace(cmd, body=walker.walk(cmd.body)))
        else:
            out.append(cmd)
    return out


# ----------------------------------------------------------------------
# define-fun expansion

class _DefineWalker:
    def __init__(self):
        self.table = {}  # name -> (params, fully expanded body)

    def register(self, cmd: RawDefineFun):
        body = self.walk(cmd.body)
        if _occurs_free(body, cmd.name):
            raise DefineError(f"define-fun {cmd.name!r} is recursive",
                              line=cmd.line, column=cmd.column)
        self.table[cmd.name] = ([p for p, _ in cmd.params], body)

    def walk(self, expr, shadowed=frozenset()):
        if isinstance(expr, str):
            entry = self.table.get(expr)
            if entry is not None and expr not in shadowed:
                params, body = entry
                if params:
                    raise DefineError(
                        f"defined function {expr!r} used without arguments")
                return body
            return expr
        if not isinstance(expr, list):
            return expr
        if expr and isinstance(expr[0], str) and expr[0] in self.table \
                and expr[0] not in shadowed:
            params, body = self.table[expr[0]]
            actual = [self.walk(a, shadowed) for a in expr[1:]]
            if len(actual) != len(params):
                raise DefineError(
                    f"defined function {expr[0]!r} applied to "
                    f"{len(actual)} arguments, expected {len(params)}")
            return _substitute_raw(body, dict(zip(params, actual)))
        bound = _bound_names(expr)
        if bound is not None:
            inner = shadowed | set(bound)
            binds = [[b[0], self.walk(b[1], shadowed)]
                     if isinstance(b, list) and len(b) == 2 else b
                     for b in expr[1]]
            return [expr[0], binds, self.walk(expr[2], inner)]
        return [self.walk(item, shadowed) for item in expr]


def _substitute_raw(expr, mapping, shadowed=frozenset()):
    if isinstance(expr, str):
        if expr in mapping and expr not in shadowed:
            return mapping[expr]
        return expr
    if not isinstance(expr, list):
        return expr
    bound = _bound_names(expr)
    if bound is not None:
        inner = shadowed | set(bound)
        return [expr[0], expr[1], _substitute_raw(expr[2], mapping, inner)]
    return [_substitute_raw(item, mapping, shadowed) for item in expr]


def expand_defines(commands: list) -> list:
    """Inline every defined function into later terms.  The define-fun
    commands stay in the list, marked expanded, for provenance."""
    walker = _DefineWalker()
    out = []
    for cmd in commands:
        if isinstance(cmd, RawDefineFun):
            walker.register(cmd)
            out.append(replace(cmd, body=walker.table[cmd.name][1],
                               expanded=True))
        elif isinstance(cmd, RawAssume):
            out.append(replace(cmd, term=walker.walk(cmd.term)))
        elif isinstance(cmd, RawStep):
            out.append(replace(
                cmd,
                clause=[walker.walk(t) for t in cmd.clause],
                args=[walker.walk(a) for a in cmd.args]))
        elif isinstance(cmd, RawAnchor):
            out.append(replace(cmd, args=[walker.walk(a) for a in cmd.args]))
        else:
            out.append(cmd)
    return out
