"""Recursive-descent parser for ``.sid`` source files.

Grammar summary (``--`` starts a comment)::

    program  ::= item*
    item     ::= 'type' NAME '=' type
               | 'def' NAME ':' type '=' expr
               | 'assume' NAME[+|-] ':' type
               | 'main' '=' proc
    type     ::= 'rec' NAME '.' type | prod (('->' | '-o') type)?
    prod     ::= prefix ('*' prod)?
    prefix   ::= '@' prefix | 'IO' prefix | ('!' | '?') prefix '.' prefix | tatom
    tatom    ::= 'Unit' | 'Nat' | 'end' | '<' type '>' | '(' type ')' | NAME
    expr     ::= '\\' NAME ':' type '.' expr | '\\' '<' NAME ',' NAME '>' ':' type '.' expr
               | 'split' expr 'as' NAME ',' NAME 'in' expr | app ('>>=' expr)?
    app      ::= atom+ (trailing lambda or split)?
    atom     ::= NAME | NAME+ | NAME- | NUMBER | constant | '(' expr (',' expr)* ')'
    proc     ::= pitem ('|' pitem)*
    pitem    ::= '0' | NAME '<=' expr | 'server' NAME '=' expr
               | 'new' NAME (':' type)? (',' NAME (':' type)?)* 'in' pitem | '(' proc ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from .syntax import (
    App,
    Const,
    Constant,
    Definition,
    Expr,
    Idle,
    Lambda,
    Name,
    NameKind,
    NatLit,
    New,
    Par,
    Process,
    Program,
    Ref,
    Server,
    Split,
    Thread,
    bases,
)
from .types import TCon, TLit, TRec, TVar, Tag, TypeAlgebraError, RegType, compile_type, is_session


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{line}:{column}: {message}" if line else message)
        self.message = message
        self.line = line
        self.column = column


KEYWORDS = {
    "type", "def", "assume", "main", "proc", "new", "in", "server", "split", "as", "rec",
    "Unit", "Nat", "end", "IO",
} | {k.value for k in Constant}

_SYMBOLS = ("-o", "->", ">>=", "<=", "\\", ":", ".", ",", "(", ")", "<", ">", "*", "@", "!", "?", "|", "=")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_NUMBER = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "endpoint", "number", "kw", "sym", "eof"
    text: str
    line: int
    col: int
    polarity: str | None = None


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for ch in text[i : i + k]:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        i += k

    while i < n:
        ch = text[i]
        if ch.isspace():
            advance(1)
            continue
        if text.startswith("--", i):
            j = text.find("\n", i)
            advance((n if j < 0 else j) - i)
            continue
        m = _IDENT.match(text, i)
        if m:
            word = m.group()
            j = m.end()
            if j < n and text[j] in "+-" and word not in KEYWORDS and not text.startswith(("-o", "->"), j):
                pol = text[j]
                after = text[j + 1] if j + 1 < n else ""
                if after and (after in "+-" or after.isalnum() or after in "_'"):
                    if not text.startswith(("->", "-o"), j + 1):
                        raise ParseError("malformed polarity suffix", line, col + len(word))
                tokens.append(Token("endpoint", word, line, col, pol))
                advance(j + 1 - i)
                continue
            tokens.append(Token("kw" if word in KEYWORDS else "ident", word, line, col))
            advance(j - i)
            continue
        m = _NUMBER.match(text, i)
        if m:
            tokens.append(Token("number", m.group(), line, col))
            advance(m.end() - i)
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("sym", sym, line, col))
                advance(len(sym))
                break
        else:
            what = "reserved character '%'" if ch == "%" else f"unexpected character {ch!r}"
            raise ParseError(what, line, col)
    tokens.append(Token("eof", "", line, col))
    return tokens


_TOP = {"type", "def", "assume", "main"}


class _Parser:
    def __init__(self, text: str, equations: Mapping | None = None, scope: Mapping[str, NameKind] | None = None):
        self.toks = tokenize(text)
        self.pos = 0
        self.equations: dict = dict(equations or {})
        self.scope: dict[str, NameKind] = dict(scope or {})

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("sym", "kw") and self.tok.text == text

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def ident(self) -> str:
        tok = self.tok
        if tok.kind != "ident":
            raise self.error(f"expected an identifier, found {tok.text or 'end of input'!r}")
        self.pos += 1
        return tok.text

    def expect_eof(self) -> None:
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")

    # ---------------------------------------------------------------- types

    def type_term(self, bound: frozenset = frozenset()):
        if self.eat("rec"):
            name = self.ident()
            self.expect(".")
            return TRec(name, self.type_term(bound | {name}))
        left = self.prod_term(bound)
        if self.eat("->"):
            return TCon(Tag.ARROW, (left, self.type_term(bound)))
        if self.eat("-o"):
            return TCon(Tag.LOLLI, (left, self.type_term(bound)))
        return left

    def prod_term(self, bound):
        left = self.prefix_term(bound)
        if self.eat("*"):
            return TCon(Tag.PROD, (left, self.prod_term(bound)))
        return left

    def prefix_term(self, bound):
        if self.eat("@"):
            return TCon(Tag.BULLET, (self.prefix_term(bound),))
        if self.eat("IO"):
            return TCon(Tag.IO, (self.prefix_term(bound),))
        for sym, tag in (("!", Tag.OUT), ("?", Tag.IN)):
            if self.eat(sym):
                payload = self.prefix_term(bound)
                self.expect(".")
                return TCon(tag, (payload, self.prefix_term(bound)))
        return self.type_atom(bound)

    def type_atom(self, bound):
        tok = self.tok
        for word, tag in (("Unit", Tag.UNIT), ("Nat", Tag.NAT), ("end", Tag.END)):
            if self.eat(word):
                return TCon(tag)
        if self.eat("<"):
            inner = self.type_term(bound)
            self.expect(">")
            return TCon(Tag.SHARED, (inner,))
        if self.eat("("):
            inner = self.type_term(bound)
            self.expect(")")
            return inner
        if tok.kind == "ident":
            self.pos += 1
            if tok.text not in bound and tok.text not in self.equations:
                raise self.error(f"unknown identifier {tok.text!r} in a type position", tok)
            return TVar(tok.text)
        raise self.error(f"expected a type, found {tok.text or 'end of input'!r}")

    def type(self) -> RegType:
        tok = self.tok
        term = self.type_term()
        try:
            return compile_type(term, self.equations)
        except TypeAlgebraError as exc:
            raise self.error(str(exc), tok) from None

    # ---------------------------------------------------------- expressions

    def expr(self, lam: frozenset = frozenset()) -> Expr:
        if self.eat("\\"):
            if self.eat("<"):
                x = self.ident()
                self.expect(",")
                y = self.ident()
                self.expect(">")
                self.expect(":")
                annot = self.type()
                self.expect(".")
                body = self.expr(lam | {x, y})
                z = _split_binder(body)
                return Lambda(z, annot, Split(Ref(Name.var(z)), x, y, body))
            x = self.ident()
            self.expect(":")
            annot = self.type()
            self.expect(".")
            return Lambda(x, annot, self.expr(lam | {x}))
        if self.eat("split"):
            scrut = self.expr(lam)
            self.expect("as")
            x = self.ident()
            self.expect(",")
            y = self.ident()
            self.expect("in")
            return Split(scrut, x, y, self.expr(lam | {x, y}))
        left = self.app(lam)
        if self.eat(">>="):
            right = self.expr(lam)
            return App(App(Const(Constant.BIND), left), right)
        return left

    def starts_atom(self) -> bool:
        tok = self.tok
        if tok.kind in ("ident", "endpoint", "number"):
            return True
        if tok.kind == "kw":
            return tok.text in _CONSTANTS
        return tok.kind == "sym" and tok.text == "("

    def app(self, lam) -> Expr:
        if not self.starts_atom():
            raise self.error(f"expected an expression, found {self.tok.text or 'end of input'!r}")
        e = self.atom(lam)
        while True:
            if self.starts_atom():
                e = App(e, self.atom(lam))
            elif self.at("\\") or self.at("split"):
                # a trailing binder form extends as far as possible: ``fix \f:T. e``
                return App(e, self.expr(lam))
            else:
                return e

    def atom(self, lam) -> Expr:
        tok = self.tok
        self.pos += 1
        if tok.kind == "number":
            return NatLit(int(tok.text))
        if tok.kind == "endpoint":
            return Ref(Name.endpoint(tok.text, tok.polarity))
        if tok.kind == "ident":
            if tok.text not in lam and self.scope.get(tok.text) is NameKind.CHANNEL:
                return Ref(Name.chan(tok.text))
            return Ref(Name.var(tok.text))
        if tok.kind == "kw":
            return Const(_CONSTANTS[tok.text])
        # parenthesised expression or tuple
        items = [self.expr(lam)]
        while self.eat(","):
            items.append(self.expr(lam))
        self.expect(")")
        out = items[-1]
        for item in reversed(items[:-1]):
            out = App(App(Const(Constant.PAIR), item), out)
        return out

    # ------------------------------------------------------------ processes

    def proc(self) -> Process:
        p = self.pitem()
        while self.eat("|"):
            p = Par(p, self.pitem())
        return p

    def pitem(self) -> Process:
        tok = self.tok
        if tok.kind == "number":
            if tok.text != "0":
                raise self.error("only 0 denotes a process")
            self.pos += 1
            return Idle()
        if self.eat("("):
            p = self.proc()
            self.expect(")")
            return p
        if self.eat("server"):
            name = self.ident()
            self.expect("=")
            return Server(name, self.expr())
        if self.eat("new"):
            binders = []
            while True:
                btok = self.tok
                name = self.ident()
                annot = self.type() if self.eat(":") else None
                binders.append((name, annot, btok))
                if not self.eat(","):
                    break
            self.expect("in")
            saved = dict(self.scope)
            for name, _, _ in binders:
                self.scope.pop(name, None)
            body = self.pitem()
            self.scope = saved
            for name, annot, btok in reversed(binders):
                body = self.restrict(name, annot, body, btok)
            return body
        if tok.kind == "ident" and self.peek().text == "<=":
            self.pos += 2
            return Thread(tok.text, self.expr())
        raise self.error(f"expected a process, found {tok.text or 'end of input'!r}")

    def restrict(self, name: str, annot: RegType | None, body: Process, tok: Token) -> Process:
        free = body.free
        as_var = Name.var(name) in free and _defines_thread(body, name)
        as_chan = any(
            n.base == name and n.kind is not NameKind.VARIABLE for n in free
        )
        if as_var and as_chan:
            raise self.error(f"{name!r} is used both as a thread name and as a channel", tok)
        if not as_var and not as_chan and annot is not None:
            as_chan = annot.tag is Tag.SHARED or (is_session(annot) and Name.var(name) not in free)
        if as_chan:
            return New(Name.chan(name), annot, retag_channel(body, name))
        return New(Name.var(name), annot, body)

    # -------------------------------------------------------------- program

    def program(self) -> Program:
        self.collect_equations()
        prog = Program(types={})
        for name, term in self.equations.items():
            try:
                prog.types[name] = compile_type(term, self.equations)
            except TypeAlgebraError as exc:
                raise ParseError(f"type {name}: {exc}") from None
        positions: dict[str, Token] = {}
        while self.tok.kind != "eof":
            tok = self.tok
            if self.eat("type"):
                self.ident()
                self.expect("=")
                self.type_term()
            elif self.eat("def"):
                name = self.ident()
                if name in prog.defs or name in prog.assumptions:
                    raise self.error(f"duplicate definition of {name!r}", tok)
                self.expect(":")
                t = self.type()
                self.expect("=")
                prog.defs[name] = Definition(name, t, self.expr())
                positions[name] = tok
            elif self.eat("assume"):
                ntok = self.tok
                if ntok.kind == "endpoint":
                    self.pos += 1
                    name = Name.endpoint(ntok.text, ntok.polarity)
                else:
                    base = self.ident()
                    name = None
                self.expect(":")
                t = self.type()
                if name is None:
                    kind = NameKind.CHANNEL if t.tag is Tag.SHARED else NameKind.VARIABLE
                    name = Name(kind, base)
                    self.scope[base] = kind
                if name in prog.assumptions:
                    raise self.error(f"duplicate assumption for {name}", tok)
                prog.assumptions[name] = t
            elif self.eat("proc"):
                name = self.ident()
                if name in prog.processes:
                    raise self.error(f"duplicate process {name!r}", tok)
                self.expect("=")
                prog.processes[name] = self.proc()
            elif self.eat("main"):
                if prog.main is not None:
                    raise self.error("duplicate main process", tok)
                self.expect("=")
                prog.main = self.proc()
            else:
                raise self.error(f"expected a declaration (type, def, assume, proc, main), found {tok.text!r}")
        channels = [n.base for n in prog.assumptions if n.kind is NameKind.CHANNEL]
        for base in channels:
            prog.defs = {k: Definition(d.name, d.type, retag_channel(d.body, base)) for k, d in prog.defs.items()}
            if prog.main is not None:
                prog.main = retag_channel(prog.main, base)
            prog.processes = {k: retag_channel(q, base) for k, q in prog.processes.items()}
        for item in [prog.main, *prog.processes.values(), *(d.body for d in prog.defs.values())]:
            if item is None:
                continue
            try:
                prog.inline(item)
            except ValueError as exc:
                raise ParseError(str(exc)) from None
        return prog

    def collect_equations(self) -> None:
        """Register every type equation first so that they may refer to
        each other regardless of order."""
        names = []
        for k, tok in enumerate(self.toks):
            if tok.kind == "kw" and tok.text == "type":
                nxt = self.toks[k + 1]
                if nxt.kind != "ident":
                    raise ParseError("expected a type name", nxt.line, nxt.col)
                if nxt.text in names:
                    raise ParseError(f"duplicate type {nxt.text!r}", nxt.line, nxt.col)
                names.append(nxt.text)
                self.equations[nxt.text] = TVar(nxt.text)
        for k, tok in enumerate(self.toks):
            if tok.kind == "kw" and tok.text == "type":
                self.pos = k + 2
                self.expect("=")
                self.equations[self.toks[k + 1].text] = self.type_term()
        self.pos = 0


_CONSTANTS = {k.value: k for k in Constant}


def _split_binder(body: Expr) -> str:
    used = bases(body)
    k = 0
    while f"p{k}" in used:
        k += 1
    return f"p{k}"


def _defines_thread(p: Process, name: str) -> bool:
    if isinstance(p, Thread):
        return p.name == name
    if isinstance(p, Par):
        return _defines_thread(p.left, name) or _defines_thread(p.right, name)
    if isinstance(p, New):
        return p.binder != Name.var(name) and _defines_thread(p.body, name)
    return False


def retag_channel(item, base: str, lam: frozenset = frozenset()):
    """Reinterpret free variable occurrences of ``base`` as the shared channel."""
    if isinstance(item, Ref):
        n = item.name
        if n.is_variable and n.base == base and base not in lam:
            return Ref(Name.chan(base))
        return item
    if isinstance(item, (Const, NatLit)):
        return item
    if Name.var(base) not in item.free:
        return item
    if isinstance(item, Lambda):
        return Lambda(item.var, item.annot, retag_channel(item.body, base, lam | {item.var}))
    if isinstance(item, App):
        return App(retag_channel(item.fn, base, lam), retag_channel(item.arg, base, lam))
    if isinstance(item, Split):
        return Split(
            retag_channel(item.scrutinee, base, lam),
            item.left,
            item.right,
            retag_channel(item.body, base, lam | {item.left, item.right}),
        )
    if isinstance(item, Thread):
        return Thread(item.name, retag_channel(item.body, base))
    if isinstance(item, Server):
        return Server(item.name, retag_channel(item.body, base))
    if isinstance(item, Par):
        return Par(retag_channel(item.left, base), retag_channel(item.right, base))
    if isinstance(item, New):
        if item.binder.base == base:
            return item
        return New(item.binder, item.annot, retag_channel(item.body, base))
    return item


def _equations(types: Mapping | None) -> dict:
    out = {}
    for k, v in (types or {}).items():
        out[k] = TLit(v) if isinstance(v, RegType) else v
    return out


def parse_program(text: str) -> Program:
    return _Parser(text).program()


def parse_type(text: str, types: Mapping | None = None) -> RegType:
    p = _Parser(text, _equations(types))
    t = p.type()
    p.expect_eof()
    return t


def parse_expr(text: str, types: Mapping | None = None, channels=()) -> Expr:
    p = _Parser(text, _equations(types), {c: NameKind.CHANNEL for c in channels})
    e = p.expr()
    p.expect_eof()
    return e


def parse_process(text: str, types: Mapping | None = None, channels=()) -> Process:
    p = _Parser(text, _equations(types), {c: NameKind.CHANNEL for c in channels})
    proc = p.proc()
    p.expect_eof()
    return proc
