"""Abstract syntax of expressions and processes.

Expression and process nodes are immutable.  Equality is alpha-equivalence:
``==`` compares a de Bruijn style key that erases the spelling of bound
names, so ``\\x:Nat. x == \\y:Nat. y`` holds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .types import RegType, pretty_type


class NameKind(str, Enum):
    VARIABLE = "variable"
    CHANNEL = "shared-channel"
    ENDPOINT = "endpoint"


POLARITIES = ("+", "-")


@dataclass(frozen=True, order=True)
class Name:
    kind: NameKind
    base: str
    polarity: str | None = None

    def __post_init__(self) -> None:
        if (self.kind is NameKind.ENDPOINT) != (self.polarity is not None):
            raise ValueError("a polarity is carried exactly by endpoints")
        if self.polarity is not None and self.polarity not in POLARITIES:
            raise ValueError(f"bad polarity {self.polarity!r}")

    @staticmethod
    def var(base: str) -> "Name":
        return Name(NameKind.VARIABLE, base)

    @staticmethod
    def chan(base: str) -> "Name":
        return Name(NameKind.CHANNEL, base)

    @staticmethod
    def endpoint(base: str, polarity: str) -> "Name":
        return Name(NameKind.ENDPOINT, base, polarity)

    @property
    def is_variable(self) -> bool:
        return self.kind is NameKind.VARIABLE

    @property
    def scope_key(self) -> tuple[str, str]:
        """The binder a name belongs to: channels and their endpoints share one."""
        return ("v" if self.kind is NameKind.VARIABLE else "c", self.base)

    def co(self) -> "Name":
        if self.polarity is None:
            raise ValueError(f"{self} has no polarity")
        return Name.endpoint(self.base, co(self.polarity))

    def __str__(self) -> str:
        return self.base + (self.polarity or "")


def co(polarity: str) -> str:
    return "-" if polarity == "+" else "+"


class Constant(str, Enum):
    UNIT = "unit"
    PAIR = "pair"
    OPEN = "open"
    SEND = "send"
    RECV = "recv"
    FUTURE = "future"
    RETURN = "return"
    BIND = "bind"
    FIX = "fix"
    ZERO = "zero"
    SUCC = "succ"


# ------------------------------------------------------------- expressions


class Expr:
    """Base class; subclasses are frozen dataclasses compared up to alpha."""

    __slots__ = ()

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self.alpha_key == other.alpha_key

    def __hash__(self) -> int:
        return hash(self.alpha_key)

    def __str__(self) -> str:
        return pretty_expr(self)

    @cached_property
    def alpha_key(self) -> tuple:
        return _expr_key(self, ())

    @cached_property
    def free(self) -> frozenset:
        return _expr_free(self)


@dataclass(frozen=True, eq=False)
class Const(Expr):
    const: Constant


@dataclass(frozen=True, eq=False)
class NatLit(Expr):
    value: int

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("natural literals are non-negative")


@dataclass(frozen=True, eq=False)
class Ref(Expr):
    name: Name


@dataclass(frozen=True, eq=False)
class Lambda(Expr):
    var: str
    annot: RegType
    body: Expr


@dataclass(frozen=True, eq=False)
class App(Expr):
    fn: Expr
    arg: Expr


@dataclass(frozen=True, eq=False)
class Split(Expr):
    scrutinee: Expr
    left: str
    right: str
    body: Expr


def var(base: str) -> Ref:
    return Ref(Name.var(base))


def const(k: Constant | str) -> Const:
    return Const(Constant(k))


def apply(fn: Expr, *args: Expr) -> Expr:
    for a in args:
        fn = App(fn, a)
    return fn


def pair(e: Expr, f: Expr) -> Expr:
    return apply(const(Constant.PAIR), e, f)


def bind(e: Expr, f: Expr) -> Expr:
    return apply(const(Constant.BIND), e, f)


def ret(e: Expr) -> Expr:
    return App(const(Constant.RETURN), e)


def spine(e: Expr) -> tuple[Expr, list[Expr]]:
    """Split ``h a1 ... an`` into its head and argument list."""
    args = []
    while isinstance(e, App):
        args.append(e.arg)
        e = e.fn
    args.reverse()
    return e, args


def _expr_key(e: Expr, env: tuple) -> tuple:
    if isinstance(e, Ref):
        n = e.name
        if n.kind is NameKind.VARIABLE and n.base in env:
            return ("b", len(env) - 1 - env[::-1].index(n.base))
        return ("f", n.kind.value, n.base, n.polarity)
    if isinstance(e, Const):
        return ("k", e.const.value)
    if isinstance(e, NatLit):
        return ("n", e.value)
    if isinstance(e, Lambda):
        return ("l", e.annot, _expr_key(e.body, env + (e.var,)))
    if isinstance(e, App):
        return ("a", _expr_key(e.fn, env), _expr_key(e.arg, env))
    if isinstance(e, Split):
        return (
            "s",
            _expr_key(e.scrutinee, env),
            _expr_key(e.body, env + (e.left, e.right)),
        )
    raise TypeError(f"not an expression: {e!r}")


def _expr_free(e: Expr) -> frozenset:
    if isinstance(e, Ref):
        return frozenset((e.name,))
    if isinstance(e, (Const, NatLit)):
        return frozenset()
    if isinstance(e, Lambda):
        return e.body.free - {Name.var(e.var)}
    if isinstance(e, App):
        return e.fn.free | e.arg.free
    if isinstance(e, Split):
        return e.scrutinee.free | (e.body.free - {Name.var(e.left), Name.var(e.right)})
    raise TypeError(f"not an expression: {e!r}")


# -------------------------------------------------------------- processes


class Process:
    __slots__ = ()

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Process):
            return NotImplemented
        return self.alpha_key == other.alpha_key

    def __hash__(self) -> int:
        return hash(self.alpha_key)

    def __str__(self) -> str:
        return pretty_process(self)

    @cached_property
    def alpha_key(self) -> tuple:
        return _proc_key(self, ())

    @cached_property
    def free(self) -> frozenset:
        return _proc_free(self)


@dataclass(frozen=True, eq=False)
class Idle(Process):
    pass


@dataclass(frozen=True, eq=False)
class Thread(Process):
    name: str
    body: Expr


@dataclass(frozen=True, eq=False)
class Server(Process):
    name: str
    body: Expr


@dataclass(frozen=True, eq=False)
class Par(Process):
    left: Process
    right: Process


@dataclass(frozen=True, eq=False)
class New(Process):
    binder: Name
    annot: RegType | None
    body: Process

    def __post_init__(self) -> None:
        if self.binder.kind is NameKind.ENDPOINT:
            raise ValueError("restrictions bind channels or variables, not endpoints")


def par(*ps: Process) -> Process:
    """Left-nested parallel composition of the arguments."""
    if not ps:
        return Idle()
    out = ps[0]
    for p in ps[1:]:
        out = Par(out, p)
    return out


def new(binders: Iterable[Name | tuple[Name, RegType | None]], body: Process) -> Process:
    items = [b if isinstance(b, tuple) else (b, None) for b in binders]
    for name, annot in reversed(items):
        body = New(name, annot, body)
    return body


def _binds(binder: Name, n: Name) -> bool:
    return binder.scope_key == n.scope_key


def _proc_key(p: Process, env: tuple) -> tuple:
    def name_key(kind: str, base: str) -> tuple:
        key = (kind, base)
        if key in env:
            return ("b", len(env) - 1 - env[::-1].index(key))
        return ("f", kind, base)

    if isinstance(p, Idle):
        return ("0",)
    if isinstance(p, Thread):
        return ("t", name_key("v", p.name), _bound_expr_key(p.body, env))
    if isinstance(p, Server):
        return ("srv", name_key("c", p.name), _bound_expr_key(p.body, env))
    if isinstance(p, Par):
        return ("|", _proc_key(p.left, env), _proc_key(p.right, env))
    if isinstance(p, New):
        return (
            "new",
            p.binder.scope_key[0],
            p.annot,
            _proc_key(p.body, env + (p.binder.scope_key,)),
        )
    raise TypeError(f"not a process: {p!r}")


def _bound_expr_key(e: Expr, env: tuple) -> tuple:
    if not env:
        return e.alpha_key
    mapping = {}
    for i, key in enumerate(reversed(env)):
        mapping.setdefault(key, i)
    return _expr_key_with(e, (), mapping)


def _expr_key_with(e: Expr, lam: tuple, outer: Mapping[tuple, int]) -> tuple:
    if isinstance(e, Ref):
        n = e.name
        if n.kind is NameKind.VARIABLE and n.base in lam:
            return ("b", len(lam) - 1 - lam[::-1].index(n.base))
        if n.scope_key in outer:
            return ("p", outer[n.scope_key], n.kind.value, n.polarity)
        return ("f", n.kind.value, n.base, n.polarity)
    if isinstance(e, Lambda):
        return ("l", e.annot, _expr_key_with(e.body, lam + (e.var,), outer))
    if isinstance(e, App):
        return ("a", _expr_key_with(e.fn, lam, outer), _expr_key_with(e.arg, lam, outer))
    if isinstance(e, Split):
        return (
            "s",
            _expr_key_with(e.scrutinee, lam, outer),
            _expr_key_with(e.body, lam + (e.left, e.right), outer),
        )
    return _expr_key(e, lam)


def _proc_free(p: Process) -> frozenset:
    if isinstance(p, Idle):
        return frozenset()
    if isinstance(p, Thread):
        return p.body.free | {Name.var(p.name)}
    if isinstance(p, Server):
        return p.body.free | {Name.chan(p.name)}
    if isinstance(p, Par):
        return p.left.free | p.right.free
    if isinstance(p, New):
        return frozenset(n for n in p.body.free if not _binds(p.binder, n))
    raise TypeError(f"not a process: {p!r}")


def free_names(item: Expr | Process) -> frozenset:
    """Free names; a thread or server counts the name it defines as free."""
    return item.free


def bases(item: Expr | Process) -> set[str]:
    """Every identifier spelled anywhere in ``item``, bound or free."""
    out: set[str] = set()
    stack: list = [item]
    while stack:
        x = stack.pop()
        if isinstance(x, Ref):
            out.add(x.name.base)
        elif isinstance(x, Lambda):
            out.add(x.var)
            stack.append(x.body)
        elif isinstance(x, App):
            stack += [x.fn, x.arg]
        elif isinstance(x, Split):
            out.update((x.left, x.right))
            stack += [x.scrutinee, x.body]
        elif isinstance(x, (Thread, Server)):
            out.add(x.name)
            stack.append(x.body)
        elif isinstance(x, Par):
            stack += [x.left, x.right]
        elif isinstance(x, New):
            out.add(x.binder.base)
            stack.append(x.body)
    return out


def fresh_base(base: str, avoid: set[str] | frozenset) -> str:
    """``base`` decorated with primes until it avoids ``avoid``."""
    root = base.rstrip("'")
    for k in itertools.count(1):
        cand = root + "'" * k
        if cand not in avoid:
            return cand
    raise AssertionError("unreachable")


def _free_bases(e: Expr | Process) -> set[str]:
    return {n.base for n in e.free}


# ------------------------------------------------------------ substitution


def subst(target: Expr | Process, x: str, value: Expr) -> Expr | Process:
    """Capture-avoiding replacement of the free variable ``x`` by ``value``."""
    if isinstance(target, Process):
        return _subst_proc(target, x, value)
    return _subst_expr(target, x, value)


def subst_many(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Simultaneous substitution, used for splitting a pair into two binders."""
    live = {k: v for k, v in mapping.items() if Name.var(k) in e.free}
    if not live:
        return e
    if isinstance(e, Ref):
        return live.get(e.name.base, e) if e.name.is_variable else e
    if isinstance(e, App):
        return App(subst_many(e.fn, live), subst_many(e.arg, live))
    if isinstance(e, Lambda):
        inner = {k: v for k, v in live.items() if k != e.var}
        binder, body = _freshen(e.var, e.body, inner)
        return Lambda(binder, e.annot, subst_many(body, inner))
    if isinstance(e, Split):
        inner = {k: v for k, v in live.items() if k not in (e.left, e.right)}
        left, body = _freshen(e.left, e.body, inner)
        right, body = _freshen(e.right, body, inner, extra={left})
        return Split(subst_many(e.scrutinee, live), left, right, subst_many(body, inner))
    return e


def _freshen(binder: str, body: Expr, mapping: Mapping[str, Expr], extra=frozenset()):
    """Rename ``binder`` in ``body`` if it would capture a free name of a value."""
    danger = set()
    for k, v in mapping.items():
        if Name.var(k) in body.free:
            danger |= _free_bases(v)
    if binder not in danger:
        return binder, body
    avoid = danger | bases(body) | set(mapping) | set(extra)
    new = fresh_base(binder, avoid)
    return new, _subst_expr(body, binder, var(new))


def _subst_expr(e: Expr, x: str, value: Expr) -> Expr:
    if Name.var(x) not in e.free:
        return e
    if isinstance(e, Ref):
        return value
    if isinstance(e, App):
        return App(_subst_expr(e.fn, x, value), _subst_expr(e.arg, x, value))
    if isinstance(e, Lambda):
        binder, body = _freshen(e.var, e.body, {x: value})
        return Lambda(binder, e.annot, _subst_expr(body, x, value))
    if isinstance(e, Split):
        return subst_many(e, {x: value})
    return e


def _subst_proc(p: Process, x: str, value: Expr) -> Process:
    if Name.var(x) not in p.free:
        return p
    if isinstance(p, Thread):
        return Thread(p.name, _subst_expr(p.body, x, value))
    if isinstance(p, Server):
        return Server(p.name, _subst_expr(p.body, x, value))
    if isinstance(p, Par):
        return Par(_subst_proc(p.left, x, value), _subst_proc(p.right, x, value))
    if isinstance(p, New):
        if p.binder == Name.var(x):
            return p
        vfree = {n.scope_key for n in value.free}
        if p.binder.scope_key in vfree:
            avoid = bases(p.body) | bases(value) | {x}
            renamed = rename_binder(p, fresh_base(p.binder.base, avoid))
            return _subst_proc(renamed, x, value)
        return New(p.binder, p.annot, _subst_proc(p.body, x, value))
    return p


def rename_free(item, mapping: Mapping[tuple[str, str], str]):
    """Rename free process-level names; ``mapping`` is keyed by scope key.

    Targets must be fresh for ``item`` so that no capture can occur.
    """
    if not mapping:
        return item
    if isinstance(item, Expr):
        hit = {k: v for k, v in mapping.items() if any(n.scope_key == k for n in item.free)}
        if not hit:
            return item
        return _rename_expr(item, hit)
    if isinstance(item, Thread):
        return Thread(mapping.get(("v", item.name), item.name), rename_free(item.body, mapping))
    if isinstance(item, Server):
        return Server(mapping.get(("c", item.name), item.name), rename_free(item.body, mapping))
    if isinstance(item, Par):
        return Par(rename_free(item.left, mapping), rename_free(item.right, mapping))
    if isinstance(item, New):
        inner = {k: v for k, v in mapping.items() if k != item.binder.scope_key}
        return New(item.binder, item.annot, rename_free(item.body, inner))
    return item


def _rename_expr(e: Expr, mapping: Mapping[tuple[str, str], str], lam: frozenset = frozenset()) -> Expr:
    if isinstance(e, Ref):
        n = e.name
        if n.is_variable and n.base in lam:
            return e
        new = mapping.get(n.scope_key)
        return e if new is None else Ref(Name(n.kind, new, n.polarity))
    if isinstance(e, App):
        return App(_rename_expr(e.fn, mapping, lam), _rename_expr(e.arg, mapping, lam))
    if isinstance(e, Lambda):
        return Lambda(e.var, e.annot, _rename_expr(e.body, mapping, lam | {e.var}))
    if isinstance(e, Split):
        return Split(
            _rename_expr(e.scrutinee, mapping, lam),
            e.left,
            e.right,
            _rename_expr(e.body, mapping, lam | {e.left, e.right}),
        )
    return e


def rename_binder(p: New, new_base: str) -> New:
    binder = Name(p.binder.kind, new_base)
    return New(binder, p.annot, rename_free(p.body, {p.binder.scope_key: new_base}))


# ---------------------------------------------------------------- printing


def _is_const(e: Expr, k: Constant) -> bool:
    return isinstance(e, Const) and e.const is k


def pretty_expr(e: Expr) -> str:
    return _show(e)[0]


def _show(e: Expr) -> tuple[str, int]:
    """Return text and precedence: 0 binder forms, 1 bind, 2 application, 3 atom."""
    if isinstance(e, Ref):
        return str(e.name), 3
    if isinstance(e, Const):
        return e.const.value, 3
    if isinstance(e, NatLit):
        return str(e.value), 3
    if isinstance(e, Lambda):
        body = e.body
        if (
            isinstance(body, Split)
            and isinstance(body.scrutinee, Ref)
            and body.scrutinee.name == Name.var(e.var)
            and Name.var(e.var) not in body.body.free
        ):
            return f"\\<{body.left}, {body.right}>:{pretty_type(e.annot)}. {_show(body.body)[0]}", 0
        return f"\\{e.var}:{pretty_type(e.annot)}. {_show(body)[0]}", 0
    if isinstance(e, Split):
        return (
            f"split {_wrap(e.scrutinee, 1)} as {e.left}, {e.right} in {_show(e.body)[0]}",
            0,
        )
    if isinstance(e, App):
        head, args = spine(e)
        if len(args) == 2 and _is_const(head, Constant.PAIR):
            return f"({_show(args[0])[0]}, {_show(args[1])[0]})", 3
        if len(args) == 2 and _is_const(head, Constant.BIND):
            return f"{_wrap(args[0], 2)} >>= {_show(args[1])[0]}", 1
        return f"{_wrap(e.fn, 2)} {_wrap(e.arg, 3)}", 2
    raise TypeError(f"not an expression: {e!r}")


def _wrap(e: Expr, need: int) -> str:
    text, level = _show(e)
    return text if level >= need else f"({text})"


def pretty_process(p: Process) -> str:
    if isinstance(p, Idle):
        return "0"
    if isinstance(p, Thread):
        return f"{p.name} <= {pretty_expr(p.body)}"
    if isinstance(p, Server):
        return f"server {p.name} = {pretty_expr(p.body)}"
    if isinstance(p, Par):
        right = pretty_process(p.right)
        if isinstance(p.right, Par):
            right = f"({right})"
        return f"{pretty_process(p.left)} | {right}"
    if isinstance(p, New):
        binders = []
        while True:
            ann = "" if p.annot is None else f" : {pretty_type(p.annot)}"
            binders.append(f"{p.binder.base}{ann}")
            if not isinstance(p.body, New):
                break
            p = p.body
        body = pretty_process(p.body)
        if isinstance(p.body, Par):
            body = f"({body})"
        return f"new {', '.join(binders)} in {body}"
    raise TypeError(f"not a process: {p!r}")


def pretty(item: Expr | Process | RegType) -> str:
    """Surface text for an expression, a process or a type."""
    if isinstance(item, RegType):
        return pretty_type(item)
    if isinstance(item, Process):
        return pretty_process(item)
    return pretty_expr(item)


# --------------------------------------------------- structural congruence


@dataclass(frozen=True)
class Soup:
    """A process with every restriction pulled to the front.

    ``tree`` keeps the parallel shape of the threads (servers and idle
    processes pruned) as nested pairs of :class:`Thread` leaves.
    """

    binders: tuple
    threads: tuple
    servers: tuple
    tree: object = field(default=None, compare=False)

    def process(self) -> Process:
        parts: list[Process] = []
        if self.tree is not None:
            parts.append(tree_process(self.tree))
        parts.extend(self.servers)
        return new(self.binders, par(*parts) if parts else Idle())


def tree_process(tree) -> Process:
    if isinstance(tree, tuple):
        return Par(tree_process(tree[0]), tree_process(tree[1]))
    return tree


def flatten(p: Process, avoid: Iterable[str] = ()) -> Soup:
    """Scope-extrude every restriction, renaming binders apart."""
    used = set(avoid) | {n.base for n in p.free}
    binders: list = []
    threads: list = []
    servers: list = []

    def walk(q: Process):
        if isinstance(q, Idle):
            return None
        if isinstance(q, Thread):
            threads.append(q)
            return q
        if isinstance(q, Server):
            servers.append(q)
            return None
        if isinstance(q, Par):
            left, right = walk(q.left), walk(q.right)
            if left is None:
                return right
            if right is None:
                return left
            return (left, right)
        if isinstance(q, New):
            if q.binder.base in used:
                q = rename_binder(q, fresh_base(q.binder.base, used | bases(q.body)))
            used.add(q.binder.base)
            binders.append((q.binder, q.annot))
            return walk(q.body)
        raise TypeError(f"not a process: {q!r}")

    tree = walk(p)
    return Soup(tuple(binders), tuple(threads), tuple(servers), tree)


def _signature(item: Process, bound: frozenset) -> tuple:
    mapping = {k: 0 for k in bound}
    if isinstance(item, Thread):
        head = "b" if ("v", item.name) in bound else item.name
        return ("t", head, _expr_key_with(item.body, (), mapping))
    head = "b" if ("c", item.name) in bound else item.name
    return ("s", head, _expr_key_with(item.body, (), mapping))


def struct_equiv(p: Process, q: Process) -> bool:
    """Decide structural congruence (monoid laws, alpha, scope extrusion)."""
    if p.free != q.free:
        return False
    sp, sq = flatten(p, bases(q)), flatten(q, bases(p))
    comps_p = list(sp.threads) + list(sp.servers)
    comps_q = list(sq.threads) + list(sq.servers)
    if len(comps_p) != len(comps_q):
        return False
    used_p = set().union(*(c.free for c in comps_p)) if comps_p else set()
    used_q = set().union(*(c.free for c in comps_q)) if comps_q else set()
    bound_p = frozenset(b.scope_key for b, _ in sp.binders if any(n.scope_key == b.scope_key for n in used_p))
    bound_q = frozenset(b.scope_key for b, _ in sq.binders if any(n.scope_key == b.scope_key for n in used_q))
    if len(bound_p) != len(bound_q):
        return False
    sig_p = [_signature(c, bound_p) for c in comps_p]
    sig_q = [_signature(c, bound_q) for c in comps_q]
    if sorted(map(repr, sig_p)) != sorted(map(repr, sig_q)):
        return False
    order = sorted(range(len(comps_p)), key=lambda i: sum(s == sig_p[i] for s in sig_p))

    def search(k: int, taken: frozenset, bij: dict) -> bool:
        if k == len(order):
            return True
        i = order[k]
        for j, cq in enumerate(comps_q):
            if j in taken or sig_q[j] != sig_p[i]:
                continue
            got = _match_component(comps_p[i], cq, bij, bound_p, bound_q)
            if got is not None and search(k + 1, taken | {j}, got):
                return True
        return False

    return search(0, frozenset(), {})


def _bind_name(bij: dict, a: tuple, b: tuple, bound_p, bound_q) -> dict | None:
    ap, bq = a in bound_p, b in bound_q
    if ap != bq:
        return None
    if not ap:
        return bij if a == b else None
    if a in bij:
        return bij if bij[a] == b else None
    if ("inv", b) in bij:
        return None
    out = dict(bij)
    out[a] = b
    out[("inv", b)] = a
    return out


def _match_component(a: Process, b: Process, bij, bound_p, bound_q):
    if type(a) is not type(b):
        return None
    kind = "v" if isinstance(a, Thread) else "c"
    bij = _bind_name(bij, (kind, a.name), (kind, b.name), bound_p, bound_q)
    if bij is None:
        return None
    return _match_expr(a.body, b.body, bij, (), (), bound_p, bound_q)


def _match_expr(e, f, bij, lam_e, lam_f, bound_p, bound_q):
    if type(e) is not type(f):
        return None
    if isinstance(e, Ref):
        ne, nf = e.name, f.name
        if ne.kind is not nf.kind or ne.polarity != nf.polarity:
            return None
        in_e = ne.is_variable and ne.base in lam_e
        in_f = nf.is_variable and nf.base in lam_f
        if in_e or in_f:
            if not (in_e and in_f):
                return None
            ie = len(lam_e) - 1 - lam_e[::-1].index(ne.base)
            jf = len(lam_f) - 1 - lam_f[::-1].index(nf.base)
            return bij if ie == jf else None
        return _bind_name(bij, ne.scope_key, nf.scope_key, bound_p, bound_q)
    if isinstance(e, (Const, NatLit)):
        return bij if e.alpha_key == f.alpha_key else None
    if isinstance(e, Lambda):
        if e.annot != f.annot:
            return None
        return _match_expr(e.body, f.body, bij, lam_e + (e.var,), lam_f + (f.var,), bound_p, bound_q)
    if isinstance(e, App):
        bij = _match_expr(e.fn, f.fn, bij, lam_e, lam_f, bound_p, bound_q)
        if bij is None:
            return None
        return _match_expr(e.arg, f.arg, bij, lam_e, lam_f, bound_p, bound_q)
    if isinstance(e, Split):
        bij = _match_expr(e.scrutinee, f.scrutinee, bij, lam_e, lam_f, bound_p, bound_q)
        if bij is None:
            return None
        return _match_expr(
            e.body, f.body, bij, lam_e + (e.left, e.right), lam_f + (f.left, f.right), bound_p, bound_q
        )
    return None


# ----------------------------------------------------------------- programs


@dataclass(frozen=True)
class Definition:
    name: str
    type: RegType
    body: Expr


@dataclass
class Program:
    """A parsed source file: type equations, definitions, assumptions, main."""

    types: dict = field(default_factory=dict)
    defs: dict = field(default_factory=dict)
    assumptions: dict = field(default_factory=dict)
    main: Process | None = None
    processes: dict = field(default_factory=dict)

    def inline(self, item: Expr | Process):
        """Replace references to definitions by their (inlined) bodies."""
        for _ in range(len(self.defs) + 1):
            names = {n.base for n in item.free if n.is_variable and n.base in self.defs}
            if not names:
                return item
            for name in names:
                item = subst(item, name, self.defs[name].body)
        raise ValueError("definitions refer to each other cyclically")

    def definition_body(self, name: str) -> Expr:
        return self.inline(self.defs[name].body)

    def named_process(self, name: str) -> Process:
        return self.main_process() if name == "main" else self.inline(self.processes[name])

    def main_process(self) -> Process:
        if self.main is None:
            raise ValueError("program has no main process")
        return self.inline(self.main)


def walk_expr(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        x = stack.pop()
        yield x
        if isinstance(x, Lambda):
            stack.append(x.body)
        elif isinstance(x, App):
            stack += [x.arg, x.fn]
        elif isinstance(x, Split):
            stack += [x.body, x.scrutinee]
