"""Regular types as finite rooted graphs.

A :class:`RegType` is stored in a canonical form: the graph is minimised
(bisimilar nodes merged) and renumbered breadth-first from the root, which
is always node 0.  Two types are therefore bisimilar exactly when their node
tables are equal, and every structural predicate terminates because the
table is finite.  :func:`type_equal` still runs the product-graph check so
that the canonicaliser itself can be tested against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

from . import _kernels


class Tag(str, Enum):
    UNIT = "Unit"
    NAT = "Nat"
    END = "end"
    SHARED = "shared"
    IN = "in"
    OUT = "out"
    PROD = "prod"
    ARROW = "arrow"
    LOLLI = "lolli"
    IO = "io"
    BULLET = "bullet"


ARITY = {
    Tag.UNIT: 0,
    Tag.NAT: 0,
    Tag.END: 0,
    Tag.SHARED: 1,
    Tag.IN: 2,
    Tag.OUT: 2,
    Tag.PROD: 2,
    Tag.ARROW: 2,
    Tag.LOLLI: 2,
    Tag.IO: 1,
    Tag.BULLET: 1,
}
TAG_CODE = {tag: i for i, tag in enumerate(Tag)}
SESSION_TAGS = frozenset({Tag.END, Tag.IN, Tag.OUT, Tag.BULLET})

Node = tuple  # (Tag, tuple[int, ...])


class TypeAlgebraError(ValueError):
    """A type operation was applied outside its domain."""


@lru_cache(maxsize=65536)
def _canonical(nodes: tuple, root: int) -> tuple:
    reach: list[int] = []
    seen = {root}
    stack = [root]
    while stack:
        n = stack.pop()
        reach.append(n)
        for c in nodes[n][1]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    block: dict[int, object] = {n: nodes[n][0] for n in reach}
    count = len(set(block.values()))
    while True:
        ids: dict[tuple, int] = {}
        fresh = {}
        for n in reach:
            sig = (block[n], tuple(block[c] for c in nodes[n][1]))
            fresh[n] = ids.setdefault(sig, len(ids))
        block = fresh
        if len(ids) == count:
            break
        count = len(ids)
    rep: dict[int, int] = {}
    for n in reach:
        rep.setdefault(block[n], n)
    number = {block[root]: 0}
    order = [block[root]]
    i = 0
    while i < len(order):
        b = order[i]
        i += 1
        for c in nodes[rep[b]][1]:
            cb = block[c]
            if cb not in number:
                number[cb] = len(order)
                order.append(cb)
    return tuple(
        (nodes[rep[b]][0], tuple(number[block[c]] for c in nodes[rep[b]][1]))
        for b in order
    )


@dataclass(frozen=True)
class RegType:
    """A possibly infinite regular type; node 0 is the root."""

    nodes: tuple

    @staticmethod
    def from_table(nodes: Sequence[Node], root: int = 0) -> "RegType":
        table = tuple((Tag(tag), tuple(kids)) for tag, kids in nodes)
        for tag, kids in table:
            if len(kids) != ARITY[tag]:
                raise TypeAlgebraError(f"{tag.value} expects {ARITY[tag]} children")
        t = RegType(_canonical(table, root))
        _check_sorts(t)
        return t

    @property
    def tag(self) -> Tag:
        return self.nodes[0][0]

    @property
    def size(self) -> int:
        return len(self.nodes)

    def child(self, i: int) -> "RegType":
        return _subgraph(self.nodes, self.nodes[0][1][i])

    @property
    def children(self) -> tuple["RegType", ...]:
        return tuple(self.child(i) for i in range(len(self.nodes[0][1])))

    def __repr__(self) -> str:
        return f"RegType({pretty_type(self)!r})"

    def __str__(self) -> str:
        return pretty_type(self)


@lru_cache(maxsize=65536)
def _subgraph(nodes: tuple, root: int) -> RegType:
    return RegType(_canonical(nodes, root))


def _compose(tag: Tag, children: Sequence[RegType]) -> RegType:
    table: list = [None]
    roots = []
    for ch in children:
        off = len(table)
        roots.append(off)
        table.extend((t, tuple(k + off for k in ks)) for t, ks in ch.nodes)
    table[0] = (tag, tuple(roots))
    return RegType(_canonical(tuple(table), 0))


# ---------------------------------------------------------------- builders

UNIT = RegType(((Tag.UNIT, ()),))
NAT = RegType(((Tag.NAT, ()),))
END = RegType(((Tag.END, ()),))
INF = RegType(((Tag.BULLET, (0,)),))


def shared(session: RegType) -> RegType:
    if not is_session(session):
        raise TypeAlgebraError("a shared channel carries a session type")
    return _compose(Tag.SHARED, [session])


def inp(payload: RegType, cont: RegType) -> RegType:
    if not is_session(cont):
        raise TypeAlgebraError("input continuation must be a session type")
    return _compose(Tag.IN, [payload, cont])


def out(payload: RegType, cont: RegType) -> RegType:
    if not is_session(cont):
        raise TypeAlgebraError("output continuation must be a session type")
    return _compose(Tag.OUT, [payload, cont])


def prod(left: RegType, right: RegType) -> RegType:
    return _compose(Tag.PROD, [left, right])


def arrow(dom: RegType, cod: RegType) -> RegType:
    return _compose(Tag.ARROW, [dom, cod])


def lolli(dom: RegType, cod: RegType) -> RegType:
    return _compose(Tag.LOLLI, [dom, cod])


def io(result: RegType) -> RegType:
    return _compose(Tag.IO, [result])


def bullet(t: RegType, n: int = 1) -> RegType:
    for _ in range(n):
        t = _compose(Tag.BULLET, [t])
    return t


# ------------------------------------------------------- recursive equations


@dataclass(frozen=True)
class TVar:
    name: str


@dataclass(frozen=True)
class TCon:
    tag: Tag
    args: tuple = ()


@dataclass(frozen=True)
class TRec:
    var: str
    body: object


@dataclass(frozen=True)
class TLit:
    type: RegType


TypeTerm = TVar | TCon | TRec | TLit


def compile_type(term: TypeTerm, equations: Mapping[str, TypeTerm] | None = None) -> RegType:
    """Turn a type term, possibly referring to named equations, into a graph.

    Equations may be mutually recursive.  A cycle made only of names and
    ``rec`` binders, such as ``rec X. X``, has no solution and is rejected.
    """
    equations = equations or {}
    table: list[list] = []
    named: dict[str, int] = {}

    def alias() -> int:
        table.append(["alias", None])
        return len(table) - 1

    def walk(t: TypeTerm, env: Mapping[str, int]) -> int:
        if isinstance(t, TCon):
            idx = len(table)
            table.append([t.tag, None])
            table[idx][1] = [walk(a, env) for a in t.args]
            return idx
        if isinstance(t, TVar):
            if t.name in env:
                return env[t.name]
            if t.name in equations:
                if t.name not in named:
                    a = alias()
                    named[t.name] = a
                    table[a][1] = walk(equations[t.name], {})
                return named[t.name]
            raise TypeAlgebraError(f"unknown type name {t.name!r}")
        if isinstance(t, TRec):
            a = alias()
            table[a][1] = walk(t.body, {**env, t.var: a})
            return a
        if isinstance(t, TLit):
            off = len(table)
            table.extend([tag, [k + off for k in ks]] for tag, ks in t.type.nodes)
            return off
        raise TypeError(f"not a type term: {t!r}")

    root = walk(term, {})

    def resolve(i: int) -> int:
        hops = set()
        while table[i][0] == "alias":
            if i in hops:
                raise TypeAlgebraError("recursive type equation is not contractive")
            hops.add(i)
            i = table[i][1]
        return i

    final = []
    for tag, kids in table:
        if tag == "alias":
            final.append((Tag.UNIT, ()))  # unreachable after resolution
        else:
            final.append((tag, tuple(resolve(k) for k in kids)))
    return RegType.from_table(final, resolve(root))


# ------------------------------------------------------------- predicates


@lru_cache(maxsize=65536)
def _sessionness(nodes: tuple) -> tuple:
    ok = [tag in SESSION_TAGS for tag, _ in nodes]
    changed = True
    while changed:
        changed = False
        for i, (tag, kids) in enumerate(nodes):
            if ok[i] and tag is Tag.BULLET and not ok[kids[0]]:
                ok[i] = False
                changed = True
    return tuple(ok)


def is_session(t: RegType) -> bool:
    """True when ``t`` is generated by end, ?t.T, !t.T and the delay."""
    return _sessionness(t.nodes)[0]


def _check_sorts(t: RegType) -> None:
    sess = _sessionness(t.nodes)
    for tag, kids in t.nodes:
        if tag in (Tag.IN, Tag.OUT) and not sess[kids[1]]:
            raise TypeAlgebraError("session continuation must be a session type")
        if tag is Tag.SHARED and not sess[kids[0]]:
            raise TypeAlgebraError("a shared channel carries a session type")


@lru_cache(maxsize=65536)
def _linearity(nodes: tuple) -> tuple:
    lin = [False] * len(nodes)
    changed = True
    while changed:
        changed = False
        for i, (tag, kids) in enumerate(nodes):
            if lin[i]:
                continue
            if tag in (Tag.IN, Tag.OUT, Tag.LOLLI, Tag.IO):
                now = True
            elif tag is Tag.PROD:
                now = lin[kids[0]] or lin[kids[1]]
            elif tag is Tag.BULLET:
                now = lin[kids[0]]
            else:
                now = False
            if now:
                lin[i] = True
                changed = True
    return tuple(lin)


def is_linear(t: RegType) -> bool:
    """Least-fixpoint linearity; ``•∞`` is therefore unlimited."""
    return _linearity(t.nodes)[0]


def is_unlimited(t: RegType) -> bool:
    return not is_linear(t)


class Violation(NamedTuple):
    condition: int
    path: tuple
    detail: str


@dataclass(frozen=True)
class TypeValidityReport:
    valid: bool
    violations: tuple = ()


def _paths(nodes: tuple) -> dict[int, tuple]:
    paths = {0: ()}
    queue = [0]
    for n in queue:
        tag, kids = nodes[n]
        for i, c in enumerate(kids):
            if c not in paths:
                paths[c] = paths[n] + (f"{tag.value}[{i}]",)
                queue.append(c)
    return paths


def _bullet_free_cycle(nodes: tuple) -> list[int] | None:
    colour = [0] * len(nodes)
    for start in range(len(nodes)):
        if colour[start] or nodes[start][0] is Tag.BULLET:
            continue
        stack = [(start, iter(nodes[start][1]))]
        trail = [start]
        colour[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                trail.pop()
                colour[node] = 2
                continue
            if nodes[nxt][0] is Tag.BULLET:
                continue
            if colour[nxt] == 1:
                return trail[trail.index(nxt):]
            if colour[nxt] == 0:
                colour[nxt] = 1
                trail.append(nxt)
                stack.append((nxt, iter(nodes[nxt][1])))
    return None


@lru_cache(maxsize=16384)
def validate(t: RegType) -> TypeValidityReport:
    """Check the four well-formedness conditions on a pre-type graph.

    Condition 3 (finitely many sub-trees) holds by construction and is never
    reported.
    """
    lin = _linearity(t.nodes)
    paths = _paths(t.nodes)
    found: list[Violation] = []
    for n, (tag, kids) in enumerate(t.nodes):
        if tag is Tag.ARROW and not lin[kids[1]] and lin[kids[0]]:
            found.append(Violation(1, paths[n], "unlimited result but linear argument"))
        if tag is Tag.LOLLI and not lin[kids[1]]:
            found.append(Violation(2, paths[n], "linear arrow with unlimited result"))
    cycle = _bullet_free_cycle(t.nodes)
    if cycle is not None:
        found.append(
            Violation(4, paths[cycle[0]], "cycle without delay through " + ", ".join(
                t.nodes[c][0].value for c in cycle))
        )
    return TypeValidityReport(not found, tuple(found))


def is_valid(t: RegType) -> bool:
    return validate(t).valid


def dual(t: RegType) -> RegType:
    """Swap inputs and outputs along the session spine; payloads are kept."""
    if not is_session(t):
        raise TypeAlgebraError(f"dual of a non-session type {pretty_type(t)}")
    nodes = t.nodes
    base = len(nodes)
    copy: dict[int, int] = {}
    order = [0]
    copy[0] = base
    extra: list = []
    i = 0
    while i < len(order):
        n = order[i]
        i += 1
        tag, kids = nodes[n]
        spine = kids[1:] if tag in (Tag.IN, Tag.OUT) else kids
        for c in spine:
            if c not in copy:
                copy[c] = base + len(order)
                order.append(c)
    for n in order:
        tag, kids = nodes[n]
        if tag is Tag.IN:
            extra.append((Tag.OUT, (kids[0], copy[kids[1]])))
        elif tag is Tag.OUT:
            extra.append((Tag.IN, (kids[0], copy[kids[1]])))
        elif tag is Tag.BULLET:
            extra.append((Tag.BULLET, (copy[kids[0]],)))
        else:
            extra.append((tag, ()))
    return RegType(_canonical(nodes + tuple(extra), base))


def _encode(t: RegType) -> tuple[list[int], list[tuple[int, ...]]]:
    return [TAG_CODE[tag] for tag, _ in t.nodes], [kids for _, kids in t.nodes]


def type_equal(t: RegType, s: RegType) -> bool:
    """Bisimilarity of the two rooted graphs (product-graph search)."""
    ta, ka = _encode(t)
    tb, kb = _encode(s)
    return _kernels.bisimilar(ta, ka, 0, tb, kb, 0)


def is_subtype(t: RegType, s: RegType) -> bool:
    """Coinductive check of ``t <= s`` where an unlimited arrow may stand in
    for a linear one.  Function domains are contravariant; channel payloads
    and shared channel types are compared for equality.
    """
    if t == s:
        return True
    seen = set()
    stack = [(t.nodes, 0, s.nodes, 0)]
    while stack:
        na, x, nb, y = stack.pop()
        key = (na, x, nb, y)
        if key in seen:
            continue
        seen.add(key)
        ta, ka = na[x]
        tb, kb = nb[y]
        if ta != tb and not (ta is Tag.ARROW and tb is Tag.LOLLI):
            return False
        if ta in (Tag.ARROW, Tag.LOLLI):
            stack.append((nb, kb[0], na, ka[0]))
            stack.append((na, ka[1], nb, kb[1]))
        elif ta in (Tag.IN, Tag.OUT):
            if _subgraph(na, ka[0]) != _subgraph(nb, kb[0]):
                return False
            stack.append((na, ka[1], nb, kb[1]))
        elif ta is Tag.SHARED:
            if _subgraph(na, ka[0]) != _subgraph(nb, kb[0]):
                return False
        else:
            for cx, cy in zip(ka, kb):
                stack.append((na, cx, nb, cy))
    return True


# ---------------------------------------------------------------- measures


def rank(t: RegType) -> int:
    """Depth of non-delayed structure; delayed, session, shared and basic
    types have rank 0 and IO, products and arrows add one."""
    nodes = t.nodes
    memo: dict[int, int] = {}
    active: set[int] = set()

    def go(n: int) -> int:
        if n in memo:
            return memo[n]
        tag, kids = nodes[n]
        if tag in (Tag.UNIT, Tag.NAT, Tag.END, Tag.IN, Tag.OUT, Tag.SHARED, Tag.BULLET):
            r = 0
        else:
            if n in active:
                raise TypeAlgebraError("rank is undefined on a cycle without delay")
            active.add(n)
            r = 1 + max(go(k) for k in kids)
            active.discard(n)
        memo[n] = r
        return r

    return go(0)


def leading_bullets(t: RegType) -> tuple[int | None, RegType]:
    """``(n, core)`` with ``t = •ⁿ core`` and ``core`` not a delay.

    For a type whose delays never stop (``•∞``) the count is ``None`` and the
    core is ``INF``.
    """
    n = 0
    seen = set()
    node = 0
    nodes = t.nodes
    while nodes[node][0] is Tag.BULLET:
        if node in seen:
            return None, INF
        seen.add(node)
        node = nodes[node][1][0]
        n += 1
    return n, _subgraph(nodes, node)


def delay(t: RegType) -> int:
    n, _ = leading_bullets(t)
    if n is None:
        raise TypeAlgebraError("delay is undefined on •∞")
    return n


def ct(m: int, t: RegType) -> int:
    """Number of communications in session type ``t`` available by time ``m``."""
    if m < 0:
        raise TypeAlgebraError("time must be non-negative")
    if not is_session(t):
        raise TypeAlgebraError("ct is defined on session types")
    if t == INF:
        raise TypeAlgebraError("ct is undefined on •∞")
    nodes = t.nodes
    total = 0
    node, time = 0, m
    seen = set()
    while True:
        if (node, time) in seen:
            raise TypeAlgebraError("session type has a cycle without delay")
        seen.add((node, time))
        tag, kids = nodes[node]
        if tag is Tag.END:
            return total
        if tag in (Tag.IN, Tag.OUT):
            total += 1
            node = kids[1]
        else:
            if time == 0:
                return total
            time -= 1
            node = kids[0]


def add_bullets(t: RegType, n: int) -> RegType:
    return bullet(t, n)


def strip_bullets(t: RegType, n: int) -> RegType:
    node = 0
    nodes = t.nodes
    for _ in range(n):
        tag, kids = nodes[node]
        if tag is not Tag.BULLET:
            raise TypeAlgebraError(f"cannot strip {n} delays from {pretty_type(t)}")
        node = kids[0]
    return _subgraph(nodes, node)


def bullet_match(t: RegType, n: int, *, strip: bool = False) -> RegType:
    """Add, or with ``strip=True`` remove, exactly ``n`` leading delays."""
    if n < 0:
        raise TypeAlgebraError("delay count must be non-negative")
    return strip_bullets(t, n) if strip else add_bullets(t, n)


def session_advance(t: RegType) -> RegType:
    """Drop the first communication of ``•ᵐ ?s.T`` or ``•ᵐ !s.T``, keeping
    the ``•ᵐ`` prefix."""
    n, core = leading_bullets(t)
    if n is None or core.tag not in (Tag.IN, Tag.OUT):
        raise TypeAlgebraError(f"no communication to perform on {pretty_type(t)}")
    return bullet(core.child(1), n)


# ---------------------------------------------------------------- printing

_BINDERS = ("S", "T", "U", "V", "W", "X", "Y", "Z")


def _binder(i: int) -> str:
    base = _BINDERS[i % len(_BINDERS)]
    return base if i < len(_BINDERS) else f"{base}{i // len(_BINDERS)}"


def pretty_type(t: RegType) -> str:
    """Surface notation; cycles are printed with ``rec`` binders."""
    nodes = t.nodes
    frames: dict[int, list] = {}
    counter = [0]

    def show(n: int) -> tuple[str, int]:
        if n in frames:
            frame = frames[n]
            if frame[0] is None:
                frame[0] = _binder(counter[0])
                counter[0] += 1
            return frame[0], 3
        frame = [None]
        frames[n] = frame
        tag, kids = nodes[n]
        if tag is Tag.UNIT:
            text, level = "Unit", 3
        elif tag is Tag.NAT:
            text, level = "Nat", 3
        elif tag is Tag.END:
            text, level = "end", 3
        elif tag is Tag.SHARED:
            text, level = f"<{show(kids[0])[0]}>", 3
        elif tag in (Tag.IN, Tag.OUT):
            mark = "?" if tag is Tag.IN else "!"
            text, level = f"{mark}{wrap(kids[0], 2)}.{wrap(kids[1], 2)}", 2
        elif tag is Tag.PROD:
            text, level = f"{wrap(kids[0], 2)} * {wrap(kids[1], 1)}", 1
        elif tag in (Tag.ARROW, Tag.LOLLI):
            op = "->" if tag is Tag.ARROW else "-o"
            text, level = f"{wrap(kids[0], 1)} {op} {wrap(kids[1], 0)}", 0
        elif tag is Tag.IO:
            text, level = f"IO {wrap(kids[0], 2)}", 2
        else:
            text, level = f"@{wrap(kids[0], 2)}", 2
        del frames[n]
        if frame[0] is not None:
            return f"rec {frame[0]}. {text}", 0
        return text, level

    def wrap(n: int, need: int) -> str:
        text, level = show(n)
        return text if level >= need else f"({text})"

    return show(0)[0]
