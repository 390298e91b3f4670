"""Well-polarisation, precedence between threads, weights and run monitors."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, NamedTuple

from . import _kernels
from .semantics import (
    BudgetExceeded,
    Choice,
    IOHead,
    MachineState,
    Rule,
    Stuck,
    decompose,
    enabled,
    is_final_state,
    make_scheduler,
    normalize,
    apply,
)
from .syntax import (
    Constant,
    Expr,
    Idle,
    Name,
    NameKind,
    Par,
    Process,
    Thread,
    flatten,
    tree_process,
    pretty,
)
from .typecheck import TypeCheckError, is_balanced, type_process
from .types import INF, Tag, bullet, ct, delay, leading_bullets

# ----------------------------------------------------------- splitting


class SplitProcess(NamedTuple):
    bounds: tuple
    threads: Process
    servers: tuple


def split(p: Process) -> SplitProcess:
    """Restrictions, the thread-only part (shape kept) and the servers."""
    soup = flatten(p)
    threads = Idle() if soup.tree is None else tree_process(soup.tree)
    return SplitProcess(tuple(b for b, _ in soup.binders), threads, tuple(soup.servers))


# --------------------------------------------------- polarised names


class Polarised(NamedTuple):
    """A variable or session channel together with a polarity."""

    kind: str  # "var" or "chan"
    base: str
    polarity: str

    def co(self) -> "Polarised":
        return Polarised(self.kind, self.base, "-" if self.polarity == "+" else "+")

    def __str__(self) -> str:
        return self.base + self.polarity


PolaritySet = frozenset


def _expr_names(e: Expr) -> frozenset:
    out = set()
    for n in e.free:
        if n.kind is NameKind.ENDPOINT:
            out.add(Polarised("chan", n.base, n.polarity))
        elif n.kind is NameKind.VARIABLE:
            out.add(Polarised("var", n.base, "+"))
    return frozenset(out)


def polarised_names(item: Expr | Process) -> PolaritySet:
    if isinstance(item, Expr):
        return _expr_names(item)
    if isinstance(item, Idle):
        return frozenset()
    if isinstance(item, Thread):
        return frozenset({Polarised("var", item.name, "-")}) | _expr_names(item.body)
    if isinstance(item, Par):
        return polarised_names(item.left) | polarised_names(item.right)
    raise TypeError("polarised names are defined on expressions and thread-only processes")


def independent(a: Iterable[Polarised], b: Iterable[Polarised]) -> bool:
    b = set(b)
    return not any(x.co() in b for x in a)


def _conflicts(a: frozenset, b: frozenset) -> list:
    return [x for x in a if x.co() in b]


def _leaf_ok(t: Thread) -> bool:
    names = _expr_names(t.body)
    return Polarised("var", t.name, "+") not in names and independent(names, names)


def wp_on_tree(p: Process) -> bool:
    """Decide well-polarisation of a thread-only process in its given shape."""
    return _wp_tree(p)[0]


def _wp_tree(p: Process) -> tuple[bool, frozenset]:
    if isinstance(p, Idle):
        return True, frozenset()
    if isinstance(p, Thread):
        return _leaf_ok(p), polarised_names(p)
    if isinstance(p, Par):
        ok1, n1 = _wp_tree(p.left)
        ok2, n2 = _wp_tree(p.right)
        return ok1 and ok2 and len(_conflicts(n1, n2)) <= 1, n1 | n2
    raise TypeError("well-polarisation is defined on thread-only processes")


# --------------------------------------------- existential arrangement


@dataclass(frozen=True)
class WPResult:
    holds: bool
    witness: Process | None = None
    method: str = "peel"

    def __bool__(self) -> bool:
        return self.holds


def _threads_of(p: Process | Iterable[Thread]) -> list[Thread]:
    if isinstance(p, Process):
        return list(flatten(p).threads)
    return list(p)


def _tree_to_process(tree, threads: list[Thread]) -> Process:
    if tree == ():
        return Idle()
    if isinstance(tree, tuple):
        return Par(_tree_to_process(tree[0], threads), _tree_to_process(tree[1], threads))
    return threads[tree]


def wp_reference(p: Process | Iterable[Thread]) -> WPResult:
    """Search every arrangement of the threads (authoritative, exponential)."""
    threads = _threads_of(p)
    names = sorted({x for t in threads for x in polarised_names(t)}, key=lambda x: (x.kind, x.base))
    index = {}
    for x in names:
        index.setdefault((x.kind, x.base), len(index))
    plus, minus = [], []
    for t in threads:
        up = down = 0
        for x in polarised_names(t):
            bit = 1 << index[(x.kind, x.base)]
            if x.polarity == "+":
                up |= bit
            else:
                down |= bit
        plus.append(up)
        minus.append(down)
    tree = _kernels.wp_search(plus, minus, [_leaf_ok(t) for t in threads])
    if tree is None:
        return WPResult(False, None, "reference")
    return WPResult(True, _tree_to_process(tree, threads), "reference")


def arrangements(items: list) -> Iterator:
    """Every unordered binary tree whose leaves are exactly ``items``, once each."""
    if len(items) == 1:
        yield items[0]
        return
    first, rest = items[0], items[1:]
    for r in range(0, len(rest)):
        for chosen in itertools.combinations(range(len(rest)), r):
            left = [first] + [rest[i] for i in chosen]
            right = [rest[i] for i in range(len(rest)) if i not in chosen]
            for lt in arrangements(left):
                for rt in arrangements(right):
                    yield (lt, rt)


def wp_brute_force(p: Process | Iterable[Thread]) -> bool:
    """Literal enumeration of arrangements checked with :func:`wp_on_tree`."""
    threads = _threads_of(p)
    if not threads:
        return True

    def build(t):
        return Par(build(t[0]), build(t[1])) if isinstance(t, tuple) else t

    return any(wp_on_tree(build(t)) for t in arrangements(threads))


def wp_fast(p: Process | Iterable[Thread]) -> WPResult:
    """Polynomial decision by peeling.

    Any arrangement restricted to a subset of its threads is still an
    arrangement satisfying the split conditions, so once *some* admissible
    split of a group is found both halves can be solved independently.  An
    admissible split of a group connected by conflicts cuts exactly one
    name ``X``: it separates a component of the conflict graph without ``X``
    that misses one polarity of ``X`` from the rest.
    """
    threads = _threads_of(p)
    if not all(_leaf_ok(t) for t in threads):
        return WPResult(False)
    names = [polarised_names(t) for t in threads]
    tree = _peel(list(range(len(threads))), names)
    if tree is None:
        return WPResult(False)
    return WPResult(True, _tree_to_process(tree, threads))


def _components(group: list[int], names: list, skip: tuple | None) -> list[list[int]]:
    parent = {i: i for i in group}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    holders: dict = {}
    for i in group:
        for x in names[i]:
            if skip is not None and (x.kind, x.base) == skip:
                continue
            holders.setdefault(x, []).append(i)
    for x, owners in holders.items():
        partners = holders.get(x.co(), ())
        for i in owners:
            for j in partners:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    comps: dict = {}
    for i in group:
        comps.setdefault(find(i), []).append(i)
    return list(comps.values())


def _join(trees: list):
    out = trees[0]
    for t in trees[1:]:
        out = (out, t)
    return out


def _peel(group: list[int], names: list):
    if len(group) == 1:
        return group[0]
    if not group:
        return ()
    comps = _components(group, names, None)
    if len(comps) > 1:
        parts = [_peel(c, names) for c in comps]
        return None if any(t is None for t in parts) else _join(parts)
    seen = set()
    candidates = []
    for i in group:
        for x in names[i]:
            key = (x.kind, x.base)
            if key not in seen:
                seen.add(key)
                candidates.append(key)
    for key in candidates:
        pos = {i for i in group if Polarised(key[0], key[1], "+") in names[i]}
        neg = {i for i in group if Polarised(key[0], key[1], "-") in names[i]}
        if not pos or not neg:
            continue
        comps = _components(group, names, key)
        if len(comps) < 2:
            continue
        for c in comps:
            cs = set(c)
            if not (cs & neg) or not (cs & pos):
                rest = [i for i in group if i not in cs]
                left, right = _peel(c, names), _peel(rest, names)
                if left is None or right is None:
                    return None
                return (left, right)
    return None


def wp_exists(p: Process | Iterable[Thread], *, method: str = "fast") -> WPResult:
    """Whether some arrangement of the threads of ``p`` is well-polarised."""
    if method == "reference":
        return wp_reference(p)
    if method == "brute":
        return WPResult(wp_brute_force(p), None, "brute")
    return wp_fast(p)


# ------------------------------------------------------ sharing graph


@dataclass(frozen=True)
class SharingGraph:
    """Threads joined by the names they share with opposite polarities."""

    vertices: tuple
    edges: dict = field(default_factory=dict)  # frozenset({i, j}) -> frozenset of names

    @staticmethod
    def of(p: Process | Iterable[Thread]) -> "SharingGraph":
        threads = _threads_of(p)
        names = [polarised_names(t) for t in threads]
        edges = {}
        for i, j in itertools.combinations(range(len(threads)), 2):
            shared = frozenset((x.kind, x.base) for x in _conflicts(names[i], names[j]))
            if shared:
                edges[frozenset((i, j))] = shared
        return SharingGraph(tuple(t.name for t in threads), edges)

    def is_simple(self) -> bool:
        return all(len(v) == 1 for v in self.edges.values())

    def is_acyclic(self) -> bool:
        parent = list(range(len(self.vertices)))

        def find(i):
            while parent[i] != i:
                i = parent[i]
            return i

        for edge in self.edges:
            i, j = tuple(edge)
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True


# ---------------------------------------------------------- precedence


class EndpointStatus(str, Enum):
    READY = "ready"
    BLOCKED = "blocked"
    ABSENT = "absent"


def _frames_free(frames: tuple) -> frozenset:
    out = frozenset()
    for fr in frames:
        if fr[0] == "app":
            out |= fr[1].free
        elif fr[0] == "split":
            out |= fr[3].free - {Name.var(fr[1]), Name.var(fr[2])}
    return out


def endpoint_status(ep: Name, e: Expr) -> EndpointStatus:
    d = decompose(e)
    if isinstance(d, IOHead) and d.kind in (Constant.SEND, Constant.RECV):
        if d.channel == ep:
            return EndpointStatus.READY
        if d.channel.base != ep.base:
            around = _frames_free(d.frames)
            if d.kind is Constant.SEND:
                around |= d.payload.free
            if ep in around:
                return EndpointStatus.BLOCKED
    elif isinstance(d, Stuck):
        if ep in _frames_free(d.frames):
            return EndpointStatus.BLOCKED
    return EndpointStatus.ABSENT


def expr_precedes(e: Expr, f: Expr) -> bool:
    d = decompose(f)
    if isinstance(d, IOHead) and d.kind in (Constant.SEND, Constant.RECV) and d.channel.kind is NameKind.ENDPOINT:
        return endpoint_status(d.channel.co(), e) is EndpointStatus.BLOCKED
    return False


def precedes(t1: Thread, t2: Thread) -> bool:
    if expr_precedes(t1.body, t2.body):
        return True
    d = decompose(t2.body)
    return isinstance(d, Stuck) and d.name == Name.var(t1.name)


def precedence_edges(p: Process | Iterable[Thread]) -> list[tuple[str, str]]:
    threads = _threads_of(p)
    return [(a.name, b.name) for a in threads for b in threads if a is not b and precedes(a, b)]


@dataclass(frozen=True)
class AcyclicityResult:
    acyclic: bool
    cycle: tuple = ()

    def __bool__(self) -> bool:
        return self.acyclic


def precedence_acyclic(p: Process | Iterable[Thread]) -> AcyclicityResult:
    threads = _threads_of(p)
    succ: dict = {t.name: [] for t in threads}
    for a, b in precedence_edges(threads):
        succ[a].append(b)
    for t in threads:
        if t.name in succ[t.name]:
            return AcyclicityResult(False, (t.name, t.name))
    colour = {n: 0 for n in succ}
    stack: list = []

    def visit(n):
        colour[n] = 1
        stack.append(n)
        for m in succ[n]:
            if colour[m] == 1:
                return tuple(stack[stack.index(m):]) + (m,)
            if colour[m] == 0:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        colour[n] = 2
        return None

    for n in succ:
        if colour[n] == 0:
            found = visit(n)
            if found:
                return AcyclicityResult(False, found)
    return AcyclicityResult(True)


# ------------------------------------------------------------- weights


def ns(e: Expr, budget: int = 10_000) -> int:
    """Steps to the normal form of ``e``."""
    return normalize(e, budget)[1]


class Weight(NamedTuple):
    threads: int
    communications: int
    steps: int


def env_delay(resources: dict) -> int:
    """Largest leading delay among the types of ``resources`` (•∞ ignored)."""
    ds = [delay(t) for t in resources.values() if t != INF]
    return max(ds, default=0)


def horizon(resources: dict, env: dict) -> int:
    """A time bound covering every thread type and every positive endpoint.

    When a thread has type •∞ its delay bounds nothing, so the leading
    delays of the endpoints themselves are taken into account too.
    """
    ends = [delay(t) for u, t in env.items() if u.kind is NameKind.ENDPOINT and u.polarity == "+" and t != INF]
    return max([env_delay(resources)] + ends)


def session_count(m: int, env: dict) -> int:
    return sum(
        ct(m, t)
        for u, t in env.items()
        if u.kind is NameKind.ENDPOINT and u.polarity == "+" and t != INF
    )


def weight(
    p: Process | MachineState,
    env: dict,
    resources: dict,
    *,
    time: int | None = None,
    budget: int = 10_000,
) -> Weight:
    """Thread count, communications available by ``time`` and total
    expression steps; ``time`` defaults to the delay of ``resources``."""
    threads = p.threads if isinstance(p, MachineState) else tuple((t.name, t.body) for t in flatten(p).threads)
    total = sum(ns(body, budget) for _, body in threads)
    m = env_delay(resources) if time is None else time
    return Weight(len(threads), session_count(m, env), total)


# ------------------------------------------------------------- monitor


class Invariant(str, Enum):
    TYPING = "typeability"
    BALANCE = "balance"
    POLARISATION = "well-polarisation"
    ORACLE = "wp-oracle"
    ACYCLIC = "acyclicity"
    WEIGHT = "weight"
    PROGRESS = "progress"


@dataclass(frozen=True)
class Violation:
    step: int
    invariant: Invariant
    detail: str
    state: str

    def to_json(self) -> dict:
        return {"step": self.step, "invariant": self.invariant.value, "detail": self.detail, "state": self.state}


@dataclass
class MonitorReport:
    steps: int = 0
    status: str = "final"
    violations: list = field(default_factory=list)
    histogram: Counter = field(default_factory=Counter)
    events: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    oracle_checks: int = 0
    snapshots: list = field(default_factory=list)
    final: MachineState | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, invariant: Invariant) -> int:
        return sum(1 for v in self.violations if v.invariant is invariant)

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "status": self.status,
            "ok": self.ok,
            "histogram": dict(sorted((k.value, v) for k, v in self.histogram.items())),
            "first_violation": self.violations[0].to_json() if self.violations else None,
            "violations": [v.to_json() for v in self.violations],
            "verdicts": self.verdicts,
        }


ORACLE_LIMIT = 6
SPAWNING = (Rule.OPEN, Rule.FUTURE)


def _typing(state: MachineState, record: dict | None = None):
    try:
        return type_process({}, state.process(), record=record), None
    except TypeCheckError as err:
        return None, err


def _spawned_type(state: MachineState, choice: Choice, typing):
    """Type of the thread variable a future or open step is about to create."""
    if choice.rule is Rule.OPEN:
        return typing.spawn_types.get(Name.chan(choice.channel))
    body = state.thread_map()[choice.thread]
    record: dict = {}
    try:
        type_process({}, state.process(), record=record)
    except TypeCheckError:
        return None
    payload = decompose(body).payload
    hit = record.get(id(payload))
    if hit is None or hit[0] is not payload:
        return None
    n, core = leading_bullets(hit[1])
    if n is None or core.tag is not Tag.IO:
        return None
    return bullet(core.child(0), n)


def annotate(state: MachineState, types: dict) -> MachineState:
    """Fill in missing restriction annotations from ``types``."""
    binders = tuple((b, annot if annot is not None else types.get(b)) for b, annot in state.binders)
    return replace(state, binders=binders)


def monitor_run(
    p: Process | MachineState,
    budget: int = 300,
    *,
    scheduler="det",
    seed: int | None = None,
    keep_verdicts: bool = False,
    snapshot_every: int = 0,
) -> MonitorReport:
    """Run while checking the invariants of reachable processes after every step.

    Types of thread variables are carried across steps, so that a variable
    introduced by a future or a server spawn is checked against the type
    it had as a subterm before the step.
    """
    if isinstance(scheduler, str):
        scheduler = make_scheduler(scheduler, seed)
    state = p if isinstance(p, MachineState) else MachineState.from_process(p)
    report = MonitorReport()

    def flag(step, inv, detail, st):
        report.violations.append(Violation(step, inv, detail, pretty(st.process())))

    def inspect(step: int, st: MachineState):
        typing, err = _typing(st)
        verdict = {"step": step}
        if typing is None:
            flag(step, Invariant.TYPING, err.render(), st)
            verdict[Invariant.TYPING.value] = False
        else:
            verdict[Invariant.TYPING.value] = True
            if not is_balanced(typing.env):
                flag(step, Invariant.BALANCE, "endpoint types are not dual", st)
        threads = [Thread(n, b) for n, b in st.threads]
        wp = wp_fast(threads)
        verdict[Invariant.POLARISATION.value] = wp.holds
        if not wp.holds:
            flag(step, Invariant.POLARISATION, "no well-polarised arrangement", st)
        if len(threads) <= ORACLE_LIMIT:
            report.oracle_checks += 1
            if wp_reference(threads).holds != wp.holds:
                flag(step, Invariant.ORACLE, "fast and exhaustive verdicts differ", st)
        acyc = precedence_acyclic(threads)
        verdict[Invariant.ACYCLIC.value] = acyc.acyclic
        if not acyc.acyclic:
            flag(step, Invariant.ACYCLIC, "precedence cycle " + " < ".join(acyc.cycle), st)
        if not is_final_state(st) and not enabled(st):
            flag(step, Invariant.PROGRESS, "non-final state with no enabled reduction", st)
            verdict[Invariant.PROGRESS.value] = False
        if keep_verdicts:
            report.verdicts.append(verdict)
        return typing

    typing = inspect(0, state)
    if typing is not None:
        state = annotate(state, typing.resources)
    steps = 0
    while steps < budget:
        choices = enabled(state)
        if not choices:
            break
        choice = scheduler.pick(state, choices)
        hint = _spawned_type(state, choice, typing) if typing is not None and choice.rule in SPAWNING else None
        after, ev = apply(state, choice, steps)
        if hint is not None:
            after = annotate(after, {Name.var(ev.fresh[-1]): hint})
        steps += 1
        report.events.append(ev)
        report.histogram[ev.rule] += 1
        new_typing = inspect(steps, after)
        if ev.rule not in SPAWNING and typing is not None and new_typing is not None:
            try:
                m = horizon(typing.resources, typing.env)
                w0 = weight(state, typing.env, typing.resources, time=m)
                w1 = weight(after, new_typing.env, typing.resources, time=m)
            except BudgetExceeded as exc:
                flag(steps, Invariant.WEIGHT, str(exc), after)
            else:
                if not w1 < w0:
                    flag(steps, Invariant.WEIGHT, f"{ev.rule.value}: {tuple(w0)} -> {tuple(w1)}", after)
        if new_typing is not None:
            after = annotate(after, new_typing.resources)
        typing = new_typing
        state = after
        if snapshot_every and steps % snapshot_every == 0:
            report.snapshots.append((steps, pretty(state.process())))
    report.steps = steps
    report.final = state
    if enabled(state):
        report.status = "exhausted"
    elif is_final_state(state):
        report.status = "final"
    else:
        report.status = "stuck"
    return report


__all__ = [
    "SplitProcess",
    "split",
    "Polarised",
    "polarised_names",
    "independent",
    "wp_on_tree",
    "wp_exists",
    "wp_fast",
    "wp_reference",
    "wp_brute_force",
    "arrangements",
    "WPResult",
    "SharingGraph",
    "EndpointStatus",
    "endpoint_status",
    "precedes",
    "precedence_edges",
    "precedence_acyclic",
    "ns",
    "Weight",
    "weight",
    "horizon",
    "env_delay",
    "monitor_run",
    "MonitorReport",
    "Invariant",
    "annotate",
]
