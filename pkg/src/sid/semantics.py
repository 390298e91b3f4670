"""Call-by-name expression reduction and the process reduction relation.

Processes are executed as a *soup*: the restricted names, the threads and
the servers are kept apart, together with the parallel shape of the threads
so that analyses can inspect the arrangement that produced a state.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, NamedTuple

from .syntax import (
    App,
    Const,
    Constant,
    Expr,
    Idle,
    Lambda,
    Name,
    NameKind,
    NatLit,
    Process,
    Ref,
    Server,
    Split,
    Thread,
    flatten,
    new,
    par,
    pretty,
    struct_equiv,
    subst,
    subst_many,
)
from .types import Tag, session_advance


class Rule(str, Enum):
    BETA = "r-beta"
    BIND = "r-bind"
    SPLIT = "r-split"
    CTXT = "r-ctxt"
    OPEN = "r-open"
    COMM = "r-comm"
    FUTURE = "r-future"
    RETURN = "r-return"
    THREAD = "r-thread"


# Frames of an evaluation context, innermost last when read from the root:
#   ("app", arg)            E e
#   ("arg", k)              k E   for k in open/send/recv/bind/succ
#   ("split", x, y, body)   split E as x, y in body
Frame = tuple


class Redex(NamedTuple):
    frames: tuple
    term: Expr
    rule: Rule


class IOHead(NamedTuple):
    """A thread body of the form ``C[action]`` with ``C ::= [] | bind C e``."""

    frames: tuple
    kind: Constant
    channel: Name | None
    payload: Expr | None


class Normal(NamedTuple):
    term: Expr


class Stuck(NamedTuple):
    """``E[x]``: evaluation waits on the variable ``x``."""

    frames: tuple
    name: Name


def _is_name(e: Expr) -> bool:
    return isinstance(e, Ref) and not e.name.is_variable


def _process_context(frames: tuple) -> bool:
    if len(frames) % 2:
        return False
    for i in range(0, len(frames), 2):
        outer, inner = frames[i], frames[i + 1]
        if outer[0] != "app" or inner != ("arg", Constant.BIND):
            return False
    return True


def _io(frames, kind, channel, payload, whole):
    if _process_context(frames):
        return IOHead(frames, kind, channel, payload)
    return Normal(whole)


def decompose(e: Expr) -> Redex | IOHead | Normal:
    """Split ``e`` into an evaluation context and what sits in its hole."""
    root = e
    frames: list = []
    while True:
        if isinstance(e, Split):
            s = e.scrutinee
            if isinstance(s, App) and isinstance(s.fn, App) and isinstance(s.fn.fn, Const) \
                    and s.fn.fn.const is Constant.PAIR:
                return Redex(tuple(frames), e, Rule.SPLIT)
            frames.append(("split", e.left, e.right, e.body))
            e = s
            continue
        if not isinstance(e, App):
            if isinstance(e, Ref) and e.name.is_variable:
                return Stuck(tuple(frames), e.name)
            return Normal(root)
        fn = e.fn
        if isinstance(fn, Lambda):
            return Redex(tuple(frames), e, Rule.BETA)
        if isinstance(fn, Const):
            k = fn.const
            if k is Constant.FIX:
                return Redex(tuple(frames), e, Rule.BETA)
            if k in (Constant.FUTURE, Constant.RETURN):
                return _io(tuple(frames), k, None, e.arg, root)
            if k in (Constant.OPEN, Constant.RECV):
                if _is_name(e.arg):
                    return _io(tuple(frames), k, e.arg.name, None, root)
            elif k is Constant.SUCC:
                if isinstance(e.arg, NatLit) or (isinstance(e.arg, Const) and e.arg.const is Constant.ZERO):
                    return Redex(tuple(frames), e, Rule.BETA)
            elif k is Constant.SEND:
                if _is_name(e.arg):
                    return Normal(root)
            elif k is not Constant.BIND:
                return Normal(root)
            frames.append(("arg", k))
            e = e.arg
            continue
        if isinstance(fn, App) and isinstance(fn.fn, Const):
            k = fn.fn.const
            if k is Constant.PAIR:
                return Normal(root)
            if k is Constant.BIND:
                inner = fn.arg
                if isinstance(inner, App) and isinstance(inner.fn, Const) and inner.fn.const is Constant.RETURN:
                    return Redex(tuple(frames), e, Rule.BIND)
                frames.append(("app", e.arg))
                frames.append(("arg", Constant.BIND))
                e = inner
                continue
            if k is Constant.SEND:
                if _is_name(fn.arg):
                    return _io(tuple(frames), k, fn.arg.name, e.arg, root)
                frames.append(("app", e.arg))
                frames.append(("arg", Constant.SEND))
                e = fn.arg
                continue
        frames.append(("app", e.arg))
        e = fn


def plug(frames: tuple, e: Expr) -> Expr:
    for frame in reversed(frames):
        tag = frame[0]
        if tag == "app":
            e = App(e, frame[1])
        elif tag == "arg":
            e = App(Const(frame[1]), e)
        else:
            e = Split(e, frame[1], frame[2], frame[3])
    return e


def contract(term: Expr, rule: Rule) -> Expr:
    if rule is Rule.SPLIT:
        pair = term.scrutinee
        mapping = {term.left: pair.fn.arg, term.right: pair.arg}
        if term.left == term.right:
            mapping = {term.right: pair.arg}
        return subst_many(term.body, mapping)
    if rule is Rule.BIND:
        return App(term.arg, term.fn.arg.arg)
    fn = term.fn
    if isinstance(fn, Lambda):
        return subst(fn.body, fn.var, term.arg)
    if fn.const is Constant.FIX:
        return App(term.arg, term)
    arg = term.arg
    return NatLit((arg.value if isinstance(arg, NatLit) else 0) + 1)


def expr_step(e: Expr) -> Expr | None:
    """One reduction step, or ``None`` when ``e`` is normal."""
    d = decompose(e)
    if not isinstance(d, Redex):
        return None
    return plug(d.frames, contract(d.term, d.rule))


def expr_step_rule(e: Expr) -> tuple[Expr, Rule] | None:
    d = decompose(e)
    if not isinstance(d, Redex):
        return None
    return plug(d.frames, contract(d.term, d.rule)), d.rule


def normalize(e: Expr, budget: int = 10_000) -> tuple[Expr, int]:
    """Reduce to normal form; raises :class:`BudgetExceeded` past ``budget`` steps."""
    steps = 0
    while True:
        nxt = expr_step(e)
        if nxt is None:
            return e, steps
        steps += 1
        if steps > budget:
            raise BudgetExceeded(budget)
        e = nxt


class BudgetExceeded(RuntimeError):
    def __init__(self, budget: int):
        super().__init__(f"no normal form within {budget} steps")
        self.budget = budget


# ---------------------------------------------------------------- machine

_DECOMP: dict = {}


def _decompose_cached(e: Expr):
    hit = _DECOMP.get(id(e))
    if hit is not None and hit[0] is e:
        return hit[1]
    if len(_DECOMP) > 50_000:
        _DECOMP.clear()
    d = decompose(e)
    _DECOMP[id(e)] = (e, d)
    return d


@dataclass(frozen=True)
class MachineState:
    """Restrictions, threads and servers of a running process."""

    binders: tuple  # ((Name, RegType | None), ...)
    threads: tuple  # ((str, Expr), ...)
    servers: tuple  # ((str, Expr), ...)
    fresh: int = 0
    tree: object = None  # nested pairs of thread names

    @staticmethod
    def from_process(p: Process) -> "MachineState":
        soup = flatten(p)
        names = [t.name for t in soup.threads]
        if len(set(names)) != len(names):
            raise ValueError("thread names must be pairwise distinct")
        snames = [s.name for s in soup.servers]
        if len(set(snames)) != len(snames):
            raise ValueError("server names must be pairwise distinct")

        def shape(t):
            if isinstance(t, tuple):
                return (shape(t[0]), shape(t[1]))
            return t.name

        return MachineState(
            tuple(soup.binders),
            tuple((t.name, t.body) for t in soup.threads),
            tuple((s.name, s.body) for s in soup.servers),
            0,
            None if soup.tree is None else shape(soup.tree),
        )

    def thread_map(self) -> dict:
        return dict(self.threads)

    def thread_tree(self) -> Process:
        """The thread-only part, in the retained arrangement."""
        bodies = self.thread_map()

        def build(t):
            if t is None:
                return Idle()
            if isinstance(t, tuple):
                return par(build(t[0]), build(t[1]))
            return Thread(t, bodies[t])

        return build(self.tree)

    def process(self) -> Process:
        parts = []
        if self.tree is not None:
            parts.append(self.thread_tree())
        parts.extend(Server(a, e) for a, e in self.servers)
        return new(self.binders, par(*parts) if parts else Idle())

    def binder_annotation(self, name: Name):
        for b, annot in self.binders:
            if b == name:
                return annot
        return None

    def restricted(self, name: Name) -> bool:
        return any(b == name for b, _ in self.binders)


class Choice(NamedTuple):
    rule: Rule
    thread: str
    partner: str | None = None
    channel: str | None = None


@dataclass(frozen=True)
class ReductionEvent:
    step: int
    rule: Rule
    participants: tuple
    fresh: tuple = ()
    message: str | None = None
    expr_rule: Rule | None = None
    channel: str | None = None
    payload: Expr | None = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        out = {
            "step": self.step,
            "rule": self.rule.value,
            "participants": list(self.participants),
            "fresh": list(self.fresh),
        }
        if self.expr_rule is not None:
            out["expr_rule"] = self.expr_rule.value
        if self.channel is not None:
            out["channel"] = self.channel
        if self.message is not None:
            out["message"] = self.message
        return out


class StaleChoice(ValueError):
    pass


def enabled(state: MachineState) -> list[Choice]:
    """Every reduction available in ``state``."""
    heads = {}
    out: list[Choice] = []
    for x, body in state.threads:
        d = _decompose_cached(body)
        heads[x] = d
    servers = {a for a, _ in state.servers}
    receivers: dict = {}
    for x, d in heads.items():
        if isinstance(d, IOHead) and d.kind is Constant.RECV:
            receivers.setdefault(d.channel, []).append(x)
    for x, _ in state.threads:
        d = heads[x]
        if isinstance(d, Redex):
            out.append(Choice(Rule.THREAD, x))
        elif isinstance(d, IOHead):
            if d.kind is Constant.OPEN:
                if d.channel.kind is NameKind.CHANNEL and d.channel.base in servers:
                    out.append(Choice(Rule.OPEN, x, channel=d.channel.base))
            elif d.kind is Constant.SEND:
                if d.channel.kind is NameKind.ENDPOINT:
                    for y in receivers.get(d.channel.co(), ()):
                        if y != x:
                            out.append(Choice(Rule.COMM, x, y, str(d.channel)))
            elif d.kind is Constant.FUTURE:
                out.append(Choice(Rule.FUTURE, x))
            elif d.kind is Constant.RETURN and not d.frames:
                if state.restricted(Name.var(x)):
                    out.append(Choice(Rule.RETURN, x))
    return out


def _replace_leaf(tree, name: str, new_leaf):
    if isinstance(tree, tuple):
        return (_replace_leaf(tree[0], name, new_leaf), _replace_leaf(tree[1], name, new_leaf))
    return new_leaf if tree == name else tree


def _remove_leaf(tree, name: str):
    if tree is None:
        return None
    if isinstance(tree, tuple):
        left, right = _remove_leaf(tree[0], name), _remove_leaf(tree[1], name)
        if left is None:
            return right
        if right is None:
            return left
        return (left, right)
    return None if tree == name else tree


def apply(state: MachineState, choice: Choice, step: int = 0) -> tuple[MachineState, ReductionEvent]:
    """Perform one enabled reduction."""
    if choice not in enabled(state):
        raise StaleChoice(f"{choice} is not enabled")
    bodies = state.thread_map()
    x = choice.thread
    d = _decompose_cached(bodies[x])
    rule = choice.rule

    def with_threads(mapping: dict, **changes) -> MachineState:
        order = [n for n, _ in state.threads if n in mapping]
        order += [n for n in mapping if n not in order]
        return replace(state, threads=tuple((n, mapping[n]) for n in order), **changes)

    if rule is Rule.THREAD:
        res = plug(d.frames, contract(d.term, d.rule))
        bodies[x] = res
        return with_threads(bodies), ReductionEvent(step, rule, (x,), expr_rule=d.rule)

    if rule is Rule.OPEN:
        n = state.fresh
        c, y = f"%c{n}", f"%y{n}"
        server_body = dict(state.servers)[choice.channel]
        annot = state.binder_annotation(Name.chan(choice.channel))
        session = annot.child(0) if annot is not None and annot.tag is Tag.SHARED else None
        bodies[x] = plug(d.frames, App(Const(Constant.RETURN), Ref(Name.endpoint(c, "+"))))
        bodies[y] = App(server_body, Ref(Name.endpoint(c, "-")))
        binders = state.binders + ((Name.chan(c), session), (Name.var(y), None))
        tree = _replace_leaf(state.tree, x, (x, y))
        nxt = with_threads(bodies, binders=binders, fresh=n + 1, tree=tree)
        return nxt, ReductionEvent(step, rule, (x, choice.channel), (c, y), channel=choice.channel)

    if rule is Rule.COMM:
        y = choice.partner
        dy = _decompose_cached(bodies[y])
        ch = d.channel
        bodies[x] = plug(d.frames, App(Const(Constant.RETURN), Ref(ch)))
        reply = App(App(Const(Constant.PAIR), d.payload), Ref(ch.co()))
        bodies[y] = plug(dy.frames, App(Const(Constant.RETURN), reply))
        binders = tuple(
            (b, session_advance(annot) if b == Name.chan(ch.base) and annot is not None else annot)
            for b, annot in state.binders
        )
        nxt = with_threads(bodies, binders=binders)
        return nxt, ReductionEvent(
            step, rule, (x, y), message=pretty(d.payload), channel=str(ch), payload=d.payload
        )

    if rule is Rule.FUTURE:
        n = state.fresh
        y = f"%y{n}"
        bodies[x] = plug(d.frames, App(Const(Constant.RETURN), Ref(Name.var(y))))
        bodies[y] = d.payload
        binders = state.binders + ((Name.var(y), None),)
        tree = _replace_leaf(state.tree, x, (x, y))
        return with_threads(bodies, binders=binders, fresh=n + 1, tree=tree), ReductionEvent(
            step, rule, (x,), (y,)
        )

    if rule is Rule.RETURN:
        value = d.payload
        del bodies[x]
        for t in bodies:
            if Name.var(x) in bodies[t].free:
                bodies[t] = subst(bodies[t], x, value)
        servers = tuple((a, subst(e, x, value)) for a, e in state.servers)
        binders = tuple((b, annot) for b, annot in state.binders if b != Name.var(x))
        tree = _remove_leaf(state.tree, x)
        nxt = with_threads(bodies, binders=binders, servers=servers, tree=tree)
        return nxt, ReductionEvent(step, rule, (x,), message=pretty(value), payload=value)

    raise StaleChoice(f"unknown rule {rule}")


def is_final_state(state: MachineState) -> bool:
    return not state.threads


def is_final(p: Process) -> bool:
    """True iff ``p`` has no threads once restrictions are pulled out."""
    return not flatten(p).threads


# --------------------------------------------------------------- running

PRIORITY = (Rule.THREAD, Rule.RETURN, Rule.COMM, Rule.OPEN, Rule.FUTURE)


class Scheduler:
    """Picks one of the enabled choices."""

    def pick(self, state: MachineState, choices: list[Choice]) -> Choice:
        raise NotImplementedError


class DeterministicScheduler(Scheduler):
    def pick(self, state, choices):
        order = {name: i for i, (name, _) in enumerate(state.threads)}
        return min(choices, key=lambda c: (PRIORITY.index(c.rule), order[c.thread], c.partner or ""))


class RandomScheduler(Scheduler):
    def __init__(self, seed: int):
        self.seed = seed
        self.rng = random.Random(seed)

    def pick(self, state, choices):
        return choices[self.rng.randrange(len(choices))]


def make_scheduler(kind: str = "det", seed: int | None = None) -> Scheduler:
    if kind in ("det", "deterministic"):
        return DeterministicScheduler()
    if kind == "random":
        if seed is None:
            raise ValueError("the random scheduler needs a seed")
        return RandomScheduler(seed)
    raise ValueError(f"unknown scheduler {kind!r}")


class RunStatus(str, Enum):
    FINAL = "final"
    STUCK = "stuck"
    EXHAUSTED = "exhausted"


@dataclass
class Trace:
    events: list = field(default_factory=list)
    status: RunStatus = RunStatus.FINAL
    initial: MachineState | None = None
    final: MachineState | None = None
    snapshots: list = field(default_factory=list)

    def rules(self) -> list[Rule]:
        return [e.rule for e in self.events]

    def json_lines(self) -> Iterator[str]:
        for ev in self.events:
            yield json.dumps(ev.to_json(), sort_keys=True, ensure_ascii=False)


def run_states(state: MachineState, scheduler: Scheduler, budget: int):
    """Yield ``(state, choice, next_state, event)`` for each step taken."""
    for step in range(budget):
        choices = enabled(state)
        if not choices:
            return
        choice = scheduler.pick(state, choices)
        nxt, ev = apply(state, choice, step)
        yield state, choice, nxt, ev
        state = nxt


def run(
    p: Process | MachineState,
    scheduler: Scheduler | str = "det",
    budget: int = 1000,
    *,
    seed: int | None = None,
    snapshot_every: int = 0,
) -> Trace:
    """Reduce until no rule applies or ``budget`` steps have been taken."""
    if isinstance(scheduler, str):
        scheduler = make_scheduler(scheduler, seed)
    state = p if isinstance(p, MachineState) else MachineState.from_process(p)
    trace = Trace(initial=state)
    for _, _, nxt, ev in run_states(state, scheduler, budget):
        trace.events.append(ev)
        state = nxt
        if snapshot_every and len(trace.events) % snapshot_every == 0:
            trace.snapshots.append((len(trace.events), pretty(state.process())))
    trace.final = state
    if enabled(state):
        trace.status = RunStatus.EXHAUSTED
    elif is_final_state(state):
        trace.status = RunStatus.FINAL
    else:
        trace.status = RunStatus.STUCK
    return trace


def delivered(trace: Trace, channel: str) -> list[Expr]:
    """Messages sent on ``channel`` (either endpoint), with every later
    r-return substitution replayed into them."""
    out: list = []
    for ev in trace.events:
        if ev.rule is Rule.COMM and ev.channel is not None and ev.channel.rstrip("+-") == channel:
            out.append(ev.payload)
        elif ev.rule is Rule.RETURN:
            x = ev.participants[0]
            out = [subst(m, x, ev.payload) if Name.var(x) in m.free else m for m in out]
    return out


def stream_prefix(e: Expr, count: int, budget: int = 10_000) -> list[int]:
    """Leading naturals of a stream-shaped expression, stopping early at
    anything that is not (yet) a pair of a literal and a tail."""
    values: list[int] = []
    for _ in range(count):
        try:
            e, _ = normalize(e, budget)
        except BudgetExceeded:
            break
        if not (isinstance(e, App) and isinstance(e.fn, App) and isinstance(e.fn.fn, Const)
                and e.fn.fn.const is Constant.PAIR):
            break
        try:
            head, _ = normalize(e.fn.arg, budget)
        except BudgetExceeded:
            break
        if isinstance(head, Const) and head.const is Constant.ZERO:
            head = NatLit(0)
        if not isinstance(head, NatLit):
            break
        values.append(head.value)
        e = e.arg
    return values


def same_final(a: MachineState, b: MachineState) -> bool:
    return struct_equiv(a.process(), b.process())
