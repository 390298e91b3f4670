"""Bidirectional type checking for expressions and processes.

Checking returns the set of linear names an expression consumes; combining
two premises fails when that set would contain a name twice.  The delay
prefix of every rule is read off the goal type where it is determined and
searched over a small range otherwise.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .syntax import (
    App,
    Const,
    Constant,
    Expr,
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
    spine,
    tree_process,
)
from .types import (
    INF,
    NAT,
    UNIT,
    RegType,
    Tag,
    arrow,
    bullet,
    dual,
    io,
    is_linear,
    is_session,
    is_subtype,
    is_unlimited,
    leading_bullets,
    lolli,
    pretty_type,
    prod,
    shared,
    strip_bullets,
    type_equal,
    validate,
)

# How far past the last determined delay the search for a rule's delay goes.
EXTRA_DELAY = 3

ARITY = {
    Constant.UNIT: 0,
    Constant.ZERO: 0,
    Constant.SUCC: 1,
    Constant.RETURN: 1,
    Constant.OPEN: 1,
    Constant.RECV: 1,
    Constant.FUTURE: 1,
    Constant.FIX: 1,
    Constant.SEND: 2,
    Constant.PAIR: 2,
    Constant.BIND: 2,
}


class TypeCheckError(Exception):
    """A failed typing judgment, labelled with the rule that could not apply."""

    def __init__(
        self,
        rule: str,
        message: str,
        *,
        subject=None,
        expected: RegType | None = None,
        actual: RegType | None = None,
    ):
        self.rule = rule
        self.message = message
        self.subject = None if subject is None else pretty(subject)
        self.expected = expected
        self.actual = actual
        super().__init__(self.render())

    def render(self) -> str:
        text = f"[{self.rule}] {self.message}"
        if self.subject is not None:
            shown = self.subject if len(self.subject) <= 160 else self.subject[:157] + "..."
            text += f"\n  in: {shown}"
        if self.expected is not None:
            text += f"\n  expected: {pretty_type(self.expected)}"
        if self.actual is not None:
            text += f"\n  actual: {pretty_type(self.actual)}"
        return text

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "message": self.message,
            "subject": self.subject,
            "expected": None if self.expected is None else pretty_type(self.expected),
            "actual": None if self.actual is None else pretty_type(self.actual),
        }


@dataclass(frozen=True)
class UsageReport:
    """Linear bindings consumed by a checked expression."""

    used: frozenset
    env: Mapping = field(default_factory=dict)


TypeEnv = dict
ResourceEnv = dict


# ------------------------------------------------------------------ helpers


def _lead(t: RegType) -> tuple[int | None, RegType]:
    return leading_bullets(t)


def _strip(t: RegType, n: int) -> RegType:
    return INF if t == INF else strip_bullets(t, n)


def fits(t: RegType, goal: RegType) -> bool:
    """Whether ``•ᵏ t`` is a subtype of ``goal`` for some ``k >= 0``."""
    if t == INF or goal == INF:
        return t == goal
    tn, tcore = _lead(t)
    gn, gcore = _lead(goal)
    return gn >= tn and is_subtype(tcore, gcore)


def _require_valid(t: RegType, rule: str, subject=None) -> None:
    report = validate(t)
    if not report.valid:
        v = report.violations[0]
        where = ".".join(v.path) or "root"
        raise TypeCheckError(
            rule,
            f"not a type: condition {v.condition} fails at {where} ({v.detail})",
            subject=subject,
            actual=t,
        )


def _combine(a: frozenset, b: frozenset, rule: str, subject) -> frozenset:
    both = a & b
    if both:
        names = ", ".join(sorted(map(str, both)))
        raise TypeCheckError(rule, f"linear name used more than once: {names}", subject=subject)
    return a | b


def env_combine(left: Mapping, right: Mapping) -> dict:
    """The partial ``+`` on environments."""
    outenv = dict(left)
    for u, t in right.items():
        if u not in outenv:
            outenv[u] = t
        elif type_equal(outenv[u], t) and is_unlimited(t):
            continue
        elif type_equal(outenv[u], t):
            raise TypeCheckError("+", f"linear name {u} would be used twice", actual=t)
        else:
            raise TypeCheckError(
                "+", f"conflicting types for {u}", expected=outenv[u], actual=t
            )
    return outenv


def is_balanced(env: Mapping) -> bool:
    """Both endpoints of every channel carry dual session types."""
    for u, t in env.items():
        if u.kind is NameKind.ENDPOINT and u.polarity == "+":
            peer = env.get(u.co())
            if peer is None:
                continue
            if not (is_session(t) and is_session(peer)) or not type_equal(t, dual(peer)):
                return False
    return True


def const_schema(k: Constant | str, expected: RegType) -> RegType:
    """Instantiate the type schema of ``k`` so that it fits ``expected``.

    Leading delays of ``expected`` are shared by the whole schema.  The
    returned instance is a subtype of ``expected``.
    """
    k = Constant(k)
    n, core = _lead(expected)
    if n is None:
        raise TypeCheckError("const", f"{k.value} cannot have type •∞", expected=expected)
    try:
        inst = _schema_instance(k, core)
    except (IndexError, ValueError, TypeError, AttributeError) as exc:
        raise TypeCheckError("const", f"{k.value} has no type of this shape ({exc})", expected=expected) from None
    if inst is None or not is_subtype(inst, core):
        raise TypeCheckError("const", f"{k.value} has no type of this shape", expected=expected)
    return bullet(inst, n)


def _arrow_parts(t: RegType) -> tuple[RegType, RegType]:
    if t.tag not in (Tag.ARROW, Tag.LOLLI):
        raise ValueError("not a function type")
    return t.child(0), t.child(1)


def _schema_instance(k: Constant, core: RegType) -> RegType | None:
    if k is Constant.UNIT:
        return UNIT
    if k is Constant.ZERO:
        return NAT
    dom, cod = _arrow_parts(core)
    if k is Constant.SUCC:
        return arrow(NAT, NAT)
    if k is Constant.RETURN:
        return arrow(dom, io(dom))
    if k is Constant.OPEN:
        if dom.tag is not Tag.SHARED:
            return None
        return arrow(dom, io(dom.child(0)))
    if k is Constant.SEND:
        if dom.tag is not Tag.OUT:
            return None
        return arrow(dom, lolli(dom.child(0), io(dom.child(1))))
    if k is Constant.RECV:
        if dom.tag is not Tag.IN:
            return None
        return arrow(dom, io(prod(dom.child(0), dom.child(1))))
    if k is Constant.FUTURE:
        m, inner = _lead(dom)
        if m is None or inner.tag is not Tag.IO:
            return None
        return arrow(dom, io(bullet(inner.child(0), m)))
    if k is Constant.PAIR:
        s = _arrow_parts(cod)[0]
        second = lolli if is_linear(dom) else arrow
        return arrow(dom, second(s, prod(dom, s)))
    if k is Constant.BIND:
        if dom.tag is not Tag.IO:
            return None
        cont, result = _arrow_parts(cod)
        return arrow(dom, lolli(lolli(dom.child(0), result), result))
    if k is Constant.FIX:
        return arrow(arrow(bullet(cod), cod), cod)
    return None


# ------------------------------------------------------------- the checker

_MEMO: dict = {}
_MEMO_LIMIT = 400_000


def clear_cache() -> None:
    _MEMO.clear()


class _Checker:
    def __init__(self, env: Mapping, record: dict | None = None):
        self.env: dict = dict(env)
        self.holes = 0
        # id(subterm) -> (subterm, type) for the last successful judgement; disables the memo.
        self.record = record
        self.slack = EXTRA_DELAY + max(
            (n for n in (_lead(t)[0] for t in self.env.values()) if n is not None), default=0
        )

    # environment --------------------------------------------------------
    @contextmanager
    def scope(self, bindings: Iterable[tuple[Name, RegType]]):
        saved = []
        for name, t in bindings:
            saved.append((name, self.env.get(name, _MISSING)))
            self.env[name] = t
        try:
            yield
        finally:
            for name, old in reversed(saved):
                if old is _MISSING:
                    self.env.pop(name, None)
                else:
                    self.env[name] = old

    @contextmanager
    def hole(self, t: RegType):
        name = Name.var(f"%h{self.holes}")
        self.holes += 1
        try:
            with self.scope([(name, t)]):
                yield name
        finally:
            self.holes -= 1

    def lookup(self, u: Name, subject) -> RegType:
        t = self.env.get(u)
        if t is None:
            raise TypeCheckError("axiom", f"unbound name {u}", subject=subject)
        return t

    def _key(self, e: Expr, goal):
        env = self.env
        return (id(e), goal, tuple((n, env.get(n)) for n in e.free))

    def _linear_binder(self, used: frozenset, name: Name, t: RegType, rule: str, subject) -> frozenset:
        if is_linear(t) and name not in used:
            raise TypeCheckError(rule, f"linear variable {name} is never used", subject=subject, actual=t)
        return used - {name}

    # checking -----------------------------------------------------------
    def check(self, e: Expr, goal: RegType) -> frozenset:
        if self.record is not None:
            res = self._check(e, goal)
            self.record[id(e)] = (e, goal)
            return res
        key = self._key(e, goal)
        hit = _MEMO.get(key)
        if hit is not None and hit[0] is e:
            if isinstance(hit[1], TypeCheckError):
                raise hit[1]
            return hit[1]
        try:
            res = self._check(e, goal)
        except TypeCheckError as err:
            self._store(key, e, err)
            raise
        self._store(key, e, res)
        return res

    def synth(self, e: Expr) -> tuple[RegType, frozenset]:
        if self.record is not None:
            res = self._synth(e)
            self.record[id(e)] = (e, res[0])
            return res
        key = self._key(e, None)
        hit = _MEMO.get(key)
        if hit is not None and hit[0] is e:
            if isinstance(hit[1], TypeCheckError):
                raise hit[1]
            return hit[1]
        try:
            res = self._synth(e)
        except TypeCheckError as err:
            self._store(key, e, err)
            raise
        self._store(key, e, res)
        return res

    @staticmethod
    def _store(key, e, value) -> None:
        if len(_MEMO) > _MEMO_LIMIT:
            _MEMO.clear()
        _MEMO[key] = (e, value)

    def _check(self, e: Expr, goal: RegType) -> frozenset:
        if isinstance(e, Ref):
            t = self.lookup(e.name, e)
            if fits(t, goal):
                return frozenset((e.name,)) if is_linear(t) else frozenset()
            raise TypeCheckError("axiom", f"{e.name} has the wrong type", subject=e, expected=goal, actual=t)
        if isinstance(e, NatLit):
            self._expect_core(goal, NAT, "const", e)
            return frozenset()
        if isinstance(e, Lambda):
            return self._check_lambda(e, goal)
        if isinstance(e, Split):
            return self._check_split(e, goal)
        head, args = spine(e)
        if isinstance(head, Const) and len(args) <= ARITY[head.const]:
            return self._check_const(head.const, args, e, goal)
        return self._check_app(e, goal)

    def _expect_core(self, goal: RegType, want: RegType, rule: str, subject) -> None:
        n, core = _lead(goal)
        if n is None or core != want:
            raise TypeCheckError(rule, "type mismatch", subject=subject, expected=goal, actual=want)

    def _check_lambda(self, e: Lambda, goal: RegType) -> frozenset:
        n, core = _lead(goal)
        if n is None or core.tag not in (Tag.ARROW, Tag.LOLLI):
            raise TypeCheckError("→I", "a function is checked against a non-function type", subject=e, expected=goal)
        rule = "→I" if core.tag is Tag.ARROW else "⊸I"
        _require_valid(e.annot, rule, e)
        dom, cod = core.children
        if not is_subtype(dom, e.annot):
            raise TypeCheckError(rule, f"annotation of {e.var} does not match the expected domain",
                                 subject=e, expected=dom, actual=e.annot)
        x = Name.var(e.var)
        xt = bullet(e.annot, n)
        with self.scope([(x, xt)]):
            used = self.check(e.body, bullet(cod, n))
        used = self._linear_binder(used, x, xt, rule, e)
        if core.tag is Tag.ARROW and used:
            names = ", ".join(sorted(map(str, used)))
            raise TypeCheckError("→I", f"an unlimited function cannot capture linear names ({names})",
                                 subject=e, expected=goal)
        return used

    def _split_parts(self, e: Split) -> tuple[int, RegType, RegType, frozenset]:
        st, used = self.synth(e.scrutinee)
        m, core = _lead(st)
        if m is None or core.tag is not Tag.PROD:
            raise TypeCheckError("×E", "split of an expression that is not a pair", subject=e, actual=st)
        return m, core.child(0), core.child(1), used

    def _check_split(self, e: Split, goal: RegType) -> frozenset:
        m, t1, t2, used1 = self._split_parts(e)
        gn, _ = _lead(goal)
        if gn is not None and gn < m:
            raise TypeCheckError("×E", f"the pair is only available after {m} steps", subject=e, expected=goal)
        x, y = Name.var(e.left), Name.var(e.right)
        xt, yt = bullet(t1, m), bullet(t2, m)
        with self.scope([(x, xt), (y, yt)]):
            used2 = self.check(e.body, goal)
        if x != y:
            used2 = self._linear_binder(used2, y, yt, "×E", e)
        used2 = self._linear_binder(used2, x, xt if x != y else yt, "×E", e)
        return _combine(used1, used2, "×E", e)

    def _check_app(self, e: App, goal: RegType) -> frozenset:
        ft, used1 = self.synth(e.fn)
        n1, core = _lead(ft)
        if n1 is None or core.tag not in (Tag.ARROW, Tag.LOLLI):
            raise TypeCheckError("→E", "application of a non-function", subject=e, actual=ft)
        rule = "→E" if core.tag is Tag.ARROW else "⊸E"
        dom, cod = core.children
        gn, _ = _lead(goal)
        top = gn if gn is not None else n1 + self.slack
        first = None
        for n in range(n1, top + 1):
            if not is_subtype(cod, _strip(goal, n)):
                continue
            try:
                used2 = self.check(e.arg, bullet(dom, n))
            except TypeCheckError as err:
                first = first or err
                continue
            return _combine(used1, used2, rule, e)
        if first is not None:
            raise first
        raise TypeCheckError(rule, "result type does not match", subject=e, expected=goal, actual=ft)

    def _check_partial(self, e: Expr, goal: RegType, rule: str) -> frozenset:
        """Check an unsaturated constant application by applying it to a fresh name."""
        n, core = _lead(goal)
        if n is None or core.tag not in (Tag.ARROW, Tag.LOLLI):
            raise TypeCheckError(rule, "a partial application needs a function type", subject=e, expected=goal)
        dom, cod = core.children
        ht = bullet(dom, n)
        with self.hole(ht) as h:
            used = self.check(App(e, Ref(h)), bullet(cod, n))
        used = self._linear_binder(used, h, ht, rule, e)
        if core.tag is Tag.ARROW and used:
            raise TypeCheckError(rule, "an unlimited function cannot capture linear names", subject=e, expected=goal)
        return used

    def _check_const(self, k: Constant, args: list, e: Expr, goal: RegType) -> frozenset:
        if not args:
            const_schema(k, goal)
            return frozenset()
        if len(args) < ARITY[k]:
            return self._check_partial(e, goal, k.value)
        gn, gcore = _lead(goal)
        if k is Constant.FIX:
            return self._check_fix(args[0], e, goal)
        if gn is None:
            raise TypeCheckError("const", f"{k.value} application cannot have type •∞", subject=e, expected=goal)
        if k is Constant.RETURN:
            if gcore.tag is not Tag.IO:
                raise TypeCheckError("const", "return builds an I/O action", subject=e, expected=goal)
            return self.check(args[0], bullet(gcore.child(0), gn))
        if k is Constant.PAIR:
            if gcore.tag is not Tag.PROD:
                raise TypeCheckError("×I", "a pair is checked against a non-product type", subject=e, expected=goal)
            u1 = self.check(args[0], bullet(gcore.child(0), gn))
            u2 = self.check(args[1], bullet(gcore.child(1), gn))
            return _combine(u1, u2, "×I", e)
        if k is Constant.SUCC:
            self._expect_core(goal, NAT, "const", e)
            return self.check(args[0], goal)
        if k is Constant.BIND:
            return self._check_bind(args[0], args[1], e, goal)
        if k is Constant.FUTURE:
            return self._check_future(args[0], e, goal)
        if k is Constant.SEND:
            return self._check_send(args[0], args[1], e, goal)
        t, used = self.synth(e)
        if not fits(t, goal):
            raise TypeCheckError("const", f"{k.value} yields the wrong type", subject=e, expected=goal, actual=t)
        return used

    def _check_fix(self, f: Expr, e: Expr, goal: RegType) -> frozenset:
        gn, _ = _lead(goal)
        first = None
        # An annotated recursive binder pins the fixpoint type; the goal may be a supertype.
        if isinstance(f, Lambda) and _lead(f.annot)[0]:
            ta = strip_bullets(f.annot, 1)
            for n in range(0, (gn or 0) + 1):
                if ta == INF or not is_subtype(ta, _strip(goal, n)):
                    continue
                try:
                    return self.check(f, bullet(arrow(bullet(ta), ta), n))
                except TypeCheckError as err:
                    first = first or err
        for n in range(0, (gn or 0) + 1):
            t0 = _strip(goal, n)
            try:
                return self.check(f, bullet(arrow(bullet(t0), t0), n))
            except TypeCheckError as err:
                first = first or err
        raise first

    def _check_bind(self, e1: Expr, e2: Expr, e: Expr, goal: RegType) -> frozenset:
        gn, gcore = _lead(goal)
        if gcore.tag is not Tag.IO:
            raise TypeCheckError("bind", "bind builds an I/O action", subject=e, expected=goal)
        if isinstance(e2, Lambda):
            t = e2.annot
            want = bullet(io(t), gn)
            try:
                used1 = self.check(e1, want)
            except TypeCheckError as err:
                raise self._bind_mismatch(e1, want, err) from err
        else:
            try:
                st, used1 = self.synth(e1)
            except TypeCheckError:
                ft, _ = self.synth(e2)
                fn, fcore = _lead(ft)
                if fn is None or fcore.tag not in (Tag.ARROW, Tag.LOLLI):
                    raise TypeCheckError("bind", "continuation is not a function", subject=e2, actual=ft)
                t = fcore.child(0)
                want = bullet(io(t), gn)
                try:
                    used1 = self.check(e1, want)
                except TypeCheckError as err:
                    raise self._bind_mismatch(e1, want, err) from err
            else:
                m, score = _lead(st)
                if m is None or score.tag is not Tag.IO or m > gn:
                    raise TypeCheckError(
                        "bind",
                        "delay mismatch: the first action is not available when the result is",
                        subject=e1,
                        expected=bullet(io(score.child(0) if score.tag is Tag.IO else st), gn),
                        actual=st,
                    )
                t = score.child(0)
        used2 = self.check(e2, bullet(lolli(t, gcore), gn))
        return _combine(used1, used2, "bind", e)

    def _bind_mismatch(self, e1: Expr, want: RegType, err: TypeCheckError) -> TypeCheckError:
        try:
            actual, _ = self.synth(e1)
        except TypeCheckError:
            actual = None
        late = actual is not None and actual != INF and _lead(actual)[0] > _lead(want)[0]
        detail = "delay mismatch" if late else "mismatch"
        return TypeCheckError(
            "bind",
            f"{detail}: the first action cannot be typed as expected ({err.message})",
            subject=e1,
            expected=want,
            actual=actual,
        )

    def _check_future(self, f: Expr, e: Expr, goal: RegType) -> frozenset:
        try:
            t, used = self.synth(e)
        except TypeCheckError:
            pass
        else:
            if fits(t, goal):
                return used
        gn, gcore = _lead(goal)
        if gcore.tag is not Tag.IO:
            raise TypeCheckError("future", "future builds an I/O action", subject=e, expected=goal)
        inner = gcore.child(0)
        q, _ = _lead(inner)
        top = q if q is not None else self.slack
        first = None
        for m in range(top, -1, -1):
            try:
                return self.check(f, bullet(io(_strip(inner, m)), gn + m))
            except TypeCheckError as err:
                first = first or err
        raise TypeCheckError("future", f"spawned action fails: {first.message}", subject=e, expected=goal) from first

    def _check_send(self, ch: Expr, msg: Expr, e: Expr, goal: RegType) -> frozenset:
        ct, used1 = self.synth(ch)
        m, core = _lead(ct)
        gn, gcore = _lead(goal)
        if m is None or core.tag is not Tag.OUT:
            raise TypeCheckError("const", "send on a name without an output session type", subject=e, actual=ct)
        if m > gn or gcore.tag is not Tag.IO or not is_subtype(io(core.child(1)), gcore):
            raise TypeCheckError("const", "send yields the wrong type", subject=e, expected=goal,
                                 actual=bullet(io(core.child(1)), m))
        used2 = self.check(msg, bullet(core.child(0), gn))
        return _combine(used1, used2, "⊸E", e)

    # synthesis ----------------------------------------------------------
    def _synth(self, e: Expr) -> tuple[RegType, frozenset]:
        if isinstance(e, Ref):
            t = self.lookup(e.name, e)
            return t, (frozenset((e.name,)) if is_linear(t) else frozenset())
        if isinstance(e, NatLit):
            return NAT, frozenset()
        if isinstance(e, Const):
            if e.const is Constant.UNIT:
                return UNIT, frozenset()
            if e.const is Constant.ZERO:
                return NAT, frozenset()
            raise TypeCheckError("const", f"the type of {e.const.value} depends on its context; add an annotation",
                                 subject=e)
        if isinstance(e, Lambda):
            return self._synth_lambda(e)
        if isinstance(e, Split):
            m, t1, t2, used1 = self._split_parts(e)
            x, y = Name.var(e.left), Name.var(e.right)
            xt, yt = bullet(t1, m), bullet(t2, m)
            with self.scope([(x, xt), (y, yt)]):
                bt, used2 = self.synth(e.body)
            if x != y:
                used2 = self._linear_binder(used2, y, yt, "×E", e)
            used2 = self._linear_binder(used2, x, xt if x != y else yt, "×E", e)
            b, _ = _lead(bt)
            if b is not None and b < m:
                bt = bullet(bt, m - b)
            return bt, _combine(used1, used2, "×E", e)
        head, args = spine(e)
        if isinstance(head, Const) and len(args) <= ARITY[head.const]:
            return self._synth_const(head.const, args, e)
        return self._synth_app(e)

    def _synth_lambda(self, e: Lambda) -> tuple[RegType, frozenset]:
        _require_valid(e.annot, "→I", e)
        x = Name.var(e.var)
        with self.scope([(x, e.annot)]):
            bt, used = self.synth(e.body)
        used = self._linear_binder(used, x, e.annot, "→I", e)
        if not used:
            t = arrow(e.annot, bt)
            if validate(t).valid:
                return t, used
        t = lolli(e.annot, bt)
        _require_valid(t, "⊸I", e)
        return t, used

    def _synth_app(self, e: App) -> tuple[RegType, frozenset]:
        ft, used1 = self.synth(e.fn)
        n1, core = _lead(ft)
        if n1 is None or core.tag not in (Tag.ARROW, Tag.LOLLI):
            raise TypeCheckError("→E", "application of a non-function", subject=e, actual=ft)
        rule = "→E" if core.tag is Tag.ARROW else "⊸E"
        dom, cod = core.children
        first = None
        for n in range(n1, n1 + self.slack + 1):
            try:
                used2 = self.check(e.arg, bullet(dom, n))
            except TypeCheckError as err:
                first = first or err
                continue
            return bullet(cod, n), _combine(used1, used2, rule, e)
        raise first

    def _synth_on(self, f: Expr, dom: RegType) -> tuple[RegType, frozenset]:
        """Type of ``f h`` for a fresh ``h : dom``."""
        with self.hole(dom) as h:
            t, used = self.synth(App(f, Ref(h)))
        return t, self._linear_binder(used, h, dom, "→E", f)

    def _synth_const(self, k: Constant, args: list, e: Expr) -> tuple[RegType, frozenset]:
        if not args:
            return self._synth(e)
        if k is Constant.SEND and len(args) == 1:
            ct, used = self.synth(args[0])
            m, core = _lead(ct)
            if m is None or core.tag is not Tag.OUT:
                raise TypeCheckError("const", "send on a name without an output session type", subject=e, actual=ct)
            return bullet(lolli(core.child(0), io(core.child(1))), m), used
        if len(args) < ARITY[k]:
            raise TypeCheckError("const", f"cannot infer the type of a partial {k.value} application", subject=e)
        a = args[0]
        if k is Constant.RETURN:
            t, used = self.synth(a)
            return io(t), used
        if k is Constant.SUCC:
            t, used = self.synth(a)
            m, core = _lead(t)
            if core != NAT:
                raise TypeCheckError("const", "succ expects a natural number", subject=e, expected=NAT, actual=t)
            return t, used
        if k is Constant.PAIR:
            t1, u1 = self.synth(a)
            t2, u2 = self.synth(args[1])
            return prod(t1, t2), _combine(u1, u2, "×I", e)
        if k in (Constant.OPEN, Constant.RECV, Constant.SEND):
            ct, used = self.synth(a)
            m, core = _lead(ct)
            want = {Constant.OPEN: Tag.SHARED, Constant.RECV: Tag.IN, Constant.SEND: Tag.OUT}[k]
            if m is None or core.tag is not want:
                raise TypeCheckError("const", f"{k.value} applied to a name of the wrong type", subject=e, actual=ct)
            if k is Constant.OPEN:
                return bullet(io(core.child(0)), m), used
            if k is Constant.RECV:
                return bullet(io(prod(core.child(0), core.child(1))), m), used
            first = None
            for n in range(m, m + self.slack + 1):
                try:
                    u2 = self.check(args[1], bullet(core.child(0), n))
                except TypeCheckError as err:
                    first = first or err
                    continue
                return bullet(io(core.child(1)), n), _combine(used, u2, "⊸E", e)
            raise first
        if k is Constant.FUTURE:
            t, used = self.synth(a)
            m, core = _lead(t)
            if m is None or core.tag is not Tag.IO:
                raise TypeCheckError("future", "future expects a (delayed) I/O action", subject=e, actual=t)
            return io(bullet(core.child(0), m)), used
        if k is Constant.FIX:
            if isinstance(a, Lambda):
                m, _ = _lead(a.annot)
                if not m:
                    raise TypeCheckError("fix", "the recursive binder must have a delayed type", subject=e,
                                         actual=a.annot)
                t = strip_bullets(a.annot, 1)
                _require_valid(t, "fix", e)
                return t, self._check_fix(a, e, t)
            raise TypeCheckError("fix", "cannot infer the type of a fixpoint without an annotated function",
                                 subject=e)
        if k is Constant.BIND:
            return self._synth_bind(a, args[1], e)
        raise TypeCheckError("const", f"cannot infer the type of {k.value}", subject=e)

    def _synth_bind(self, e1: Expr, e2: Expr, e: Expr) -> tuple[RegType, frozenset]:
        st, used1 = self.synth(e1)
        m, core = _lead(st)
        if m is None or core.tag is not Tag.IO:
            raise TypeCheckError("bind", "the first argument of bind is not an I/O action", subject=e1, actual=st)
        t = core.child(0)
        if isinstance(e2, Lambda) and not is_subtype(t, e2.annot):
            # An action yielding •ʲ t may instead be run j steps later, yielding t.
            j, _ = _lead(t)
            for k in range(1, (j or 0) + 1):
                later = strip_bullets(t, k)
                if not is_subtype(later, e2.annot):
                    continue
                try:
                    used1 = self.check(e1, bullet(io(later), m + k))
                except TypeCheckError:
                    continue
                m, t = m + k, later
                break
        first = None
        for n in range(m, m + self.slack + 1):
            try:
                if isinstance(e2, Lambda):
                    if not is_subtype(t, e2.annot):
                        raise TypeCheckError("bind", "continuation expects a different value",
                                             subject=e2, expected=t, actual=e2.annot)
                    x = Name.var(e2.var)
                    xt = bullet(e2.annot, n)
                    with self.scope([(x, xt)]):
                        rt, used2 = self.synth(e2.body)
                    used2 = self._linear_binder(used2, x, xt, "bind", e2)
                else:
                    rt, used2 = self._synth_on(e2, bullet(t, n))
            except TypeCheckError as err:
                first = first or err
                continue
            r, rcore = _lead(rt)
            if r is None:
                first = first or TypeCheckError("bind", "continuation has type •∞", subject=e2)
                continue
            if r > n:
                continue
            if rcore.tag is not Tag.IO:
                first = first or TypeCheckError("bind", "continuation does not yield an I/O action",
                                                subject=e2, actual=rt)
                continue
            return bullet(rcore, n), _combine(used1, used2, "bind", e)
        raise first or TypeCheckError("bind", "no delay makes the continuation fit", subject=e)


_MISSING = object()


def _validate_env(env: Mapping) -> None:
    for u, t in env.items():
        _require_valid(t, "axiom", Ref(u))


def check_expr(env: Mapping, e: Expr, t: RegType, *, exact: bool = True) -> UsageReport:
    """Decide ``Γ ⊢ e : t``; with ``exact`` every linear binding must be used."""
    _validate_env(env)
    _require_valid(t, "type", e)
    ch = _Checker(env)
    used = ch.check(e, t)
    if exact:
        _all_linear_used(env, used, "axiom")
    return UsageReport(frozenset(used), {u: env[u] for u in used if u in env})


def synth_expr(env: Mapping, e: Expr) -> tuple[RegType, UsageReport]:
    _validate_env(env)
    t, used = _Checker(env).synth(e)
    return t, UsageReport(frozenset(used), {u: env[u] for u in used if u in env})


def _all_linear_used(env: Mapping, used: frozenset, rule: str) -> None:
    left = sorted(str(u) for u, t in env.items() if is_linear(t) and u not in used)
    if left:
        raise TypeCheckError(rule, f"linear names are never used: {', '.join(left)}")


# ---------------------------------------------------------------- processes


@dataclass
class ProcessTyping:
    """Everything learnt while checking a process soup."""

    delta: dict
    env: dict
    resources: dict
    used: frozenset
    bound: dict
    process: Process
    spawn_types: dict = field(default_factory=dict)  # server channel -> type of a spawned thread


def _classify_channel(binder: Name, annot, comps) -> str:
    base = binder.base
    session = any(n.base == base and n.kind is NameKind.ENDPOINT for c in comps for n in c.free)
    shared_use = any(n == Name.chan(base) for c in comps for n in c.free)
    if annot is not None:
        if annot.tag is Tag.SHARED:
            kind = "shared"
        elif is_session(annot):
            kind = "session"
        else:
            raise TypeCheckError("new", f"channel {base} is annotated with a non-channel type", actual=annot)
    else:
        kind = "session" if session else "shared"
    if (kind == "session" and shared_use) or (kind == "shared" and session):
        raise TypeCheckError("new", f"{base} is used both as a shared channel and as a session")
    return kind


def type_process(env: Mapping, p: Process, *, record: dict | None = None) -> ProcessTyping:
    """Check a process as a soup of threads and servers under restrictions."""
    _validate_env(env)
    soup = flatten(p, avoid={u.base for u in env})
    comps = list(soup.threads) + list(soup.servers)
    gamma: dict = dict(env)
    bound: dict = {}
    pending_vars: set = set()
    pending_chans: set = set()
    for binder, annot in soup.binders:
        if annot is not None:
            _require_valid(annot, "new", Ref(binder) if binder.is_variable else None)
        if binder.is_variable:
            bound[binder] = ("var", annot)
            if annot is None:
                pending_vars.add(binder)
            else:
                gamma[binder] = annot
            continue
        kind = _classify_channel(binder, annot, comps)
        bound[binder] = (kind, annot)
        if kind == "session":
            if annot is None:
                raise TypeCheckError("session", f"session channel {binder.base} needs a type annotation")
            gamma[Name.endpoint(binder.base, "+")] = annot
            gamma[Name.endpoint(binder.base, "-")] = dual(annot)
        elif annot is None:
            pending_chans.add(binder)
        else:
            gamma[binder] = annot

    defined: dict = {}
    delta: dict = {}
    used_total: frozenset = frozenset()
    ch = _Checker(gamma, record)
    spawn_types: dict = {}

    def define(name: Name, t: RegType, comp) -> None:
        if name in defined:
            raise TypeCheckError("par", f"{name} is defined twice", subject=comp)
        defined[name] = comp
        delta[name] = t

    todo = list(comps)
    while todo:
        progress = False
        for comp in list(todo):
            deps = {n for n in comp.free if n in pending_vars or n in pending_chans}
            own = Name.var(comp.name) if isinstance(comp, Thread) else Name.chan(comp.name)
            deps.discard(own)
            if deps:
                continue
            todo.remove(comp)
            progress = True
            if isinstance(comp, Thread):
                t, used = _type_thread(ch, comp, gamma.get(own))
            else:
                t, used, spawn_types[own] = _type_server(ch, comp, gamma.get(own))
            used_total = _combine(used_total, used, "par", comp)
            define(own, t, comp)
            if own in pending_vars or own in pending_chans:
                pending_vars.discard(own)
                pending_chans.discard(own)
                gamma[own] = t
                ch.env[own] = t
        if not progress:
            names = sorted({str(n) for c in todo for n in c.free if n in pending_vars or n in pending_chans})
            raise TypeCheckError(
                "new", f"cannot infer the types of {', '.join(names)} (cyclic use); add annotations"
            )

    for binder, (kind, annot) in bound.items():
        if kind == "session":
            continue
        if binder not in delta:
            what = "thread" if binder.is_variable else "server"
            raise TypeCheckError("new", f"no {what} defines the restricted name {binder}")
        if annot is not None and not type_equal(delta[binder], annot):
            raise TypeCheckError("new", f"definition of {binder} disagrees with its annotation",
                                 expected=annot, actual=delta[binder])
    _all_linear_used(gamma, used_total, "par")
    free_delta = {n: t for n, t in delta.items() if n not in bound}
    binders = []
    for binder, (kind, annot) in bound.items():
        binders.append((binder, annot if annot is not None else delta.get(binder)))
    parts = []
    if soup.tree is not None:
        parts.append(tree_process(soup.tree))
    parts.extend(soup.servers)
    elaborated = new(binders, par(*parts))
    return ProcessTyping(free_delta, gamma, delta, used_total, bound, elaborated, spawn_types)


def _type_thread(ch: _Checker, th: Thread, declared: RegType | None) -> tuple[RegType, frozenset]:
    x = Name.var(th.name)
    if x in th.body.free:
        raise TypeCheckError("thread", f"thread name {th.name} occurs free in its body", subject=th)
    if declared is not None:
        lead, _ = _lead(declared)
        top = lead if lead is not None else ch.slack
        first = None
        for n in range(0, top + 1):
            try:
                used = ch.check(th.body, bullet(io(_strip(declared, n)), n))
            except TypeCheckError as err:
                first = first or err
                continue
            return declared, used
        raise first
    t, used = ch.synth(th.body)
    n, core = _lead(t)
    if n is None or core.tag is not Tag.IO:
        raise TypeCheckError("thread", "a thread body must be an I/O action", subject=th, actual=t)
    return bullet(core.child(0), n), used


def _type_server(ch: _Checker, srv: Server, declared: RegType | None) -> tuple[RegType, frozenset, RegType]:
    bad = sorted(str(n) for n in srv.body.free if n.kind is not NameKind.CHANNEL)
    if bad:
        raise TypeCheckError("server", f"a server body may only mention shared channels (found {', '.join(bad)})",
                             subject=srv)
    if declared is not None:
        if declared.tag is not Tag.SHARED:
            raise TypeCheckError("server", f"{srv.name} is not a shared channel", actual=declared)
        session = declared.child(0)
        res, used = ch._synth_on(srv.body, dual(session))
    else:
        ft, used = ch.synth(srv.body)
        if ft.tag not in (Tag.ARROW, Tag.LOLLI) or not is_session(ft.child(0)):
            raise TypeCheckError("server", "a server body must be a function on session endpoints",
                                 subject=srv, actual=ft)
        session = dual(ft.child(0))
        declared = shared(session)
        res = ft.child(1)
    if res.tag is not Tag.IO:
        raise TypeCheckError("server", "a server body must yield an I/O action", subject=srv, actual=res)
    if is_linear(res.child(0)):
        raise TypeCheckError("server", "the threads spawned by a server must have an unlimited type",
                             subject=srv, actual=res.child(0))
    return declared, used, res.child(0)


def check_process(env: Mapping, p: Process) -> ResourceEnv:
    """Decide ``Γ ⊢ P ▷ Δ`` and return ``Δ``."""
    return type_process(env, p).delta


def check_initial(p: Process) -> Process:
    """Verify that ``p`` is an initial process; return it with every
    restriction annotated."""
    soup = flatten(p)
    if p.free:
        names = ", ".join(sorted(map(str, p.free)))
        raise TypeCheckError("initial", f"an initial process is closed (free: {names})")
    if len(soup.threads) != 1:
        raise TypeCheckError("initial", f"an initial process has exactly one thread, found {len(soup.threads)}")
    servers = {Name.chan(s.name) for s in soup.servers}
    main = Name.var(soup.threads[0].name)
    for binder, annot in soup.binders:
        if binder.is_variable and binder != main:
            raise TypeCheckError("initial", f"restricted variable {binder} names no thread")
        if not binder.is_variable and binder not in servers:
            raise TypeCheckError("initial", f"restricted channel {binder} is not a server")
    return type_process({}, p).process


def channel_names(env: Mapping) -> set:
    return {u.base for u in env if u.kind is not NameKind.VARIABLE}


__all__ = [
    "TypeCheckError",
    "UsageReport",
    "ProcessTyping",
    "const_schema",
    "env_combine",
    "is_balanced",
    "check_expr",
    "synth_expr",
    "check_process",
    "type_process",
    "check_initial",
    "fits",
    "clear_cache",
]

