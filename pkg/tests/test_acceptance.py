"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run under pytest (the lines are repeated in the terminal summary) or
directly with ``python3 tests/test_acceptance.py``.
"""

import functools
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import generators as gen  # noqa: E402
from conftest import ACCEPTANCE_LINES, initial, initial_programs, program  # noqa: E402
from sid.analysis import (  # noqa: E402
    Invariant,
    monitor_run,
    split,
    wp_brute_force,
    wp_exists,
    wp_fast,
    wp_on_tree,
    wp_reference,
)
from sid.cli import corpus_files  # noqa: E402
from sid.parser import parse_expr, parse_type  # noqa: E402
from sid.semantics import (  # noqa: E402
    BudgetExceeded,
    MachineState,
    Rule,
    RunStatus,
    apply,
    delivered,
    enabled,
    normalize,
    run,
    stream_prefix,
)
from sid.syntax import App, Const, Constant, NatLit, Name, struct_equiv  # noqa: E402
from sid.typecheck import TypeCheckError, check_expr, check_process, type_process  # noqa: E402
from sid.types import INF, arrow, bullet, dual, io, is_valid, type_equal  # noqa: E402

SEEDS = range(1, 11)
STEPS = 200
WINDOW = 50
NON_TERMINATING = ("p0", "badserver", "omega_future")


def accepts(env, e, t, exact=False) -> bool:
    try:
        check_expr(env, e, t, exact=exact)
    except TypeCheckError:
        return False
    return True


def process_ok(env, p):
    try:
        return check_process(env, p)
    except TypeCheckError:
        return None


# ------------------------------------------------------------------ AC1


def accepts_def(prog, name, t, exact=True) -> bool:
    return accepts(prog.assumptions, prog.definition_body(name), t, exact=exact)


def ac1():
    S = parse_type("rec S. Nat * @S")
    IN = parse_type("rec S. ?Nat.@S")
    fails = []

    if not accepts_def(program("display"), "display", arrow(IN, io(S)), exact=False):
        fails.append("display rejected")
    if accepts_def(program("display0"), "display0", arrow(IN, io(S)), exact=False):
        fails.append("display0 accepted")
    stream0 = program("stream0")
    if accepts_def(stream0, "stream0", stream0.defs["stream0"].type):
        fails.append("stream0 accepted")
    if not accepts_def(program("p0"), "stream", program("p0").defs["stream"].type):
        fails.append("stream rejected")
    if not accepts_def(program("skip"), "skip", arrow(S, parse_type("rec S. Nat * @@S"))):
        fails.append("skip rejected")

    samples = [parse_type(s) for s in ("Nat", "Unit", "rec S. Nat * @S", "rec S. !Nat.@S", "Nat -> IO Nat", "<?Nat.end>")]
    for t in samples + [INF]:
        if not accepts({}, Const(Constant.FIX), arrow(arrow(bullet(t), t), t)):
            fails.append(f"fix rejected at {t}")

    omega = program("omega").definition_body("omega")
    if not accepts({}, omega, INF):
        fails.append("omega rejected at •∞")
    others = {}
    for f in corpus_files():
        prog = program(f)
        for k, t in list(prog.types.items()) + [(k, d.type) for k, d in prog.defs.items()]:
            if t != INF:
                others[f"{f}:{k}"] = t
    wrongly = [k for k, t in others.items() if accepts({}, omega, t)]
    if wrongly:
        fails.append(f"omega accepted at {wrongly}")

    env = {Name.var("y"): parse_type("Nat"), Name.var("z"): parse_type("Nat -o Nat"), Name.var("w"): parse_type("Nat")}
    if accepts(env, parse_expr(r"(\x:Nat. y) (z w)"), parse_type("Nat")):
        fails.append("(λx.y)(z w) accepted")

    eq4 = program("eq4")
    if process_ok({}, eq4.main_process()) is None:
        fails.append("mutual futures rejected")
    if process_ok({}, eq4.named_process("reduct")) is not None:
        fails.append("mutual futures reduct accepted")

    env = {Name.endpoint("c", "-"): IN, Name.endpoint("b", "+"): parse_type("!(rec S. Nat * @S).end")}
    delta = process_ok(env, program("pipeline").named_process("middle"))
    if delta != {Name.var("y"): parse_type("end")}:
        fails.append(f"middle thread resources {delta}")
    detail = f"all verdicts match, omega rejected at {len(others)} other types" if not fails else "; ".join(fails)
    return not fails, detail


# ------------------------------------------------------------------ AC2


def ac2():
    fails = []
    verdicts = {
        "rec S. Nat * @S": True,
        "rec S. Nat * S": False,
        "rec S. !Nat.@S": True,
        "rec S. !Nat.S": False,
        "rec S. @S": True,
    }
    for src, want in verdicts.items():
        if is_valid(parse_type(src)) != want:
            fails.append(f"validity of {src}")
    rng = random.Random(2024)
    dual_bad = 0
    for _ in range(1000):
        table = gen.session_table(rng, 8)
        t = gen.build(table)
        if dual(dual(t)) != t or dual(t) != gen.build(gen.oracle_dual(table)):
            dual_bad += 1
    eq_bad = equal_pairs = pairs = 0
    while pairs < 1000:
        ta = gen.any_table(rng)
        tb = gen.duplicate_node(rng, ta) if rng.random() < 0.5 else gen.any_table(rng)
        a, b = gen.build(ta), gen.build(tb)
        if a is None or b is None:
            continue
        pairs += 1
        want = gen.oracle_equal(ta, tb)
        equal_pairs += want
        if type_equal(a, b) != want:
            eq_bad += 1
    if dual_bad:
        fails.append(f"{dual_bad} dual disagreements")
    if eq_bad:
        fails.append(f"{eq_bad} equality disagreements")
    return not fails, (f"dual 0/1000, equality 0/1000 ({equal_pairs} equal pairs)" if not fails else "; ".join(fails))


# ---------------------------------------------------------- monitored runs


@functools.lru_cache(maxsize=None)
def monitored():
    """Every initial corpus program under every seed."""
    return {
        (name, seed): monitor_run(initial(name), STEPS, scheduler="random", seed=seed)
        for name in initial_programs()
        for seed in SEEDS
    }


def count(*invariants):
    return sum(r.count(inv) for r in monitored().values() for inv in invariants)


def runs_line():
    return f"{len(monitored())} runs over {', '.join(initial_programs())}"


def ac3():
    bad = count(Invariant.TYPING, Invariant.BALANCE)
    return bad == 0, f"{bad} typeability violations; {runs_line()}"


def ac4():
    fails = []
    bad = count(Invariant.POLARISATION, Invariant.ORACLE)
    if bad:
        fails.append(f"{bad} well-polarisation violations")
    prog = program("wp_counterexample")
    grouped = split(prog.named_process("grouped")).threads
    regrouped = split(prog.named_process("regrouped")).threads
    if not (wp_on_tree(grouped) and not wp_on_tree(regrouped) and struct_equiv(grouped, regrouped)):
        fails.append("P/P' verdicts")
    for name in ("rearrange_comm", "rearrange_return"):
        ex = program(name)
        before, after, repaired = (split(ex.named_process(k)).threads for k in ("before", "after", "repaired"))
        witness = wp_exists(after).witness
        ok = (wp_on_tree(before) and not wp_on_tree(after) and wp_on_tree(repaired)
              and witness is not None and wp_on_tree(witness) and struct_equiv(witness, repaired))
        if not ok:
            fails.append(f"{name} verdicts")
    checks = sum(r.oracle_checks for r in monitored().values())
    return not fails, (f"0 violations, {checks} oracle cross-checks, examples reproduced" if not fails else "; ".join(fails))


def ac5():
    fails = []
    bad = count(Invariant.PROGRESS)
    if bad:
        fails.append(f"{bad} stuck states")
    windows = 0
    for (name, _), report in monitored().items():
        if name not in NON_TERMINATING:
            continue
        rules = [ev.rule for ev in report.events]
        for i in range(len(rules) - WINDOW + 1):
            windows += 1
            if not any(r in (Rule.OPEN, Rule.FUTURE) for r in rules[i:i + WINDOW]):
                fails.append(f"{name}: window at {i} spawns nothing")
                break
    return not fails, (f"0 stuck states, {windows} windows of {WINDOW} events all spawn" if not fails else "; ".join(fails))


def ac6():
    bad = count(Invariant.WEIGHT)
    steps = sum(1 for r in monitored().values() for ev in r.events if ev.rule not in (Rule.OPEN, Rule.FUTURE))
    return bad == 0, f"{bad} non-decreasing steps out of {steps}"


# ------------------------------------------------------------------ AC7


def mains():
    out = {}
    for f in corpus_files():
        prog = program(f)
        if prog.main is None:
            continue
        p = prog.main_process()
        try:
            type_process(prog.assumptions, p)
        except TypeCheckError:
            continue
        out[f.removesuffix(".sid")] = initial(f.removesuffix(".sid")) if f.removesuffix(".sid") in initial_programs() else p
    return out


def closes(state, c1, c2) -> bool:
    s1, _ = apply(state, c1)
    s2, _ = apply(state, c2)
    if struct_equiv(s1.process(), s2.process()):
        return True
    joined = [apply(s2, d)[0].process() for d in enabled(s2)]
    return any(struct_equiv(apply(s1, d)[0].process(), q) for d in enabled(s1) for q in joined)


def ac7():
    fails = []
    terminating = []
    for name, p in mains().items():
        if run(p, "det", 2000).status is not RunStatus.FINAL:
            continue
        terminating.append(name)
        finals = []
        for seed in SEEDS:
            tr = run(p, "random", 2000, seed=seed)
            if tr.status is not RunStatus.FINAL:
                fails.append(f"{name} seed {seed} {tr.status.value}")
            finals.append(tr.final.process())
        if not all(struct_equiv(finals[0], f) for f in finals[1:]):
            fails.append(f"{name}: final states differ")
    rng = random.Random(7)
    branch_points = 0
    open_diamonds = 0
    for name, p in mains().items():
        for seed in (1, 2, 3):
            st = MachineState.from_process(p)
            for _ in range(40):
                choices = enabled(st)
                if not choices:
                    break
                if len(choices) >= 2:
                    c1, c2 = rng.sample(choices, 2)
                    branch_points += 1
                    if not closes(st, c1, c2):
                        open_diamonds += 1
                st, _ = apply(st, rng.choice(choices))
    if branch_points < 100:
        fails.append(f"only {branch_points} branch points")
    if open_diamonds:
        fails.append(f"{open_diamonds} diamonds do not close")
    detail = f"terminating: {', '.join(terminating)}; {branch_points} diamonds closed"
    return not fails, detail if not fails else "; ".join(fails)


# ------------------------------------------------------------------ AC8


def ac8():
    fails = []
    checked = 0
    for f in corpus_files():
        prog = program(f)
        for k, d in prog.defs.items():
            if d.type == INF:
                continue
            try:
                check_expr(prog.assumptions, prog.definition_body(k), d.type, exact=False)
            except TypeCheckError:
                continue
            checked += 1
            try:
                normalize(prog.definition_body(k), 10_000)
            except BudgetExceeded:
                fails.append(f"{f}:{k}")
    from_ = program("from").definition_body("from")
    for n in range(5):
        checked += 1
        try:
            normalize(App(from_, NatLit(n)), 10_000)
        except BudgetExceeded:
            fails.append(f"from {n}")
    try:
        normalize(program("omega").definition_body("omega"), 10_000)
        fails.append("omega normalised")
    except BudgetExceeded:
        pass
    return not fails, (f"{checked} expressions normalise, omega exceeds 10^4" if not fails else "; ".join(fails))


# ------------------------------------------------------------------ AC9


def ac9():
    rng = random.Random(9)
    bad = 0
    holds = 0
    sizes = set()
    for _ in range(500):
        threads = gen.thread_multiset(rng, 6)
        sizes.add(len(threads))
        fast = wp_fast(threads).holds
        brute = wp_brute_force(threads)
        holds += brute
        if fast != brute or wp_reference(threads).holds != brute:
            bad += 1
    return bad == 0, f"{bad} disagreements on 500 multisets (sizes {min(sizes)}-{max(sizes)}, {holds} well-polarised)"


# ----------------------------------------------------------------- AC10


def ac10():
    fails = []
    tr = run(program("pipeline").main_process(), "det", 500)
    msgs = delivered(tr, "b")
    values = stream_prefix(msgs[0], 3) if msgs else []
    if values != [1, 2, 3]:
        fails.append(f"pipeline delivered {values}")
    one = program("oneshot")
    if process_ok({}, one.main_process()) is None:
        fails.append("one-shot stream rejected")
    tr1 = run(one.main_process(), "det", 500)
    sent = delivered(tr1, "c")
    if tr1.status is not RunStatus.FINAL or not sent or stream_prefix(sent[0], 3) != [0, 1, 2]:
        fails.append("one-shot stream run")
    return not fails, (f"b carries {values} within {len(tr.events)} steps; one-shot stream ends {tr1.status.value}"
                       if not fails else "; ".join(fails))


CRITERIA = {
    1: ("typing verdicts", ac1),
    2: ("type algebra", ac2),
    3: ("subject reduction", ac3),
    4: ("well-polarisation invariance", ac4),
    5: ("progress", ac5),
    6: ("strong normalisation without spawns", ac6),
    7: ("confluence", ac7),
    8: ("normalisation", ac8),
    9: ("fast path oracle equivalence", ac9),
    10: ("behavioural reproduction", ac10),
}


def line(n: int) -> tuple[bool, str]:
    title, fn = CRITERIA[n]
    ok, detail = fn()
    return ok, f"AC{n} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_acceptance(n):
    ok, text = line(n)
    ACCEPTANCE_LINES[n] = text
    print(text)
    assert ok, text


if __name__ == "__main__":
    results = [line(n) for n in sorted(CRITERIA)]
    for _, text in results:
        print(text)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
