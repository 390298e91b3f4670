import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import generators as gen
from conftest import initial, program
from sid.analysis import (
    EndpointStatus,
    Invariant,
    Polarised,
    SharingGraph,
    Weight,
    arrangements,
    endpoint_status,
    monitor_run,
    ns,
    polarised_names,
    precedence_acyclic,
    precedence_edges,
    precedes,
    split,
    weight,
    wp_brute_force,
    wp_exists,
    wp_fast,
    wp_on_tree,
    wp_reference,
)
from sid.parser import parse_expr, parse_process
from sid.semantics import MachineState, Rule, apply, enabled, make_scheduler, run_states
from sid.syntax import Idle, Name, Par, Thread, flatten, struct_equiv
from sid.typecheck import type_process


def threads_of(src: str) -> list[Thread]:
    return list(flatten(parse_process(src)).threads)


# ---------------------------------------------------------------- split


def test_split_initial_process():
    s = split(program("p0").main_process())
    assert {b.base for b in s.bounds} == {"prod", "a"}
    assert isinstance(s.threads, Thread) and len(s.servers) == 1


def test_split_q():
    s = split(program("p0").named_process("q"))
    assert {b.base for b in s.bounds} == {"prod", "cons", "a", "c"}
    assert isinstance(s.threads, Par) and len(s.servers) == 1


def test_split_idle():
    s = split(Idle())
    assert s.bounds == () and isinstance(s.threads, Idle) and s.servers == ()


# ------------------------------------------------------ polarised names


def test_polarised_names():
    assert polarised_names(parse_process("x <= return y")) == {
        Polarised("var", "x", "-"), Polarised("var", "y", "+")}
    assert polarised_names(parse_expr("send a+ z")) == {
        Polarised("chan", "a", "+"), Polarised("var", "z", "+")}
    assert polarised_names(Idle()) == frozenset()


# -------------------------------------------------- well-polarisation


def test_counterexample_groupings():
    prog = program("wp_counterexample")
    grouped = split(prog.named_process("grouped")).threads
    regrouped = split(prog.named_process("regrouped")).threads
    assert wp_on_tree(grouped)
    assert not wp_on_tree(regrouped)
    assert wp_exists(regrouped).holds


def test_self_reference_is_not_well_polarised():
    assert not wp_on_tree(parse_process("x <= return x"))


@pytest.mark.parametrize("name", ["rearrange_comm", "rearrange_return"])
def test_rearrangement_examples(name):
    prog = program(name)
    before, after, repaired = (split(prog.named_process(k)).threads for k in ("before", "after", "repaired"))
    assert wp_on_tree(before)
    assert not wp_on_tree(after)
    assert wp_on_tree(repaired)
    assert struct_equiv(after, repaired)
    for method in ("fast", "reference", "brute"):
        assert wp_exists(after, method=method).holds
    found = wp_exists(after).witness
    assert wp_on_tree(found) and struct_equiv(found, repaired)


@pytest.mark.parametrize("name", ["eq6", "eq7"])
def test_crossing_sessions_not_well_polarised(name):
    threads = split(program(name).main_process()).threads
    for method in ("fast", "reference", "brute"):
        assert not wp_exists(threads, method=method).holds


def test_cyclic_sharing_graph_can_still_be_well_polarised():
    threads = threads_of("x <= return 1 | y1 <= send a+ x | y2 <= return (a-, x)")
    graph = SharingGraph.of(threads)
    assert graph.is_simple() and not graph.is_acyclic()
    assert wp_brute_force(threads)
    assert wp_fast(threads).holds and wp_reference(threads).holds


@pytest.mark.parametrize("n,count", [(1, 1), (2, 1), (3, 3), (4, 15), (5, 105), (6, 945)])
def test_arrangement_count(n, count):
    # Unordered binary trees over n labelled leaves: (2n-3)!!.
    trees = list(arrangements(list(range(n))))
    assert len(trees) == len(set(map(str, trees))) == count


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_fast_path_matches_exhaustive_search(rng):
    threads = gen.thread_multiset(rng, 5)
    fast, ref, brute = wp_fast(threads), wp_reference(threads), wp_brute_force(threads)
    assert fast.holds == ref.holds == brute
    for res in (fast, ref):
        if res.holds:
            assert wp_on_tree(res.witness)
            assert sorted(t.name for t in flatten(res.witness).threads) == sorted(t.name for t in threads)


def subprocesses(p):
    if isinstance(p, Thread):
        yield p
        return
    lefts, rights = list(subprocesses(p.left)), list(subprocesses(p.right))
    yield from lefts
    yield from rights
    for a in lefts:
        for b in rights:
            yield Par(a, b)


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_subtrees_of_well_polarised_trees(rng):
    res = wp_reference(gen.thread_multiset(rng, 5))
    if not res.holds:
        return
    for q in subprocesses(res.witness):
        assert wp_on_tree(q)


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_future_sharing_excludes_second_name(rng):
    res = wp_reference(gen.thread_multiset(rng, 5))
    if not res.holds:
        return
    threads = list(flatten(res.witness).threads)
    for t1 in threads:
        for t2 in threads:
            if t1 is t2 or Name.var(t1.name) not in t2.body.free:
                continue
            n1, n2 = polarised_names(t1), polarised_names(t2)
            assert [x for x in n1 if x.co() in n2] == [Polarised("var", t1.name, "-")]


# ------------------------------------------------------------ precedence


def test_endpoint_status():
    a_plus, a_minus = Name.endpoint("a", "+"), Name.endpoint("a", "-")
    assert endpoint_status(a_plus, parse_expr("recv a+")) is EndpointStatus.READY
    assert endpoint_status(a_minus, parse_expr("send b+ (1, a-)")) is EndpointStatus.BLOCKED
    assert endpoint_status(a_plus, parse_expr(r"x >>= \u:Nat. send a+ u")) is EndpointStatus.BLOCKED
    assert endpoint_status(a_plus, parse_expr("return 1")) is EndpointStatus.ABSENT


def test_precedes():
    x, y = threads_of(r"x <= return 1 | y <= x >>= \u:Nat. return u")
    assert precedes(x, y) and not precedes(y, x)
    u, v = threads_of("u <= return 1 | v <= return 2")
    assert not precedes(u, v) and not precedes(v, u)


def test_crossing_sessions_form_cycle():
    threads = split(program("eq6").main_process()).threads
    edges = set(precedence_edges(threads))
    assert edges == {("x", "y"), ("y", "x")}
    res = precedence_acyclic(threads)
    assert not res.acyclic and res.cycle[0] == res.cycle[-1] and len(res.cycle) == 3


def test_single_thread_acyclic():
    assert precedence_acyclic(threads_of("x <= return 1")).acyclic


def test_both_endpoints_in_one_thread_is_acyclic():
    assert precedence_acyclic(split(program("eq7").main_process()).threads).acyclic


@pytest.mark.parametrize("name", ["p0", "badserver", "fanout", "pingpong"])
def test_precedence_implies_shared_name(name):
    st0 = MachineState.from_process(initial(name))
    for _, _, nxt, _ in run_states(st0, make_scheduler("random", 5), 120):
        threads = [Thread(n, b) for n, b in nxt.threads]
        by_name = {t.name: t for t in threads}
        for a, b in precedence_edges(threads):
            na, nb = polarised_names(by_name[a]), polarised_names(by_name[b])
            assert any(x.co() in nb for x in na)


# ---------------------------------------------------------------- weight


def test_ns():
    assert ns(parse_expr("unit")) == 0
    assert ns(parse_expr(r"(\x:Unit. x) unit")) == 1
    assert ns(parse_expr(r"return 1 >>= \x:Nat. return x")) == 2


def test_weight_of_trivial_thread():
    assert weight(parse_process("x <= return unit"), {}, {}) == Weight(1, 0, 0)


def test_beta_step_decreases_steps_only():
    p = parse_process(r"new x : Unit in x <= (\y:Unit. return y) unit")
    st0 = MachineState.from_process(p)
    typing = type_process({}, p)
    w0 = weight(st0, typing.env, typing.resources)
    st1, _ = apply(st0, enabled(st0)[0])
    w1 = weight(st1, typing.env, typing.resources)
    assert w0[:2] == w1[:2] and w1.steps == w0.steps - 1


def test_comm_step_decreases_communications():
    p = parse_process("new x, y, a : !Nat.end in (x <= send a+ 1 | y <= recv a-)")
    st0 = MachineState.from_process(p)
    t0 = type_process({}, p)
    (choice,) = enabled(st0)
    st1, _ = apply(st0, choice)
    t1 = type_process({}, st1.process())
    w0 = weight(st0, t0.env, t0.resources)
    w1 = weight(st1, t1.env, t0.resources)
    assert w0.threads == w1.threads and w1.communications < w0.communications


# --------------------------------------------------------------- monitor


def test_monitor_p0():
    report = monitor_run(initial("p0"), 300)
    assert report.ok, report.violations[:1]
    assert report.status == "exhausted"
    assert report.histogram[Rule.OPEN] >= 1 and report.histogram[Rule.COMM] >= 5


def test_monitor_badserver_never_uses_b_session():
    report = monitor_run(initial("badserver"), 300)
    assert report.ok, report.violations[:1]
    b_sessions = {ev.fresh[0] for ev in report.events if ev.rule is Rule.OPEN and ev.channel == "b"}
    assert b_sessions
    assert report.histogram[Rule.COMM] > 0
    assert not [ev for ev in report.events if ev.rule is Rule.COMM and ev.channel.rstrip("+-") in b_sessions]


def test_monitor_omega_future():
    report = monitor_run(initial("omega_future"), 100)
    assert report.ok
    assert report.histogram[Rule.FUTURE] >= 30


def test_monitor_flags_stuck_state():
    report = monitor_run(program("eq6").main_process(), 50)
    assert report.status == "stuck"
    assert report.count(Invariant.PROGRESS) == 1
    assert report.count(Invariant.ACYCLIC) >= 1


def test_monitor_flags_untypeable_reduct():
    report = monitor_run(program("eq4").main_process(), 5)
    assert report.count(Invariant.TYPING) >= 1


def test_monitor_report_json():
    data = monitor_run(initial("pingpong"), 100, keep_verdicts=True).to_json()
    assert data["ok"] and data["status"] == "final"
    assert data["verdicts"][0]["step"] == 0


def test_random_multisets_are_bounded():
    rng = random.Random(1)
    assert all(1 <= len(gen.thread_multiset(rng)) <= 6 for _ in range(50))
