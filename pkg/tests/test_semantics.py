import pytest
from hypothesis import given, settings

from conftest import program
from sid.parser import parse_expr, parse_process
from sid.semantics import (
    BudgetExceeded,
    Choice,
    IOHead,
    MachineState,
    Normal,
    Redex,
    Rule,
    RunStatus,
    StaleChoice,
    apply,
    decompose,
    delivered,
    enabled,
    expr_step,
    is_final,
    normalize,
    plug,
    run,
    run_states,
    make_scheduler,
    stream_prefix,
)
from sid.syntax import App, Constant, Idle, NatLit, Thread, struct_equiv, var
from generators import exprs


def state(src: str) -> MachineState:
    return MachineState.from_process(parse_process(src))


# ------------------------------------------------------- decomposition


def test_beta_redex_at_top():
    d = decompose(parse_expr(r"(\x:Unit. x) unit"))
    assert isinstance(d, Redex) and d.frames == () and d.rule is Rule.BETA


def test_bind_redex_at_top():
    d = decompose(parse_expr(r"return 1 >>= \x:Nat. return x"))
    assert isinstance(d, Redex) and d.rule is Rule.BIND


def test_send_payload_is_not_evaluated():
    payload = parse_expr(r"(\n:Nat. n) 0")
    d = decompose(App(parse_expr("send a+"), payload))
    assert isinstance(d, IOHead) and d.kind is Constant.SEND
    assert str(d.channel) == "a+" and d.payload is payload


def test_laziness_under_pairs_and_lambdas():
    assert isinstance(decompose(parse_expr(r"(1, (\x:Nat. x) 2)")), Normal)
    assert isinstance(decompose(parse_expr(r"\y:Nat. (\x:Nat. x) y")), Normal)
    assert expr_step(parse_expr(r"return ((\x:Nat. x) 2)")) is None


@settings(max_examples=300, deadline=None)
@given(exprs())
def test_decomposition_reassembles(e):
    d = decompose(e)
    if isinstance(d, Redex):
        assert plug(d.frames, d.term) == e
        assert expr_step(e) is not None
    else:
        assert expr_step(e) is None


# ---------------------------------------------------------- expr steps


def test_beta_and_split_steps():
    assert expr_step(parse_expr(r"(\x:Nat. succ x) 4")) == parse_expr("succ 4")
    e = parse_expr(r"split (1, 2) as x, y in (y, x)")
    assert expr_step(e) == parse_expr("(2, 1)")


def test_fix_unfolds_once():
    f = parse_expr(r"\g:@Nat. 1")
    assert expr_step(App(parse_expr("fix"), f)) == App(f, App(parse_expr("fix"), f))


def test_from_zero_unfolds_to_pair():
    from_ = program("from").definition_body("from")
    nf, steps = normalize(App(from_, NatLit(0)))
    assert steps > 0
    assert nf.fn.arg == NatLit(0)
    assert nf.arg == App(from_, parse_expr("succ 0"))
    assert stream_prefix(App(from_, NatLit(0)), 5) == [0, 1, 2, 3, 4]


def test_omega_never_normalises():
    with pytest.raises(BudgetExceeded):
        normalize(program("omega").definition_body("omega"), 10_000)


# ---------------------------------------------------------- processes


def test_open_enabled_initially():
    st = MachineState.from_process(program("p0").main_process())
    assert [c.rule for c in enabled(st)] == [Rule.OPEN]


def test_q_enables_communication_on_c():
    st = MachineState.from_process(program("p0").named_process("q"))
    for _, choice, nxt, ev in run_states(st, make_scheduler("det"), 40):
        if ev.rule is Rule.COMM:
            assert ev.channel.rstrip("+-") == "c"
            break
    else:
        pytest.fail("no communication within 40 steps")


def test_final_state_has_nothing_enabled():
    assert enabled(state(r"new a in server a = \s:?Nat.end. recv s")) == []


def test_reconstruction_is_congruent():
    for name in ("p0", "badserver", "pingpong"):
        p = program(name).main_process()
        assert struct_equiv(MachineState.from_process(p).process(), p)


def test_future_spawns_thread():
    st = state(r"new x in x <= future (return 1) >>= \y:Nat. return y")
    (choice,) = enabled(st)
    assert choice.rule is Rule.FUTURE
    nxt, ev = apply(st, choice)
    (y,) = ev.fresh
    assert y.startswith("%")
    bodies = nxt.thread_map()
    assert bodies["x"] == App(App(parse_expr("bind"), App(parse_expr("return"), var(y))), parse_expr(r"\y:Nat. return y"))
    assert bodies[y] == parse_expr("return 1")


def test_return_substitutes_everywhere():
    st = state("new x in (x <= return 7 | y <= return (x, x))")
    choice = next(c for c in enabled(st) if c.rule is Rule.RETURN)
    nxt, ev = apply(st, choice)
    assert nxt.thread_map() == {"y": parse_expr("return (7, 7)")}
    assert not nxt.restricted(var("x").name)


def test_comm_passes_message_unevaluated():
    st = state(r"new a : !Nat.end in (x <= send a+ ((\n:Nat. n) 3) | y <= recv a-)")
    (choice,) = [c for c in enabled(st) if c.rule is Rule.COMM]
    nxt, ev = apply(st, choice)
    bodies = nxt.thread_map()
    assert str(bodies["x"]) == "return a+"
    assert bodies["y"] == parse_expr(r"return ((\n:Nat. n) 3, a-)")


def test_open_creates_session_and_server_copy():
    st = state(r"new a : <!Nat.end>, x in (x <= open a | server a = \s:?Nat.end. recv s)")
    nxt, ev = apply(st, enabled(st)[0])
    c, y = ev.fresh
    bodies = nxt.thread_map()
    assert str(bodies["x"]) == f"return {c}+"
    assert str(bodies[y]).endswith(f"{c}-")
    assert len(nxt.servers) == 1


def test_stale_choice_rejected():
    st = state("new x in x <= return 1")
    with pytest.raises(StaleChoice):
        apply(st, Choice(Rule.COMM, "x", "z", "a"))


def test_is_final():
    assert is_final(Idle())
    assert is_final(parse_process(r"new a in server a = \s:end. return unit"))
    assert not is_final(Thread("x", NatLit(1)))


# ---------------------------------------------------------------- runs


def test_p0_reaches_q_right_after_first_open():
    prog = program("p0")
    q = prog.named_process("q")
    seen = []
    st = MachineState.from_process(prog.main_process())
    for _, _, nxt, ev in run_states(st, make_scheduler("det"), 5):
        seen.append(ev.rule)
        if struct_equiv(nxt.process(), q):
            break
    else:
        pytest.fail("Q not reached")
    assert seen[0] is Rule.OPEN and seen.count(Rule.OPEN) == 1


def test_pipeline_delivers_incremented_stream():
    tr = run(program("pipeline").main_process(), "det", 500)
    (msg,) = delivered(tr, "b")
    assert stream_prefix(msg, 3) == [1, 2, 3]


def test_omega_future_only_spawns():
    tr = run(program("omega_future").main_process(), "det", 300)
    assert tr.status is RunStatus.EXHAUSTED
    rules = tr.rules()
    for i in range(0, len(rules) - 10):
        assert Rule.FUTURE in rules[i:i + 10]


def test_budget_and_quiescence_are_distinct():
    assert run(program("pingpong").main_process(), "det", 500).status is RunStatus.FINAL
    assert run(program("pingpong").main_process(), "det", 3).status is RunStatus.EXHAUSTED
    assert run(program("eq6").main_process(), "det", 100).status is RunStatus.STUCK


def test_random_scheduler_needs_seed_and_is_reproducible():
    with pytest.raises(ValueError):
        make_scheduler("random")
    p = program("fanout").main_process()
    a = run(p, "random", 200, seed=3)
    b = run(p, "random", 200, seed=3)
    assert [e.to_json() for e in a.events] == [e.to_json() for e in b.events]


def test_deterministic_priority():
    st = state("new x, y in (x <= return 1 | y <= (\\n:Nat. return n) x)")
    tr = run(st, "det", 1)
    assert tr.events[0].rule is Rule.THREAD


def test_snapshots():
    tr = run(program("pingpong").main_process(), "det", 100, snapshot_every=5)
    assert [n for n, _ in tr.snapshots] == list(range(5, len(tr.events) + 1, 5))
