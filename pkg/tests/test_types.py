import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import generators as gen
from sid.parser import parse_type
from sid.types import (
    END,
    INF,
    NAT,
    UNIT,
    RegType,
    Tag,
    TypeAlgebraError,
    arrow,
    bullet,
    bullet_match,
    ct,
    delay,
    dual,
    inp,
    io,
    is_linear,
    is_session,
    is_unlimited,
    is_valid,
    out,
    pretty_type,
    prod,
    rank,
    type_equal,
    validate,
)

S = parse_type("rec S. Nat * @S")
S_BAD = parse_type("rec S. Nat * S")
OUT = parse_type("rec S. !Nat.@S")
OUT_BAD = parse_type("rec S. !Nat.S")
IN = parse_type("rec S. ?Nat.@S")
S2 = parse_type("rec S. Nat * @@S")


# ------------------------------------------------------------ validity


def test_validity_verdicts():
    assert is_valid(S)
    assert is_valid(OUT)
    assert is_valid(INF)
    bad = validate(S_BAD)
    assert not bad.valid and [v.condition for v in bad.violations] == [4]
    assert [v.condition for v in validate(OUT_BAD).violations] == [4]
    assert [v.condition for v in validate(parse_type("rec S. ?Nat.S")).violations] == [4]


def test_unlimited_arrow_from_linear_argument_is_invalid():
    report = validate(arrow(inp(NAT, END), NAT))
    assert [v.condition for v in report.violations] == [1]


def test_linear_arrow_needs_linear_result():
    assert [v.condition for v in validate(parse_type("Nat -o Nat")).violations] == [2]
    assert is_valid(parse_type("Nat -o IO Nat"))


# ------------------------------------------------------------ linearity


def test_linearity():
    assert is_linear(inp(NAT, END))
    assert not is_linear(INF)
    assert not is_linear(prod(NAT, NAT))
    assert is_linear(prod(NAT, OUT))
    assert is_linear(io(UNIT))
    assert is_unlimited(END)
    assert is_unlimited(arrow(NAT, io(NAT)))


# ---------------------------------------------------------------- dual


def test_dual_examples():
    assert dual(END) == END
    assert dual(OUT) == IN
    with pytest.raises(TypeAlgebraError):
        dual(NAT)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_dual_properties(rng):
    table = gen.session_table(rng)
    t = gen.build(table)
    assert t is not None and is_session(t)
    assert dual(dual(t)) == t
    assert dual(t) == gen.build(gen.oracle_dual(table))
    assert is_linear(dual(t)) == is_linear(t)
    if is_valid(t) and t != INF:
        for m in range(4):
            assert ct(m, t) == ct(m, dual(t))


# ---------------------------------------------------------- equality


def test_equality_examples():
    unfolded = prod(NAT, bullet(S))
    assert type_equal(S, unfolded) and S == unfolded
    assert type_equal(S, parse_type("rec X. Nat * @X"))
    assert not type_equal(S, S2)


def test_equality_ignores_table_layout():
    a = RegType.from_table([(Tag.PROD, (1, 2)), (Tag.NAT, ()), (Tag.BULLET, (0,))])
    b = RegType.from_table([(Tag.BULLET, (2,)), (Tag.NAT, ()), (Tag.PROD, (1, 0))], root=2)
    assert a == b == S


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_equality_matches_unfolding_oracle(rng):
    ta = gen.any_table(rng)
    tb = gen.duplicate_node(rng, ta) if rng.random() < 0.5 else gen.any_table(rng)
    a, b = gen.build(ta), gen.build(tb)
    if a is None or b is None:
        return
    expected = gen.oracle_equal(ta, tb)
    assert type_equal(a, b) == expected
    assert (a == b) == expected


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_validity_invariant_under_equality(rng):
    table = gen.any_table(rng)
    t = gen.build(table)
    if t is None:
        return
    same = gen.build(gen.duplicate_node(rng, table))
    assert validate(t).valid == validate(same).valid
    assert is_linear(t) == is_linear(same)


# --------------------------------------------------------- rank, delay


def test_rank_examples():
    assert rank(bullet(arrow(NAT, NAT))) == 0
    assert rank(io(UNIT)) == 1
    assert rank(S) == 1


def test_delay_examples():
    assert delay(bullet(END, 2)) == 2
    assert delay(io(bullet(NAT))) == 0
    with pytest.raises(TypeAlgebraError):
        delay(INF)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_rank_and_delay_match_oracle(rng):
    table = gen.any_table(rng)
    t = gen.build(table)
    if t is None or not is_valid(t):
        return
    assert rank(t) == gen.oracle_rank(table)
    expected = gen.oracle_delay(table)
    if expected is None:
        with pytest.raises(TypeAlgebraError):
            delay(t)
    else:
        assert delay(t) == expected


# ------------------------------------------------------------------ ct


def test_ct_examples():
    assert ct(0, END) == ct(5, END) == 0
    assert ct(0, bullet(OUT)) == 0
    assert ct(2, out(NAT, bullet(out(NAT, bullet(END))))) == 2
    assert ct(0, OUT) == 1
    assert ct(3, OUT) == 4
    with pytest.raises(TypeAlgebraError):
        ct(0, INF)


# -------------------------------------------------------------- bullets


def test_bullet_match():
    assert bullet_match(END, 2) == bullet(bullet(END))
    assert bullet_match(bullet(NAT), 1, strip=True) == NAT
    with pytest.raises(TypeAlgebraError):
        bullet_match(NAT, 1, strip=True)


@given(st.integers(0, 5), st.sampled_from([NAT, END, S, OUT, arrow(NAT, io(NAT))]))
def test_add_then_strip_is_identity(n, t):
    assert bullet_match(bullet_match(t, n), n, strip=True) == t


# ------------------------------------------------------------- printing


@pytest.mark.parametrize("t", [S, OUT, IN, S2, INF, arrow(NAT, io(S)), parse_type("<?Nat.end>")])
def test_pretty_round_trip(t):
    assert parse_type(pretty_type(t)) == t


def test_random_session_graphs_are_small():
    rng = random.Random(0)
    assert all(len(gen.session_table(rng)) <= 8 for _ in range(100))
