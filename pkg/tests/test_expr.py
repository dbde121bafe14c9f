"""Expression grammar: parse/print round trips, derivatives, compilation."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowbox import BindingError, DomainError, ParseError
from flowbox.expr import (
    compile_bank,
    diff,
    diff2,
    evaluate,
    fold,
    parse,
    to_source,
)

NAMES = ("x1", "x2", "u1", "a1")


def _leaves():
    consts = st.floats(min_value=-4.0, max_value=4.0,
                       allow_nan=False, allow_infinity=False).map(
        lambda v: repr(round(v, 3)))
    return st.one_of(consts, st.sampled_from(NAMES))


def _sources():
    # Random well-formed sources; log/sqrt excluded so every sample
    # evaluates on the whole box used below.
    def extend(children):
        unary = children.map(lambda s: f"(-{s})")
        funcs = st.tuples(st.sampled_from(["sin", "cos", "tanh"]),
                          children).map(lambda t: f"{t[0]}({t[1]})")
        binop = st.tuples(children, st.sampled_from(" + - * ".split()),
                          children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")
        return st.one_of(unary, funcs, binop)

    return st.recursive(_leaves(), extend, max_leaves=12)


@given(_sources())
def test_round_trip_is_structural(source):
    tree = parse(source, NAMES)
    again = parse(to_source(tree), NAMES)
    assert again == tree


@given(_sources(),
       st.lists(st.floats(min_value=-2.0, max_value=2.0,
                          allow_nan=False, allow_infinity=False),
                min_size=len(NAMES), max_size=len(NAMES)))
def test_compiled_matches_tree_bitwise(source, values):
    tree = parse(source, NAMES)
    env = dict(zip(NAMES, values))
    bank = compile_bank([tree], NAMES)
    out = np.empty((1, 1))
    status = np.zeros(1, dtype=np.int64)
    from flowbox import kernels
    kernels.eval_programs(bank.code, bank.starts, bank.consts,
                          np.array([values]), out, status)
    try:
        expected = evaluate(tree, env)
    except DomainError:
        assert status[0] != 0
        return
    assert status[0] == 0
    assert out[0, 0] == expected  # bit-for-bit, same operation order


@given(_sources(), st.sampled_from(NAMES))
def test_symbolic_derivative_matches_finite_difference(source, name):
    tree = parse(source, NAMES)
    dtree = diff(tree, name)
    env = {n: 0.37 + 0.11 * i for i, n in enumerate(NAMES)}
    h = 1e-6
    up = dict(env, **{name: env[name] + h})
    dn = dict(env, **{name: env[name] - h})
    fd = (evaluate(tree, up) - evaluate(tree, dn)) / (2 * h)
    sym = evaluate(dtree, env)
    assert abs(sym - fd) <= 1e-6 * (1.0 + abs(sym))


@given(_sources())
def test_mixed_partials_commute(source):
    tree = parse(source, NAMES)
    ab = diff2(tree, "x1", "u1")
    ba = diff2(tree, "u1", "x1")
    env = {n: 0.29 + 0.07 * i for i, n in enumerate(NAMES)}
    assert math.isclose(evaluate(ab, env), evaluate(ba, env),
                        rel_tol=1e-12, abs_tol=1e-12)


def test_precedence_of_unary_minus_and_power():
    # -x1^2 is -(x1^2), and a^b^c associates to the right.
    tree = parse("-x1^2", NAMES)
    assert evaluate(tree, {"x1": 3.0}) == -9.0
    tower = parse("2^3^2", NAMES)
    assert evaluate(tower, {}) == 512.0


def test_subtraction_is_left_associative():
    assert evaluate(parse("8 - 3 - 2", NAMES), {}) == 3.0
    assert evaluate(parse("8 / 2 / 2", NAMES), {}) == 2.0


def test_implicit_product_is_rejected():
    with pytest.raises(ParseError):
        parse("2 x1", NAMES)


def test_unknown_name_is_a_parse_error():
    with pytest.raises(ParseError) as err:
        parse("x1 + bogus", NAMES)
    assert "bogus" in str(err.value)


def test_trailing_garbage_reports_offset():
    with pytest.raises(ParseError) as err:
        parse("x1 + 1)", NAMES)
    assert err.value.offset == 6


def test_unbound_variable_at_evaluation():
    tree = parse("x1 + u1", NAMES)
    with pytest.raises(BindingError):
        evaluate(tree, {"x1": 1.0})


@pytest.mark.parametrize("source,env", [
    ("1 / x1", {"x1": 0.0}),
    ("log(x1)", {"x1": 0.0}),
    ("log(x1)", {"x1": -1.0}),
    ("sqrt(x1)", {"x1": -4.0}),
    ("x1 ^ 0.5", {"x1": -1.0}),
    ("exp(x1)", {"x1": 1e6}),
])
def test_domain_errors_never_return_non_finite(source, env):
    tree = parse(source, NAMES)
    with pytest.raises(DomainError):
        evaluate(tree, env)


def test_fold_collapses_constant_subtrees():
    tree = fold(parse("x1 * (2 + 3) + 0", NAMES))
    assert to_source(tree) == "x1*5"


def test_fold_keeps_raising_subtrees_symbolic():
    tree = fold(parse("log(0 - 1)", NAMES))
    with pytest.raises(DomainError):
        evaluate(tree, {})


def test_derivative_of_power_with_variable_exponent():
    # d/dx x^u = x^u * (u/x) at x>0; spot value x=2, u=3 -> 12.
    tree = diff(parse("x1 ^ u1", NAMES), "x1")
    assert math.isclose(evaluate(tree, {"x1": 2.0, "u1": 3.0}), 12.0,
                        rel_tol=1e-12)
