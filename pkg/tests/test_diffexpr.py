"""Expression kernel: canonical form, derivatives, on-shell rewriting, constraints."""

from fractions import Fraction

import pytest

from heavenly.catalog import build_system, load_catalog
from heavenly.diffexpr import (
    ConstraintSystem,
    FormalZeroDivision,
    JetSpace,
    KernelError,
    arith_normalize,
    eval_at_point,
    partial,
    reduce_constraints,
    substitute_on_shell,
    total_derivative,
)
from heavenly.oracle import equals_expr


@pytest.fixture(scope="module")
def sp():
    s = JetSpace(["t", "x", "y", "z"], ["u", "v"], "x", name="mixed")
    s.declare("b", [s.coord("t"), s.coord("x"), s.j("v"), s.j("u_x")])
    return s


# -- canonical form -----------------------------------------------------------


def test_sum_of_equal_terms(sp):
    ux = sp.j("u_x")
    assert arith_normalize(ux + ux) == 2 * ux


def test_eps_squared_is_one(sp):
    e = sp.eps_expr()
    assert arith_normalize(e * e * sp.j("u_xx")) == sp.j("u_xx")


def test_cancellation_to_zero(sp):
    vx, uxx = sp.j("v_x"), sp.j("u_xx")
    assert arith_normalize((vx ** 2 - vx ** 2) / uxx).is_zero()


def test_division_by_formal_zero(sp):
    with pytest.raises(FormalZeroDivision):
        sp.j("u_x") / (sp.j("v") - sp.j("v"))


def test_normalize_is_idempotent(sp):
    e = (sp.j("u_x") + sp.j("v")) ** 2 / (sp.j("u_xx") + 1)
    assert arith_normalize(arith_normalize(e)) == arith_normalize(e)


# -- total derivatives -----------------------------------------------------------


def test_leibniz_example(sp):
    v, ux = sp.j("v"), sp.j("u_x")
    assert total_derivative(v ** 2 * ux, "x") == 2 * v * sp.j("v_x") * ux + v ** 2 * sp.j("u_xx")


def test_chain_rule_through_opaque_slots(sp):
    got = total_derivative(sp.fn("b"), "x")
    want = sp.fn("b", x=1) + sp.fn("b", ux=1) * sp.j("u_xx") + sp.fn("b", v=1) * sp.j("v_x")
    assert got == want


def test_time_prolongation(sp):
    assert total_derivative(sp.j("u_x"), "t") == sp.j("u_tx")


def test_unknown_coordinate(sp):
    with pytest.raises(KernelError):
        total_derivative(sp.j("u"), "w")


def test_partial_of_opaque(sp):
    assert partial(sp.fn("b") * sp.j("u_x"), sp.j("u_x")) == sp.fn("b", ux=1) * sp.j("u_x") + sp.fn("b")


# -- on-shell rewriting ------------------------------------------------------------


@pytest.fixture(scope="module")
def mixed_sys():
    return build_system("mixed")


@pytest.fixture(scope="module")
def husain_sys():
    return build_system("husain")


def test_on_shell_prolongation(mixed_sys):
    sp = mixed_sys.space
    assert substitute_on_shell(sp.j("u_ty"), mixed_sys) == sp.j("v_y")


def test_on_shell_vt_is_Q(mixed_sys):
    sp = mixed_sys.space
    J = sp.j
    Q = (J("v_x") ** 2 + J("v_z") * J("u_xy") - J("v_y") * J("u_xz") + sp.eps_expr()) / J("u_xx")
    assert substitute_on_shell(J("v_t"), mixed_sys) == Q


def test_on_shell_husain_qt(husain_sys):
    sp = husain_sys.space
    J = sp.j
    want = J("q_z") * J("v_py") - J("q_y") * J("v_pz") - sp.eps_expr() * J("v_pp")
    assert substitute_on_shell(J("q_t"), husain_sys) == want


def test_on_shell_leaves_no_time_jets(mixed_sys):
    sp = mixed_sys.space
    e = sp.j("v_ttx") * sp.j("u_tt") + sp.j("u_tyz")
    r = substitute_on_shell(e, mixed_sys)
    assert not mixed_sys.has_time_jets(r)
    assert substitute_on_shell(r, mixed_sys) == r


def test_one_and_two_component_forms_agree(mixed_sys):
    sp = mixed_sys.space
    J = sp.j
    e = sp.eps_expr()
    scalar = J("u_ty") * J("u_xz") - J("u_tz") * J("u_xy") + J("u_tt") * J("u_xx") - J("u_tx") ** 2 - e
    # on solutions u_t = v, v_t = Q the scalar equation holds identically
    assert equals_expr(substitute_on_shell(scalar, mixed_sys), sp.zero())


# -- constraint reduction --------------------------------------------------------------


@pytest.fixture(scope="module")
def mixed_cat(mixed_sys):
    return load_catalog(mixed_sys)


@pytest.fixture(scope="module")
def husain_cat(husain_sys):
    return load_catalog(husain_sys)


def test_second_order_rule_tt(mixed_cat):
    sp = mixed_cat.space
    cs = mixed_cat.symmetries["Xa"].constraints
    got = reduce_constraints(sp.fn("a2", t=2), cs)
    assert got == -sp.eps_expr() * sp.fn("a2", ux=2)


def test_harmonic_rule(mixed_cat):
    sp = mixed_cat.space
    cs = mixed_cat.symmetries["Xc"].constraints
    assert reduce_constraints(sp.fn("c", x=2), cs) == -sp.eps_expr() * sp.fn("c", v=2)


def test_husain_second_order_rule(husain_cat):
    sp = husain_cat.space
    cs = husain_cat.symmetries["Xf"].constraints
    assert reduce_constraints(sp.fn("f2", q=2), cs) == -sp.eps_expr() * sp.fn("f2", vp=2)


def test_reduce_is_idempotent_on_catalog(mixed_cat):
    sp = mixed_cat.space
    cs = mixed_cat.constraints
    e = sp.fn("a2", t=2, x=1) * sp.j("u_xx") + sp.fn("c", x=3, v=1)
    once = reduce_constraints(e, cs)
    assert reduce_constraints(once, cs) == once


# -- equality and evaluation -----------------------------------------------------------


def test_distinct_atoms_differ(sp):
    assert not equals_expr(sp.j("u_x"), sp.j("u_y"))


def test_binomial_square(sp):
    vx, uxx = sp.j("v_x"), sp.j("u_xx")
    assert equals_expr((vx + uxx) ** 2, vx ** 2 + 2 * vx * uxx + uxx ** 2)


def test_eval_square(sp):
    ux = sp.j("u_x")
    assert eval_at_point(ux ** 2, {ux: Fraction(3, 2)}) == Fraction(9, 4)


def test_eval_eps(sp):
    assert eval_at_point(sp.eps_expr(), {"eps": -1}) == -1


def test_eval_Q_matches_formula(mixed_sys):
    sp = mixed_sys.space
    J = sp.j
    pt = {J("v_x"): Fraction(2, 3), J("v_z"): Fraction(-5, 7), J("u_xy"): Fraction(11, 4),
          J("v_y"): Fraction(1, 9), J("u_xz"): Fraction(-3, 2), J("u_xx"): Fraction(13, 5), "eps": 1}
    Q = mixed_sys.rhs["v"]
    direct = (Fraction(2, 3) ** 2 + Fraction(-5, 7) * Fraction(11, 4)
              - Fraction(1, 9) * Fraction(-3, 2) + 1) / Fraction(13, 5)
    assert eval_at_point(Q, pt) == direct


def test_eval_zero_denominator(sp):
    with pytest.raises(FormalZeroDivision):
        eval_at_point(1 / sp.j("u_xx"), {sp.j("u_xx"): 0})
