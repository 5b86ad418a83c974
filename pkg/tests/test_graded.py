"""Odd generators, vertical forms, and the functional multivector tests."""

import pytest
from hypothesis import given, strategies as st

from heavenly.graded import (
    GradedExpr,
    JacobiPrecondition,
    bivector,
    closedness_check,
    compatibility_check,
    functional_rep,
    gen,
    graded_normalize,
    ibp_normal,
    is_divergence,
    jacobi_check,
    two_form,
    vertical_d,
)
from heavenly.linop import LinOp, MatrixOp, adjoint_op
from strategies import SP, SPATIAL_JETS, matrix_ops, polys

Z = (0, 0, 0, 0)
X1 = (0, 1, 0, 0)


def g(fam, idx=Z):
    return gen(fam, idx)


def form(sp, gens, coef=1):
    return GradedExpr.of(sp, gens, coef)


# -- normal form --------------------------------------------------------------------------


def test_nilpotent():
    assert form(SP, [g("du"), g("du")]).is_zero()


def test_anticommute():
    a = form(SP, [g("du", X1), g("du")])
    b = form(SP, [g("du"), g("du", X1)])
    assert graded_normalize(a + b).is_zero()


def test_functional_integration_by_parts():
    th = form(SP, [g("zu")])
    a = th.D("x").wedge(th)           # D_x(theta) ^ theta
    b = -th.wedge(th.D("x"))          # -theta ^ D_x(theta), the same element
    c = th.wedge(th.D("x"))
    assert graded_normalize(a, functional=True).terms == graded_normalize(b, functional=True).terms
    # theta ^ theta_x alone is not a divergence
    assert not is_divergence(c)


def test_wedge_of_derivative_is_divergence():
    th = form(SP, [g("zu")])
    assert is_divergence(th.wedge(th.D("y")).D("x"))


# -- closedness ---------------------------------------------------------------------------


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_catalog_form_closed(which, request):
    cat = request.getfixturevalue(which + "_cat")
    omega = cat.lagrangian.form
    assert closedness_check(omega)
    # the form built from K agrees with the catalog form modulo divergences
    assert is_divergence(two_form(cat.operators["K"]) - omega)


def test_darboux_form_closed():
    assert closedness_check(form(SP, [g("du"), g("dv")]))


def test_nonclosed_form():
    assert not closedness_check(form(SP, [g("du"), g("dv")], SP.j("v_x")))


def test_closedness_needs_two_form():
    from heavenly.diffexpr import KernelError

    with pytest.raises(KernelError):
        closedness_check(form(SP, [g("du")]))


# -- Jacobi identity and pencils -----------------------------------------------------------


def test_jacobi_J0_mixed(mixed_cat):
    assert jacobi_check(mixed_cat.operators["J0"])


def test_jacobi_J1_husain(husain_cat):
    assert jacobi_check(husain_cat.operators["J1"])


def test_jacobi_constant_Dx():
    z = LinOp.zero(SP)
    M = MatrixOp([[LinOp.D(SP, "x"), z], [z, z]], SP)
    assert jacobi_check(M)


def test_jacobi_rejects_non_skew():
    with pytest.raises(JacobiPrecondition):
        jacobi_check(MatrixOp.identity(SP))


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_pencil(which, request):
    ops = request.getfixturevalue(which + "_cat").operators
    assert compatibility_check(ops["J0"], ops["J1"])


def test_pencil_with_itself(mixed_cat):
    J0 = mixed_cat.operators["J0"]
    assert compatibility_check(J0, J0)


def test_non_hamiltonian_skew_operator_fails():
    # u D_x + D_x u + D_x^3 is Hamiltonian; with u_xx^2 in place of u it is only skew
    m = LinOp.mult(SP.j("u"))
    D = LinOp.D(SP, "x")
    z = LinOp.zero(SP)
    M = MatrixOp([[m @ D + D @ m + D @ D @ D, z], [z, z]], SP)
    m2 = LinOp.mult(SP.j("u_xx") ** 2)
    M2 = MatrixOp([[m2 @ D + D @ m2, z], [z, z]], SP)
    assert jacobi_check(M)
    assert not jacobi_check(M2)


# -- properties ------------------------------------------------------------------------------


def _random_form(coefs, fams):
    out = GradedExpr(SP)
    for c, gens in zip(coefs, fams):
        out = out + form(SP, gens, c)
    return out


GENS = st.sampled_from([g("du"), g("dv"), g("du", X1), g("dv", X1), g("du", (0, 0, 1, 0)), g("dv", (0, 2, 0, 0))])


@given(st.lists(polys(SPATIAL_JETS, max_terms=2, max_deg=2, with_fn=False), min_size=1, max_size=3),
       st.lists(st.lists(GENS, min_size=1, max_size=3), min_size=3, max_size=3),
       st.sampled_from(["x", "y", "z"]))
def test_divergence_tests_agree(coefs, gens, c):
    w = _random_form(coefs, gens)
    assert is_divergence(w.D(c))
    rep = functional_rep(w.D(c)) if w.terms and len(w.degrees()) == 1 else None
    if rep is not None:
        assert rep.equals_zero()
    # a form and its integration-by-parts normal form differ by a divergence
    assert is_divergence(w - ibp_normal(w))


@given(matrix_ops())
def test_bivector_skew_part(J):
    assert is_divergence(bivector(J) + bivector(adjoint_op(J)))
