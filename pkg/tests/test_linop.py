"""Matrix operators with an inverse derivative: apply, compose, adjoint, nonlocal terms."""

import pytest

from heavenly.diffexpr import KernelError, total_derivative
from heavenly.linop import (
    IrreducibleNonlocalComposition,
    LinOp,
    MatrixOp,
    NLExpr,
    adjoint_op,
    apply_op,
    commutator_on_generic,
    compose_ops,
    equal_mod_function,
    probe,
    scalar_ops_equal,
    extract_exact,
    nl_equal,
    normalize_nonlocal,
    ops_equal,
    skew_adjoint_check,
    verify_primitive,
)


def ident(sp):
    return MatrixOp.identity(sp)


# -- application -----------------------------------------------------------------------


def test_R_on_X1(mixed, mixed_cat):
    sp = mixed.space
    R = mixed_cat.operators["R"]
    out = apply_op(R, [sp.coord("t"), sp.one()], "symmetry", mixed)
    assert equal_mod_function(out[0], sp.j("u_x"), ["y", "z"])
    assert nl_equal(out[1], sp.j("v_x"))


def test_R_on_X2(mixed, mixed_cat):
    sp = mixed.space
    R = mixed_cat.operators["R"]
    e = sp.eps_expr()
    out = apply_op(R, [sp.j("u_x"), sp.j("v_x")], "symmetry", mixed)
    assert equal_mod_function(out[0], -e * sp.coord("t"), ["y", "z"])
    assert nl_equal(out[1], -e * sp.one())


def test_zero_maps_to_zero(mixed, mixed_cat):
    sp = mixed.space
    out = apply_op(mixed_cat.operators["K"], [sp.zero(), sp.zero()])
    assert all(o.is_zero() for o in out)


def test_symmetry_mode_needs_system(mixed, mixed_cat):
    sp = mixed.space
    with pytest.raises(KernelError):
        apply_op(mixed_cat.operators["R"], [sp.coord("t"), sp.one()], "symmetry")


# -- composition --------------------------------------------------------------------------


def test_K_J0_identity(mixed_cat):
    sp = mixed_cat.space
    K, J0 = mixed_cat.operators["K"], mixed_cat.operators["J0"]
    assert ops_equal(compose_ops(K, J0), ident(sp))
    assert ops_equal(compose_ops(J0, K), ident(sp))


@pytest.mark.parametrize("name", ["mixed", "husain"])
def test_R_J0_is_J1(name, mixed_cat, husain_cat):
    cat = mixed_cat if name == "mixed" else husain_cat
    ops = cat.operators
    assert ops_equal(compose_ops(ops["R"], ops["J0"]), ops["J1"])


def test_dinv_cancels_against_D(mixed):
    sp = mixed.space
    Dx = LinOp.D(sp, {"x": 1})
    inv = LinOp.Dinv(sp)
    one = LinOp.mult(1, sp)
    assert scalar_ops_equal(inv @ Dx, one) and scalar_ops_equal(Dx @ inv, one)


def test_irreducible_composition(mixed):
    sp = mixed.space
    inv = LinOp.Dinv(sp)
    f = LinOp.mult(sp.j("u_x") ** 2)  # not exact, so nothing collapses
    with pytest.raises(IrreducibleNonlocalComposition):
        inv @ f @ inv @ f @ inv


# -- adjoint ---------------------------------------------------------------------------------


def test_adjoint_of_Dx(mixed):
    sp = mixed.space
    Dx = LinOp.D(sp, {"x": 1})
    z = LinOp.zero(sp)
    M = MatrixOp([[Dx, z], [z, z]], sp)
    assert ops_equal(adjoint_op(M), -M)


def test_adjoint_of_R_is_Rdag(mixed_cat):
    ops = mixed_cat.operators
    assert ops_equal(adjoint_op(ops["R"]), ops["Rdag"])


def test_husain_J0_skew(husain_cat):
    J0 = husain_cat.operators["J0"]
    assert ops_equal(adjoint_op(J0), -J0)


def test_skew_checks(mixed_cat):
    ops = mixed_cat.operators
    assert skew_adjoint_check(ops["K"])
    assert skew_adjoint_check(ops["J2"])
    assert not skew_adjoint_check(ident(ops["K"].space))


# -- commutator on a generic probe --------------------------------------------------------


def test_lax_commutator_on_shell(mixed, mixed_cat):
    from heavenly.diffexpr import substitute_on_shell

    ops = mixed_cat.operators
    out = commutator_on_generic(ops["R"], ops["A"])
    on = [normalize_nonlocal(o.map(lambda e: substitute_on_shell(e, mixed))) for o in out]
    assert all(o.is_zero() for o in on)


def test_lax_commutator_off_shell(mixed_cat):
    ops = mixed_cat.operators
    out = commutator_on_generic(ops["R"], ops["A"])
    direct = apply_op(ops["commut"], probe(mixed_cat.space))
    assert all(nl_equal(a, b) for a, b in zip(out, direct))


def test_self_commutator_vanishes(mixed_cat):
    A = mixed_cat.operators["A"]
    assert all(o.is_zero() for o in commutator_on_generic(A, A))


# -- nonlocal normalization ------------------------------------------------------------------


def test_dinv_of_exact_symmetry_mode(mixed):
    sp = mixed.space
    r = normalize_nonlocal(NLExpr.dinv(sp.j("u_xx")))
    assert r.is_local() and r.local == sp.j("u_x")


def test_dinv_of_zero(mixed):
    assert normalize_nonlocal(NLExpr.dinv(mixed.space.zero())).is_zero()


def test_dinv_of_product_rule(mixed):
    sp = mixed.space
    r = normalize_nonlocal(NLExpr.dinv(sp.j("u_xx") * sp.j("v") + sp.j("u_x") * sp.j("v_x")))
    assert r.is_local() and r.local == sp.j("u_x") * sp.j("v")


def test_nonexact_part_stays(mixed):
    sp = mixed.space
    r = normalize_nonlocal(NLExpr.dinv(sp.j("u_x") ** 2))
    assert not r.is_local()
    F, rem = extract_exact(sp.j("u_x") ** 2)
    assert F.is_zero() and rem == sp.j("u_x") ** 2


# -- primitives -------------------------------------------------------------------------------


def test_primitive_trivial(mixed):
    sp = mixed.space
    assert verify_primitive(sp.j("u_x"), sp.j("u"))
    assert not verify_primitive(sp.j("u_x"), sp.j("v"))


def test_primitive_of_second_order_family(mixed_cat):
    sp = mixed_cat.space
    e = sp.eps_expr()
    fn = sp.fn
    cs = mixed_cat.recursion["Xa"].constraints
    integrand = fn("a2", t=1) * sp.j("u_xx") - fn("a2", x=1) * sp.j("v_x") + e * fn("a2", v=1)
    # the potential b of a differentiates back to the integrand
    assert verify_primitive(integrand, fn("ap"), cs)
    assert not verify_primitive(integrand, -fn("ap"), cs)


def test_primitive_husain(husain_cat):
    sp = husain_cat.space
    e = sp.eps_expr()
    fn = sp.fn
    cs = husain_cat.recursion["Xf"].constraints
    integrand = fn("f2", t=1) - e * sp.j("v_pp") * fn("f2", q=1) + sp.j("q_p") * fn("f2", vp=1)
    assert verify_primitive(integrand, fn("fp"), cs)
    assert not verify_primitive(integrand, -fn("fp"), cs)
