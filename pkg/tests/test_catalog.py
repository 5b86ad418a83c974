"""Catalog contents, free-function instances, golden data and constraint confluence."""

import itertools
import json

import pytest

from heavenly.catalog import (
    build_system,
    catalog_json,
    dump_catalog,
    golden_path,
    instantiate_free_functions,
    load_catalog,
)
from heavenly.diffexpr import DiffExpr, KernelError
from heavenly.linop import apply_op, nl_equal
from heavenly.serial import from_json, to_json
from heavenly.varcalc import symmetry_residual, variational_gradient


# -- systems -------------------------------------------------------------------------------


def test_mixed_symbolic_rhs(mixed):
    sp = mixed.space
    J = sp.j
    Q = (sp.eps_expr() + J("v_x") ** 2 + J("u_xy") * J("v_z") - J("u_xz") * J("v_y")) / J("u_xx")
    assert mixed.flow() == [J("v"), Q]


def test_husain_plus_rhs():
    s = build_system("husain", 1)
    J = s.space.j
    assert s.flow()[1] == J("q_z") * J("v_py") - J("q_y") * J("v_pz") - J("v_pp")


def test_mixed_minus_eps_term():
    s = build_system("mixed", -1)
    J = s.space.j
    Q = s.flow()[1]
    assert Q - (J("v_x") ** 2 + J("u_xy") * J("v_z") - J("u_xz") * J("v_y")) / J("u_xx") == -1 / J("u_xx")


def test_unknown_system():
    with pytest.raises(KernelError):
        build_system("kdv")


def test_bad_eps():
    with pytest.raises(KernelError):
        build_system("mixed", 2)


# -- inventory -------------------------------------------------------------------------------


def _points(cat):
    return [k for k, s in cat.symmetries.items() if s.kind == "point"]


def _second(cat):
    return [k for k, s in cat.symmetries.items() if s.kind == "second-order"]


def test_mixed_inventory(mixed_cat):
    c = mixed_cat
    assert len(_points(c)) == 7 and _second(c) == ["Xa"]
    assert set(c.operators) >= {"A", "R", "K", "J0", "J1", "J2", "Rdag"}
    assert set(c.hamiltonians) == {"H1", "H0", "Hm1", "H^1", "H^2", "H^3", "H^4", "H^6", "H^c", "H^a"}
    assert len(c.recursion) == 10
    assert len(c.transforms) == 9
    assert len(c.table.rows) == 8 and len(c.table.cells) == 64
    assert {"J1H1", "R+", "J0H0", "RH1", "RH2", "RH3", "high", "J0Ha", "RHa", "R2Ha"} <= set(c.hierarchy)


def test_husain_inventory(husain_cat):
    c = husain_cat
    assert len(_points(c)) == 7 and _second(c) == ["Xf"]
    assert set(c.operators) >= {"A", "R", "K", "J0", "J1"}
    assert "J2" not in c.operators
    assert {"H1", "H0", "H^5", "H^6", "H^c", "H^f"} <= set(c.hamiltonians)
    assert len(c.recursion) == 9
    assert len(c.transforms) == 7
    assert len(c.table.cells) == 64


def test_non_variational_flags(mixed_cat, husain_cat):
    assert [k for k, s in mixed_cat.symmetries.items() if not s.variational] == ["X5"]
    assert [k for k, s in husain_cat.symmetries.items() if not s.variational] == ["X4"]


def test_ids_cover_every_entry(mixed_cat):
    kinds = {k for k, _, _ in mixed_cat.ids()}
    assert kinds == {"operator", "lagrangian", "symmetry", "hamiltonian", "recursion", "transform", "table",
                     "hierarchy"}


# -- free functions ------------------------------------------------------------------------------


def test_instantiate_c(mixed_cat, mixed):
    sp = mixed.space
    x, v = sp.coord("x"), sp.j("v")
    inst = instantiate_free_functions(mixed_cat.symmetries["Xc"], {"c": x * v})
    Q = mixed.flow()[1]
    assert inst.characteristic == [x * v, x * Q]
    assert all(r.is_zero() for r in symmetry_residual(mixed, inst.characteristic))


def test_second_order_family_contains_the_flow(mixed_cat, mixed):
    sp = mixed.space
    inst = instantiate_free_functions(mixed_cat.symmetries["Xa"], {"a2": sp.j("v")})
    assert inst.characteristic == mixed.flow()


def test_husain_second_order_family_contains_the_flow(husain_cat, husain):
    sp = husain.space
    inst = instantiate_free_functions(husain_cat.symmetries["Xf"], {"f2": sp.j("q")})
    assert inst.characteristic == husain.flow()


def test_binding_must_satisfy_rules(mixed_cat, mixed):
    sp = mixed.space
    with pytest.raises(KernelError):
        instantiate_free_functions(mixed_cat.symmetries["Xc"], {"c": sp.coord("x") ** 2})


def test_binding_must_cover_params(mixed_cat):
    with pytest.raises(KernelError):
        instantiate_free_functions(mixed_cat.symmetries["Xc"], {})


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_every_family_has_two_instances(which, request):
    cat = request.getfixturevalue(which + "_cat")
    sys = request.getfixturevalue(which)
    for s in cat.symmetries.values():
        if not s.params:
            continue
        assert len(s.instances) >= 2, s.id
        for b in s.instances:
            inst = instantiate_free_functions(s, b)
            assert all(r.is_zero() for r in symmetry_residual(sys, inst.characteristic)), (s.id, b)


# -- Hamiltonian entries -------------------------------------------------------------------------


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_generating_identity(which, request):
    cat = request.getfixturevalue(which + "_cat")
    for h in cat.hamiltonians.values():
        J = cat.operators[h.operator]
        out = apply_op(J, variational_gradient(h.value()))
        assert all(nl_equal(a, b, cs=h.constraints) for a, b in zip(out, h.flow())), h.id


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_equivalent_densities_differ_by_divergence(which, request):
    from heavenly.varcalc import is_spatial_divergence

    cat = request.getfixturevalue(which + "_cat")
    for h in cat.hamiltonians.values():
        for alt in h.alternatives():
            assert is_spatial_divergence(h.value() - alt, h.constraints), h.id


# -- golden data ------------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["mixed", "husain"])
@pytest.mark.parametrize("eps", [None, 1, -1])
def test_golden_json(name, eps):
    cat = load_catalog(build_system(name, eps))
    with open(golden_path(name, eps), encoding="utf-8") as fh:
        stored = fh.read()
    assert stored.rstrip("\n") == dump_catalog(cat)


def _expr_nodes(d):
    yield d["flow"]
    yield from d["operators"].values()
    yield d["lagrangian"]["density"]
    yield from d["lagrangian"]["momenta"]
    for s in d["symmetries"].values():
        yield s["characteristic"]
    for h in d["hamiltonians"].values():
        yield h["density"]
    for r in d["recursion"].values():
        yield r["source"]
        yield r["expected"]


@pytest.mark.parametrize("name", ["mixed", "husain"])
def test_catalog_json_round_trip(name):
    cat = load_catalog(build_system(name))
    d = json.loads(dump_catalog(cat))
    assert json.dumps(d, sort_keys=True, indent=1) == dump_catalog(cat)
    for node in _expr_nodes(d):
        assert to_json(from_json(node, cat.space)) == node
    assert catalog_json(cat)["schema"] == d["schema"]


# -- confluence of the rewrite rules ------------------------------------------------------------


def _confluence(cat, max_order=4):
    sp, cs = cat.space, cat.constraints
    checked, bad = 0, []
    for fn in sorted(cs.functions()):
        slots = sp.functions[fn].slots
        for tot in range(1, max_order + 1):
            for idx in itertools.product(range(tot + 1), repeat=len(slots)):
                if sum(idx) != tot:
                    continue
                i = sp.opaque_atom(fn, idx)
                rules = cs.matching(i)
                if len(rules) < 2:
                    continue
                checked += 1
                forms = []
                for k in range(len(rules)):
                    def choose(atom, rs, k=k, i=i):
                        return rs[k] if atom == i else rs[0]
                    forms.append(DiffExpr(sp, cs.normal_form_atom(i, choose=choose), None, None))
                if any(f != forms[0] for f in forms[1:]):
                    bad.append(sp.atom_name(i))
    return checked, bad


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_reduction_is_order_independent(which, request):
    cat = request.getfixturevalue(which + "_cat")
    checked, bad = _confluence(cat)
    assert checked > 100
    assert bad == []


@pytest.mark.parametrize("eps", [1, -1])
def test_husain_r_on_x3_sign(eps):
    import dataclasses

    from heavenly.verify import _recursion

    s = build_system("husain", eps)
    cat = load_catalog(s)
    f = cat.recursion["X3"]
    assert _recursion(s, cat.operators["R"], f, None) is None
    flipped = dataclasses.replace(f, expected=lambda: [-x for x in cat.symmetries["X1"].characteristic])
    assert _recursion(s, cat.operators["R"], flipped, None) is not None
