"""JSON encoding of expressions, operators and nonlocal expressions."""

import json

import pytest

from heavenly.diffexpr import KernelError
from heavenly.linop import NLExpr
from heavenly.serial import dumps, expr_from_json, expr_to_json, from_json, loads, to_json


def test_grammar_atoms(mixed):
    sp = mixed.space
    assert expr_to_json(sp.coord("x")) == {"coord": "x"}
    assert expr_to_json(sp.j("u_xx")) == {"jet": {"dep": "u", "idx": {"x": 2}}}
    assert expr_to_json(sp.const(0)) == {"rat": "0"}
    assert expr_to_json(sp.eps_expr()) == {"eps": True}


def test_grammar_product(mixed):
    sp = mixed.space
    got = expr_to_json(sp.const(3) / 2 * sp.j("v") ** 2)
    assert got == {"op": "*", "args": [{"rat": "3/2"}, {"op": "pow", "args": [{"jet": {"dep": "v", "idx": {}}},
                                                                                {"rat": "2"}]}]}


def test_opaque(mixed_cat):
    sp = mixed_cat.space
    got = expr_to_json(sp.fn("c", v=1))
    assert got["opaque"]["fn"] == "c" and got["opaque"]["idx"] == [0, 1]
    assert got["opaque"]["slots"] == [{"coord": "x"}, {"jet": {"dep": "v", "idx": {}}}]


def test_rational_function_round_trip(mixed):
    e = mixed.flow()[1]
    s = dumps(e)
    assert loads(s, mixed.space) == e
    assert dumps(loads(s, mixed.space)) == s


@pytest.mark.parametrize("which", ["mixed", "husain"])
def test_operator_round_trip(which, request):
    cat = request.getfixturevalue(which + "_cat")
    for name, op in cat.operators.items():
        s = dumps(op)
        assert dumps(loads(s, cat.space)) == s, name
    assert any('"Dinv"' in dumps(op) for op in cat.operators.values())


def test_nonlocal_round_trip(mixed_cat):
    sp = mixed_cat.space
    e = NLExpr(sp.j("u_x"), {0: sp.j("v") ** 2})
    obj = to_json(e)
    assert "nonlocal" in obj
    back = from_json(obj, sp)
    assert to_json(back) == obj


def test_decode_rejects_garbage(mixed):
    with pytest.raises(KernelError):
        expr_from_json({"bogus": 1}, mixed.space)
    with pytest.raises(KernelError):
        from_json(3, mixed.space)


def test_dumps_is_compact_and_sorted(mixed):
    s = dumps(mixed.space.j("u_x") + 1)
    assert s == json.dumps(json.loads(s), sort_keys=True, separators=(",", ":"))
