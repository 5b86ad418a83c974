"""JSON encoding of expressions, operators and nonlocal expressions.

Expression grammar::

    {"op": "+" | "*" | "/" | "pow", "args": [...]}
    {"jet": {"dep": "u", "idx": {"x": 2}}}
    {"coord": "x"}
    {"opaque": {"fn": "a", "slots": [...], "idx": [1, 0]}}
    {"eps": true}
    {"rat": "p/q"}

Operators extend it with ``{"D": {"x": 2}}`` and ``{"Dinv": "x"}`` factors
inside products (composition order is left to right) and with
``{"matrix": [[op, op], [op, op]]}``.  Nonlocal expressions use
``{"nonlocal": {"local": e, "terms": [{"coef": m, "integrand": r}]}}``.

Encoding always starts from the canonical form, so ``dumps(loads(s)) == s``.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Any

from .diffexpr import DiffExpr, JetSpace, KernelError, atom_of, decode
from .linop import LinOp, MatrixOp, NLExpr, _key_sort, _mono_expr

__all__ = [
    "expr_to_json",
    "expr_from_json",
    "op_to_json",
    "op_from_json",
    "nl_to_json",
    "nl_from_json",
    "to_json",
    "from_json",
    "dumps",
    "loads",
]


def _rat(q) -> dict:
    f = Fraction(int(q.numerator), int(q.denominator))
    return {"rat": str(f)}


def _atom_json(sp: JetSpace, i: int) -> dict:
    a = atom_of(i)
    if a[0] == "c":
        return {"coord": a[1]}
    if a[0] == "j":
        return {"jet": {"dep": a[1], "idx": {c: n for c, n in zip(sp.coords, a[2]) if n}}}
    d = sp.functions[a[1]]
    return {"opaque": {"fn": a[1], "slots": [_atom_json(sp, s) for s in d.slots], "idx": list(a[2])}}


def _poly_json(sp: JetSpace, p: dict) -> dict:
    terms = []
    for k in sorted(p, key=sp.mono_sort_key):
        pairs, b = decode(k)
        factors: list[dict] = []
        c = p[k]
        if c != 1 or (not pairs and not b):
            factors.append(_rat(c))
        for i, e in sorted(pairs, key=lambda ie: sp.atom_sort_key(ie[0])):
            aj = _atom_json(sp, i)
            factors.append(aj if e == 1 else {"op": "pow", "args": [aj, {"rat": str(e)}]})
        if b:
            factors.append({"eps": True})
        terms.append(factors[0] if len(factors) == 1 else {"op": "*", "args": factors})
    if not terms:
        return {"rat": "0"}
    return terms[0] if len(terms) == 1 else {"op": "+", "args": terms}


def expr_to_json(e: DiffExpr) -> dict:
    num = _poly_json(e.space, e.num)
    if e.den is None:
        return num
    return {"op": "/", "args": [num, _poly_json(e.space, e.den)]}


def _atom_from(sp: JetSpace, obj: dict) -> DiffExpr:
    if "coord" in obj:
        return sp.coord(obj["coord"])
    if "jet" in obj:
        j = obj["jet"]
        return sp.jet(j["dep"], j.get("idx", {}))
    o = obj["opaque"]
    slots = [_atom_from(sp, s) for s in o["slots"]]
    d = sp.declare(o["fn"], slots)
    counts = {lab: n for lab, n in zip(d.labels, o["idx"]) if n}
    return sp.fn(o["fn"], counts)


def expr_from_json(obj: Any, sp: JetSpace) -> DiffExpr:
    if not isinstance(obj, dict):
        raise KernelError(f"malformed expression node: {obj!r}")
    if "rat" in obj:
        return sp.const(Fraction(obj["rat"]))
    if "eps" in obj:
        return sp.eps_expr()
    if "coord" in obj or "jet" in obj or "opaque" in obj:
        return _atom_from(sp, obj)
    op = obj.get("op")
    args = obj.get("args", [])
    if op == "+":
        out = sp.zero()
        for a in args:
            out = out + expr_from_json(a, sp)
        return out
    if op == "*":
        out = sp.one()
        for a in args:
            out = out * expr_from_json(a, sp)
        return out
    if op == "/":
        return expr_from_json(args[0], sp) / expr_from_json(args[1], sp)
    if op == "pow":
        n = Fraction(args[1]["rat"])
        if n.denominator != 1:
            raise KernelError("only integer powers are supported")
        return expr_from_json(args[0], sp) ** int(n)
    raise KernelError(f"malformed expression node: {obj!r}")


# -- operators -----------------------------------------------------------------


def _d_json(sp: JetSpace, c: tuple[int, ...]) -> list[dict]:
    counts = {x: n for x, n in zip(sp.coords, c) if n}
    return [{"D": counts}] if counts else []


def _word_json(sp: JetSpace, key: tuple, coef: DiffExpr) -> dict:
    inv = {"Dinv": sp.distinguished}
    f: list[dict] = [expr_to_json(coef)]
    if key[0] == "L":
        f += _d_json(sp, key[1])
    elif key[0] == "N":
        f.append(inv)
        if key[1]:
            f.append(expr_to_json(_mono_expr(sp, key[1])))
        f += _d_json(sp, key[2])
    else:
        f.append(inv)
        if key[1]:
            f.append(expr_to_json(_mono_expr(sp, key[1])))
        f.append(inv)
        if key[2]:
            f.append(expr_to_json(_mono_expr(sp, key[2])))
        f += _d_json(sp, key[3])
    return f[0] if len(f) == 1 else {"op": "*", "args": f}


def _linop_json(op: LinOp) -> dict:
    words = [_word_json(op.space, k, v) for k, v in op.sorted_terms()]
    if not words:
        return {"rat": "0"}
    return words[0] if len(words) == 1 else {"op": "+", "args": words}


def op_to_json(op: LinOp | MatrixOp) -> dict:
    if isinstance(op, MatrixOp):
        return {"matrix": [[_linop_json(op.rows[i][j]) for j in range(2)] for i in range(2)]}
    return _linop_json(op)


def _linop_from(obj: dict, sp: JetSpace) -> LinOp:
    if "D" in obj:
        return LinOp.D(sp, obj["D"])
    if "Dinv" in obj:
        if obj["Dinv"] != sp.distinguished:
            raise KernelError("inverse derivative only in the distinguished direction")
        return LinOp.Dinv(sp)
    op = obj.get("op")
    if op == "+":
        out = LinOp.zero(sp)
        for a in obj["args"]:
            out = out + _linop_from(a, sp)
        return out
    if op == "*" and any(_is_op_node(a) for a in obj["args"]):
        out = LinOp.mult(sp.one())
        for a in obj["args"]:
            out = out @ _linop_from(a, sp)
        return out
    return LinOp.mult(expr_from_json(obj, sp))


def _is_op_node(obj: dict) -> bool:
    if "D" in obj or "Dinv" in obj:
        return True
    return obj.get("op") in ("+", "*") and any(_is_op_node(a) for a in obj.get("args", []))


def op_from_json(obj: dict, sp: JetSpace) -> LinOp | MatrixOp:
    if "matrix" in obj:
        return MatrixOp([[_linop_from(obj["matrix"][i][j], sp) for j in range(2)] for i in range(2)], sp)
    return _linop_from(obj, sp)


# -- nonlocal expressions --------------------------------------------------------


def nl_to_json(e: NLExpr) -> dict:
    sp = e.space
    terms = [
        {"coef": expr_to_json(_mono_expr(sp, m)), "integrand": expr_to_json(r)}
        for m, r in sorted(e.nl.items(), key=lambda kv: sp.mono_sort_key(kv[0]))
    ]
    return {"nonlocal": {"local": expr_to_json(e.local), "terms": terms}}


def nl_from_json(obj: dict, sp: JetSpace) -> NLExpr:
    body = obj["nonlocal"]
    out = NLExpr(expr_from_json(body["local"], sp))
    for t in body["terms"]:
        out = out + NLExpr.dinv(expr_from_json(t["integrand"], sp)).scale(expr_from_json(t["coef"], sp))
    return out


# -- generic -----------------------------------------------------------------------


def to_json(x: Any) -> Any:
    """Encode expressions, operators, nonlocal expressions and containers of them."""
    if isinstance(x, DiffExpr):
        return expr_to_json(x)
    if isinstance(x, (LinOp, MatrixOp)):
        return op_to_json(x)
    if isinstance(x, NLExpr):
        return nl_to_json(x) if x.nl else expr_to_json(x.local)
    if isinstance(x, dict):
        return {k: to_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_json(v) for v in x]
    return x


def from_json(obj: Any, sp: JetSpace) -> Any:
    """Decode a single expression, operator or nonlocal expression."""
    if isinstance(obj, dict):
        if "matrix" in obj or _is_op_node(obj):
            return op_from_json(obj, sp)
        if "nonlocal" in obj:
            return nl_from_json(obj, sp)
        return expr_from_json(obj, sp)
    if isinstance(obj, list):
        return [from_json(v, sp) for v in obj]
    raise KernelError(f"cannot decode {obj!r}")


def dumps(x: Any) -> str:
    return json.dumps(to_json(x), sort_keys=True, separators=(",", ":"))


def loads(s: str, sp: JetSpace) -> Any:
    return from_json(json.loads(s), sp)
