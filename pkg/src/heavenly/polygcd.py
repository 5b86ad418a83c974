"""Cancellation of common factors in non-monomial denominators.

Rarely needed: catalog expressions only divide by monomials.  Delegates the
multivariate gcd to sympy's sparse polynomial rings.
"""

from __future__ import annotations

from gmpy2 import mpq
from sympy import QQ, Rational
from sympy.polys.rings import ring

from .diffexpr import decode, encode


def _gens(*polys: dict) -> list[int]:
    ids: set[int] = set()
    for p in polys:
        for k in p:
            for i, _ in decode(k)[0]:
                ids.add(i)
    return sorted(ids)


def cancel_common(num: dict, den: dict) -> tuple[dict, dict]:
    ids = _gens(num, den)
    if not ids:
        return num, den
    # eps is an extra generator: den is eps-free, so the gcd is too and the
    # quotient keeps eps-degree at most one
    R, *xs = ring(",".join(f"a{i}" for i in ids) + ",eps", QQ)
    ex = xs.pop()
    pos = {i: n for n, i in enumerate(ids)}

    def to_ring(p: dict):
        # shift Laurent exponents so everything is a polynomial
        out = R.zero
        for k, c in p.items():
            term = R(Rational(int(c.numerator), int(c.denominator)))
            if k & 1:
                term *= ex
            for i, e in decode(k)[0]:
                if e < 0:
                    return None
                term *= xs[pos[i]] ** e
            out += term
        return out

    shift = {}
    for k in num:
        for i, e in decode(k)[0]:
            if e < shift.get(i, 0):
                shift[i] = e
    if shift:
        from .diffexpr import _pmono, _kinv

        sk = _kinv(encode(shift.items()))
        num_s = _pmono(num, sk)
    else:
        num_s = num
    a = to_ring(num_s)
    b = to_ring(den)
    if a is None or b is None:
        return num, den
    g = a.gcd(b)
    if g == R.one or g.is_ground:
        return num, den
    a = a.exquo(g)
    b = b.exquo(g)

    def back(p) -> dict:
        out = {}
        for mon, c in p.terms():
            k = encode(((ids[n], e) for n, e in enumerate(mon[:-1]) if e), mon[-1])
            out[k] = mpq(int(c.numerator), int(c.denominator))
        return out

    num2 = back(a)
    if shift:
        from .diffexpr import _pmono

        num2 = _pmono(num2, encode(shift.items()))
    return num2, back(b)
