"""Exact rational expressions over jet space.

A :class:`DiffExpr` is a rational function with exact rational coefficients
whose atoms are coordinates, jet variables, derivatives of opaque functions and
the sign parameter ``eps`` (reduced with ``eps**2 == 1``).  Numerators are
sparse Laurent polynomials; a general denominator is kept only when a division
by a non-monomial polynomial occurs.

Every value also carries an expression tree recording how it was built.  The
tree is evaluated independently by :mod:`heavenly.oracle` at random rational
points, which gives a second verdict for every equality test.
"""

from __future__ import annotations

import threading
from fractions import Fraction
from math import comb
from typing import Iterable, Mapping, Sequence

from gmpy2 import mpq

__all__ = [
    "Atom",
    "JetSpace",
    "FunctionDecl",
    "DiffExpr",
    "EvolutionSystem",
    "ConstraintSystem",
    "Rule",
    "Node",
    "KernelError",
    "FormalZeroDivision",
    "ReductionBudgetExceeded",
    "arith_normalize",
    "total_derivative",
    "total_derivative_multi",
    "partial",
    "substitute_on_shell",
    "reduce_constraints",
    "eval_at_point",
]


class KernelError(Exception):
    pass


class FormalZeroDivision(KernelError, ZeroDivisionError):
    pass


class ReductionBudgetExceeded(KernelError):
    pass


# ---------------------------------------------------------------------------
# atoms and packed monomials

# Atom tuples: ("c", name) | ("j", dep, idx) | ("o", fn, idx).  The sign
# parameter is not an atom id; it lives in the lowest bit of a monomial key.
Atom = tuple

_W = 16
_HALF = 1 << (_W - 1)
_MASK = (1 << _W) - 1

_atoms: list[Atom] = []
_atom_ids: dict[Atom, int] = {}
_atom_lock = threading.Lock()
_decode_cache: dict[int, tuple[tuple[tuple[int, int], ...], int]] = {}


def atom_id(atom: Atom) -> int:
    i = _atom_ids.get(atom)
    if i is None:
        with _atom_lock:
            i = _atom_ids.get(atom)
            if i is None:
                i = len(_atoms)
                _atoms.append(atom)
                _atom_ids[atom] = i
    return i


def atom_of(i: int) -> Atom:
    return _atoms[i]


def atom_key(i: int, exp: int = 1) -> int:
    """Monomial key of a single atom power."""
    return (exp << (_W * i)) << 1


EPS_KEY = 1  # the monomial ``eps``


def decode(key: int) -> tuple[tuple[tuple[int, int], ...], int]:
    """Split a monomial key into ``((atom_id, exp), ...)`` and the eps bit."""
    r = _decode_cache.get(key)
    if r is None:
        b = key & 1
        m = key >> 1
        out = []
        i = 0
        while m:
            e = m & _MASK
            if e >= _HALF:
                e -= 1 << _W
            if e:
                out.append((i, e))
            m = (m - e) >> _W
            i += 1
        r = (tuple(out), b)
        _decode_cache[key] = r
    return r


def encode(pairs: Iterable[tuple[int, int]], epsbit: int = 0) -> int:
    m = 0
    for i, e in pairs:
        m += e << (_W * i)
    return (m << 1) | (epsbit & 1)


def _kmul(k1: int, k2: int) -> int:
    return (((k1 >> 1) + (k2 >> 1)) << 1) | ((k1 ^ k2) & 1)


# ---------------------------------------------------------------------------
# sparse Laurent polynomials: dict key -> mpq

Poly = dict

ONE_Q = mpq(1)


def _padd(a: Poly, b: Poly, scale=None) -> Poly:
    r = dict(a)
    for k, c in b.items():
        if scale is not None:
            c = c * scale
        v = r.get(k)
        if v is None:
            r[k] = c
        else:
            v = v + c
            if v:
                r[k] = v
            else:
                del r[k]
    return r


def _pmul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return {}
    if len(a) < len(b):
        a, b = b, a
    split = [((k >> 1), k & 1, c) for k, c in a.items()]
    r: dict[int, mpq] = {}
    get = r.get
    for k2, c2 in b.items():
        m2 = k2 >> 1
        e2 = k2 & 1
        for m1, e1, c1 in split:
            k = ((m1 + m2) << 1) | (e1 ^ e2)
            v = get(k)
            r[k] = c1 * c2 if v is None else v + c1 * c2
    return {k: v for k, v in r.items() if v}


def _pscale(a: Poly, c) -> Poly:
    if not c:
        return {}
    return {k: v * c for k, v in a.items()}


def _pmono(a: Poly, key: int, c=ONE_Q) -> Poly:
    m = key >> 1
    e = key & 1
    return {(((k >> 1) + m) << 1) | ((k & 1) ^ e): v * c for k, v in a.items()}


def _ppow(a: Poly, n: int) -> Poly:
    r: Poly = {0: ONE_Q}
    base = a
    while n:
        if n & 1:
            r = _pmul(r, base)
        n >>= 1
        if n:
            base = _pmul(base, base)
    return r


def _to_mpq(c) -> mpq:
    if isinstance(c, Fraction):
        return mpq(c.numerator, c.denominator)
    return mpq(c)


# ---------------------------------------------------------------------------
# expression trees (independent record of construction, used by the oracle)


class Node:
    """Immutable expression-tree node.

    kinds: ``rat`` (data Fraction), ``atom`` (data atom id), ``eps``,
    ``+``/``*`` (args), ``/`` (two args), ``pow`` (one arg, data int),
    ``D`` (total derivative, data coordinate name), ``P`` (partial
    derivative, data atom id), ``S`` (on-shell, data system),
    ``canon`` (data DiffExpr; the canonical form itself).
    """

    __slots__ = ("kind", "args", "data", "cache")

    def __init__(self, kind: str, args: tuple = (), data=None):
        self.kind = kind
        self.args = args
        self.data = data
        self.cache: dict | None = None


_ZERO_NODE = Node("rat", (), Fraction(0))
_ONE_NODE = Node("rat", (), Fraction(1))


def _nadd(a: Node, b: Node) -> Node:
    return Node("+", (a, b))


def _nmul(a: Node, b: Node) -> Node:
    return Node("*", (a, b))


# ---------------------------------------------------------------------------
# jet space


class FunctionDecl:
    """An opaque function with a fixed list of slot atoms."""

    __slots__ = ("name", "slots", "labels")

    def __init__(self, name: str, slots: tuple[int, ...], labels: tuple[str, ...]):
        self.name = name
        self.slots = slots
        self.labels = labels

    def __repr__(self) -> str:
        return f"{self.name}({','.join(self.labels)})"


class JetSpace:
    """Coordinates, dependents and opaque functions of one system.

    ``eps`` is ``None`` for the symbolic sign parameter or ``+1``/``-1``.
    """

    def __init__(
        self,
        coords: Sequence[str],
        deps: Sequence[str],
        distinguished: str,
        eps: int | None = None,
        name: str = "",
    ):
        if len(set(coords)) != len(coords):
            raise KernelError("coordinate names must be unique")
        if distinguished not in coords:
            raise KernelError("distinguished coordinate must be a coordinate")
        if eps not in (None, 1, -1):
            raise KernelError("eps must be None, +1 or -1")
        self.coords = tuple(coords)
        self.deps = tuple(deps)
        self.distinguished = distinguished
        self.eps = eps
        self.name = name
        self.functions: dict[str, FunctionDecl] = {}
        self._cpos = {c: i for i, c in enumerate(self.coords)}
        self._dpos = {d: i for i, d in enumerate(self.deps)}
        self._dcache: dict[tuple[int, int], Poly] = {}
        self._pcache: dict[tuple[int, int], Poly] = {}
        self._lock = threading.Lock()
        self._fresh = 0

    # -- atoms ------------------------------------------------------------
    def cindex(self, c: str) -> int:
        try:
            return self._cpos[c]
        except KeyError:
            raise KernelError(f"unknown coordinate {c!r}") from None

    def idx(self, counts: Mapping[str, int] | None = None, **kw: int) -> tuple[int, ...]:
        v = [0] * len(self.coords)
        for src in (counts or {}), kw:
            for c, n in src.items():
                if n < 0:
                    raise KernelError("multiindex entries must be nonnegative")
                v[self.cindex(c)] += n
        return tuple(v)

    def coord_atom(self, c: str) -> int:
        self.cindex(c)
        return atom_id(("c", c))

    def jet_atom(self, dep: str, idx: tuple[int, ...]) -> int:
        if dep not in self._dpos:
            raise KernelError(f"unknown dependent {dep!r}")
        if len(idx) != len(self.coords) or min(idx, default=0) < 0:
            raise KernelError("bad multiindex")
        return atom_id(("j", dep, tuple(idx)))

    def opaque_atom(self, fn: str, idx: tuple[int, ...]) -> int:
        d = self.functions.get(fn)
        if d is None:
            raise KernelError(f"undeclared function {fn!r}")
        if len(idx) != len(d.slots) or min(idx, default=0) < 0:
            raise KernelError("bad opaque multiindex")
        return atom_id(("o", fn, tuple(idx)))

    # -- constructors -----------------------------------------------------
    def coord(self, c: str) -> "DiffExpr":
        return DiffExpr._atom(self, self.coord_atom(c))

    def jet(self, dep: str, counts: Mapping[str, int] | None = None, **kw: int) -> "DiffExpr":
        return DiffExpr._atom(self, self.jet_atom(dep, self.idx(counts, **kw)))

    def j(self, name: str) -> "DiffExpr":
        """Jet from a compact name: ``u_xy`` or ``v``."""
        dep, _, rest = name.partition("_")
        counts: dict[str, int] = {}
        for ch in rest:
            counts[ch] = counts.get(ch, 0) + 1
        return self.jet(dep, counts)

    def declare(self, name: str, slots: Sequence["DiffExpr"]) -> FunctionDecl:
        ids = []
        labels = []
        for s in slots:
            a = s.single_atom()
            if a is None or atom_of(a)[0] not in ("c", "j"):
                raise KernelError("slot arguments must be coordinates or jet variables")
            ids.append(a)
            labels.append(self.atom_name(a))
        d = FunctionDecl(name, tuple(ids), tuple(labels))
        with self._lock:
            old = self.functions.get(name)
            if old is not None:
                if old.slots != d.slots:
                    raise KernelError(f"function {name!r} redeclared with different slots")
                return old
            self.functions[name] = d
        return d

    def fresh_name(self, stem: str) -> str:
        with self._lock:
            while True:
                self._fresh += 1
                n = f"{stem}{self._fresh}"
                if n not in self.functions:
                    return n

    def fn(self, name: str, counts: Mapping[str, int] | None = None, **kw: int) -> "DiffExpr":
        """Derivative of an opaque function; counts are keyed by slot label."""
        d = self.functions.get(name)
        if d is None:
            raise KernelError(f"undeclared function {name!r}")
        v = [0] * len(d.slots)
        for src in (counts or {}), kw:
            for lab, n in src.items():
                v[self._slot_index(d, lab)] += n
        return DiffExpr._atom(self, self.opaque_atom(name, tuple(v)))

    def _slot_index(self, d: FunctionDecl, lab: str) -> int:
        if lab in d.labels:
            return d.labels.index(lab)
        # keyword form of jet labels: u_x -> ux
        for i, l in enumerate(d.labels):
            if l.replace("_", "") == lab:
                return i
        raise KernelError(f"{lab!r} is not a slot of {d!r}")

    def eps_expr(self) -> "DiffExpr":
        if self.eps is not None:
            return self.const(self.eps)
        return DiffExpr(self, {EPS_KEY: ONE_Q}, None, Node("eps"))

    def const(self, c) -> "DiffExpr":
        q = _to_mpq(c)
        return DiffExpr(self, {0: q} if q else {}, None, None)

    def zero(self) -> "DiffExpr":
        return DiffExpr(self, {}, None, None)

    def one(self) -> "DiffExpr":
        return self.const(1)

    # -- naming and ordering ----------------------------------------------
    def atom_name(self, i: int) -> str:
        a = atom_of(i)
        if a[0] == "c":
            return a[1]
        if a[0] == "j":
            sub = "".join(c * n for c, n in zip(self.coords, a[2]))
            return a[1] + ("_" + sub if sub else "")
        d = self.functions[a[1]]
        sub = "".join(
            (lab if len(lab) == 1 else "{" + lab + "}") * n for lab, n in zip(d.labels, a[2])
        )
        return a[1] + ("_" + sub if sub else "")

    def atom_sort_key(self, i: int) -> tuple:
        a = atom_of(i)
        if a[0] == "c":
            return (0, self._cpos.get(a[1], 99), a[1])
        if a[0] == "j":
            return (1, self._dpos.get(a[1], 99), a[2])
        return (2, a[1], a[2])

    def mono_sort_key(self, key: int) -> tuple:
        pairs, b = decode(key)
        return (tuple(sorted((self.atom_sort_key(i), e) for i, e in pairs)), b)

    # -- atom derivatives ---------------------------------------------------
    def atom_total_derivative(self, i: int, ci: int) -> Poly:
        """D_c of a single atom as a polynomial."""
        ck = (i, ci)
        r = self._dcache.get(ck)
        if r is not None:
            return r
        a = atom_of(i)
        if a[0] == "c":
            r = {0: ONE_Q} if self._cpos[a[1]] == ci else {}
        elif a[0] == "j":
            idx = list(a[2])
            idx[ci] += 1
            r = {atom_key(self.jet_atom(a[1], tuple(idx))): ONE_Q}
        else:
            d = self.functions[a[1]]
            r = {}
            for s, slot in enumerate(d.slots):
                ds = self.atom_total_derivative(slot, ci)
                if not ds:
                    continue
                idx = list(a[2])
                idx[s] += 1
                r = _padd(r, _pmono(ds, atom_key(self.opaque_atom(a[1], tuple(idx)))))
        self._dcache[ck] = r
        return r

    def atom_partial(self, i: int, wrt: int) -> Poly:
        """Partial derivative of an atom with respect to a coordinate/jet atom."""
        ck = (i, wrt)
        r = self._pcache.get(ck)
        if r is not None:
            return r
        a = atom_of(i)
        if a[0] in ("c", "j"):
            r = {0: ONE_Q} if i == wrt else {}
        else:
            d = self.functions[a[1]]
            r = {}
            for s, slot in enumerate(d.slots):
                if slot == wrt:
                    idx = list(a[2])
                    idx[s] += 1
                    r = _padd(r, {atom_key(self.opaque_atom(a[1], tuple(idx))): ONE_Q})
        self._pcache[ck] = r
        return r

    def depends_on(self, i: int, ci: int) -> bool:
        return bool(self.atom_total_derivative(i, ci))

    def __repr__(self) -> str:
        e = "eps" if self.eps is None else f"eps={self.eps:+d}"
        return f"JetSpace({self.name or ','.join(self.coords)}; {e})"


# ---------------------------------------------------------------------------
# expressions


def _is_mono_den(den: Poly | None) -> bool:
    return den is None


class DiffExpr:
    """Exact rational expression in canonical form (see module docstring)."""

    __slots__ = ("space", "num", "den", "_tree", "_hash")

    def __init__(self, space: JetSpace, num: Poly, den: Poly | None, tree: Node | None):
        self.space = space
        self.num = num
        self.den = den
        self._tree = tree
        self._hash = None

    # -- construction helpers ----------------------------------------------
    @classmethod
    def _atom(cls, space: JetSpace, i: int) -> "DiffExpr":
        return cls(space, {atom_key(i): ONE_Q}, None, Node("atom", (), i))

    @property
    def tree(self) -> Node:
        if self._tree is None:
            if not self.num:
                self._tree = _ZERO_NODE
            elif self.den is None and len(self.num) == 1 and 0 in self.num:
                self._tree = Node("rat", (), Fraction(int(self.num[0].numerator), int(self.num[0].denominator)))
            else:
                self._tree = Node("canon", (), self)
        return self._tree

    def _coerce(self, other) -> "DiffExpr":
        if isinstance(other, DiffExpr):
            if other.space is not self.space:
                raise KernelError("expressions belong to different jet spaces")
            return other
        if isinstance(other, (int, Fraction)) or type(other).__name__ == "mpq":
            return self.space.const(other)
        return NotImplemented  # type: ignore[return-value]

    @classmethod
    def _make(cls, space: JetSpace, num: Poly, den: Poly | None, tree: Node | None) -> "DiffExpr":
        if den is None:
            return cls(space, num, None, tree)
        num, den = _normalize_fraction(num, den)
        return cls(space, num, den, tree)

    # -- predicates ---------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.num

    def is_const(self) -> bool:
        return self.den is None and all(k == 0 for k in self.num)

    def const_value(self) -> Fraction:
        if not self.is_const():
            raise KernelError("expression is not a constant")
        c = self.num.get(0, mpq(0))
        return Fraction(int(c.numerator), int(c.denominator))

    def single_atom(self) -> int | None:
        if self.den is None and len(self.num) == 1:
            (k, c), = self.num.items()
            if c == 1:
                pairs, b = decode(k)
                if not b and len(pairs) == 1 and pairs[0][1] == 1:
                    return pairs[0][0]
        return None

    def atoms(self) -> set[int]:
        s: set[int] = set()
        for part in (self.num, self.den or {}):
            for k in part:
                for i, _ in decode(k)[0]:
                    s.add(i)
        return s

    def has_eps(self) -> bool:
        return any(k & 1 for k in self.num) or any(k & 1 for k in (self.den or {}))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiffExpr):
            if isinstance(other, (int, Fraction)):
                other = self.space.const(other)
            else:
                return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((frozenset(self.num.items()), frozenset((self.den or {}).items())))
        return self._hash

    def __bool__(self) -> bool:
        return bool(self.num)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if not o.num:
            return self
        if not self.num:
            return o
        t = _nadd(self.tree, o.tree)
        if self.den is None and o.den is None:
            return DiffExpr(self.space, _padd(self.num, o.num), None, t)
        n1, d1 = self.num, self.den or {0: ONE_Q}
        n2, d2 = o.num, o.den or {0: ONE_Q}
        return DiffExpr._make(self.space, _padd(_pmul(n1, d2), _pmul(n2, d1)), _pmul(d1, d2), t)

    __radd__ = __add__

    def __neg__(self) -> "DiffExpr":
        if not self.num:
            return self
        return DiffExpr(self.space, {k: -c for k, c in self.num.items()}, self.den,
                        _nmul(Node("rat", (), Fraction(-1)), self.tree))

    def __sub__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return o + (-self)

    def __mul__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if not self.num or not o.num:
            return self.space.zero()
        t = _nmul(self.tree, o.tree)
        if self.den is None and o.den is None:
            return DiffExpr(self.space, _pmul(self.num, o.num), None, t)
        d = _pmul(self.den or {0: ONE_Q}, o.den or {0: ONE_Q})
        return DiffExpr._make(self.space, _pmul(self.num, o.num), d, t)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if not o.num:
            raise FormalZeroDivision("division by a formally zero expression")
        t = Node("/", (self.tree, o.tree))
        if not self.num:
            return self.space.zero()
        if o.den is None and len(o.num) == 1:
            (k, c), = o.num.items()
            inv = _kinv(k)
            num = _pmono(self.num, inv, 1 / c)
            return DiffExpr._make(self.space, num, self.den, t)
        n = _pmul(self.num, o.den or {0: ONE_Q})
        d = _pmul(self.den or {0: ONE_Q}, o.num)
        return DiffExpr._make(self.space, n, d, t)

    def __rtruediv__(self, other) -> "DiffExpr":
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return o / self

    def __pow__(self, n: int) -> "DiffExpr":
        if not isinstance(n, int):
            raise KernelError("only integer powers are supported")
        if n == 0:
            return self.space.one()
        if n < 0:
            r = self.space.one() / (self ** (-n))
            r._tree = Node("pow", (self.tree,), n)
            return r
        t = Node("pow", (self.tree,), n)
        if self.den is None:
            return DiffExpr(self.space, _ppow(self.num, n), None, t)
        return DiffExpr._make(self.space, _ppow(self.num, n), _ppow(self.den, n), t)

    # -- views ----------------------------------------------------------------
    def terms(self) -> list[tuple[int, mpq]]:
        """Numerator terms in canonical order."""
        return sorted(self.num.items(), key=lambda kc: self.space.mono_sort_key(kc[0]))

    def mono_str(self, key: int) -> str:
        pairs, b = decode(key)
        parts = []
        for i, e in sorted(pairs, key=lambda p: self.space.atom_sort_key(p[0])):
            nm = self.space.atom_name(i)
            parts.append(nm if e == 1 else f"{nm}^{e}")
        if b:
            parts.append("eps")
        return "*".join(parts)

    def _poly_str(self, p: Poly) -> str:
        if not p:
            return "0"
        out = []
        for k, c in sorted(p.items(), key=lambda kc: self.space.mono_sort_key(kc[0])):
            m = self.mono_str(k)
            cs = str(Fraction(int(c.numerator), int(c.denominator)))
            if not m:
                out.append(cs)
            elif c == 1:
                out.append(m)
            elif c == -1:
                out.append("-" + m)
            else:
                out.append(f"{cs}*{m}")
        return " + ".join(out).replace("+ -", "- ")

    def __str__(self) -> str:
        s = self._poly_str(self.num)
        if self.den is not None:
            return f"({s})/({self._poly_str(self.den)})"
        return s

    def __repr__(self) -> str:
        return f"DiffExpr({self})"

    def with_tree(self, tree: Node) -> "DiffExpr":
        return DiffExpr(self.space, self.num, self.den, tree)

    def canonical_only(self) -> "DiffExpr":
        """Same value with the construction history dropped."""
        return DiffExpr(self.space, self.num, self.den, None)

    def coefficient_of_eps(self) -> tuple["DiffExpr", "DiffExpr"]:
        """Split ``e = e0 + eps*e1`` for a polynomial expression."""
        if self.den is not None:
            raise KernelError("split requires a polynomial numerator")
        p0 = {k: c for k, c in self.num.items() if not k & 1}
        p1 = {k ^ 1: c for k, c in self.num.items() if k & 1}
        return DiffExpr(self.space, p0, None, None), DiffExpr(self.space, p1, None, None)

    def at_eps(self, value: int) -> "DiffExpr":
        """Canonical value with the symbolic sign fixed to ``value``."""
        sgn = mpq(value)
        num = {}
        for k, c in self.num.items():
            kk = k & ~1
            v = num.get(kk, mpq(0)) + (c * sgn if k & 1 else c)
            num[kk] = v
        num = {k: c for k, c in num.items() if c}
        den = None
        if self.den is not None:
            den = {}
            for k, c in self.den.items():
                kk = k & ~1
                den[kk] = den.get(kk, mpq(0)) + (c * sgn if k & 1 else c)
            den = {k: c for k, c in den.items() if c}
        return DiffExpr._make(self.space, num, den, None)


def _kinv(k: int) -> int:
    return ((-(k >> 1)) << 1) | (k & 1)


def _kpow(k: int, n: int) -> int:
    return (((k >> 1) * n) << 1) | ((k & 1) & (n & 1))


def _normalize_fraction(num: Poly, den: Poly) -> tuple[Poly, Poly | None]:
    """Bring ``num/den`` to canonical form; monomial denominators are absorbed."""
    if not den:
        raise FormalZeroDivision("zero denominator")
    if not num:
        return {}, None
    if len(den) == 1:
        (k, c), = den.items()
        return _pmono(num, _kinv(k), 1 / c), None
    if any(k & 1 for k in den):
        raise KernelError("non-monomial denominators containing eps are not supported")
    # strip monomial content so den is an ordinary polynomial without monomial factors
    mins: dict[int, int] = {}
    first = True
    for k in den:
        pairs = dict(decode(k)[0])
        if first:
            mins = pairs
            first = False
        else:
            mins = {i: min(e, pairs.get(i, 0)) for i, e in mins.items()}
            for i, e in pairs.items():
                if i not in mins:
                    mins[i] = min(e, 0)
        mins = {i: e for i, e in mins.items() if e}
    if mins:
        sh = _kinv(encode(mins.items()))
        den = _pmono(den, sh)
        num = _pmono(num, sh)
    from .polygcd import cancel_common

    num, den = cancel_common(num, den)
    if len(den) == 1:
        (k, c), = den.items()
        return _pmono(num, _kinv(k), 1 / c), None
    lead = max(den)
    lc = den[lead]
    if lc != 1:
        num = _pscale(num, 1 / lc)
        den = _pscale(den, 1 / lc)
    return num, den


# ---------------------------------------------------------------------------
# differentiation and substitution


def _derive_poly(space: JetSpace, p: Poly, atom_rule) -> Poly:
    r: dict[int, mpq] = {}
    get = r.get
    for k, c in p.items():
        pairs, b = decode(k)
        m = k >> 1
        for i, e in pairs:
            da = atom_rule(i)
            if not da:
                continue
            base = m - (1 << (_W * i))
            ce = c * e
            for dk, dc in da.items():
                kk = ((base + (dk >> 1)) << 1) | (b ^ (dk & 1))
                v = get(kk)
                r[kk] = ce * dc if v is None else v + ce * dc
    return {k: v for k, v in r.items() if v}


def _derive(e: DiffExpr, atom_rule, tree: Node) -> DiffExpr:
    sp = e.space
    if e.den is None:
        return DiffExpr(sp, _derive_poly(sp, e.num, atom_rule), None, tree)
    n1 = _derive_poly(sp, e.num, atom_rule)
    d1 = _derive_poly(sp, e.den, atom_rule)
    num = _padd(_pmul(n1, e.den), _pmul(e.num, d1), mpq(-1))
    return DiffExpr._make(sp, num, _pmul(e.den, e.den), tree)


def total_derivative(e: DiffExpr, c: str) -> DiffExpr:
    """Total derivative D_c, chaining through opaque function slots."""
    sp = e.space
    ci = sp.cindex(c)
    if not e.num:
        return e
    return _derive(e, lambda i: sp.atom_total_derivative(i, ci), Node("D", (e.tree,), c))


def total_derivative_multi(e: DiffExpr, counts: Mapping[str, int] | Sequence[int]) -> DiffExpr:
    sp = e.space
    if not isinstance(counts, Mapping):
        counts = dict(zip(sp.coords, counts))
    for c in sp.coords:
        for _ in range(counts.get(c, 0)):
            e = total_derivative(e, c)
    return e


def partial(e: DiffExpr, wrt: DiffExpr | int) -> DiffExpr:
    """Partial derivative with respect to a coordinate or jet atom.

    Opaque functions are differentiated through the slots that equal ``wrt``.
    """
    sp = e.space
    w = wrt if isinstance(wrt, int) else wrt.single_atom()
    if w is None or atom_of(w)[0] not in ("c", "j"):
        raise KernelError("partial derivatives are taken with respect to coordinate or jet atoms")
    if not e.num:
        return e
    return _derive(e, lambda i: sp.atom_partial(i, w), Node("P", (e.tree,), w))


def arith_normalize(e: DiffExpr) -> DiffExpr:
    """Canonical form (idempotent).  Values are kept canonical on construction."""
    if e.den is not None:
        num, den = _normalize_fraction(e.num, e.den)
        return DiffExpr(e.space, num, den, e._tree)
    return e


def substitute_atoms(e: DiffExpr, repl: Mapping[int, DiffExpr], tree: Node | None = None) -> DiffExpr:
    """Replace atoms by expressions (canonical route only)."""
    sp = e.space
    if not repl:
        return e if tree is None else e.with_tree(tree)
    simple = all(r.den is None for r in repl.values())
    pow_cache: dict[tuple[int, int], Poly] = {}

    def subst_poly(p: Poly):
        if simple:
            out: Poly = {}
            for k, c in p.items():
                pairs, b = decode(k)
                keep = []
                acc: Poly | None = None
                ok = True
                for i, ex in pairs:
                    r = repl.get(i)
                    if r is None:
                        keep.append((i, ex))
                        continue
                    if ex < 0 and not (len(r.num) == 1):
                        ok = False
                        break
                    pk = (i, ex)
                    pw = pow_cache.get(pk)
                    if pw is None:
                        if ex > 0:
                            pw = _ppow(r.num, ex)
                        else:
                            (rk, rc), = r.num.items()
                            pw = {_kpow(rk, ex): rc ** ex}
                        pow_cache[pk] = pw
                    acc = pw if acc is None else _pmul(acc, pw)
                if not ok:
                    return None
                base = encode(keep, b)
                term = {base: c} if acc is None else _pmono(acc, base, c)
                out = _padd(out, term)
            return out
        return None

    if e.den is None:
        num = subst_poly(e.num)
        if num is not None:
            return DiffExpr(sp, num, None, tree)
    # general path through exact arithmetic on DiffExpr values
    def slow(p: Poly) -> DiffExpr:
        total = sp.zero()
        for k, c in p.items():
            pairs, b = decode(k)
            term = sp.const(c)
            if b:
                term = term * sp.eps_expr()
            for i, ex in pairs:
                r = repl.get(i)
                base = r if r is not None else DiffExpr._atom(sp, i)
                term = term * (base ** ex)
            total = total + term
        return total

    res = slow(e.num)
    if e.den is not None:
        res = res / slow(e.den)
    return res.canonical_only() if tree is None else res.with_tree(tree)


# ---------------------------------------------------------------------------
# evolution systems and on-shell reduction


class EvolutionSystem:
    """Evolution equations ``dep_t = rhs[dep]`` with ``rhs`` free of t-jets."""

    def __init__(self, name: str, space: JetSpace, rhs: Mapping[str, DiffExpr], time: str = "t"):
        self.name = name
        self.space = space
        self.time = time
        self.rhs = dict(rhs)
        self._ti = space.cindex(time)
        for d in space.deps:
            if d not in self.rhs:
                raise KernelError(f"missing right-hand side for {d}")
        for d, r in self.rhs.items():
            if self.has_time_jets(r):
                raise KernelError("right-hand sides must be free of t-derivatives")
        self._prolong: dict[int, DiffExpr] = {}
        self._lock = threading.Lock()

    def is_time_jet(self, i: int) -> bool:
        a = atom_of(i)
        return a[0] == "j" and a[2][self._ti] > 0

    def has_time_jets(self, e: DiffExpr) -> bool:
        return any(self.is_time_jet(i) for i in e.atoms())

    def prolong(self, i: int) -> DiffExpr:
        """On-shell value of a jet atom with t-derivatives."""
        r = self._prolong.get(i)
        if r is not None:
            return r
        dep, idx = atom_of(i)[1], list(atom_of(i)[2])
        sp = self.space
        t = idx[self._ti]
        if t == 1:
            idx[self._ti] = 0
            r = total_derivative_multi(self.rhs[dep], idx).canonical_only()
        else:
            idx[self._ti] -= 1
            lower = self.prolong(sp.jet_atom(dep, tuple(idx)))
            r = substitute_on_shell(total_derivative(lower, self.time), self).canonical_only()
        self._prolong[i] = r
        return r

    def flow(self) -> list[DiffExpr]:
        return [self.rhs[d] for d in self.space.deps]


def substitute_on_shell(e: DiffExpr, sys: EvolutionSystem) -> DiffExpr:
    """Replace every jet carrying a t-derivative by its prolonged right side."""
    repl = {i: sys.prolong(i) for i in e.atoms() if sys.is_time_jet(i)}
    tree = Node("S", (e.tree,), sys)
    if not repl:
        return e.with_tree(tree)
    return substitute_atoms(e, repl, tree)


# ---------------------------------------------------------------------------
# constraint systems on opaque functions


class Rule:
    """``fn`` differentiated by ``lead`` rewrites to ``rhs``.

    ``rhs`` is linear in opaque derivatives whose functions have slots among
    ``fn``'s; coefficients are rational, eps, or polynomials in ``fn``'s
    coordinate slots.
    """

    __slots__ = ("fn", "lead", "rhs")

    def __init__(self, fn: str, lead: tuple[int, ...], rhs: DiffExpr):
        self.fn = fn
        self.lead = tuple(lead)
        self.rhs = rhs

    def __repr__(self) -> str:
        return f"Rule({self.fn}{self.lead} -> {self.rhs})"


class ConstraintSystem:
    """Ordered rewrite rules; reduction applies the first matching rule."""

    def __init__(self, space: JetSpace, rules: Sequence[Rule] = (), budget: int = 20000, name: str = ""):
        self.space = space
        self.rules = list(rules)
        self.budget = budget
        self.name = name
        self._nf: dict[int, Poly] = {}
        self._lock = threading.Lock()

    def __add__(self, other: "ConstraintSystem | None") -> "ConstraintSystem":
        if other is None:
            return self
        return ConstraintSystem(self.space, self.rules + other.rules, max(self.budget, other.budget),
                                "+".join(n for n in (self.name, other.name) if n))

    def functions(self) -> set[str]:
        return {r.fn for r in self.rules}

    def matching(self, i: int) -> list[Rule]:
        a = atom_of(i)
        if a[0] != "o":
            return []
        return [r for r in self.rules if r.fn == a[1] and all(x >= y for x, y in zip(a[2], r.lead))]

    def shifted_rhs(self, rule: Rule, idx: tuple[int, ...]) -> DiffExpr:
        d = self.space.functions[rule.fn]
        e = rule.rhs
        for s, (x, y) in enumerate(zip(idx, rule.lead)):
            for _ in range(x - y):
                e = partial(e, d.slots[s])
        return e

    def normal_form_atom(self, i: int, choose=None, _depth=None) -> Poly:
        """Normal form of a single opaque atom as a polynomial."""
        if choose is None:
            r = self._nf.get(i)
            if r is not None:
                return r
        steps = _depth if _depth is not None else [0]
        rules = self.matching(i)
        if not rules:
            res = {atom_key(i): ONE_Q}
        else:
            steps[0] += 1
            if steps[0] > self.budget:
                raise ReductionBudgetExceeded("constraint reduction exceeded its step budget")
            rule = rules[0] if choose is None else choose(i, rules)
            rhs = self.shifted_rhs(rule, atom_of(i)[2])
            res = {}
            for k, c in rhs.num.items():
                pairs, b = decode(k)
                opq = [(j, n) for j, n in pairs if atom_of(j)[0] == "o"]
                if not opq:
                    res = _padd(res, {k: c})
                    continue
                if len(opq) != 1 or opq[0][1] != 1:
                    raise KernelError("constraint right sides must be linear in opaque derivatives")
                sub = self.normal_form_atom(opq[0][0], choose, steps)
                rest = encode([(j, n) for j, n in pairs if atom_of(j)[0] != "o"], b)
                res = _padd(res, _pmono(sub, rest, c))
        if choose is None:
            self._nf[i] = res
        return res

    def is_normal(self, i: int) -> bool:
        return not self.matching(i)


def reduce_constraints(e: DiffExpr, cs: ConstraintSystem | None) -> DiffExpr:
    """Normal form of ``e`` under the rewrite closure of ``cs``."""
    if cs is None or not cs.rules:
        return e
    repl = {}
    sp = e.space
    for i in e.atoms():
        if cs.matching(i):
            repl[i] = DiffExpr(sp, cs.normal_form_atom(i), None, None)
    if not repl:
        return e
    return substitute_atoms(e, repl, e.tree)


# ---------------------------------------------------------------------------
# point evaluation of the canonical form


def _poly_value(p: Poly, vals: Mapping[int, Fraction], eps_val) -> Fraction:
    total = Fraction(0)
    for k, c in p.items():
        pairs, b = decode(k)
        v = Fraction(int(c.numerator), int(c.denominator))
        for i, e in pairs:
            if i not in vals:
                raise KernelError(f"assignment misses atom {atom_of(i)!r}")
            x = vals[i]
            if e < 0 and x == 0:
                raise FormalZeroDivision("atom with negative power evaluates to zero")
            v *= x ** e
        if b:
            if eps_val is None:
                raise KernelError("assignment misses eps")
            v *= eps_val
        total += v
    return total


def eval_at_point(e: DiffExpr, assignment: Mapping) -> Fraction:
    """Exact value of the canonical form.

    ``assignment`` maps atom ids, single-atom expressions or the string
    ``"eps"`` to rationals.
    """
    vals: dict[int, Fraction] = {}
    eps_val = None
    for k, v in assignment.items():
        v = Fraction(v)
        if isinstance(k, str) and k == "eps":
            eps_val = v
        elif isinstance(k, DiffExpr):
            a = k.single_atom()
            if a is None:
                raise KernelError("assignment keys must be atoms")
            vals[a] = v
        else:
            vals[int(k)] = v
    n = _poly_value(e.num, vals, eps_val)
    if e.den is None:
        return n
    d = _poly_value(e.den, vals, eps_val)
    if d == 0:
        raise FormalZeroDivision("denominator vanishes at the point")
    return n / d


def binomial(n: int, k: int) -> int:
    return comb(n, k)


def equals_expr(e1: DiffExpr, e2: DiffExpr, policy=None, cs: ConstraintSystem | None = None) -> bool:
    """Canonical equality cross-checked by the random-point oracle."""
    from .oracle import equals_expr as _eq

    return _eq(e1, e2, policy, cs)
