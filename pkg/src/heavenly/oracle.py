"""Random rational-point oracle.

Evaluates expression trees (not canonical forms) with :class:`fractions.Fraction`
at seeded random points.  Total derivatives, partial derivatives and on-shell
substitution are re-derived on the trees by code that shares nothing with the
polynomial kernel beyond atom naming and the constraint normal forms of opaque
derivatives.
"""

from __future__ import annotations

import hashlib
import random
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .diffexpr import (
    ConstraintSystem,
    DiffExpr,
    EvolutionSystem,
    JetSpace,
    KernelError,
    Node,
    atom_id,
    atom_of,
    decode,
    reduce_constraints,
)

__all__ = [
    "SamplingPolicy",
    "OracleDisagreement",
    "Oracle",
    "equals_expr",
    "is_zero_expr",
    "oracle_stats",
    "reset_oracle_stats",
]

ZERO = Node("rat", (), Fraction(0))
ONE = Node("rat", (), Fraction(1))


class OracleDisagreement(KernelError):
    """Canonical and sampled verdicts differ: a kernel bug."""


@dataclass(frozen=True)
class SamplingPolicy:
    n: int = 20
    seed: int = 0
    bound: int = 999
    max_redraws: int = 200


_stats_lock = threading.Lock()
_stats = {"comparisons": 0, "agree": 0, "points": 0}


def oracle_stats() -> dict:
    with _stats_lock:
        return dict(_stats)


def reset_oracle_stats() -> None:
    with _stats_lock:
        for k in _stats:
            _stats[k] = 0


def _record(points: int) -> None:
    with _stats_lock:
        _stats["comparisons"] += 1
        _stats["agree"] += 1
        _stats["points"] += points


# ---------------------------------------------------------------------------
# tree constructors with trivial folding


def _add(nodes: Sequence[Node]) -> Node:
    xs = [n for n in nodes if n is not ZERO]
    if not xs:
        return ZERO
    if len(xs) == 1:
        return xs[0]
    return Node("+", tuple(xs))


def _mul(nodes: Sequence[Node]) -> Node:
    xs = []
    for n in nodes:
        if n is ZERO:
            return ZERO
        if n is not ONE:
            xs.append(n)
    if not xs:
        return ONE
    if len(xs) == 1:
        return xs[0]
    return Node("*", tuple(xs))


def _atom_node(i: int) -> Node:
    return Node("atom", (), i)


def _postorder(root: Node, done) -> list[Node]:
    out: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        n, expanded = stack.pop()
        if expanded:
            out.append(n)
            continue
        if id(n) in seen or done(n):
            continue
        seen.add(id(n))
        stack.append((n, True))
        if n.kind in ("+", "*", "/", "pow"):
            for a in n.args:
                if id(a) not in seen and not done(a):
                    stack.append((a, False))
    return out


def _cache(n: Node) -> dict:
    if n.cache is None:
        n.cache = {}
    return n.cache


# ---------------------------------------------------------------------------
# symbolic operations on trees


def canon_tree(e: DiffExpr) -> Node:
    """Tree spelling out a canonical form term by term."""

    def poly(p: dict) -> Node:
        terms = []
        for k, c in p.items():
            pairs, b = decode(k)
            fs = [Node("rat", (), Fraction(int(c.numerator), int(c.denominator)))]
            for i, ex in pairs:
                a = _atom_node(i)
                fs.append(a if ex == 1 else Node("pow", (a,), ex))
            if b:
                fs.append(Node("eps"))
            terms.append(_mul(fs))
        return _add(terms)

    n = poly(e.num)
    if e.den is not None:
        n = Node("/", (n, poly(e.den)))
    return n


class _Deriver:
    """Derivations on trees: total derivative by a coordinate or partial by an atom."""

    def __init__(self, space: JetSpace, kind: str, target):
        self.space = space
        self.kind = kind  # "D" or "P"
        self.target = target
        self.key = (kind, target)

    def atom_rule(self, i: int) -> Node:
        sp = self.space
        a = atom_of(i)
        if a[0] == "c":
            if self.kind == "D":
                return ONE if a[1] == self.target else ZERO
            return ONE if i == self.target else ZERO
        if a[0] == "j":
            if self.kind == "P":
                return ONE if i == self.target else ZERO
            idx = list(a[2])
            idx[sp.coords.index(self.target)] += 1
            return _atom_node(atom_id(("j", a[1], tuple(idx))))
        d = sp.functions[a[1]]
        terms = []
        for s, slot in enumerate(d.slots):
            if self.kind == "P":
                ds = ONE if slot == self.target else ZERO
            else:
                ds = self.atom_rule(slot)
            if ds is ZERO:
                continue
            idx = list(a[2])
            idx[s] += 1
            terms.append(_mul([ds, _atom_node(atom_id(("o", a[1], tuple(idx))))]))
        return _add(terms)

    def __call__(self, root: Node) -> Node:
        key = self.key

        def done(n: Node) -> bool:
            return n.cache is not None and key in n.cache

        for n in _postorder(root, done):
            k = n.kind
            if k in ("rat", "eps"):
                r = ZERO
            elif k == "atom":
                r = self.atom_rule(n.data)
            elif k == "+":
                r = _add([a.cache[key] for a in n.args])
            elif k == "*":
                terms = []
                for j, a in enumerate(n.args):
                    da = a.cache[key]
                    if da is ZERO:
                        continue
                    terms.append(_mul([da] + [b for m, b in enumerate(n.args) if m != j]))
                r = _add(terms)
            elif k == "/":
                a, b = n.args
                da, db = a.cache[key], b.cache[key]
                t1 = Node("/", (da, b)) if da is not ZERO else ZERO
                t2 = (
                    _mul([Node("rat", (), Fraction(-1)), Node("/", (_mul([a, db]), Node("pow", (b,), 2)))])
                    if db is not ZERO
                    else ZERO
                )
                r = _add([t1, t2])
            elif k == "pow":
                (a,) = n.args
                da = a.cache[key]
                p = n.data
                if da is ZERO or p == 0:
                    r = ZERO
                else:
                    r = _mul([Node("rat", (), Fraction(p)), Node("pow", (a,), p - 1) if p != 2 else a, da])
            else:
                r = self(resolve(n, self.space))
            _cache(n)[key] = r
        return root.cache[key]


def tree_diff(root: Node, c: str, space: JetSpace) -> Node:
    return _Deriver(space, "D", c)(root)


def tree_partial(root: Node, i: int, space: JetSpace) -> Node:
    return _Deriver(space, "P", i)(root)


class _OnShell:
    def __init__(self, sys: EvolutionSystem):
        self.sys = sys
        self.key = ("S", id(sys))
        self.ti = sys.space.coords.index(sys.time)
        store = getattr(sys, "_oracle_prolong", None)
        if store is None:
            store = {}
            sys._oracle_prolong = store  # type: ignore[attr-defined]
        self.store = store

    def jet_tree(self, i: int) -> Node:
        r = self.store.get(i)
        if r is not None:
            return r
        sp = self.sys.space
        dep, idx = atom_of(i)[1], list(atom_of(i)[2])
        idx[self.ti] -= 1
        t = self.sys.rhs[dep].tree
        for c, n in zip(sp.coords, idx):
            for _ in range(n):
                t = tree_diff(t, c, sp)
        r = self(t)
        self.store[i] = r
        return r

    def __call__(self, root: Node) -> Node:
        key = self.key

        def done(n: Node) -> bool:
            return n.cache is not None and key in n.cache

        for n in _postorder(root, done):
            k = n.kind
            if k in ("rat", "eps"):
                r = n
            elif k == "atom":
                a = atom_of(n.data)
                if a[0] == "j" and a[2][self.ti] > 0:
                    r = self.jet_tree(n.data)
                else:
                    r = n
            elif k in ("+", "*", "/", "pow"):
                new = tuple(a.cache[key] for a in n.args)
                r = n if all(x is y for x, y in zip(new, n.args)) else Node(k, new, n.data)
            else:
                r = self(resolve(n, self.sys.space))
            _cache(n)[key] = r
        return root.cache[key]


def resolve(n: Node, space: JetSpace) -> Node:
    """Replace a deferred node (D, P, S, canon) by an explicit tree."""
    k = n.kind
    if k == "D":
        return tree_diff(n.args[0], n.data, space)
    if k == "P":
        return tree_partial(n.args[0], n.data, space)
    if k == "S":
        return _OnShell(n.data)(n.args[0])
    if k == "canon":
        c = _cache(n)
        r = c.get("canon")
        if r is None:
            r = canon_tree(n.data)
            c["canon"] = r
        return r
    raise KernelError(f"cannot resolve node kind {k}")


# ---------------------------------------------------------------------------
# evaluation


class Oracle:
    """Seeded random points; opaque derivatives respect ``cs`` normal forms."""

    def __init__(self, space: JetSpace, policy: SamplingPolicy | None = None, cs: ConstraintSystem | None = None):
        self.space = space
        self.policy = policy or SamplingPolicy()
        self.cs = cs
        self._vals: dict[tuple[int, int], Fraction] = {}

    def _draw(self, salt: int, tag: str) -> random.Random:
        h = hashlib.blake2b(f"{self.policy.seed}|{salt}|{tag}".encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(h, "big"))

    def eps_value(self, salt: int) -> Fraction:
        if self.space.eps is not None:
            return Fraction(self.space.eps)
        return Fraction(1) if self._draw(salt, "eps").random() < 0.5 else Fraction(-1)

    def atom_value(self, i: int, salt: int) -> Fraction:
        key = (i, salt)
        v = self._vals.get(key)
        if v is not None:
            return v
        a = atom_of(i)
        if a[0] == "o" and self.cs is not None and not self.cs.is_normal(i):
            v = Fraction(0)
            for k, c in self.cs.normal_form_atom(i).items():
                pairs, b = decode(k)
                t = Fraction(int(c.numerator), int(c.denominator))
                for j, e in pairs:
                    t *= self.atom_value(j, salt) ** e
                if b:
                    t *= self.eps_value(salt)
                v += t
        else:
            r = self._draw(salt, repr(a))
            b = self.policy.bound
            p = 0
            while p == 0:
                p = r.randint(-b, b)
            v = Fraction(p, r.randint(1, b))
        self._vals[key] = v
        return v

    def evaluate(self, root: Node, salts: Sequence[int]) -> list[Fraction | None]:
        memo: dict[int, list] = {}
        keep: list[Node] = []

        def done(n: Node) -> bool:
            return id(n) in memo

        def run(r: Node) -> list:
            for n in _postorder(r, done):
                k = n.kind
                if k == "rat":
                    v = [n.data] * len(salts)
                elif k == "eps":
                    v = [self.eps_value(s) for s in salts]
                elif k == "atom":
                    v = [self.atom_value(n.data, s) for s in salts]
                elif k == "+":
                    v = list(memo[id(n.args[0])])
                    for a in n.args[1:]:
                        w = memo[id(a)]
                        v = [None if x is None or y is None else x + y for x, y in zip(v, w)]
                elif k == "*":
                    v = list(memo[id(n.args[0])])
                    for a in n.args[1:]:
                        w = memo[id(a)]
                        v = [None if x is None or y is None else x * y for x, y in zip(v, w)]
                elif k == "/":
                    x_, y_ = memo[id(n.args[0])], memo[id(n.args[1])]
                    v = [None if x is None or y is None or y == 0 else x / y for x, y in zip(x_, y_)]
                elif k == "pow":
                    x_ = memo[id(n.args[0])]
                    p = n.data
                    v = [None if x is None or (p < 0 and x == 0) else x ** p for x in x_]
                else:
                    sub = resolve(n, self.space)
                    keep.append(sub)
                    v = run(sub)
                memo[id(n)] = v
                keep.append(n)
            return memo[id(r)]

        return run(root)

    def compare(self, a: Node, b: Node) -> tuple[bool, int]:
        """Equality of two trees at ``n`` valid points (redrawing bad points)."""
        pol = self.policy
        need = pol.n
        salt = 0
        used = 0
        while need > 0:
            if salt > pol.n + pol.max_redraws:
                raise KernelError("oracle could not find enough regular sample points")
            salts = list(range(salt, salt + need))
            salt += need
            va = self.evaluate(a, salts)
            vb = self.evaluate(b, salts)
            for x, y in zip(va, vb):
                if x is None or y is None:
                    continue
                used += 1
                need -= 1
                if x != y:
                    return False, used
        return True, used


def equals_expr(
    e1: DiffExpr,
    e2: DiffExpr,
    policy: SamplingPolicy | None = None,
    cs: ConstraintSystem | None = None,
) -> bool:
    """Exact equality (modulo ``cs``), corroborated by the sampling oracle.

    Raises :class:`OracleDisagreement` when the two routes disagree.
    """
    if not isinstance(e2, DiffExpr):
        e2 = e1.space.const(e2)
    diff = reduce_constraints(e1 - e2, cs)
    canonical = diff.is_zero()
    orc = Oracle(e1.space, policy, cs)
    sampled, used = orc.compare(e1.tree, e2.tree)
    if canonical != sampled:
        raise OracleDisagreement(
            f"canonical verdict {canonical} but sampled verdict {sampled}: {diff}"
        )
    _record(used)
    return canonical


def is_zero_expr(e: DiffExpr, policy: SamplingPolicy | None = None, cs: ConstraintSystem | None = None) -> bool:
    return equals_expr(e, e.space.zero(), policy, cs)
