"""Anticommuting calculus for vertical forms and functional multivectors.

A graded expression is a sum of coefficient * (ordered product of odd
generators).  A generator is ``(family, order, multiindex)``; families are
strings such as ``"du"`` (vertical differential of u) or ``"zu"``.  Sorting
with sign tracking gives the normal form; repeated generators vanish.

Functional forms (densities modulo total divergences) are compared through
graded Euler operators: a homogeneous form of positive degree is a
divergence iff all its Euler derivatives vanish.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Mapping, Sequence

from .diffexpr import DiffExpr, JetSpace, KernelError, atom_of, partial, total_derivative
from .linop import IrreducibleNonlocalComposition, LinOp, MatrixOp, _mono_expr
from .oracle import SamplingPolicy, equals_expr
from .varcalc import jet_atoms_of

__all__ = [
    "Gen",
    "GradedExpr",
    "graded_normalize",
    "euler_graded",
    "is_divergence",
    "functional_rep",
    "ibp_normal",
    "vertical_d",
    "two_form",
    "closedness_check",
    "bivector",
    "jacobi_trivector",
    "jacobi_check",
    "compatibility_check",
    "JacobiPrecondition",
]

Gen = tuple  # (family, order, idx)


class JacobiPrecondition(KernelError):
    """The operator handed to the Jacobi test is not skew-adjoint."""


def gen(family: str, idx: Sequence[int]) -> Gen:
    idx = tuple(idx)
    return (family, sum(idx), idx)


def _sort_sign(gens: Sequence[Gen]) -> tuple[int, tuple]:
    """Sign of the sorting permutation and the sorted tuple (sign 0 if a repeat)."""
    g = list(gens)
    sign = 1
    # insertion sort, counting transpositions
    for i in range(1, len(g)):
        j = i
        while j > 0 and g[j - 1] > g[j]:
            g[j - 1], g[j] = g[j], g[j - 1]
            sign = -sign
            j -= 1
    for i in range(1, len(g)):
        if g[i] == g[i - 1]:
            return 0, ()
    return sign, tuple(g)


class GradedExpr:
    """Sum of DiffExpr coefficients times sorted products of odd generators."""

    __slots__ = ("space", "terms")

    def __init__(self, space: JetSpace, terms: Mapping[tuple, DiffExpr] | None = None):
        self.space = space
        self.terms: dict[tuple, DiffExpr] = {k: v for k, v in (terms or {}).items() if not v.is_zero()}

    @classmethod
    def of(cls, space: JetSpace, gens: Sequence[Gen], coef: DiffExpr | int = 1) -> "GradedExpr":
        if not isinstance(coef, DiffExpr):
            coef = space.const(coef)
        s, key = _sort_sign(gens)
        if s == 0:
            return cls(space)
        return cls(space, {key: coef if s == 1 else -coef})

    def _acc(self, out: dict, key: tuple, v: DiffExpr) -> None:
        if key in out:
            w = out[key] + v
            if w.is_zero():
                del out[key]
            else:
                out[key] = w
        elif not v.is_zero():
            out[key] = v

    def __add__(self, o: "GradedExpr") -> "GradedExpr":
        out = dict(self.terms)
        for k, v in o.terms.items():
            self._acc(out, k, v)
        return GradedExpr(self.space, out)

    def __neg__(self) -> "GradedExpr":
        return GradedExpr(self.space, {k: -v for k, v in self.terms.items()})

    def __sub__(self, o: "GradedExpr") -> "GradedExpr":
        return self + (-o)

    def scale(self, f: DiffExpr | int | Fraction) -> "GradedExpr":
        if not isinstance(f, DiffExpr):
            f = self.space.const(f)
        return GradedExpr(self.space, {k: f * v for k, v in self.terms.items()})

    def __rmul__(self, f) -> "GradedExpr":
        return self.scale(f)

    def wedge(self, o: "GradedExpr") -> "GradedExpr":
        out: dict = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in o.terms.items():
                s, key = _sort_sign(k1 + k2)
                if s:
                    self._acc(out, key, v1 * v2 if s == 1 else -(v1 * v2))
        return GradedExpr(self.space, out)

    __xor__ = wedge

    def degrees(self) -> set[int]:
        return {len(k) for k in self.terms}

    def degree(self) -> int:
        d = self.degrees()
        if len(d) > 1:
            raise KernelError("inhomogeneous graded expression")
        return d.pop() if d else 0

    def is_zero(self) -> bool:
        return not self.terms

    def generators(self) -> set[Gen]:
        return {g for k in self.terms for g in k}

    def D(self, c: str) -> "GradedExpr":
        """Total derivative (an even derivation)."""
        sp = self.space
        ci = sp.cindex(c)
        out: dict = {}
        for k, v in self.terms.items():
            self._acc(out, k, total_derivative(v, c))
            for pos, g in enumerate(k):
                idx = list(g[2])
                idx[ci] += 1
                ng = gen(g[0], idx)
                s, key = _sort_sign(k[:pos] + (ng,) + k[pos + 1:])
                if s:
                    self._acc(out, key, v if s == 1 else -v)
        return GradedExpr(sp, out)

    def D_multi(self, idx: Sequence[int]) -> "GradedExpr":
        r = self
        for c, n in zip(self.space.coords, idx):
            for _ in range(n):
                r = r.D(c)
        return r

    def dleft(self, g: Gen) -> "GradedExpr":
        """Left derivative with respect to an odd generator."""
        out: dict = {}
        for k, v in self.terms.items():
            if g in k:
                pos = k.index(g)
                self._acc(out, k[:pos] + k[pos + 1:], v if pos % 2 == 0 else -v)
        return GradedExpr(self.space, out)

    def map_coeffs(self, fn) -> "GradedExpr":
        return GradedExpr(self.space, {k: fn(v) for k, v in self.terms.items()})

    def equals_zero(self, policy: SamplingPolicy | None = None) -> bool:
        z = self.space.zero()
        ok = True
        for v in self.terms.values():
            if not equals_expr(v, z, policy):
                ok = False
        return ok

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for k in sorted(self.terms):
            w = "^".join(_gen_str(self.space, g) for g in k)
            parts.append(f"({self.terms[k]})*{w}")
        return " + ".join(parts)

    __repr__ = __str__


def _gen_str(space: JetSpace, g: Gen) -> str:
    sub = "".join(c * n for c, n in zip(space.coords, g[2]))
    return g[0] + ("_" + sub if sub else "")


def graded_normalize(g: GradedExpr, functional: bool = False) -> GradedExpr:
    """Sign-correct sorted form; with ``functional`` the divergence-invariant
    representative in which no derivative falls on the leading factor."""
    out = GradedExpr(g.space, {})
    for k, v in g.terms.items():
        out = out + GradedExpr.of(g.space, k, v)
    return functional_rep(out) if functional else out


# ---------------------------------------------------------------------------
# divergence tests


def _families(g: GradedExpr) -> list[str]:
    return sorted({x[0] for x in g.generators()})


def euler_graded(g: GradedExpr, family: str) -> GradedExpr:
    """Graded Euler operator sum_J (-D)^J d/d(family_J), evaluated Horner-style."""
    sp = g.space
    parts: dict[tuple, GradedExpr] = {}
    for x in g.generators():
        if x[0] == family:
            parts[x[2]] = g.dleft(x)
    zero_idx = (0,) * len(sp.coords)
    while True:
        top = max((sum(j) for j in parts), default=0)
        if top == 0:
            break
        for j in [j for j in parts if sum(j) == top]:
            p = parts.pop(j)
            ci = next(i for i, n in enumerate(j) if n)
            lower = list(j)
            lower[ci] -= 1
            lower_t = tuple(lower)
            d = p.D(sp.coords[ci])
            parts[lower_t] = parts[lower_t] - d if lower_t in parts else -d
    return parts.get(zero_idx, GradedExpr(sp))


def is_divergence(g: GradedExpr, policy: SamplingPolicy | None = None) -> bool:
    """True iff the form is a total divergence (all graded Euler derivatives vanish)."""
    ok = True
    for fam in _families(g):
        if not euler_graded(g, fam).equals_zero(policy):
            ok = False
    return ok


def functional_rep(g: GradedExpr) -> GradedExpr:
    """Canonical representative (1/k) sum_a gen_a ^ E_a(g) of a degree-k form."""
    sp = g.space
    k = g.degree()
    if k == 0:
        return g
    out = GradedExpr(sp)
    zero_idx = (0,) * len(sp.coords)
    for fam in _families(g):
        out = out + GradedExpr.of(sp, [gen(fam, zero_idx)]).wedge(euler_graded(g, fam))
    return out.scale(Fraction(1, k))


def ibp_normal(g: GradedExpr) -> GradedExpr:
    """Integration by parts moving every derivative off the leading factor.

    f * a_J ^ rest  ->  -a_{J-e_c} ^ D_c(f * rest) for the first c with J_c > 0,
    repeated until each term's leading generator is underived.
    """
    sp = g.space
    pending = dict(g.terms)
    out: dict = {}
    acc = GradedExpr(sp)._acc
    while pending:
        k = max(pending, key=lambda t: t[0][1])
        v = pending.pop(k)
        lead = k[0]
        if lead[1] == 0:
            acc(out, k, v)
            continue
        ci = next(i for i, n in enumerate(lead[2]) if n)
        idx = list(lead[2])
        idx[ci] -= 1
        rest = GradedExpr(sp, {k[1:]: v}).D(sp.coords[ci])
        lower = GradedExpr.of(sp, [gen(lead[0], idx)])
        for kk, vv in lower.wedge(rest).terms.items():
            if kk in pending:
                w = pending[kk] - vv
                if w.is_zero():
                    del pending[kk]
                else:
                    pending[kk] = w
            else:
                pending[kk] = -vv
    return GradedExpr(sp, out)


# ---------------------------------------------------------------------------
# vertical forms


def vertical_d(w: GradedExpr, prefix: str = "d") -> GradedExpr:
    """Vertical differential: d(f * ...) = sum df/d(u_J) du_J ^ ..."""
    sp = w.space
    out = GradedExpr(sp)
    for k, v in w.terms.items():
        for dep in sp.deps:
            for i in jet_atoms_of(v, dep):
                c = partial(v, i)
                if c.is_zero():
                    continue
                out = out + GradedExpr.of(sp, (gen(prefix + dep, atom_of(i)[2]),) + k, c)
    return out


def apply_to_generators(op: LinOp, family: str) -> GradedExpr:
    """op applied to the odd generator ``family`` (local operators only)."""
    sp = op.space
    out = GradedExpr(sp)
    for k, f in op.terms.items():
        if k[0] != "L":
            raise IrreducibleNonlocalComposition("nonlocal operator on plain generators")
        out = out + GradedExpr.of(sp, [gen(family, k[1])], f)
    return out


def two_form(K: MatrixOp, prefix: str = "d") -> GradedExpr:
    """omega = 1/2 du^i ^ K_ij du^j."""
    sp = K.space
    z = (0,) * len(sp.coords)
    out = GradedExpr(sp)
    for i, a in enumerate(sp.deps):
        for j, b in enumerate(sp.deps):
            out = out + GradedExpr.of(sp, [gen(prefix + a, z)]).wedge(apply_to_generators(K.rows[i][j], prefix + b))
    return out.scale(Fraction(1, 2))


def closedness_check(w: GradedExpr, policy: SamplingPolicy | None = None, prefix: str = "d") -> bool:
    """True iff the vertical differential of the 2-form is a total divergence."""
    if w.terms and w.degree() != 2:
        raise KernelError("closedness is tested on 2-forms")
    return is_divergence(vertical_d(w, prefix), policy)


# ---------------------------------------------------------------------------
# functional multivectors with potentials for nonlocal entries


@dataclass
class _Field:
    """One component of J(theta): local part plus x-free-coefficient nonlocal pieces."""

    local: GradedExpr
    dx_extra: GradedExpr  # sum of f * integrand, the x-derivative of the nonlocal part
    nonlocal_: bool

    def D_multi(self, idx: Sequence[int], xi: int) -> GradedExpr:
        if not self.nonlocal_:
            return self.local.D_multi(idx)
        if idx[xi] < 1:
            raise IrreducibleNonlocalComposition("nonlocal component differentiated without an x-derivative")
        lower = list(idx)
        lower[xi] -= 1
        return (self.local.D(self.local.space.distinguished) + self.dx_extra).D_multi(lower)

    def dx(self) -> GradedExpr:
        return self.local.D(self.local.space.distinguished) + self.dx_extra


def _theta(space: JetSpace, fam: str, k: int, c: Sequence[int] | None = None) -> Gen:
    xi = space.cindex(space.distinguished)
    idx = list(c) if c is not None else [0] * len(space.coords)
    idx[xi] += k
    return gen(fam, idx)


def _apply_potential(op: LinOp, fam: str, k: int) -> _Field:
    sp = op.space
    xi = sp.cindex(sp.distinguished)
    local = GradedExpr(sp)
    extra = GradedExpr(sp)
    nl = False

    def dinv_of(g_key: int, c: Sequence[int], kk: int) -> tuple[GradedExpr | None, GradedExpr]:
        """Dinv(g * D^c zeta_(kk x)): (local result or None, integrand)."""
        integrand = GradedExpr.of(sp, [_theta(sp, fam, kk, c)], _mono_expr(sp, g_key))
        if g_key == 0 and kk >= 1:
            return GradedExpr.of(sp, [_theta(sp, fam, kk - 1, c)]), integrand
        return None, integrand

    for key, f in op.terms.items():
        if key[0] == "L":
            local = local + GradedExpr.of(sp, [_theta(sp, fam, k, key[1])], f)
            continue
        if key[0] == "N":
            res, integrand = dinv_of(key[1], key[2], k)
        else:
            if key[2] != 0 or k < 1:
                raise IrreducibleNonlocalComposition("nested inverse with a nonconstant inner factor")
            inner_c = key[3]
            res, integrand = dinv_of(key[1], inner_c, k - 1)
        if res is not None:
            local = local + res.scale(f)
            continue
        if _depends_x(f):
            raise IrreducibleNonlocalComposition("nonlocal term with an x-dependent left coefficient")
        extra = extra + integrand.scale(f)
        nl = True
    return _Field(local, extra, nl)


def _depends_x(f: DiffExpr) -> bool:
    sp = f.space
    xi = sp.cindex(sp.distinguished)
    return any(sp.depends_on(i, xi) for i in f.atoms())


def _fields(J: MatrixOp, ks: Sequence[int], fams: Sequence[str]) -> list[_Field]:
    out = []
    for i in range(2):
        parts = [_apply_potential(J.rows[i][j], fams[j], ks[j]) for j in range(2)]
        out.append(_Field(parts[0].local + parts[1].local, parts[0].dx_extra + parts[1].dx_extra,
                          parts[0].nonlocal_ or parts[1].nonlocal_))
    return out


def bivector(J: MatrixOp, ks: Sequence[int] = (0, 0), fams: Sequence[str] = ("zu", "zv")) -> GradedExpr:
    """1/2 theta^T ^ J theta with theta^a = D_x^{k_a} zeta^a, modulo divergences."""
    sp = J.space
    F = _fields(J, ks, fams)
    out = GradedExpr(sp)
    for a in range(2):
        if not F[a].nonlocal_:
            out = out + GradedExpr.of(sp, [_theta(sp, fams[a], ks[a])]).wedge(F[a].local)
        else:
            if ks[a] < 1:
                raise IrreducibleNonlocalComposition("nonlocal component paired with an underived generator")
            out = out - GradedExpr.of(sp, [_theta(sp, fams[a], ks[a] - 1)]).wedge(F[a].dx())
    return out.scale(Fraction(1, 2))


def _prolonged_action(F: list[_Field], theta: GradedExpr) -> GradedExpr:
    """pr v_{J theta} acting on the coefficients of ``theta`` (new factor on the left)."""
    sp = theta.space
    xi = sp.cindex(sp.distinguished)
    out = GradedExpr(sp)
    cache: dict = {}
    for k, f in theta.terms.items():
        rest = GradedExpr(sp, {k: sp.one()})
        for b, dep in enumerate(sp.deps):
            for i in jet_atoms_of(f, dep):
                c = partial(f, i)
                if c.is_zero():
                    continue
                idx = atom_of(i)[2]
                key = (b, idx)
                if key not in cache:
                    cache[key] = F[b].D_multi(idx, xi)
                out = out + cache[key].scale(c).wedge(rest)
    return out


def _candidate_ks() -> list[tuple[int, int]]:
    return sorted(product(range(3), repeat=2), key=lambda t: (sum(t), t))


def _require_skew(J: MatrixOp, policy: SamplingPolicy | None) -> None:
    from .linop import skew_adjoint_check

    if not skew_adjoint_check(J, policy):
        raise JacobiPrecondition("operator is not skew-adjoint")


def jacobi_trivector(J: MatrixOp, ks: Sequence[int] | None = None) -> tuple[GradedExpr, tuple[int, int]]:
    """pr v_{J theta}(Theta_J) with the smallest potential orders that keep it local."""
    fams = ("zu", "zv")
    last: Exception | None = None
    for cand in ([tuple(ks)] if ks is not None else _candidate_ks()):
        try:
            F = _fields(J, cand, fams)
            Th = bivector(J, cand, fams)
            return _prolonged_action(F, Th), cand
        except IrreducibleNonlocalComposition as exc:
            last = exc
    raise IrreducibleNonlocalComposition(f"no local potential representation: {last}")


def jacobi_check(J: MatrixOp, policy: SamplingPolicy | None = None, check_skew: bool = True) -> bool:
    """Jacobi identity for a skew-adjoint operator via the functional trivector test."""
    if check_skew:
        _require_skew(J, policy)
    tri, _ = jacobi_trivector(J)
    return is_divergence(tri, policy)


def compatibility_trivector(J0: MatrixOp, J1: MatrixOp) -> GradedExpr:
    fams = ("zu", "zv")
    last: Exception | None = None
    for cand in _candidate_ks():
        try:
            F0, F1 = _fields(J0, cand, fams), _fields(J1, cand, fams)
            T0, T1 = bivector(J0, cand, fams), bivector(J1, cand, fams)
            return _prolonged_action(F0, T1) + _prolonged_action(F1, T0)
        except IrreducibleNonlocalComposition as exc:
            last = exc
    raise IrreducibleNonlocalComposition(f"no local potential representation: {last}")


def compatibility_check(J0: MatrixOp, J1: MatrixOp, policy: SamplingPolicy | None = None,
                        check_skew: bool = True) -> bool:
    """Poisson-pencil test: the mixed trivector is a total divergence."""
    if check_skew:
        _require_skew(J0, policy)
        _require_skew(J1, policy)
    return is_divergence(compatibility_trivector(J0, J1), policy)
