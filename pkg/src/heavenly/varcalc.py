"""Variational calculus on the jet space: linearizations, Euler operators,
divergence and conservation tests, brackets of evolutionary fields."""

from __future__ import annotations

from typing import Sequence

from .diffexpr import (
    ConstraintSystem,
    DiffExpr,
    EvolutionSystem,
    JetSpace,
    atom_of,
    partial,
    reduce_constraints,
    substitute_on_shell,
    total_derivative,
    total_derivative_multi,
)
from .linop import (
    IrreducibleNonlocalComposition,
    LinOp,
    MatrixOp,
    NLExpr,
    _mono_expr,
    adjoint_op,
    apply_op,
    normalize_nonlocal,
    ops_equal,
)
from .oracle import SamplingPolicy, equals_expr

__all__ = [
    "jet_atoms_of",
    "frechet_derivative",
    "symmetry_operator",
    "euler_derivative",
    "variational_gradient",
    "is_spatial_divergence",
    "helmholtz_test",
    "lie_bracket",
    "nl_total_derivative",
    "nl_linearization",
    "symmetry_residual",
    "conserved_density_check",
]


def jet_atoms_of(e: DiffExpr, dep: str) -> set[int]:
    """Jet atoms of ``dep`` that ``e`` depends on, directly or through function slots."""
    sp = e.space
    out: set[int] = set()
    for i in e.atoms():
        a = atom_of(i)
        if a[0] == "j" and a[1] == dep:
            out.add(i)
        elif a[0] == "o":
            for s in sp.functions[a[1]].slots:
                if atom_of(s)[0] == "j" and atom_of(s)[1] == dep:
                    out.add(s)
    return out


def _linearization(f: DiffExpr, dep: str) -> LinOp:
    sp = f.space
    terms = {}
    for i in jet_atoms_of(f, dep):
        d = partial(f, i)
        if not d.is_zero():
            terms[("L", atom_of(i)[2])] = d
    return LinOp(sp, terms)


def frechet_derivative(F: Sequence[DiffExpr], time: str | None = None) -> MatrixOp:
    """Linearization of a two-component expression.

    With ``time`` given, returns ``D_time * I - F'`` instead, the operator of
    the symmetry condition for the evolution system ``dep_time = F``.
    """
    sp = F[0].space
    deps = sp.deps
    rows = [[_linearization(F[i], deps[j]) for j in range(2)] for i in range(2)]
    M = MatrixOp(rows, sp)
    if time is None:
        return M
    Dt = LinOp.D(sp, {time: 1})
    return MatrixOp([[Dt, LinOp.zero(sp)], [LinOp.zero(sp), Dt]], sp) - M


def symmetry_operator(sys: EvolutionSystem) -> MatrixOp:
    return frechet_derivative(sys.flow(), time=sys.time)


def euler_derivative(H: DiffExpr, dep: str) -> DiffExpr:
    """Variational derivative sum_J (-D)^J dH/d(dep_J)."""
    sp = H.space
    out = sp.zero()
    for i in jet_atoms_of(H, dep):
        idx = atom_of(i)[2]
        term = total_derivative_multi(partial(H, i), idx)
        out = out - term if sum(idx) % 2 else out + term
    return out


def variational_gradient(H: DiffExpr) -> list[DiffExpr]:
    return [euler_derivative(H, d) for d in H.space.deps]


def is_spatial_divergence(e: DiffExpr, cs: ConstraintSystem | None = None,
                          policy: SamplingPolicy | None = None) -> bool:
    """True iff every Euler derivative of ``e`` vanishes."""
    z = e.space.zero()
    return all(equals_expr(euler_derivative(e, d), z, policy, cs) for d in e.space.deps)


def helmholtz_test(G: Sequence[DiffExpr], policy: SamplingPolicy | None = None,
                   cs: ConstraintSystem | None = None) -> bool:
    """True iff ``G`` has a self-adjoint linearization (is a variational gradient)."""
    Fp = frechet_derivative(G)
    return ops_equal(adjoint_op(Fp), Fp, policy, cs)


def nl_total_derivative(f: DiffExpr | NLExpr, c: str) -> NLExpr:
    """D_c of a nonlocal expression: D_x Dinv(r) = r, D_y Dinv(r) = Dinv(D_y r)."""
    f = NLExpr.of(f)
    sp = f.space
    out = NLExpr(total_derivative(f.local, c))
    for m, r in f.nl.items():
        me = _mono_expr(sp, m)
        out = out + NLExpr.dinv(r).scale(total_derivative(me, c))
        if c == sp.distinguished:
            out = out + NLExpr(me * r)
        else:
            out = out + NLExpr.dinv(total_derivative(r, c)).scale(me)
    return out


def _directional(f: DiffExpr, chi: Sequence[DiffExpr | NLExpr]) -> NLExpr:
    """f'[chi] = sum over jets u_J of df/du_J * D^J chi."""
    sp = f.space
    out = NLExpr(sp.zero())
    for k, dep in enumerate(sp.deps):
        for i in jet_atoms_of(f, dep):
            d = partial(f, i)
            if d.is_zero():
                continue
            g = NLExpr.of(chi[k])
            for ci, n in enumerate(atom_of(i)[2]):
                for _ in range(n):
                    g = nl_total_derivative(g, sp.coords[ci])
            out = out + g.scale(d)
    return out


def nl_linearization(F: DiffExpr | NLExpr, chi: Sequence[DiffExpr]) -> NLExpr:
    """Directional derivative of a nonlocal expression along a local characteristic."""
    F = NLExpr.of(F)
    sp = F.space
    out = _directional(F.local, chi)
    for m, r in F.nl.items():
        me = _mono_expr(sp, m)
        out = out + NLExpr.dinv(r).scale(_directional(me, chi).local)
        inner = _directional(r, chi)
        if inner.nl:
            raise IrreducibleNonlocalComposition("nested inverse derivatives in a linearization")
        out = out + NLExpr.dinv(inner.local).scale(me)
    return out


def lie_bracket(phi: Sequence[DiffExpr | NLExpr], psi: Sequence[DiffExpr | NLExpr]) -> list[NLExpr]:
    """Characteristic of the commutator: psi'[phi] - phi'[psi].

    At most one of the two may be nonlocal; the result is normalized.
    """
    def local(ch):
        return all(NLExpr.of(x).is_local() for x in ch)

    if not local(phi) and not local(psi):
        raise IrreducibleNonlocalComposition("bracket of two nonlocal characteristics")
    if not local(phi):
        return [-x for x in lie_bracket(psi, phi)]
    phi_l = [NLExpr.of(x).local for x in phi]
    out = []
    for k in range(2):
        a = nl_linearization(psi[k], phi_l)
        b = _directional(phi_l[k], psi)
        out.append(normalize_nonlocal(a - b))
    return out


def conserved_density_check(H: DiffExpr, sys: EvolutionSystem, cs: ConstraintSystem | None = None,
                            policy: SamplingPolicy | None = None) -> bool:
    """True iff D_t H reduces on shell to a spatial divergence."""
    rate = substitute_on_shell(total_derivative(H, sys.time), sys)
    if cs is not None:
        rate = reduce_constraints(rate, cs)
    return is_spatial_divergence(rate, cs, policy)


def _nl_time_derivative(f: DiffExpr | NLExpr, sys: EvolutionSystem) -> NLExpr:
    """On-shell D_t, taking D_t Dinv(r) = Dinv(D_t r)."""
    f = NLExpr.of(f)
    sp = f.space
    t = sys.time
    out = NLExpr(substitute_on_shell(total_derivative(f.local, t), sys))
    for m, r in f.nl.items():
        me = _mono_expr(sp, m)
        out = out + NLExpr.dinv(r).scale(substitute_on_shell(total_derivative(me, t), sys))
        out = out + NLExpr.dinv(substitute_on_shell(total_derivative(r, t), sys)).scale(me)
    return out


def symmetry_residual(sys: EvolutionSystem, phi: Sequence[DiffExpr | NLExpr],
                      cs: ConstraintSystem | None = None) -> list[NLExpr]:
    """D_t phi - F'[phi] on shell, for local or nonlocal characteristics.

    ``phi`` is a symmetry iff the second entry vanishes and the first is a
    function of the non-distinguished coordinates (absorbed by the
    integration function of the potential).
    """
    F = sys.flow()
    out = []
    for k in range(2):
        r = _nl_time_derivative(phi[k], sys) - _directional(F[k], phi)
        r = normalize_nonlocal(r.map(lambda e: substitute_on_shell(e, sys)))
        if cs is not None:
            r = normalize_nonlocal(r.map(lambda e: reduce_constraints(e, cs)))
        out.append(r)
    return out
