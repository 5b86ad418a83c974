"""Executable encodings of the mixed heavenly and Husain two-component systems.

Each catalog bundles the evolution system, its matrix operators, the
Lagrangian data, symmetry families, Hamiltonian densities, recursion and
Hamiltonian-transform facts, the commutator table and the hierarchy facts.
Free functions are opaque functions of fixed slots with a constraint system;
families are callables taking the free-function expressions as keywords, so
a table cell can substitute e.g. a_y b_z - a_z b_y for a parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Callable, Mapping, Sequence

from .diffexpr import (
    ConstraintSystem,
    DiffExpr,
    EvolutionSystem,
    JetSpace,
    KernelError,
    Rule,
    partial,
    total_derivative,
)
from .linop import LinOp, MatrixOp, NLExpr
from .oracle import SamplingPolicy, equals_expr

__all__ = [
    "FreeFunction",
    "SymmetryEntry",
    "HamiltonianEntry",
    "RecursionFact",
    "TransformFact",
    "HierarchyFact",
    "TableCell",
    "BracketTable",
    "LagrangianEntry",
    "Catalog",
    "build_system",
    "load_catalog",
    "instantiate_free_functions",
    "catalog_json",
    "golden_path",
    "dump_catalog",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1

Char = list  # two-component characteristic: DiffExpr or NLExpr entries
Builder = Callable[..., object]


# ---------------------------------------------------------------------------
# entry types


@dataclass(frozen=True)
class FreeFunction:
    """An opaque function with its defining rewrite rules.

    ``rules`` maps a derivative (slot label -> count) to a builder of the
    right-hand side; ``instances`` are concrete bindings, each a mapping from
    every function involved to an expression that satisfies the rules.
    """

    name: str
    slots: tuple[str, ...]
    note: str = ""


@dataclass(frozen=True)
class SymmetryEntry:
    id: str
    build: Builder
    params: tuple[str, ...] = ()
    constraints: ConstraintSystem | None = None
    instances: tuple[Mapping[str, DiffExpr], ...] = ()
    kind: str = "point"  # point | second-order
    variational: bool = True
    note: str = ""
    defaults: Mapping[str, DiffExpr] = field(default_factory=dict)

    def at(self, **bindings: DiffExpr) -> Char:
        args = dict(self.defaults)
        args.update(bindings)
        return self.build(*[args[p] for p in self.params])

    @property
    def characteristic(self) -> Char:
        return self.at()


@dataclass(frozen=True)
class HamiltonianEntry:
    id: str
    density: Builder
    operator: str  # J0 | J1 | J2
    target: Builder  # expected flow J * delta(H)
    generates: str  # symmetry id or "flow"
    params: tuple[str, ...] = ()
    constraints: ConstraintSystem | None = None
    equivalents: tuple[Builder, ...] = ()  # differ from the density by an x-divergence
    instances: tuple[Mapping[str, DiffExpr], ...] = ()
    note: str = ""
    defaults: Mapping[str, DiffExpr] = field(default_factory=dict)
    same_flow: tuple[Builder, ...] = ()  # differ by a density in the kernel of the operator

    def _args(self, bindings: Mapping[str, DiffExpr]) -> list:
        args = dict(self.defaults)
        args.update(bindings)
        return [args[p] for p in self.params]

    def value(self, **bindings: DiffExpr) -> DiffExpr:
        return self.density(*self._args(bindings))

    def flow(self, **bindings: DiffExpr) -> Char:
        return self.target(*self._args(bindings))

    def alternatives(self, **bindings: DiffExpr) -> list[DiffExpr]:
        a = self._args(bindings)
        return [f(*a) for f in self.equivalents]

    def kernel_shifts(self, **bindings: DiffExpr) -> list[DiffExpr]:
        a = self._args(bindings)
        return [f(*a) for f in self.same_flow]


@dataclass(frozen=True)
class RecursionFact:
    """R applied ``times`` times to ``source`` equals ``expected``.

    In symmetry mode the first component is compared up to a function of
    (y, z); ``primitives`` are claimed primitives for the nonlocal integrand
    of each application (None where the integral is explicit).
    """

    id: str
    source: Builder
    expected: Builder
    mode: str = "symmetry"
    times: int = 1
    primitives: tuple[Builder | None, ...] = (None,)
    constant: Builder | None = None  # expected particular C(t, y, z) of the first application
    nonlocal_output: bool = False
    constraints: ConstraintSystem | None = None
    note: str = ""


@dataclass(frozen=True)
class TransformFact:
    """adjoint(R) applied to delta(H) equals delta(H~)."""

    id: str
    source: Builder
    expected: Builder
    constraints: ConstraintSystem | None = None
    note: str = ""


@dataclass(frozen=True)
class HierarchyFact:
    """Restricted-mode identity.

    ``kind`` is one of ``flow`` (operator ``op`` applied to delta(density)),
    ``power`` (R applied ``times`` times to a characteristic) or ``commute``
    (Lie bracket of two characteristics vanishes).
    """

    id: str
    kind: str
    lhs: Builder
    expected: Builder | None = None
    op: str = ""
    times: int = 1
    primitives: tuple[Builder | None, ...] = ()
    constraints: ConstraintSystem | None = None
    note: str = ""


@dataclass(frozen=True)
class TableCell:
    row: str
    col: str
    expected: Builder  # callable(row_fn, col_fn) -> characteristic or None for zero
    label: str


@dataclass(frozen=True)
class BracketTable:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    row_bindings: Mapping[str, Mapping[str, DiffExpr]]
    col_bindings: Mapping[str, Mapping[str, DiffExpr]]
    cells: tuple[TableCell, ...]
    constraints: ConstraintSystem | None = None


@dataclass(frozen=True)
class LagrangianEntry:
    density: DiffExpr
    momenta: tuple[DiffExpr, ...]
    legendre_density: DiffExpr
    form: object  # symplectic two-form density (GradedExpr)


@dataclass
class Catalog:
    system: EvolutionSystem
    operators: dict[str, MatrixOp]
    lagrangian: LagrangianEntry
    functions: dict[str, FreeFunction]
    constraints: ConstraintSystem
    symmetries: dict[str, SymmetryEntry]
    hamiltonians: dict[str, HamiltonianEntry]
    recursion: dict[str, RecursionFact]
    transforms: dict[str, TransformFact]
    table: BracketTable
    hierarchy: dict[str, HierarchyFact]
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def space(self) -> JetSpace:
        return self.system.space

    def ids(self) -> list[tuple[str, str, str]]:
        """(kind, id, note) for every entry."""
        out = [("operator", k, self.notes.get(k, "")) for k in self.operators]
        out.append(("lagrangian", "L", "Lagrangian, momenta and Legendre density"))
        out += [("symmetry", k, v.note) for k, v in self.symmetries.items()]
        out += [("hamiltonian", k, v.note) for k, v in self.hamiltonians.items()]
        out += [("recursion", k, v.note) for k, v in self.recursion.items()]
        out += [("transform", k, v.note) for k, v in self.transforms.items()]
        out += [("table", f"{c.row}|{c.col}", c.label) for c in self.table.cells]
        out += [("hierarchy", k, v.note) for k, v in self.hierarchy.items()]
        return out


# ---------------------------------------------------------------------------
# helpers


class _Ctx:
    """Shorthands over one jet space."""

    def __init__(self, sp: JetSpace):
        self.sp = sp
        self.e = sp.eps_expr()
        self.half = sp.const(Fraction(1, 2))

    def c(self, name: str) -> DiffExpr:
        return self.sp.coord(name)

    def j(self, name: str) -> DiffExpr:
        return self.sp.j(name)

    def var(self, name: str) -> DiffExpr:
        return self.c(name) if name in self.sp.coords else self.j(name)

    def P(self, f: DiffExpr, *names: str) -> DiffExpr:
        """Partial derivatives in the named coordinates or jet variables."""
        for n in names:
            f = partial(f, self.var(n))
        return f

    def D(self, f: DiffExpr, coords: str) -> DiffExpr:
        for ch in coords:
            f = total_derivative(f, ch)
        return f

    def declare(self, name: str, slots: Sequence[str]) -> FreeFunction:
        self.sp.declare(name, [self.var(s) for s in slots])
        return FreeFunction(name, tuple(slots))

    def fn(self, name: str, *derivs: str) -> DiffExpr:
        counts: dict[str, int] = {}
        for d in derivs:
            counts[d] = counts.get(d, 0) + 1
        return self.sp.fn(name, counts)

    def rule(self, name: str, lead: Sequence[str], rhs: DiffExpr) -> Rule:
        d = self.sp.functions[name]
        v = [0] * len(d.slots)
        for lab in lead:
            v[self.sp._slot_index(d, lab)] += 1
        return Rule(name, tuple(v), rhs)

    # operator shorthands
    def Dop(self, coords: str) -> LinOp:
        return LinOp.D(self.sp, coords)

    def I(self) -> LinOp:
        return LinOp.Dinv(self.sp)

    def m(self, f) -> LinOp:
        return LinOp.mult(f, self.sp)

    def Z(self) -> LinOp:
        return LinOp.zero(self.sp)


def _cs(sp: JetSpace, rules: Sequence[Rule], name: str) -> ConstraintSystem:
    return ConstraintSystem(sp, rules, name=name)


def _scale(k, ch: Char) -> Char:
    return [k * x for x in ch]


def _add(*chs: Char) -> Char:
    out = list(chs[0])
    for ch in chs[1:]:
        out = [a + b for a, b in zip(out, ch)]
    return out


# ---------------------------------------------------------------------------
# systems


def _eps_choice(eps) -> int | None:
    if eps in (None, "symbolic", "sym"):
        return None
    if eps in (1, "+1", "plus", "+"):
        return 1
    if eps in (-1, "-1", "minus", "-"):
        return -1
    raise KernelError(f"unknown eps choice {eps!r}")


def build_system(name: str, eps=None) -> EvolutionSystem:
    """The two-component evolution system ``mixed`` or ``husain``.

    ``eps`` is ``+1``, ``-1`` or ``None`` (symbolic).
    """
    e = _eps_choice(eps)
    if name == "mixed":
        sp = JetSpace(["t", "x", "y", "z"], ["u", "v"], "x", eps=e, name="mixed")
        J = sp.j
        Q = (sp.eps_expr() + J("v_x") ** 2 + J("u_xy") * J("v_z") - J("u_xz") * J("v_y")) / J("u_xx")
        return EvolutionSystem("mixed", sp, {"u": J("v"), "v": Q})
    if name == "husain":
        sp = JetSpace(["t", "p", "y", "z"], ["v", "q"], "p", eps=e, name="husain")
        J = sp.j
        qt = J("q_z") * J("v_py") - J("q_y") * J("v_pz") - sp.eps_expr() * J("v_pp")
        return EvolutionSystem("husain", sp, {"v": J("q"), "q": qt})
    raise KernelError(f"unknown system {name!r}")


def load_catalog(sys: EvolutionSystem) -> Catalog:
    if sys.name == "mixed":
        return _mixed(sys)
    if sys.name == "husain":
        return _husain(sys)
    raise KernelError(f"no catalog for {sys.name!r}")


# ---------------------------------------------------------------------------
# mixed heavenly system


def _mixed(sys: EvolutionSystem) -> Catalog:
    sp = sys.space
    X = _Ctx(sp)
    e, h = X.e, X.half
    t, x, y, z = (X.c(n) for n in "txyz")
    u, v = X.j("u"), X.j("v")
    ux, uy, uz = X.j("u_x"), X.j("u_y"), X.j("u_z")
    uxx, uxy, uxz = X.j("u_xx"), X.j("u_xy"), X.j("u_xz")
    vx, vy, vz, vxx = X.j("v_x"), X.j("v_y"), X.j("v_z"), X.j("v_xx")
    Q = sys.rhs["v"]
    flow = [v, Q]
    P = X.P

    # -- free functions --------------------------------------------------
    funcs: dict[str, FreeFunction] = {}
    for n in ("a", "b", "f", "k"):
        funcs[n] = X.declare(n, ["y", "z"])
    for n in ("c", "d"):
        funcs[n] = X.declare(n, ["x", "v"])
    for n in ("a2", "b2"):
        funcs[n] = X.declare(n, ["t", "x", "v", "u_x"])
    funcs["ap"] = X.declare("ap", ["t", "x", "v", "u_x"])  # potential of a2
    funcs["A2"] = X.declare("A2", ["t", "x", "v", "u_x"])  # Hamiltonian potential, A2_v = a2
    funcs["B2"] = X.declare("B2", ["t", "x", "v", "u_x"])  # B2_v = ap
    funcs["gam"] = X.declare("gam", ["t"])
    funcs["cp"] = X.declare("cp", ["x", "v"])  # cp_v = c_x, cp_x = -eps c_v
    funcs["cd"] = X.declare("cd", ["x", "v"])  # cd_v = c
    funcs["cg"] = X.declare("cg", ["x", "v"])  # cg_v = cp
    fn = X.fn

    def harmonic(n: str) -> list[Rule]:
        return [X.rule(n, ["x", "x"], -e * fn(n, "v", "v"))]

    def second_order(n: str) -> list[Rule]:
        return [
            X.rule(n, ["t", "x"], e * fn(n, "v", "u_x")),
            X.rule(n, ["t", "v"], -fn(n, "x", "u_x")),
            X.rule(n, ["x", "x"], -e * fn(n, "v", "v")),
            X.rule(n, ["t", "t"], -e * fn(n, "u_x", "u_x")),
        ]

    cs_c = _cs(sp, harmonic("c"), "c_eq")
    cs_d = _cs(sp, harmonic("d"), "d_eq")
    cs_a2 = _cs(sp, second_order("a2"), "a2_eq")
    cs_b2 = _cs(sp, second_order("b2"), "b2_eq")
    cs_ap = _cs(sp, [
        X.rule("ap", ["t"], -e * fn("a2", "u_x")),
        X.rule("ap", ["x"], e * fn("a2", "v")),
        X.rule("ap", ["v"], -fn("a2", "x")),
        X.rule("ap", ["u_x"], fn("a2", "t")),
    ], "ap_potential") + cs_a2
    # A_v = a and A_x = x gam - b, with b the potential of a
    cs_A2 = _cs(sp, [X.rule("A2", ["v"], fn("a2")), X.rule("A2", ["x"], x * fn("gam") - fn("ap"))],
                "A2_potential") + cs_ap
    # B_v = b and B_x = x gam + eps a
    cs_B2 = _cs(sp, [X.rule("B2", ["v"], fn("ap")), X.rule("B2", ["x"], x * fn("gam") + e * fn("a2"))],
                "B2_potential") + cs_ap
    cs_cp = _cs(sp, [
        X.rule("cp", ["v"], fn("c", "x")),
        X.rule("cp", ["x"], -e * fn("c", "v")),
    ], "cp_potential") + cs_c
    cs_cd = _cs(sp, [X.rule("cd", ["v"], fn("c")), X.rule("cd", ["x"], fn("cp"))], "cd_potential") + cs_cp
    cs_cg = _cs(sp, [X.rule("cg", ["v"], fn("cp"))] + harmonic("cg"), "cg_potential") + cs_cp
    everything = cs_A2 + cs_B2 + cs_cd + cs_cg + cs_b2 + cs_d

    a, b, f, k = fn("a"), fn("b"), fn("f"), fn("k")
    c, d = fn("c"), fn("d")
    a2, b2 = fn("a2"), fn("b2")

    # concrete bindings (checked by instantiate_free_functions)
    yz_inst = ({"a": y * z}, {"a": y ** 2 - 3 * z + y * z ** 3})
    c_inst = ({"c": x * v}, {"c": x ** 2 - e * v ** 2})
    a2_inst = ({"a2": v}, {"a2": x * ux - t * v}, {"a2": t * ux + x * v})

    # -- operators ----------------------------------------------------------
    D, I, m, Z = X.Dop, X.I, X.m, X.Z
    iu = 1 / uxx
    A_op = MatrixOp([
        [D("t"), m(-1)],
        [m(-P(Q, "u_xx")) @ D("xx") - m(P(Q, "u_xy")) @ D("xy") - m(P(Q, "u_xz")) @ D("xz"),
         D("t") - m(P(Q, "v_x")) @ D("x") - m(P(Q, "v_y")) @ D("y") - m(P(Q, "v_z")) @ D("z")],
    ], sp)
    R = MatrixOp([
        [I() @ (m(-vx) @ D("x") + m(uxz) @ D("y") - m(uxy) @ D("z")), I() @ m(uxx)],
        [m(-Q) @ D("x") + m(vz) @ D("y") - m(vy) @ D("z"), m(vx)],
    ], sp)
    K = MatrixOp([
        [D("x") @ m(vx) + m(vx) @ D("x") + h * (D("z") @ m(uxy) + m(uxy) @ D("z"))
         - h * (D("y") @ m(uxz) + m(uxz) @ D("y")), m(-uxx)],
        [m(uxx), Z()],
    ], sp)

    def sym_pair(f1: DiffExpr, c_: str, f2: DiffExpr) -> LinOp:
        return m(f1) @ D(c_) @ m(f2) + m(f2) @ D(c_) @ m(f1)

    J022 = (sym_pair(vx * iu, "x", iu) - h * sym_pair(uxz * iu, "y", iu) + h * sym_pair(uxy * iu, "z", iu))
    J0 = MatrixOp([[Z(), m(iu)], [m(-iu), J022]], sp)
    Qm = Q - 2 * vx ** 2 / uxx
    J122 = h * (-sym_pair(Qm, "x", iu) + sym_pair(vz, "y", iu) - sym_pair(vy, "z", iu)
                - sym_pair(vx * iu, "y", uxz * iu) + sym_pair(vx * iu, "z", uxy * iu))
    J1 = MatrixOp([[-I(), m(vx * iu)], [m(-vx * iu), J122]], sp)
    W = vy * uxz - vz * uxy - e
    c1 = vz * uxx - h * vx * uxz
    c2 = vy * uxx - h * vx * uxy
    J2 = MatrixOp([
        [h * I() @ (m(uxy) @ D("z") + D("z") @ m(uxy) - m(uxz) @ D("y") - D("y") @ m(uxz)) @ I(),
         I() @ (D("y") @ m(vz) - D("z") @ m(vy)) + m(W * iu)],
        [-((m(vz) @ D("y") - m(vy) @ D("z")) @ I() + m(W * iu)),
         m(vx * iu * iu) @ (m(W) @ D("x") + m(c1) @ D("y") - m(c2) @ D("z"))
         + (D("x") @ m(W) + D("y") @ m(c1) - D("z") @ m(c2)) @ m(vx * iu * iu)],
    ], sp)
    Rdag = MatrixOp([
        [(-D("x") @ m(vx) + m(uxz) @ D("y") - m(uxy) @ D("z")) @ I(),
         D("x") @ m(Q) - m(vz) @ D("y") + m(vy) @ D("z")],
        [-(m(uxx) @ I()), m(vx)],
    ], sp)
    # off-shell commutator [R, A]; E1, E2 are the residuals of the two equations
    E1 = X.j("u_t") - v
    E2 = X.j("v_t") - Q
    Dx, Dy, Dz = (lambda g: X.D(g, "x")), (lambda g: X.D(g, "y")), (lambda g: X.D(g, "z"))
    commut = MatrixOp([
        [m(Dx(E2)) - I() @ (m(Dx(Dx(E2))) + m(Dx(Dz(E1))) @ D("y") - m(Dx(Dy(E1))) @ D("z")),
         -(I() @ m(Dx(Dx(E1))))],
        [m(iu * (-Q * Dx(Dx(E1)) + vz * Dx(Dy(E1)) - vy * Dx(Dz(E1)) + 2 * vx * Dx(E2)
                 - uxz * Dy(E2) + uxy * Dz(E2))) @ D("x") - m(Dz(E2)) @ D("y") + m(Dy(E2)) @ D("z"),
         m(-Dx(E2))],
    ], sp)
    ops = {"A": A_op, "R": R, "K": K, "J0": J0, "J1": J1, "J2": J2, "Rdag": Rdag, "commut": commut}

    # -- Lagrangian ---------------------------------------------------------------
    ut = X.j("u_t")
    third = sp.const(Fraction(1, 3))
    L = (v * ut - h * v ** 2) * uxx + third * ut * (uy * uxz - uz * uxy) + e * u
    pi_u = v * uxx + third * (uy * uxz - uz * uxy)
    from .graded import GradedExpr, gen

    def dg(dep: str, **cnt: int):
        return gen("d" + dep, sp.idx(cnt))

    omega = (GradedExpr.of(sp, [dg("u"), dg("u", x=1)], vx) - GradedExpr.of(sp, [dg("u"), dg("v")], uxx)
             + GradedExpr.of(sp, [dg("u"), dg("u", z=1)], h * uxy) - GradedExpr.of(sp, [dg("u"), dg("u", y=1)], h * uxz))
    H1 = h * v ** 2 * uxx - e * u
    lag = LagrangianEntry(L, (pi_u, sp.zero()), H1, omega)

    # -- symmetries ---------------------------------------------------------------
    def X4(a_):
        return [P(a_, "z") * uy - P(a_, "y") * uz, P(a_, "z") * vy - P(a_, "y") * vz]

    def Xc(c_):
        return [c_, P(c_, "v") * Q]

    def Xa(a_):
        return [a_, P(a_, "t") + P(a_, "v") * Q + P(a_, "u_x") * vx]

    phi5 = t * v - u + h * (y * uy + z * uz)
    psi5 = t * Q + h * (y * vy + z * vz)
    S = {}
    S["X1"] = SymmetryEntry("X1", lambda: [t, sp.one()], note="shift u by t, v by 1")
    S["X2"] = SymmetryEntry("X2", lambda: [ux, vx], note="translation in x")
    S["X3"] = SymmetryEntry("X3", lambda a: [a, sp.zero()], ("a",), None, yz_inst,
                            note="u shifted by a(y,z)", defaults={"a": a})
    S["X4"] = SymmetryEntry("X4", X4, ("a",), None, yz_inst,
                            note="area-preserving change of (y,z)", defaults={"a": a})
    S["X5"] = SymmetryEntry("X5", lambda: [phi5, psi5], variational=False, note="scaling")
    S["X6"] = SymmetryEntry("X6", lambda: [x * ux - t * v, x * vx - t * Q - v], note="scaling of t, x, v")
    S["Xc"] = SymmetryEntry("Xc", Xc, ("c",), cs_c, c_inst, note="c(x,v) with c_xx + eps c_vv = 0",
                            defaults={"c": c})
    S["Xa"] = SymmetryEntry("Xa", Xa, ("a2",), cs_a2, a2_inst, kind="second-order",
                            note="second-order family a(t,x,v,u_x)", defaults={"a2": a2})

    # -- Hamiltonians ---------------------------------------------------------------
    def H3(a_):
        return a_ * v * uxx + h * u * (P(a_, "z") * uxy - P(a_, "y") * uxz)

    def H4(a_):
        return (P(a_, "z") * uy - P(a_, "y") * uz) * (v * uxx + third * (uy * uxz - uz * uxy))

    A6 = h * t * (e * x ** 2 - v ** 2) + x * ux * v
    H0 = -x * v * uxx
    Hm1 = u - h * e * v ** 2 * uxx
    gam = fn("gam")
    Hs = {}
    Hs["H1"] = HamiltonianEntry("H1", lambda: H1, "J0", lambda: flow, "flow",
                                equivalents=(lambda: h * (v ** 2 - e * x ** 2) * uxx,),
                                note="Hamiltonian of the system under J0")
    Hs["H0"] = HamiltonianEntry("H0", lambda: H0, "J1", lambda: flow, "flow",
                                same_flow=(lambda: (sp.const(3) - x) * v * uxx,),
                                note="Hamiltonian of the system under J1")
    Hs["Hm1"] = HamiltonianEntry("Hm1", lambda: Hm1, "J2", lambda: flow, "flow",
                                 note="Hamiltonian of the system under J2")
    Hs["H^1"] = HamiltonianEntry("H^1", lambda: (t * v - x * ux) * uxx, "J0", S["X1"].build, "X1",
                                 equivalents=(lambda: (t * v - h * u) * uxx,), note="generates X1")
    Hs["H^2"] = HamiltonianEntry("H^2", lambda: v * ux * uxx, "J0", S["X2"].build, "X2", note="generates X2")
    Hs["H^3"] = HamiltonianEntry("H^3", H3, "J0", S["X3"].build, "X3", ("a",), None, (), yz_inst,
                                 note="generates X3", defaults={"a": a})
    Hs["H^4"] = HamiltonianEntry("H^4", H4, "J0", X4, "X4", ("a",), None, (), yz_inst,
                                 note="generates X4", defaults={"a": a})
    Hs["H^6"] = HamiltonianEntry("H^6", lambda: A6 * uxx, "J0", S["X6"].build, "X6", note="generates X6")
    Hs["H^c"] = HamiltonianEntry("H^c", lambda cd: cd * uxx, "J0", lambda cd: Xc(P(cd, "v")), "Xc",
                                 ("cd",), cs_cd,
                                 instances=({"cd": h * x * v ** 2 - e * x ** 3 / 6, "c": x * v,
                                             "cp": h * v ** 2 - h * e * x ** 2},
                                            {"cd": x ** 2 * v - e * v ** 3 / 3, "c": x ** 2 - e * v ** 2,
                                             "cp": 2 * x * v}),
                                 note="d(x,v) u_xx with d_v = c", defaults={"cd": fn("cd")})
    Hs["H^a"] = HamiltonianEntry("H^a", lambda A2, gam: A2 * uxx - gam * u, "J0",
                                 lambda A2, gam: Xa(P(A2, "v")), "Xa", ("A2", "gam"), cs_A2,
                                 instances=({"A2": h * v ** 2, "gam": e, "a2": v, "ap": e * x},
                                            {"A2": A6, "gam": sp.zero(), "a2": x * ux - t * v,
                                             "ap": -e * t * x - ux * v},
                                            {"A2": t * v - x * ux, "gam": sp.zero(),
                                             "a2": t, "ap": ux}),
                                 note="A(t,x,v,u_x) u_xx - gamma(t) u with A_v = a",
                                 defaults={"A2": fn("A2"), "gam": gam})

    # -- recursion facts (symmetry mode) -------------------------------------------
    p4 = X4(a)
    p4y, p4z, p4x = X.D(p4[0], "y"), X.D(p4[0], "z"), X.D(p4[0], "x")
    ay, az = P(a, "y"), P(a, "z")
    tilde4 = [
        NLExpr.dinv(uxx * p4[1] + uxz * (ay * vx + p4y) - uxy * (az * vx + p4z)),
        NLExpr.of(vz * (p4y - ay * vx) - vy * (p4z - az * vx) - Q * p4x),
    ]
    w = y * uy + z * uz - 2 * u
    wx, wy, wz = X.D(w, "x"), X.D(w, "y"), X.D(w, "z")
    tilde5 = [
        NLExpr.dinv(h * (uxx * (y * vy + z * vz) - vx * wx + uxz * wy - uxy * wz)) + e * t * x,
        NLExpr.of(h * (vx * (y * vy + z * vz) - Q * wx + vz * wy - vy * wz)),
    ]
    ap = fn("ap")
    Rf = {}
    Rf["X1"] = RecursionFact("X1", lambda: S["X1"].characteristic, lambda: S["X2"].characteristic,
                             constant=lambda: sp.zero(), note="R X1 = X2 + X3[c]")
    Rf["X2"] = RecursionFact("X2", lambda: S["X2"].characteristic, lambda: _scale(-e, S["X1"].characteristic),
                             constant=lambda: -e * t, note="R X2 = -eps X1 + X3[c]")
    Rf["X3"] = RecursionFact("X3", lambda: S["X3"].characteristic, lambda: _scale(-1, X4(a)),
                             note="R X3[a] = X3[c] - X4[a]")
    Rf["X4"] = RecursionFact("X4", lambda: S["X4"].characteristic, lambda: tilde4, nonlocal_output=True,
                             note="R X4[a]: first nonlocal symmetry")
    Rf["X5"] = RecursionFact("X5", lambda: S["X5"].characteristic, lambda: tilde5, nonlocal_output=True,
                             note="R X5: nonlocal symmetry")
    Rf["X6"] = RecursionFact("X6", lambda: S["X6"].characteristic,
                             lambda: [-(ux * v + e * x * t), -(ux * Q + v * vx + e * x)],
                             note="R X6 = -(u_x v + eps x t, u_x Q + v v_x + eps x) + X3[c]")
    Rf["Xc"] = RecursionFact("Xc", lambda: S["Xc"].characteristic, lambda: _scale(-1, Xc(fn("cp"))),
                             primitives=(lambda: -fn("cp"),), constraints=cs_cp,
                             note="R Xc[c] = -Xc[f] with f_v = c_x, f_x = -eps c_v")
    Rf["Xa"] = RecursionFact("Xa", lambda: S["Xa"].characteristic, lambda: Xa(ap),
                             primitives=(lambda: ap,), constraints=cs_ap,
                             note="R Xa[a] = Xa[b] + X3[c] with the potential b of a")
    Rf["Xa2"] = RecursionFact("Xa2", lambda: Xa(ap), lambda: _scale(-e, Xa(a2)),
                              primitives=(lambda: -e * a2,), constraints=cs_ap,
                              note="R Xa[b] = -eps Xa[a] + X3[d]")
    Rf["flow"] = RecursionFact("flow", lambda: flow, lambda: [e * x, sp.zero()],
                               note="R (v, Q) = (eps (x - C) + c, 0)")

    # -- Hamiltonian transforms (adjoint(R) delta H = delta H~, restricted) ----------------
    Bp = fn("B2")
    T = {}
    T["H^1"] = TransformFact("H^1", Hs["H^1"].value, Hs["H^2"].value, note="H^1 -> H^2 + H^3[c]")
    T["H^2"] = TransformFact("H^2", Hs["H^2"].value, lambda: -e * (Hs["H^1"].value() - t * v * uxx),
                             note="H^2 -> -eps H^1 + H^3[c] with c = eps t")
    T["H^3"] = TransformFact("H^3", Hs["H^3"].value, lambda: -H4(a), note="H^3[a] -> -H^4[a] + H^3[c]")
    T["H^c"] = TransformFact("H^c", lambda: fn("cd") * uxx, lambda: -fn("cg") * uxx, cs_cd + cs_cg,
                             note="H^c -> -H^g + H^3[a] with g_v = f")
    T["H^a"] = TransformFact("H^a", lambda: fn("A2") * uxx - gam * u, lambda: Bp * uxx - gam * u,
                             cs_A2 + cs_B2, note="H^a -> H^b + H^3[c] with B_v = b")
    T["H^6"] = TransformFact("H^6", Hs["H^6"].value,
                             lambda: (h * (e * x ** 2 - v ** 2) * ux - e * x * t * v) * uxx,
                             note="H^6 -> A~6 u_xx + H^3[c]")
    T["H1"] = TransformFact("H1", lambda: H1, lambda: -e * H0, note="H1 -> -eps H0 + H^3[c]")
    T["H1~"] = TransformFact("H1~", lambda: -e * H0, lambda: h * (x ** 2 - e * v ** 2) * uxx,
                             note="second application: -eps H1")
    T["Hm1"] = TransformFact("Hm1", lambda: Hm1, lambda: H0, note="H_{-1} -> H0")

    # -- commutator table ---------------------------------------------------------------
    def jac(p, q, c1_, c2_):
        return P(p, c1_) * P(q, c2_) - P(p, c2_) * P(q, c1_)

    def hat(a_):
        return y * P(a_, "y") + z * P(a_, "z") - 2 * a_

    def tl(a_):
        return t * P(a_, "t") - x * P(a_, "x") + ux * P(a_, "u_x") - v * P(a_, "v")

    def prime(a_):
        return t * P(a_, "t") + ux * P(a_, "u_x") - a_

    def angle(a_, c_):
        return P(a_, "t") * P(c_, "v") - P(a_, "u_x") * P(c_, "x")

    def dbl(a_, b_):
        return jac(a_, b_, "t", "v") + jac(a_, b_, "x", "u_x")

    X1c, X2c, X5c, X6c = (S[n].characteristic for n in ("X1", "X2", "X5", "X6"))
    X3 = S["X3"].build
    rows = ("X1", "X2", "X3", "X4", "X5", "X6", "Xc", "Xa")
    cols = rows
    rb = {"X3": {"a": a}, "X4": {"a": a}, "Xc": {"c": d}, "Xa": {"a2": a2}}
    cb = {"X3": {"a": f}, "X4": {"a": b}, "Xc": {"c": c}, "Xa": {"a2": b2}}
    ZERO = None
    # expected[row][col] as callables of (row_param, col_param)
    E = {
        "X1": [ZERO, ZERO, ZERO, ZERO, ZERO, lambda r, q: _scale(-1, X1c), lambda r, q: Xc(P(q, "v")),
               lambda r, q: Xa(P(q, "v"))],
        "X2": [ZERO, ZERO, ZERO, ZERO, ZERO, lambda r, q: _scale(-1, X2c), lambda r, q: _scale(-1, Xc(P(q, "x"))),
               lambda r, q: _scale(-1, Xa(P(q, "x")))],
        "X3": [ZERO, ZERO, ZERO, lambda r, q: X3(jac(r, q, "y", "z")), lambda r, q: _scale(h, X3(hat(r))),
               ZERO, ZERO, ZERO],
        "X4": [ZERO, ZERO, lambda r, q: _scale(-1, X3(jac(q, r, "y", "z"))), lambda r, q: X4(jac(r, q, "y", "z")),
               lambda r, q: _scale(h, X4(hat(r))), ZERO, ZERO, ZERO],
        "X5": [ZERO, ZERO, lambda r, q: _scale(-h, X3(hat(q))), lambda r, q: _scale(-h, X4(hat(q))), ZERO, ZERO,
               lambda r, q: Xc(q), lambda r, q: _scale(-1, Xa(prime(q)))],
        "X6": [lambda r, q: X1c, lambda r, q: X2c, ZERO, ZERO, ZERO, ZERO, lambda r, q: Xc(tl(q)),
               lambda r, q: Xa(tl(q))],
        "Xc": [lambda r, q: _scale(-1, Xc(P(r, "v"))), lambda r, q: Xc(P(r, "x")), ZERO, ZERO,
               lambda r, q: _scale(-1, Xc(r)), lambda r, q: _scale(-1, Xc(tl(r))), ZERO,
               lambda r, q: _scale(-1, Xa(angle(q, r)))],
        "Xa": [lambda r, q: _scale(-1, Xa(P(r, "v"))), lambda r, q: Xa(P(r, "x")), ZERO, ZERO,
               lambda r, q: Xa(prime(r)), lambda r, q: _scale(-1, Xa(tl(r))), lambda r, q: Xa(angle(r, q)),
               lambda r, q: Xa(dbl(r, q))],
    }
    labels = {
        "X1": ["0", "0", "0", "0", "0", "-X1", "Xc[c_v]", "Xa[b_v]"],
        "X2": ["0", "0", "0", "0", "0", "-X2", "-Xc[c_x]", "-Xa[b_x]"],
        "X3": ["0", "0", "0", "X3[d(a,b)/d(y,z)]", "1/2 X3[a^]", "0", "0", "0"],
        "X4": ["0", "0", "-X3[d(f,a)/d(y,z)]", "X4[d(a,b)/d(y,z)]", "1/2 X4[a^]", "0", "0", "0"],
        "X5": ["0", "0", "-1/2 X3[f^]", "-1/2 X4[b^]", "0", "0", "Xc[c]", "-Xa[b']"],
        "X6": ["X1", "X2", "0", "0", "0", "0", "Xc[c~]", "Xa[b~]"],
        "Xc": ["-Xc[d_v]", "Xc[d_x]", "0", "0", "-Xc[d]", "-Xc[d~]", "0", "-Xa[<b,d>]"],
        "Xa": ["-Xa[a_v]", "Xa[a_x]", "0", "0", "Xa[a']", "-Xa[a~]", "Xa[<a,c>]", "Xa[<<a,b>>]"],
    }
    cells = tuple(TableCell(r, q, E[r][j], labels[r][j]) for r in rows for j, q in enumerate(cols))
    table = BracketTable(rows, cols, rb, cb, cells, cs_c + cs_d + cs_a2 + cs_b2)

    # -- hierarchy (restricted mode) -----------------------------------------------------------
    Hy = {}
    Hy["J1H1"] = HierarchyFact("J1H1", "flow", lambda: H1, lambda: [e * x, sp.zero()], op="J1",
                               note="J1 delta H1 = eps (x - C, 0)")
    Hy["R+"] = HierarchyFact("R+", "flow", lambda: -e * H0, lambda: _scale(-e, flow), op="J1",
                             note="J1 delta H1~ = -eps (v, Q)")
    Hy["R2flow"] = HierarchyFact("R2flow", "power", lambda: flow, lambda: _scale(-e, flow), times=2,
                                 note="R^2 (v, Q) = -eps (v, Q)")
    Hy["J0H0"] = HierarchyFact("J0H0", "flow", lambda: H0, lambda: [-x, sp.zero()], op="J0",
                               note="J0 delta H0 = (C - x, 0)")
    Hy["RH1"] = HierarchyFact("RH1", "flow", Hs["H^1"].value, lambda: X2c, op="J1", note="J1 delta H^1 = X2")
    Hy["RH2"] = HierarchyFact("RH2", "flow", Hs["H^2"].value, lambda: [sp.zero(), -e], op="J1",
                              note="J1 delta H^2 = -eps X1 + X3[eps t]")
    Hy["RH3"] = HierarchyFact("RH3", "flow", Hs["H^3"].value, lambda: _scale(-1, X4(a)), op="J1",
                              note="J1 delta H^3[a] = -X4[a]")
    Hy["high"] = HierarchyFact("high", "flow", Hs["H^4"].value, lambda: tilde4, op="J1",
                               note="J1 delta H^4[a] = R X4[a], first nonlocal flow")
    Hy["J0Ha"] = HierarchyFact("J0Ha", "flow", lambda: fn("A2") * uxx - gam * u, lambda: Xa(a2), op="J0",
                               constraints=cs_A2, note="J0 delta H^a = Xa[a]")
    Hy["RHa"] = HierarchyFact("RHa", "flow", lambda: fn("A2") * uxx - gam * u, lambda: Xa(ap), op="J1",
                              constraints=cs_A2 + cs_ap, note="J1 delta H^a = Xa[b]")
    Hy["R2Ha"] = HierarchyFact("R2Ha", "power", lambda: Xa(a2), lambda: _scale(-e, Xa(a2)), times=2,
                               primitives=(lambda: ap, lambda: -e * a2), constraints=cs_ap,
                               note="R^2 Xa[a] = -eps Xa[a]")
    Hy["commute4"] = HierarchyFact("commute4", "commute", lambda: X4(a), lambda: tilde4,
                                   note="[X4[a], R X4[a]] = 0")

    notes = {
        "A": "D_t - F' for the flow F = (v, Q)",
        "R": "recursion operator",
        "K": "symplectic operator",
        "J0": "first Hamiltonian operator, inverse of K",
        "J1": "second Hamiltonian operator R J0",
        "J2": "third Hamiltonian operator R J1",
        "Rdag": "adjoint recursion operator",
        "commut": "off-shell commutator R A - A R",
    }
    return Catalog(sys, ops, lag, funcs, everything, S, Hs, Rf, T, table, Hy, notes)


# ---------------------------------------------------------------------------
# Husain system


def _husain(sys: EvolutionSystem) -> Catalog:
    sp = sys.space
    X = _Ctx(sp)
    e, h = X.e, X.half
    t, p, y, z = (X.c(n) for n in "tpyz")
    v, q = X.j("v"), X.j("q")
    vp, vy, vz = X.j("v_p"), X.j("v_y"), X.j("v_z")
    vpp, vpy, vpz = X.j("v_pp"), X.j("v_py"), X.j("v_pz")
    qp, qy, qz = X.j("q_p"), X.j("q_y"), X.j("q_z")
    qt = sys.rhs["q"]
    flow = [q, qt]
    P = X.P

    funcs: dict[str, FreeFunction] = {}
    for n in ("a", "b", "f"):
        funcs[n] = X.declare(n, ["y", "z"])
    for n in ("c", "d"):
        funcs[n] = X.declare(n, ["t", "p"])
    for n in ("f2", "g2"):
        funcs[n] = X.declare(n, ["t", "p", "q", "v_p"])
    funcs["fp"] = X.declare("fp", ["t", "p", "q", "v_p"])  # potential g of f2
    funcs["F2"] = X.declare("F2", ["t", "p", "q", "v_p"])  # F2_q = f2
    funcs["G2"] = X.declare("G2", ["t", "p", "q", "v_p"])  # G2_q = fp
    funcs["cp"] = X.declare("cp", ["t", "p"])  # cp_p = c_t, cp_t = -eps c_p
    fn = X.fn

    def wave(n: str) -> list[Rule]:
        return [X.rule(n, ["t", "t"], -e * fn(n, "p", "p"))]

    def second_order(n: str) -> list[Rule]:
        return [
            X.rule(n, ["t", "v_p"], -e * fn(n, "p", "q")),
            X.rule(n, ["t", "q"], fn(n, "p", "v_p")),
            X.rule(n, ["q", "q"], -e * fn(n, "v_p", "v_p")),
            X.rule(n, ["t", "t"], -e * fn(n, "p", "p")),
        ]

    cs_c = _cs(sp, wave("c"), "c_eq")
    cs_d = _cs(sp, wave("d"), "d_eq")
    cs_f2 = _cs(sp, second_order("f2"), "f2_eq")
    cs_g2 = _cs(sp, second_order("g2"), "g2_eq")
    cs_fp = _cs(sp, [
        X.rule("fp", ["t"], -e * fn("f2", "p")),
        X.rule("fp", ["p"], fn("f2", "t")),
        X.rule("fp", ["q"], fn("f2", "v_p")),
        X.rule("fp", ["v_p"], -e * fn("f2", "q")),
    ], "fp_potential") + cs_f2
    # F_q = f and F_{v_p} = g, with g the potential of f
    cs_F2 = _cs(sp, [X.rule("F2", ["q"], fn("f2")), X.rule("F2", ["v_p"], fn("fp"))], "F2_potential") + cs_fp
    # G_q = g and G_{v_p} = -eps f
    cs_G2 = _cs(sp, [X.rule("G2", ["q"], fn("fp")), X.rule("G2", ["v_p"], -e * fn("f2"))],
                "G2_potential") + cs_fp
    cs_cp = _cs(sp, [X.rule("cp", ["p"], fn("c", "t")), X.rule("cp", ["t"], -e * fn("c", "p"))],
                "cp_potential") + cs_c
    everything = cs_F2 + cs_G2 + cs_cp + cs_g2 + cs_d

    a, b, f = fn("a"), fn("b"), fn("f")
    c, d = fn("c"), fn("d")
    f2, g2, fpot = fn("f2"), fn("g2"), fn("fp")

    yz_inst = ({"a": y * z}, {"a": y ** 2 - 3 * z + y * z ** 3})
    c_inst = ({"c": t * p}, {"c": t ** 2 - e * p ** 2})
    f2_inst = ({"f2": q}, {"f2": p * q - e * t * vp}, {"f2": vp})

    D, I, m, Z = X.Dop, X.I, X.m, X.Z
    A_op = MatrixOp([
        [D("t"), m(-1)],
        [e * D("pp") - m(qz) @ D("py") + m(qy) @ D("pz"), D("t") + m(vpz) @ D("y") - m(vpy) @ D("z")],
    ], sp)
    R = MatrixOp([
        [I() @ (m(vpz) @ D("y") - m(vpy) @ D("z")), I()],
        [m(qz) @ D("y") - m(qy) @ D("z") - e * D("p"), Z()],
    ], sp)
    K = MatrixOp([[m(vpy) @ D("z") - m(vpz) @ D("y"), m(-1)], [m(1), Z()]], sp)
    J0 = MatrixOp([[Z(), m(1)], [m(-1), m(vpy) @ D("z") - m(vpz) @ D("y")]], sp)
    J1 = MatrixOp([[-I(), Z()], [Z(), m(qz) @ D("y") - m(qy) @ D("z") - e * D("p")]], sp)
    E1 = X.j("v_t") - q
    E2 = X.j("q_t") - qt
    commut = MatrixOp([
        [I() @ (m(X.D(E1, "py")) @ D("z") - m(X.D(E1, "pz")) @ D("y")), Z()],
        [m(X.D(E2, "y")) @ D("z") - m(X.D(E2, "z")) @ D("y"), Z()],
    ], sp)
    ops = {"A": A_op, "R": R, "K": K, "J0": J0, "J1": J1, "commut": commut}

    vt = X.j("v_t")
    third = sp.const(Fraction(1, 3))
    L = h * (2 * vt * q - q ** 2 + e * vp ** 2) + third * vt * (vy * vpz - vz * vpy)
    pi_v = q + third * (vy * vpz - vz * vpy)
    from .graded import GradedExpr, gen

    def dg(dep: str, **cnt: int):
        return gen("d" + dep, sp.idx(cnt))

    omega = (GradedExpr.of(sp, [dg("v"), dg("v", z=1)], h * vpy) - GradedExpr.of(sp, [dg("v"), dg("v", y=1)], h * vpz)
             - GradedExpr.of(sp, [dg("v"), dg("q")], 1))
    H1 = h * q ** 2 - h * e * vp ** 2
    lag = LagrangianEntry(L, (pi_v, sp.zero()), H1, omega)

    def X6(a_):
        return [P(a_, "z") * vy - P(a_, "y") * vz, P(a_, "z") * qy - P(a_, "y") * qz]

    def Xc(c_):
        return [P(c_, "t"), P(c_, "t", "t")]

    def Xf(f_):
        return [f_, P(f_, "t") + P(f_, "q") * qt + qp * P(f_, "v_p")]

    S = {}
    S["X1"] = SymmetryEntry("X1", lambda: [-q, qy * vpz - qz * vpy + e * vpp], note="translation in t")
    S["X2"] = SymmetryEntry("X2", lambda: [t * q + p * vp, q + p * qp + t * qt], note="scaling of t, p, q")
    S["X3"] = SymmetryEntry("X3", lambda: [-vp, -qp], note="translation in p")
    S["X4"] = SymmetryEntry("X4", lambda: [v - h * (y * vy + z * vz), q - h * (y * qy + z * qz)],
                            variational=False, note="scaling of y, z, v, q")
    S["X5"] = SymmetryEntry("X5", lambda a: [a, sp.zero()], ("a",), None, yz_inst,
                            note="v shifted by a(y,z)", defaults={"a": a})
    S["X6"] = SymmetryEntry("X6", X6, ("a",), None, yz_inst, note="area-preserving change of (y,z)",
                            defaults={"a": a})
    S["Xc"] = SymmetryEntry("Xc", Xc, ("c",), cs_c, c_inst, note="c(t,p) with c_tt + eps c_pp = 0",
                            defaults={"c": c})
    S["Xf"] = SymmetryEntry("Xf", Xf, ("f2",), cs_f2, f2_inst, kind="second-order",
                            note="second-order family f(t,p,q,v_p)", defaults={"f2": f2})

    def H5(a_):
        return a_ * q + h * (P(a_, "y") * vz - P(a_, "z") * vy) * vp

    def H6(a_):
        return q * (P(a_, "z") * vy - P(a_, "y") * vz) - vy * vz * (P(a_, "z") * vpy + P(a_, "y") * vpz)

    H0 = q * vp
    Hs = {}
    Hs["H1"] = HamiltonianEntry("H1", lambda: H1, "J0", lambda: flow, "flow",
                                note="Hamiltonian of the system under J0")
    Hs["H0"] = HamiltonianEntry("H0", lambda: H0, "J1", lambda: flow, "flow",
                                note="Hamiltonian of the system under J1")
    Hs["H^1"] = HamiltonianEntry("H^1", lambda: h * (e * vp ** 2 - q ** 2), "J0", S["X1"].build, "X1",
                                 note="generates X1")
    Hs["H^2"] = HamiltonianEntry("H^2", lambda: p * vp * q + h * t * (q ** 2 - e * vp ** 2), "J0", S["X2"].build,
                                 "X2", note="generates X2")
    Hs["H^3"] = HamiltonianEntry("H^3", lambda: -q * vp, "J0", S["X3"].build, "X3", note="generates X3")
    Hs["H^5"] = HamiltonianEntry("H^5", H5, "J0", S["X5"].build, "X5", ("a",), None, (), yz_inst,
                                 note="generates X5", defaults={"a": a})
    Hs["H^6"] = HamiltonianEntry("H^6", H6, "J0", X6, "X6", ("a",), None, (), yz_inst,
                                 note="generates X6", defaults={"a": a})
    Hs["H^c"] = HamiltonianEntry("H^c", lambda c: P(c, "t") * q + e * P(c, "p", "p") * v, "J0", Xc, "Xc",
                                 ("c",), cs_c, instances=c_inst, note="c_t q + eps c_pp v",
                                 defaults={"c": c})
    Hs["H^f"] = HamiltonianEntry("H^f", lambda F2: F2, "J0", lambda F2: Xf(P(F2, "q")), "Xf", ("F2",), cs_F2,
                                 instances=({"F2": h * (q ** 2 - e * vp ** 2), "f2": q, "fp": -e * vp},
                                            {"F2": q * vp, "f2": vp, "fp": q},
                                            {"F2": h * p * (q ** 2 - e * vp ** 2) - e * t * q * vp,
                                             "f2": p * q - e * t * vp, "fp": -e * (p * vp + t * q)}),
                                 note="F(t,p,q,v_p) with F_q = f, F_v_p = g", defaults={"F2": fn("F2")})

    w = y * vy + z * vz - 2 * v
    wt = y * qy + z * qz - 2 * q
    tilde4 = [NLExpr.dinv(h * (vpy * X.D(w, "z") - vpz * X.D(w, "y") - wt)),
              NLExpr.of(h * (qy * X.D(w, "z") - qz * X.D(w, "y") + e * X.D(w, "p")))]
    p6 = X6(a)
    tilde6 = [NLExpr.dinv(vpz * X.D(p6[0], "y") - vpy * X.D(p6[0], "z") + p6[1]),
              NLExpr.of(qz * X.D(p6[0], "y") - qy * X.D(p6[0], "z") - e * X.D(p6[0], "p"))]
    cpot = fn("cp")
    Rf = {}
    Rf["X1"] = RecursionFact("X1", lambda: S["X1"].characteristic, lambda: _scale(-e, S["X3"].characteristic),
                             note="R X1 = -eps X3 + X5[c]")
    Rf["X2"] = RecursionFact("X2", lambda: S["X2"].characteristic, lambda: Xf(p * q - e * t * vp),
                             note="R X2 = Xf[p q - eps t v_p] + X5[c]")
    Rf["X3"] = RecursionFact("X3", lambda: S["X3"].characteristic, lambda: S["X1"].characteristic,
                             note="R X3 = X1 + X5[c]")
    Rf["X4"] = RecursionFact("X4", lambda: S["X4"].characteristic, lambda: tilde4, nonlocal_output=True,
                             note="R X4: first nonlocal symmetry")
    Rf["X5"] = RecursionFact("X5", lambda: S["X5"].characteristic, lambda: _scale(-1, X6(a)),
                             note="R X5[a] = -X6[a] + X5[c]")
    Rf["X6"] = RecursionFact("X6", lambda: S["X6"].characteristic, lambda: tilde6, nonlocal_output=True,
                             note="R X6[a]: nonlocal symmetry")
    Rf["Xc"] = RecursionFact("Xc", lambda: S["Xc"].characteristic, lambda: Xc(cpot),
                             primitives=(lambda: P(cpot, "t"),), constraints=cs_cp,
                             note="R Xc[c] = Xc[d] + X5[c1] with d_p = c_t, d_t = -eps c_p")
    Rf["Xf"] = RecursionFact("Xf", lambda: S["Xf"].characteristic, lambda: Xf(fpot),
                             primitives=(lambda: fpot,), constraints=cs_fp,
                             note="R Xf[f] = Xf[g] + X5[c] with the potential g of f")
    Rf["Xf2"] = RecursionFact("Xf2", lambda: Xf(fpot), lambda: _scale(-e, Xf(f2)),
                              primitives=(lambda: -e * f2,), constraints=cs_fp,
                              note="R Xf[g] = -eps Xf[f] modulo X6[c], X5[d]")

    G2 = fn("G2")
    T = {}
    T["H^1"] = TransformFact("H^1", Hs["H^1"].value, lambda: -e * Hs["H^3"].value(),
                             note="H^1 -> -eps H^3 + H^5[c]")
    T["H1"] = TransformFact("H1", lambda: H1, lambda: -e * H0, note="H1 -> -eps H0 - H^5[c]")
    T["H^2"] = TransformFact("H^2", Hs["H^2"].value, lambda: h * p * (q ** 2 - e * vp ** 2) - e * t * q * vp,
                             note="H^2 -> H^f[p q - eps t v_p] + H^5[c]")
    T["H^3"] = TransformFact("H^3", Hs["H^3"].value, lambda: Hs["H^1"].value(), note="H^3 -> H^1 + H^5[c]")
    T["H^5"] = TransformFact("H^5", Hs["H^5"].value, lambda: -H6(a), note="H^5[a] -> -H^6[a] + H^5[c]")
    T["H^c"] = TransformFact("H^c", Hs["H^c"].value, lambda: Hs["H^c"].value(c=cpot), cs_cp,
                             note="H^c -> H^d + H^5[c] with d_p = c_t, d_t = -eps c_p")
    T["H^f"] = TransformFact("H^f", lambda: fn("F2"), lambda: G2, cs_F2 + cs_G2,
                             note="H^f -> H^g + H^5[c] with G_q = g")

    def jac(p_, q_, c1_, c2_):
        return P(p_, c1_) * P(q_, c2_) - P(p_, c2_) * P(q_, c1_)

    def hat(a_):
        return y * P(a_, "y") + z * P(a_, "z") - 2 * a_

    def cprime(c_):
        return t * P(c_, "t") + p * P(c_, "p") - c_

    def gtl(g_):
        return t * P(g_, "t") + p * P(g_, "p") - q * P(g_, "q") - vp * P(g_, "v_p")

    def breve(g_):
        return q * P(g_, "q") + vp * P(g_, "v_p") - g_

    def angle(d_, g_):
        return P(d_, "t", "t") * P(g_, "q") + P(d_, "t", "p") * P(g_, "v_p")

    def dbl(f_, g_):
        return jac(f_, g_, "t", "q") + jac(f_, g_, "p", "v_p")

    X1c, X2c, X3c, X4c = (S[n].characteristic for n in ("X1", "X2", "X3", "X4"))
    X5 = S["X5"].build
    rows = ("X1", "X2", "X3", "X4", "X5", "X6", "Xc", "Xf")
    cols = rows
    rb = {"X5": {"a": a}, "X6": {"a": a}, "Xc": {"c": d}, "Xf": {"f2": f2}}
    cb = {"X5": {"a": f}, "X6": {"a": b}, "Xc": {"c": c}, "Xf": {"f2": g2}}
    ZERO = None
    E = {
        "X1": [ZERO, lambda r, s: _scale(-1, X1c), ZERO, ZERO, ZERO, ZERO, lambda r, s: Xc(P(s, "t")),
               lambda r, s: Xf(P(s, "t"))],
        "X2": [lambda r, s: X1c, ZERO, lambda r, s: X3c, ZERO, ZERO, ZERO, lambda r, s: _scale(-1, Xc(cprime(s))),
               lambda r, s: _scale(-1, Xf(gtl(s)))],
        "X3": [ZERO, lambda r, s: _scale(-1, X3c), ZERO, ZERO, ZERO, ZERO, lambda r, s: Xc(P(s, "p")),
               lambda r, s: Xf(P(s, "p"))],
        "X4": [ZERO, ZERO, ZERO, ZERO, lambda r, s: _scale(h, X5(hat(s))), lambda r, s: _scale(h, X6(hat(s))),
               lambda r, s: _scale(-1, Xc(s)), lambda r, s: Xf(breve(s))],
        "X5": [ZERO, ZERO, ZERO, lambda r, s: _scale(-h, X5(hat(r))), ZERO, lambda r, s: X5(jac(r, s, "y", "z")),
               ZERO, ZERO],
        "X6": [ZERO, ZERO, ZERO, lambda r, s: _scale(-h, X6(hat(r))), lambda r, s: _scale(-1, X5(jac(s, r, "y", "z"))),
               lambda r, s: X6(jac(r, s, "y", "z")), ZERO, ZERO],
        "Xc": [lambda r, s: _scale(-1, Xc(P(r, "t"))), lambda r, s: Xc(cprime(r)), lambda r, s: _scale(-1, Xc(P(r, "p"))),
               lambda r, s: Xc(r), ZERO, ZERO, ZERO, lambda r, s: Xf(angle(r, s))],
        "Xf": [lambda r, s: _scale(-1, Xf(P(r, "t"))), lambda r, s: Xf(gtl(r)), lambda r, s: _scale(-1, Xf(P(r, "p"))),
               lambda r, s: _scale(-1, Xf(breve(r))), ZERO, ZERO, lambda r, s: _scale(-1, Xf(angle(s, r))),
               lambda r, s: Xf(dbl(r, s))],
    }
    labels = {
        "X1": ["0", "-X1", "0", "0", "0", "0", "Xc[c_t]", "Xf[g_t]"],
        "X2": ["X1", "0", "X3", "0", "0", "0", "-Xc[c']", "-Xf[g~]"],
        "X3": ["0", "-X3", "0", "0", "0", "0", "Xc[c_p]", "Xf[g_p]"],
        "X4": ["0", "0", "0", "0", "1/2 X5[f^]", "1/2 X6[b^]", "-Xc[c]", "Xf[g breve]"],
        "X5": ["0", "0", "0", "-1/2 X5[a^]", "0", "X5[d(a,b)/d(y,z)]", "0", "0"],
        "X6": ["0", "0", "0", "-1/2 X6[a^]", "-X5[d(f,a)/d(y,z)]", "X6[d(a,b)/d(y,z)]", "0", "0"],
        "Xc": ["-Xc[d_t]", "Xc[d']", "-Xc[d_p]", "Xc[d]", "0", "0", "0", "Xf[<d,g>]"],
        "Xf": ["-Xf[f_t]", "Xf[f~]", "-Xf[f_p]", "-Xf[f breve]", "0", "0", "-Xf[<c,f>]", "Xf[<<f,g>>]"],
    }
    cells = tuple(TableCell(r, s, E[r][j], labels[r][j]) for r in rows for j, s in enumerate(cols))
    table = BracketTable(rows, cols, rb, cb, cells, cs_c + cs_d + cs_f2 + cs_g2)

    Hy = {}
    Hy["hi1"] = HierarchyFact("hi1", "flow", lambda: H1, lambda: _scale(-e, [vp, qp]), op="J1",
                              note="J1 delta H1 = -eps (v_p, q_p)")
    Hy["hi2"] = HierarchyFact("hi2", "flow", lambda: -e * H0, lambda: _scale(-e, flow), op="J1",
                              note="J1 delta H1~ = -eps (q, q_t)")
    Hy["R2flow"] = HierarchyFact("R2flow", "power", lambda: flow, lambda: _scale(-e, flow), times=2,
                                 note="R^2 (q, q_t) = -eps (q, q_t)")
    Hy["hi0"] = HierarchyFact("hi0", "flow", lambda: H0, lambda: [vp, qp], op="J0", note="J0 delta H0 = (v_p, q_p)")
    Hy["RHus2"] = HierarchyFact("RHus2", "flow", Hs["H^2"].value,
                                lambda: [p * q - e * t * vp, p * (vpy * qz - vpz * qy) - e * X.D(p * vp + t * q, "p")],
                                op="J1", note="J1 delta H^2 = Xf[p q - eps t v_p]")
    Hy["RHus5"] = HierarchyFact("RHus5", "flow", Hs["H^5"].value, lambda: _scale(-1, X6(a)), op="J1",
                                note="J1 delta H^5[a] = -X6[a]")
    Hy["RHus6"] = HierarchyFact("RHus6", "flow", Hs["H^6"].value, lambda: tilde6, op="J1",
                                note="J1 delta H^6[a] = R X6[a], first nonlocal flow")
    Hy["RHusf"] = HierarchyFact("RHusf", "flow", lambda: fn("F2"), lambda: Xf(fpot), op="J1",
                                constraints=cs_F2 + cs_fp, note="J1 delta H^f = Xf[g]")
    Hy["R2Hf"] = HierarchyFact("R2Hf", "power", lambda: Xf(f2), lambda: _scale(-e, Xf(f2)), times=2,
                               primitives=(lambda: fpot, lambda: -e * f2), constraints=cs_fp,
                               note="R^2 Xf[f] = -eps Xf[f]")
    Hy["commute6"] = HierarchyFact("commute6", "commute", lambda: X6(a), lambda: tilde6,
                                   note="[X6[a], R X6[a]] = 0")
    notes = {
        "A": "D_t - F' for the flow F = (q, q_t)",
        "R": "recursion operator",
        "K": "symplectic operator",
        "J0": "first Hamiltonian operator, inverse of K",
        "J1": "second Hamiltonian operator R J0",
        "commut": "off-shell commutator R A - A R",
    }
    return Catalog(sys, ops, lag, funcs, everything, S, Hs, Rf, T, table, Hy, notes)


# ---------------------------------------------------------------------------
# concrete instances


def _check_binding(cs: ConstraintSystem | None, bindings: Mapping[str, DiffExpr],
                   policy: SamplingPolicy | None) -> None:
    if cs is None:
        return
    sp = cs.space
    for rule in cs.rules:
        if rule.fn not in bindings:
            continue
        d = sp.functions[rule.fn]
        lhs = bindings[rule.fn]
        for s, n in enumerate(rule.lead):
            for _ in range(n):
                lhs = partial(lhs, d.slots[s])
        rhs = _substitute_functions(rule.rhs, bindings)
        if not equals_expr(lhs, rhs, policy):
            raise KernelError(f"binding violates {rule!r}")


def _substitute_functions(e: DiffExpr, bindings: Mapping[str, DiffExpr]) -> DiffExpr:
    from .diffexpr import atom_of, substitute_atoms

    sp = e.space
    repl = {}
    for i in e.atoms():
        a = atom_of(i)
        if a[0] != "o":
            continue
        if a[1] not in bindings:
            raise KernelError(f"no binding for function {a[1]!r}")
        d = sp.functions[a[1]]
        val = bindings[a[1]]
        for s, n in enumerate(a[2]):
            for _ in range(n):
                val = partial(val, d.slots[s])
        repl[i] = val
    return substitute_atoms(e, repl) if repl else e


def instantiate_free_functions(entry, bindings: Mapping[str, DiffExpr],
                               policy: SamplingPolicy | None = None):
    """Copy of a symmetry or Hamiltonian entry with its free functions bound.

    Every binding must satisfy the entry's constraint rules exactly; slack or
    companion functions named in a rule must be bound as well.
    """
    _check_binding(entry.constraints, bindings, policy)
    missing = [p for p in entry.params if p not in bindings]
    if missing:
        raise KernelError(f"missing bindings for {missing}")
    fixed = [bindings[p] for p in entry.params]
    if isinstance(entry, SymmetryEntry):
        return SymmetryEntry(entry.id, lambda: entry.build(*fixed), (), None, (), entry.kind,
                             entry.variational, entry.note)
    if isinstance(entry, HamiltonianEntry):
        return HamiltonianEntry(entry.id, lambda: entry.density(*fixed), entry.operator,
                                lambda: entry.target(*fixed), entry.generates, (), None,
                                tuple((lambda g=g: g(*fixed)) for g in entry.equivalents), (), entry.note,
                                same_flow=tuple((lambda g=g: g(*fixed)) for g in entry.same_flow))
    raise KernelError("only symmetry and Hamiltonian entries carry free functions")


# ---------------------------------------------------------------------------
# JSON data


def catalog_json(cat: Catalog) -> dict:
    """Versioned JSON description of the catalog (operators, entries, facts)."""
    from .serial import to_json

    def ch(x):
        return to_json(x)

    out = {
        "schema": SCHEMA_VERSION,
        "system": cat.system.name,
        "coords": list(cat.space.coords),
        "dependents": list(cat.space.deps),
        "eps": cat.space.eps,
        "flow": ch(cat.system.flow()),
        "functions": {k: {"slots": list(v.slots)} for k, v in cat.functions.items()},
        "constraints": [
            {"fn": r.fn, "lead": list(r.lead), "rhs": ch(r.rhs)} for r in cat.constraints.rules
        ],
        "operators": {k: ch(v) for k, v in cat.operators.items()},
        "lagrangian": {
            "density": ch(cat.lagrangian.density),
            "momenta": ch(list(cat.lagrangian.momenta)),
            "legendre_density": ch(cat.lagrangian.legendre_density),
        },
        "symmetries": {k: {"characteristic": ch(s.characteristic), "params": list(s.params), "kind": s.kind,
                           "variational": s.variational, "note": s.note}
                       for k, s in cat.symmetries.items()},
        "hamiltonians": {k: {"density": ch(hh.value()), "operator": hh.operator, "generates": hh.generates,
                             "equivalents": ch(hh.alternatives()), "same_flow": ch(hh.kernel_shifts()),
                             "note": hh.note}
                         for k, hh in cat.hamiltonians.items()},
        "recursion": {k: {"source": ch(r.source()), "expected": ch(r.expected()), "mode": r.mode,
                          "times": r.times, "note": r.note}
                      for k, r in cat.recursion.items()},
        "transforms": {k: {"source": ch(tf.source()), "expected": ch(tf.expected()), "note": tf.note}
                       for k, tf in cat.transforms.items()},
        "table": {"rows": list(cat.table.rows), "cols": list(cat.table.cols),
                  "cells": [[c.row, c.col, c.label] for c in cat.table.cells]},
        "hierarchy": {k: {"kind": hf.kind, "lhs": ch(hf.lhs()),
                          "expected": ch(hf.expected()) if hf.expected else None,
                          "op": hf.op, "times": hf.times, "note": hf.note}
                      for k, hf in cat.hierarchy.items()},
    }
    return out


def golden_path(name: str, eps=None) -> str:
    tag = {None: "sym", 1: "plus", -1: "minus"}[_eps_choice(eps)]
    return str(resources.files("heavenly") / "data" / f"{name}_{tag}.json")


def dump_catalog(cat: Catalog) -> str:
    return json.dumps(catalog_json(cat), sort_keys=True, indent=1)
