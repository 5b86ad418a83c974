"""Verification checks over a catalog.

Every check returns a :class:`CheckReport` built from named sub-checks.
Sub-check names carry the catalog id they cover (``kind:id`` with an
optional ``/detail`` suffix), which makes the coverage assertion mechanical.
Every comparison goes through both the canonical normal form and the
sampling oracle; a disagreement between the two raises instead of passing.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .catalog import (
    Catalog,
    HierarchyFact,
    RecursionFact,
    TableCell,
    build_system,
    instantiate_free_functions,
    load_catalog,
)
from .diffexpr import (
    ConstraintSystem,
    DiffExpr,
    EvolutionSystem,
    KernelError,
    partial,
    reduce_constraints,
    substitute_on_shell,
)
from .graded import closedness_check, compatibility_check, is_divergence, jacobi_check, two_form
from .linop import (
    IrreducibleNonlocalComposition,
    LinOp,
    MatrixOp,
    NLExpr,
    adjoint_op,
    apply_op,
    commutator_on_generic,
    compose_ops,
    equal_mod_function,
    integration_constant,
    is_function_of,
    nl_equal,
    normalize_nonlocal,
    ops_equal,
    skew_adjoint_check,
)
from .oracle import SamplingPolicy, oracle_stats
from .varcalc import (
    conserved_density_check,
    helmholtz_test,
    is_spatial_divergence,
    lie_bracket,
    symmetry_operator,
    symmetry_residual,
    variational_gradient,
)

__all__ = [
    "SubCheck",
    "CheckReport",
    "CHECKS",
    "check_lax_pair",
    "check_symplectic_structure",
    "check_hamiltonian_chain",
    "check_jacobi_pencil",
    "check_symmetry_table",
    "check_noether_pairs",
    "check_recursion_actions",
    "check_hierarchy",
    "run_checks",
    "resolve_checks",
    "run_suite",
    "coverage_gaps",
    "negative_controls",
    "perturbed_system",
]

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


@dataclass
class SubCheck:
    name: str
    status: str
    residual: str | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CheckReport:
    """Outcome of one check on one system at one value of eps.

    A failing report always carries a residual: the first failing sub-check
    and what did not vanish.
    """

    check_id: str
    system: str
    eps: int | None
    status: str
    residual: str | None
    oracle_samples: int
    elapsed_ms: float
    subchecks: list[SubCheck] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["elapsed_ms"] = round(self.elapsed_ms, 1)
        return d

    def failures(self) -> list[SubCheck]:
        return [s for s in self.subchecks if s.status == FAIL]


# ---------------------------------------------------------------------------
# residual helpers: each returns None on success and a printable residual otherwise

Residual = str | None


def _txt(x) -> str:
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_txt(y) for y in x) + "]"
    return str(x)


def _char_diff(got: Sequence, want: Sequence, cs: ConstraintSystem | None,
               policy: SamplingPolicy | None) -> Residual:
    if all(nl_equal(a, b, policy, cs) for a, b in zip(got, want)):
        return None
    diffs = []
    for a, b in zip(got, want):
        d = normalize_nonlocal(NLExpr.of(a) - NLExpr.of(b))
        if cs is not None:
            d = normalize_nonlocal(d.map(lambda e: reduce_constraints(e, cs)))
        diffs.append(d)
    return "difference " + _txt(diffs)


def _op_diff(a: MatrixOp, b: MatrixOp, policy: SamplingPolicy | None,
             cs: ConstraintSystem | None = None) -> Residual:
    if ops_equal(a, b, policy, cs):
        return None
    return "difference " + str(a - b)


def _truth(ok: bool, msg: str) -> Residual:
    return None if ok else msg


def _identity(sp) -> MatrixOp:
    return MatrixOp.identity(sp)


def _zero_char(sp) -> list[DiffExpr]:
    return [sp.zero(), sp.zero()]


class _Run:
    """Collects sub-checks for one report."""

    def __init__(self, check_id: str, sys: EvolutionSystem):
        self.check_id = check_id
        self.sys = sys
        self.subs: list[SubCheck] = []
        self._t0 = time.perf_counter()
        self._p0 = oracle_stats()["points"]

    def sub(self, name: str, fn: Callable[[], Residual], skip_on: tuple = (), detail: str = "") -> SubCheck:
        try:
            res = fn()
            s = SubCheck(name, PASS if res is None else FAIL, res, detail)
        except skip_on as exc:  # type: ignore[misc]
            s = SubCheck(name, SKIPPED, None, f"{type(exc).__name__}: {exc}")
        except Exception as exc:  # a crash inside a comparison is a failure with a reason
            s = SubCheck(name, FAIL, f"{type(exc).__name__}: {exc}", detail)
        self.subs.append(s)
        return s

    def report(self) -> CheckReport:
        fails = [s for s in self.subs if s.status == FAIL]
        if fails:
            status, residual = FAIL, f"{fails[0].name}: {fails[0].residual}"
        elif self.subs and all(s.status == SKIPPED for s in self.subs):
            status, residual = SKIPPED, None
        else:
            status, residual = PASS, None
        return CheckReport(
            self.check_id, self.sys.name, self.sys.space.eps, status, residual,
            oracle_stats()["points"] - self._p0, (time.perf_counter() - self._t0) * 1000.0, self.subs,
        )


def _cat(sys: EvolutionSystem, catalog: Catalog | None) -> Catalog:
    return catalog if catalog is not None else load_catalog(sys)


def _others(sp) -> tuple[str, ...]:
    return tuple(c for c in sp.coords if c not in (sp.distinguished, "t"))


# ---------------------------------------------------------------------------
# Lax pair


def _on_shell(e: NLExpr, sys: EvolutionSystem) -> NLExpr:
    return normalize_nonlocal(e.map(lambda x: substitute_on_shell(x, sys)))


def check_lax_pair(sys: EvolutionSystem, catalog: Catalog | None = None,
                   policy: SamplingPolicy | None = None) -> CheckReport:
    """[R, A] equals the stated off-shell commutator and vanishes on shell."""
    cat = _cat(sys, catalog)
    run = _Run("check_lax_pair", sys)
    ops = cat.operators
    A = symmetry_operator(sys)
    run.sub("operator:A", lambda: _op_diff(A, ops["A"], policy))

    def commutator() -> Residual:
        C = compose_ops(ops["R"], A) - compose_ops(A, ops["R"])
        return _op_diff(C, ops["commut"], policy)

    run.sub("operator:commut", commutator)

    def on_shell() -> Residual:
        r = [_on_shell(x, sys) for x in commutator_on_generic(ops["R"], A)]
        return _char_diff(r, _zero_char(sys.space), None, policy)

    run.sub("lax:on_shell", on_shell)
    run.sub("lax:off_shell_nonzero", lambda: _truth(not ops["commut"].is_zero(),
                                                      "commutator vanishes identically"))
    return run.report()


# ---------------------------------------------------------------------------
# symplectic structure


def check_symplectic_structure(sys: EvolutionSystem, catalog: Catalog | None = None,
                               policy: SamplingPolicy | None = None) -> CheckReport:
    """K skew, K inverse to J0, closed two-form, momenta and Legendre density."""
    cat = _cat(sys, catalog)
    run = _Run("check_symplectic_structure", sys)
    sp = sys.space
    K, J0 = cat.operators["K"], cat.operators["J0"]
    lag = cat.lagrangian
    run.sub("operator:K", lambda: _truth(skew_adjoint_check(K, policy), "K is not skew-adjoint"))

    def inverse() -> Residual:
        return _op_diff(compose_ops(K, J0), _identity(sp), policy) or _op_diff(compose_ops(J0, K), _identity(sp), policy)

    run.sub("symplectic:inverse", inverse)

    def closed() -> Residual:
        if not closedness_check(lag.form, policy):
            return "vertical differential of the two-form is not a divergence"
        return _truth(is_divergence(two_form(K) - lag.form, policy), "two-form does not match K")

    run.sub("lagrangian:L/closed", closed)

    def momenta() -> Residual:
        got = [partial(lag.density, sp.jet(d, {sys.time: 1})) for d in sp.deps]
        return _char_diff(got, list(lag.momenta), None, policy)

    run.sub("lagrangian:L/momenta", momenta)

    def legendre() -> Residual:
        H = sp.zero()
        for pi, d in zip(lag.momenta, sp.deps):
            H = H + pi * sp.jet(d, {sys.time: 1})
        diff = H - lag.density - lag.legendre_density
        return _truth(is_spatial_divergence(diff, None, policy), f"not a divergence: {diff}")

    run.sub("lagrangian:L/legendre", legendre)
    return run.report()


# ---------------------------------------------------------------------------
# Hamiltonian chain


def _flow_of(op: MatrixOp, H: DiffExpr) -> list[NLExpr]:
    return apply_op(op, variational_gradient(H))


def check_hamiltonian_chain(sys: EvolutionSystem, catalog: Catalog | None = None,
                            policy: SamplingPolicy | None = None) -> CheckReport:
    """J_{k+1} = R J_k, the flow from every level, the kernel fact and R J0 = J0 R^dagger."""
    cat = _cat(sys, catalog)
    run = _Run("check_hamiltonian_chain", sys)
    sp = sys.space
    ops = cat.operators
    R = ops["R"]
    run.sub("operator:R", lambda: _op_diff(compose_ops(R, ops["J0"]), ops["J1"], policy))
    run.sub("operator:J0", lambda: _truth(skew_adjoint_check(ops["J0"], policy), "J0 is not skew-adjoint"))
    run.sub("operator:J1", lambda: _truth(skew_adjoint_check(ops["J1"], policy), "J1 is not skew-adjoint"))
    if "J2" in ops:
        run.sub("operator:J2", lambda: _op_diff(compose_ops(R, ops["J1"]), ops["J2"], policy))
    Rdag = adjoint_op(R)
    if "Rdag" in ops:
        run.sub("operator:Rdag", lambda: _op_diff(Rdag, ops["Rdag"], policy))
    run.sub("chain:R_J0_eq_J0_Rdag",
            lambda: _op_diff(compose_ops(R, ops["J0"]), compose_ops(ops["J0"], Rdag), policy))

    flow = sys.flow()
    for hid, H in cat.hamiltonians.items():
        if H.generates != "flow":
            continue
        run.sub(f"chain:{H.operator}/{hid}",
                lambda H=H: _char_diff(_flow_of(ops[H.operator], H.value()), flow, H.constraints, policy))

    def kernel() -> Residual:
        v, uxx = sp.j(sp.deps[1]), sp.j(sp.deps[0] + "_" + sp.distinguished * 2)
        return _char_diff(_flow_of(ops["J1"], v * uxx), _zero_char(sp), None, policy)

    if sys.name == "mixed":
        run.sub("chain:J1_kernel", kernel)
    return run.report()


# ---------------------------------------------------------------------------
# Jacobi identities


def check_jacobi_pencil(sys: EvolutionSystem, catalog: Catalog | None = None,
                        policy: SamplingPolicy | None = None) -> CheckReport:
    """Jacobi for J0 and J1, their compatibility, and Jacobi for J2 where representable."""
    cat = _cat(sys, catalog)
    run = _Run("check_jacobi_pencil", sys)
    ops = cat.operators
    for k in ("J0", "J1"):
        run.sub(f"jacobi:{k}", lambda k=k: _truth(jacobi_check(ops[k], policy), f"Jacobi fails for {k}"))
    run.sub("jacobi:J0+J1", lambda: _truth(compatibility_check(ops["J0"], ops["J1"], policy),
                                           "J0 and J1 are not compatible"))
    if "J2" in ops:
        run.sub("jacobi:J2", lambda: _truth(jacobi_check(ops["J2"], policy), "Jacobi fails for J2"),
                skip_on=(IrreducibleNonlocalComposition,))
    return run.report()


# ---------------------------------------------------------------------------
# symmetries and the commutator table


def _residual_ok(sys: EvolutionSystem, phi, cs) -> Residual:
    r = symmetry_residual(sys, phi, cs)
    others = _others(sys.space)
    first_ok = not r[0].nl and is_function_of(r[0].local, others)
    second_ok = nl_equal(r[1], sys.space.zero(), None, cs)
    if first_ok and second_ok:
        return None
    return "residual " + _txt(r)


def _time_partial(phi, sp, t: str) -> list[DiffExpr]:
    tc = sp.coord(t)
    return [partial(NLExpr.of(x).local, tc) for x in phi]


def check_symmetry_table(sys: EvolutionSystem, catalog: Catalog | None = None,
                         policy: SamplingPolicy | None = None) -> CheckReport:
    """Symmetry condition for every entry and instance, flow criterion, every table cell."""
    cat = _cat(sys, catalog)
    run = _Run("check_symmetry_table", sys)
    sp = sys.space
    flow = sys.flow()
    for sid, s in cat.symmetries.items():
        run.sub(f"symmetry:{sid}", lambda s=s: _residual_ok(sys, s.characteristic, s.constraints))
        run.sub(f"symmetry:{sid}/flow_bracket",
                lambda s=s: _char_diff(lie_bracket(s.characteristic, flow),
                                       _time_partial(s.characteristic, sp, sys.time), s.constraints, policy))
        if s.params:
            run.sub(f"symmetry:{sid}/instances",
                    lambda s=s: _truth(len(s.instances) >= 2, f"{len(s.instances)} instance(s)"))
        for n, b in enumerate(s.instances):
            def inst(s=s, b=b) -> Residual:
                e = instantiate_free_functions(s, b, policy)
                return _residual_ok(sys, e.characteristic, None)
            run.sub(f"symmetry:{sid}/instance{n}", inst)
    for rid, f in cat.recursion.items():
        if f.nonlocal_output:
            run.sub(f"recursion:{rid}/symmetry", lambda f=f: _residual_ok(sys, f.expected(), f.constraints))

    T = cat.table
    for cell in T.cells:
        run.sub(f"table:{cell.row}|{cell.col}", lambda cell=cell: _cell(cat, cell, policy), detail=cell.label)
    return run.report()


def _cell(cat: Catalog, cell: TableCell, policy) -> Residual:
    T = cat.table
    sp = cat.space
    rb, cb = T.row_bindings.get(cell.row, {}), T.col_bindings.get(cell.col, {})
    got = lie_bracket(cat.symmetries[cell.row].at(**rb), cat.symmetries[cell.col].at(**cb))
    rv, cv = next(iter(rb.values()), None), next(iter(cb.values()), None)
    want = cell.expected(rv, cv) if cell.expected else _zero_char(sp)
    res = _char_diff(got, want, T.constraints, policy)
    if res is not None and cell.expected is not None:
        if all(nl_equal(a, -NLExpr.of(b), policy, T.constraints) for a, b in zip(got, want)):
            return "opposite sign: the entry matches the reversed bracket orientation"
    return res


# ---------------------------------------------------------------------------
# Noether pairs and conserved densities


def check_noether_pairs(sys: EvolutionSystem, catalog: Catalog | None = None,
                        policy: SamplingPolicy | None = None) -> CheckReport:
    """Generating identities, K Phi = delta H, conservation, equivalences, instances, Helmholtz."""
    cat = _cat(sys, catalog)
    run = _Run("check_noether_pairs", sys)
    sp = sys.space
    ops = cat.operators
    K = ops["K"]
    for hid, H in cat.hamiltonians.items():
        cs = H.constraints
        run.sub(f"hamiltonian:{hid}",
                lambda H=H, cs=cs: _char_diff(_flow_of(ops[H.operator], H.value()), H.flow(), cs, policy))
        if H.operator == "J0":
            run.sub(f"hamiltonian:{hid}/K",
                    lambda H=H, cs=cs: _char_diff(apply_op(K, H.flow()), variational_gradient(H.value()), cs, policy))
        run.sub(f"hamiltonian:{hid}/conserved",
                lambda H=H, cs=cs: _truth(conserved_density_check(H.value(), sys, cs, policy),
                                          "time derivative is not a divergence on shell"))
        for n, alt in enumerate(H.alternatives()):
            def equiv(H=H, alt=alt, cs=cs) -> Residual:
                d = reduce_constraints(H.value() - alt, cs)
                return _truth(is_spatial_divergence(d, cs, policy), f"difference is not a divergence: {d}")
            run.sub(f"hamiltonian:{hid}/equivalent{n}", equiv)
        for n, alt in enumerate(H.kernel_shifts()):
            run.sub(f"hamiltonian:{hid}/same_flow{n}",
                    lambda H=H, alt=alt, cs=cs: _char_diff(_flow_of(ops[H.operator], alt), H.flow(), cs, policy))
        if H.params:
            run.sub(f"hamiltonian:{hid}/instances",
                    lambda H=H: _truth(len(H.instances) >= 2, f"{len(H.instances)} instance(s)"))
        for n, b in enumerate(H.instances):
            def inst(H=H, b=b) -> Residual:
                e = instantiate_free_functions(H, b, policy)
                r = _char_diff(_flow_of(ops[e.operator], e.value()), e.flow(), None, policy)
                if r is None and not conserved_density_check(e.value(), sys, None, policy):
                    r = "instance density is not conserved"
                return r
            run.sub(f"hamiltonian:{hid}/instance{n}", inst)

    for sid, s in cat.symmetries.items():
        def helm(s=s) -> Residual:
            G = [g.local for g in apply_op(K, s.characteristic)]
            got = helmholtz_test(G, policy, s.constraints)
            return _truth(got == s.variational, f"Helmholtz test gives {got}, expected {s.variational}")
        run.sub(f"symmetry:{sid}/helmholtz", helm)
    return run.report()


# ---------------------------------------------------------------------------
# recursion operator on symmetries


def _recursion(sys: EvolutionSystem, R: MatrixOp, f: RecursionFact, policy) -> Residual:
    phi = f.source()
    constant_res: Residual = None
    for n in range(f.times):
        pb = f.primitives[n] if n < len(f.primitives) else None
        pr = pb() if pb else None
        if n == 0 and f.constant is not None:
            raw = apply_op(R, phi, "restricted", sys, f.constraints, pr, policy)
            C = integration_constant(raw[0], raw[1], sys, f.constraints)
            if not equal_mod_function(C, f.constant(), _others(sys.space), f.constraints, policy):
                constant_res = f"integration constant {C}, expected {f.constant()}"
        phi = apply_op(R, phi, f.mode, sys, f.constraints, pr, policy)
    want = f.expected()
    others = _others(sys.space)
    ok0 = equal_mod_function(phi[0], want[0], others, f.constraints, policy)
    ok1 = nl_equal(phi[1], want[1], policy, f.constraints)
    if ok0 and ok1:
        return constant_res
    return f"got {_txt(phi)}, expected {_txt(want)}"


def check_recursion_actions(sys: EvolutionSystem, catalog: Catalog | None = None,
                            policy: SamplingPolicy | None = None) -> CheckReport:
    """R on each symmetry in symmetry mode, first components compared up to c(y, z)."""
    cat = _cat(sys, catalog)
    run = _Run("check_recursion_actions", sys)
    R = cat.operators["R"]
    for rid, f in cat.recursion.items():
        run.sub(f"recursion:{rid}", lambda f=f: _recursion(sys, R, f, policy), detail=f.note)
    return run.report()


# ---------------------------------------------------------------------------
# hierarchy and Hamiltonian transforms


def _hierarchy(sys: EvolutionSystem, cat: Catalog, f: HierarchyFact, policy) -> Residual:
    ops = cat.operators
    sp = sys.space
    if f.kind == "flow":
        got, want = _flow_of(ops[f.op], f.lhs()), f.expected()
    elif f.kind == "power":
        got = f.lhs()
        for n in range(f.times):
            pb = f.primitives[n] if n < len(f.primitives) else None
            got = apply_op(ops["R"], got, "restricted", sys, f.constraints, pb() if pb else None, policy)
        want = f.expected()
    elif f.kind == "commute":
        got, want = lie_bracket(f.lhs(), f.expected()), _zero_char(sp)
    else:
        raise KernelError(f"unknown hierarchy kind {f.kind!r}")
    return _char_diff(got, want, f.constraints, policy)


def check_hierarchy(sys: EvolutionSystem, catalog: Catalog | None = None,
                    policy: SamplingPolicy | None = None) -> CheckReport:
    """Restricted-mode hierarchy identities and R^dagger on Hamiltonian gradients."""
    cat = _cat(sys, catalog)
    run = _Run("check_hierarchy", sys)
    for hid, f in cat.hierarchy.items():
        run.sub(f"hierarchy:{hid}", lambda f=f: _hierarchy(sys, cat, f, policy), detail=f.note)
    Rdag = cat.operators.get("Rdag") or adjoint_op(cat.operators["R"])
    for tid, tf in cat.transforms.items():
        def transform(tf=tf) -> Residual:
            got = apply_op(Rdag, variational_gradient(tf.source()))
            return _char_diff(got, variational_gradient(tf.expected()), tf.constraints, policy)
        run.sub(f"transform:{tid}", transform, detail=tf.note)
    return run.report()


# ---------------------------------------------------------------------------
# suite

CHECKS: dict[str, Callable[..., CheckReport]] = {
    "check_lax_pair": check_lax_pair,
    "check_symplectic_structure": check_symplectic_structure,
    "check_hamiltonian_chain": check_hamiltonian_chain,
    "check_jacobi_pencil": check_jacobi_pencil,
    "check_symmetry_table": check_symmetry_table,
    "check_noether_pairs": check_noether_pairs,
    "check_recursion_actions": check_recursion_actions,
    "check_hierarchy": check_hierarchy,
}


def run_checks(sys: EvolutionSystem, checks: Iterable[str] | None = None,
               policy: SamplingPolicy | None = None, catalog: Catalog | None = None) -> list[CheckReport]:
    cat = _cat(sys, catalog)
    names = resolve_checks(checks)
    return [CHECKS[n](sys, cat, policy) for n in names]


def resolve_checks(checks: Iterable[str] | None) -> list[str]:
    """Canonical check ids in suite order; the ``check_`` prefix is optional."""
    if checks is None:
        return list(CHECKS)
    wanted = []
    for n in checks:
        key = n if n in CHECKS else f"check_{n}"
        if key not in CHECKS:
            raise KernelError(f"unknown check {n!r}")
        if key not in wanted:
            wanted.append(key)
    return [k for k in CHECKS if k in wanted]


def run_suite(systems: Sequence[str] = ("mixed", "husain"), eps_values: Sequence = (1, -1),
              checks: Iterable[str] | None = None, seed: int = 0) -> list[CheckReport]:
    """Every selected check for every system and value of eps, in a fixed order."""
    policy = SamplingPolicy(seed=seed)
    out: list[CheckReport] = []
    names = resolve_checks(checks)
    for name in systems:
        for e in eps_values:
            sys = build_system(name, e)
            out += run_checks(sys, names, policy)
    return out


def coverage_gaps(catalog: Catalog, reports: Sequence[CheckReport]) -> list[str]:
    """Catalog ids that no sub-check of ``reports`` exercised."""
    seen = {s.name.split("/")[0] for r in reports for s in r.subchecks}
    return [f"{kind}:{i}" for kind, i, _ in catalog.ids() if f"{kind}:{i}" not in seen]


# ---------------------------------------------------------------------------
# negative controls


def perturbed_system(sys: EvolutionSystem) -> EvolutionSystem:
    """The same system with the second right-hand side shifted by a first-order jet.

    A constant shift would not do: the linearization and the derivatives of
    the equation residuals cannot see it.
    """
    sp = sys.space
    rhs = dict(sys.rhs)
    rhs[sp.deps[1]] = rhs[sp.deps[1]] + sp.j(sp.deps[0] + "_y")
    return EvolutionSystem(sys.name, sp, rhs, sys.time)


def negative_controls(name: str = "mixed", eps=1,
                      policy: SamplingPolicy | None = None) -> dict[str, CheckReport]:
    """Deliberately broken inputs; every report here is expected to fail."""
    sys = build_system(name, eps)
    cat = load_catalog(sys)
    sp = sys.space
    out: dict[str, CheckReport] = {}

    out["lax_perturbed"] = check_lax_pair(perturbed_system(sys), cat, policy)

    K = cat.operators["K"]
    badK = MatrixOp([[K[0, 0], -K[0, 1]], [K[1, 0], K[1, 1]]], sp)
    out["symplectic_bad_K"] = check_symplectic_structure(
        sys, dataclasses.replace(cat, operators={**cat.operators, "K": badK}), policy)

    J0 = cat.operators["J0"]
    badJ = MatrixOp([[J0[0, 0], J0[0, 1]], [J0[1, 0], J0[1, 1] + LinOp.mult(sp.j(sp.deps[0] + "_" + sp.distinguished))]], sp)
    out["jacobi_not_skew"] = check_jacobi_pencil(
        sys, dataclasses.replace(cat, operators={**cat.operators, "J0": badJ}), policy)

    first = next(iter(cat.recursion.values()))
    wrong = dataclasses.replace(first, expected=lambda: [-NLExpr.of(x) for x in first.expected()], constant=None)
    out["recursion_wrong_sign"] = check_recursion_actions(
        sys, dataclasses.replace(cat, recursion={first.id: wrong}), policy)

    cell = next(c for c in cat.table.cells if c.expected is not None)
    flipped = dataclasses.replace(cell, expected=lambda r, q, c=cell: [-NLExpr.of(x) for x in c.expected(r, q)])
    table = dataclasses.replace(cat.table, cells=(flipped,))
    out["table_flipped"] = check_symmetry_table(
        sys, dataclasses.replace(cat, table=table, recursion={}), policy)
    return out
