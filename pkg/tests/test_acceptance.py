"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import contextlib
import time

import pytest

from heavenly.catalog import build_system, load_catalog
from heavenly.linop import apply_op
from heavenly.oracle import oracle_stats, reset_oracle_stats
from heavenly.varcalc import helmholtz_test
from heavenly.verify import CHECKS, negative_controls, run_checks

SYSTEMS = ("mixed", "husain")
EPS = (1, -1)


@pytest.fixture(scope="module")
def suite():
    """Every check for both systems at eps = +1 and -1, with per-report wall time."""
    t0 = time.perf_counter()
    out = {}
    for name in SYSTEMS:
        for e in EPS:
            sys = build_system(name, e)
            for r in run_checks(sys, catalog=load_catalog(sys)):
                out[(name, e, r.check_id)] = r
    out["_elapsed"] = time.perf_counter() - t0
    return out


@contextlib.contextmanager
def criterion(n: int, what: str, capsys):
    """Print exactly one line for the criterion, then re-raise on failure."""
    try:
        yield
    except BaseException as exc:
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} FAIL  {what}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}")
        raise
    with capsys.disabled():
        print(f"\nCRITERION {n:>2} PASS  {what}")


def _reports(suite, check):
    return [suite[(n, e, check)] for n in SYSTEMS for e in EPS]


def _subs(report, prefix):
    return [s for s in report.subchecks if s.name.startswith(prefix)]


def _all_pass(subs):
    bad = [(s.name, s.residual) for s in subs if s.status != "pass"]
    assert not bad, bad


def test_criterion_01_lax_pairs(suite, capsys):
    with criterion(1, "Lax pairs for both systems at eps = +1, -1", capsys):
        for r in _reports(suite, "check_lax_pair"):
            assert r.status == "pass", (r.system, r.eps, r.residual)
            off = _subs(r, "operator:commut")
            assert len(off) == 1 and off[0].status == "pass" and off[0].residual is None
            assert r.elapsed_ms < 60_000


def test_criterion_02_symplectic(suite, capsys):
    with criterion(2, "symplectic structure, 10 sub-checks with zero residual", capsys):
        for e in EPS:
            subs = [s for n in SYSTEMS for s in suite[(n, e, "check_symplectic_structure")].subchecks]
            assert len(subs) == 10
            _all_pass(subs)
            names = {s.name for s in subs}
            assert names == {"operator:K", "symplectic:inverse", "lagrangian:L/closed", "lagrangian:L/momenta",
                             "lagrangian:L/legendre"}


def test_criterion_03_hamiltonian_chain(suite, capsys):
    with criterion(3, "R J0 = J1, R J1 = J2, bi/tri-Hamiltonian, kernel fact, R J0 = J0 R^+", capsys):
        for e in EPS:
            m = suite[("mixed", e, "check_hamiltonian_chain")]
            h = suite[("husain", e, "check_hamiltonian_chain")]
            for r in (m, h):
                assert r.status == "pass", r.residual
            need_m = {"operator:R", "operator:J2", "operator:Rdag", "chain:R_J0_eq_J0_Rdag", "chain:J0/H1",
                      "chain:J1/H0", "chain:J2/Hm1", "chain:J1_kernel"}
            need_h = {"operator:R", "chain:R_J0_eq_J0_Rdag", "chain:J0/H1", "chain:J1/H0"}
            assert need_m <= {s.name for s in m.subchecks}
            assert need_h <= {s.name for s in h.subchecks}
            _all_pass(m.subchecks + h.subchecks)
            kernel = [s for s in suite[("mixed", e, "check_noether_pairs")].subchecks
                      if s.name == "hamiltonian:H0/same_flow0"]
            _all_pass(kernel)
            assert kernel


def test_criterion_04_jacobi(suite, capsys):
    with criterion(4, "Jacobi for J0, J1 and the (J0, J1) pencil; only J2 may skip", capsys):
        for r in _reports(suite, "check_jacobi_pencil"):
            assert r.status == "pass", r.residual
            for s in r.subchecks:
                if s.name == "jacobi:J2":
                    assert s.status in ("pass", "skipped")
                else:
                    assert s.status == "pass", (r.system, s.name, s.residual)
            assert {"jacobi:J0", "jacobi:J1", "jacobi:J0+J1"} <= {s.name for s in r.subchecks}
            # one report holds at most four trivector checks
            assert r.elapsed_ms < 4 * 300_000


def test_criterion_05_symmetries(suite, capsys):
    with criterion(5, "7 + 7 point families and both second-order families, >= 2 instances each", capsys):
        for name in SYSTEMS:
            cat = load_catalog(build_system(name, 1))
            points = [k for k, s in cat.symmetries.items() if s.kind == "point"]
            second = [k for k, s in cat.symmetries.items() if s.kind == "second-order"]
            assert len(points) == 7 and len(second) == 1
            for e in EPS:
                r = suite[(name, e, "check_symmetry_table")]
                for k, s in cat.symmetries.items():
                    main = [x for x in r.subchecks if x.name == f"symmetry:{k}"]
                    assert len(main) == 1
                    _all_pass(main)
                    if s.params:
                        inst = _subs(r, f"symmetry:{k}/instance")
                        assert len([x for x in inst if x.name != f"symmetry:{k}/instances"]) >= 2
                        _all_pass(inst)


def test_criterion_06_tables(suite, capsys):
    with criterion(6, "all 64 + 64 commutator table cells", capsys):
        for name in SYSTEMS:
            for e in EPS:
                cells = _subs(suite[(name, e, "check_symmetry_table")], "table:")
                assert len(cells) == 64, (name, len(cells))
                _all_pass(cells)


def test_criterion_07_noether(suite, capsys):
    with criterion(7, "inverse Noether pairs, conservation, X5/X4 not variational", capsys):
        for name in SYSTEMS:
            for e in EPS:
                r = suite[(name, e, "check_noether_pairs")]
                assert r.status == "pass", r.residual
                cat = load_catalog(build_system(name, e))
                for hid in cat.hamiltonians:
                    subs = _subs(r, f"hamiltonian:{hid}")
                    assert any(s.name == f"hamiltonian:{hid}/conserved" for s in subs)
                    _all_pass(subs)
                _all_pass(_subs(r, "symmetry:"))
        for name, sid in (("mixed", "X5"), ("husain", "X4")):
            cat = load_catalog(build_system(name, 1))
            G = apply_op(cat.operators["K"], cat.symmetries[sid].characteristic)
            assert not helmholtz_test([g.local for g in G])


def test_criterion_08_recursion(suite, capsys):
    with criterion(8, "recursion actions with primitives, constants and nonlocal outputs", capsys):
        for e in EPS:
            m = suite[("mixed", e, "check_recursion_actions")]
            h = suite[("husain", e, "check_recursion_actions")]
            assert len(m.subchecks) == 10
            assert len(h.subchecks) >= 8
            _all_pass(m.subchecks + h.subchecks)
            for name, ids in (("mixed", ("X4", "X5")), ("husain", ("X4", "X6"))):
                t = suite[(name, e, "check_symmetry_table")]
                for i in ids:
                    s = [x for x in t.subchecks if x.name == f"recursion:{i}/symmetry"]
                    assert len(s) == 1
                    _all_pass(s)


def test_criterion_09_hierarchy(suite, capsys):
    with criterion(9, "R^2 = -eps on flows, first nonlocal flows, commuting flows", capsys):
        need = {"mixed": {"R+", "R2flow", "R2Ha", "high", "commute4"},
                "husain": {"hi2", "R2flow", "R2Hf", "RHus6", "commute6"}}
        for name in SYSTEMS:
            for e in EPS:
                r = suite[(name, e, "check_hierarchy")]
                names = {s.name.split(":", 1)[1] for s in r.subchecks if s.name.startswith("hierarchy:")}
                assert need[name] <= names
                _all_pass(r.subchecks)


def test_criterion_10_kernel_soundness(suite, capsys):
    with criterion(10, "kernel properties, oracle agreement, negative controls, wall clock", capsys):
        import test_graded
        import test_oracle
        import test_properties

        t0 = time.perf_counter()
        for prop in (test_properties.test_leibniz, test_properties.test_total_derivatives_commute,
                     test_properties.test_euler_annihilates_divergences, test_properties.test_adjoint_involution,
                     test_properties.test_adjoint_anti_homomorphism, test_properties.test_vertical_d_squared_zero,
                     test_properties.test_equality_is_an_equivalence, test_graded.test_bivector_skew_part):
            prop()
        reset_oracle_stats()
        test_oracle.test_oracle_agrees_on_a_large_corpus()
        stats = oracle_stats()
        assert stats["comparisons"] >= 1000 and stats["agree"] == stats["comparisons"]
        failed = [k for k, r in negative_controls("mixed", 1).items() if r.status == "fail"]
        assert len(failed) >= 3
        total = suite["_elapsed"] + (time.perf_counter() - t0)
        assert total < 15 * 60, total
        assert len(CHECKS) == 8
