"""Command-line interface: exit codes, formats, seeds and catalog inspection."""

import json
import subprocess
import sys

import pytest

from heavenly import cli
from heavenly.verify import CheckReport, SubCheck


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_verify_single_check(capsys):
    code, out, _ = run(["verify", "--system", "mixed", "--eps", "plus", "--checks", "check_lax_pair"], capsys)
    assert code == 0
    assert "check_lax_pair" in out and "0 failed" in out


def test_unknown_check_exits_2(capsys):
    code, _, err = run(["verify", "--checks", "nosuch"], capsys)
    assert code == 2 and "nosuch" in err


def test_bad_flag_exits_2(capsys):
    code, _, _ = run(["verify", "--system", "kdv"], capsys)
    assert code == 2
    code, _, _ = run([], capsys)
    assert code == 2


def test_json_report(capsys, tmp_path):
    path = tmp_path / "r.json"
    code, out, _ = run(["verify", "--system", "husain", "--eps", "minus", "--checks", "lax_pair,symplectic_structure",
                        "--format", "json", "--output", str(path)], capsys)
    assert code == 0 and out == ""
    data = json.loads(path.read_text())
    assert [d["check_id"] for d in data] == ["check_lax_pair", "check_symplectic_structure"]
    assert all(d["status"] == "pass" and d["schema"] == 1 and d["residual"] is None for d in data)


def test_empty_selection(capsys):
    code, out, _ = run(["verify", "--checks", ",", "--format", "json"], capsys)
    assert code == 0 and json.loads(out) == []


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("HEAVENLY_SEED", "17")
    assert cli.parse_config(["verify"]).seed == 17
    assert cli.parse_config(["verify", "--seed", "4"]).seed == 4
    monkeypatch.delenv("HEAVENLY_SEED")
    assert cli.parse_config(["verify"]).seed == 0


def test_bad_seed_environment(monkeypatch, capsys):
    monkeypatch.setenv("HEAVENLY_SEED", "abc")
    code, _, err = run(["verify", "--checks", "lax_pair"], capsys)
    assert code == 2 and "HEAVENLY_SEED" in err


def test_defaults():
    cfg = cli.parse_config(["verify"])
    assert (cfg.system, cfg.eps, cfg.checks, cfg.seed, cfg.format, cfg.strict) == ("both", "both", None, 0, "text",
                                                                                      False)


def test_show_husain_J1(capsys):
    code, out, _ = run(["show", "J1", "--system", "husain"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["system"] == "husain" and d["kind"] == "operator"
    assert "matrix" in d["value"]


def test_show_qualified_and_missing(capsys):
    code, out, _ = run(["show", "hamiltonian:H1", "--system", "mixed"], capsys)
    assert code == 0 and json.loads(out)["kind"] == "hamiltonian"
    code, _, _ = run(["show", "nothing-here"], capsys)
    assert code == 2


def test_list(capsys):
    code, out, _ = run(["list", "--system", "mixed", "--format", "json"], capsys)
    assert code == 0
    rows = json.loads(out)
    assert {"system", "kind", "id", "note"} == set(rows[0])
    assert any(r["kind"] == "table" for r in rows)


def _report(status, sub_status):
    return CheckReport("check_x", "mixed", 1, status, None if status == "pass" else "r", 20, 1.0,
                       [SubCheck("a", sub_status, None, "irreducible")])


def test_strict_promotes_skips(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_suite", lambda *a, **k: [_report("pass", "skipped")])
    assert run(["verify"], capsys)[0] == 0
    code, out, _ = run(["verify", "--strict"], capsys)
    assert code == 1 and "skipped a" in out


def test_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_suite", lambda *a, **k: [_report("fail", "fail")])
    code, out, _ = run(["verify", "--format", "json"], capsys)
    assert code == 1
    d = json.loads(out)
    assert d[0]["status"] == "fail" and d[0]["residual"]


def test_text_table_shows_residual(capsys):
    cli.emit_report([_report("fail", "fail")], "text")
    out = capsys.readouterr().out
    assert "residual: r" in out and "1 failed" in out


def test_console_module():
    p = subprocess.run([sys.executable, "-m", "heavenly", "verify", "--checks", "nosuch"], capture_output=True)
    assert p.returncode == 2
