"""Command-line front end: ``verify``, ``list`` and ``show``.

Exit codes: 0 when nothing failed, 1 when a check failed, 2 on bad arguments.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Sequence

from .catalog import build_system, load_catalog
from .diffexpr import KernelError
from .serial import to_json
from .verify import CHECKS, CheckReport, resolve_checks, run_suite

REPORT_SCHEMA = 1

SYSTEMS = {"mixed": ("mixed",), "husain": ("husain",), "both": ("mixed", "husain")}
EPS = {"plus": (1,), "minus": (-1,), "both": (1, -1), "symbolic": (None,), "all": (1, -1, None)}


@dataclass
class CliConfig:
    command: str
    system: str = "both"
    eps: str = "both"
    checks: tuple[str, ...] | None = None  # None selects every check
    seed: int = 0
    format: str = "text"
    output: str | None = None
    strict: bool = False
    item: str | None = None


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit with 2 and no traceback
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heavenly", description="Verify the identities of the mixed heavenly and Husain systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--system", choices=sorted(SYSTEMS), default="both")
        sp.add_argument("--eps", choices=sorted(EPS), default="both")
        sp.add_argument("--format", choices=("text", "json"), default="text")
        sp.add_argument("--output", default=None, help="write to this file instead of stdout")

    v = sub.add_parser("verify", help="run verification checks")
    common(v)
    v.add_argument("--checks", default="all", help="comma-separated check ids, or 'all'")
    v.add_argument("--seed", type=int, default=None, help="oracle seed (default: $HEAVENLY_SEED or 0)")
    v.add_argument("--strict", action="store_true", help="count skipped checks as failures")

    ls = sub.add_parser("list", help="list catalog entries")
    common(ls)

    sh = sub.add_parser("show", help="print one catalog entry as JSON")
    sh.add_argument("item", help="entry id, optionally qualified as kind:id")
    common(sh)
    return p


def parse_config(argv: Sequence[str]) -> CliConfig:
    ns = _parser().parse_args(list(argv))
    cfg = CliConfig(ns.command, ns.system, ns.eps, format=ns.format, output=ns.output)
    if ns.command == "verify":
        if ns.checks.strip() != "all":
            names = tuple(c.strip() for c in ns.checks.split(",") if c.strip())
            try:
                cfg.checks = tuple(resolve_checks(names))
            except KernelError as exc:
                raise _UsageError(f"{exc}; known checks: {', '.join(CHECKS)}") from None
        cfg.seed = _seed(ns.seed)
        cfg.strict = ns.strict
    if ns.command == "show":
        cfg.item = ns.item
    return cfg


def _seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("HEAVENLY_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise _UsageError(f"HEAVENLY_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# output


def _row(r: CheckReport) -> str:
    eps = "sym" if r.eps is None else f"{r.eps:+d}"
    line = (f"{r.check_id:<28} {r.system:<7} {eps:>4}  {r.status:<7} "
            f"{len(r.subchecks):>4} sub  {r.oracle_samples:>6} pts  {r.elapsed_ms:>9.1f} ms")
    if r.status == "fail":
        line += f"\n    residual: {r.residual}"
    for s in r.subchecks:
        if s.status == "skipped":
            line += f"\n    skipped {s.name}: {s.detail}"
    return line


def report_json(reports: Sequence[CheckReport], timing: bool = True) -> list[dict]:
    out = []
    for r in reports:
        d = r.to_dict()
        d["schema"] = REPORT_SCHEMA
        if not timing:
            d.pop("elapsed_ms")
        out.append(d)
    return out


def emit_report(reports: Sequence[CheckReport], fmt: str = "text", path: str | None = None) -> None:
    """Write reports as a JSON array or as a table with one row per check."""
    if fmt == "json":
        text = json.dumps(report_json(reports), indent=1, sort_keys=True)
    else:
        lines = [_row(r) for r in reports]
        n_fail = sum(r.status == "fail" for r in reports)
        n_skip = sum(r.status == "skipped" for r in reports)
        lines.append(f"{len(reports)} checks, {n_fail} failed, {n_skip} skipped")
        text = "\n".join(lines)
    _write(text, path)


def _write(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# commands


def _verify(cfg: CliConfig) -> int:
    reports = run_suite(SYSTEMS[cfg.system], EPS[cfg.eps], cfg.checks, cfg.seed)
    emit_report(reports, cfg.format, cfg.output)
    failed = any(r.status == "fail" for r in reports)
    skipped = any(s.status == "skipped" for r in reports for s in r.subchecks)
    return 1 if failed or (cfg.strict and skipped) else 0


def _catalogs(cfg: CliConfig):
    # entries are shown at the first selected value of eps
    e = EPS[cfg.eps][0]
    for name in SYSTEMS[cfg.system]:
        sys_ = build_system(name, e)
        yield sys_, load_catalog(sys_)


def _list(cfg: CliConfig) -> int:
    rows = []
    for sys_, cat in _catalogs(cfg):
        for kind, i, note in cat.ids():
            rows.append({"system": sys_.name, "kind": kind, "id": i, "note": note})
    if cfg.format == "json":
        _write(json.dumps(rows, indent=1), cfg.output)
    else:
        _write("\n".join(f"{r['system']:<7} {r['kind']:<11} {r['id']:<18} {r['note']}" for r in rows), cfg.output)
    return 0


def _lookup(cat, kind: str | None, key: str):
    """(kind, JSON value) for an id, searching kinds in a fixed order."""
    order = ["operator", "symmetry", "hamiltonian", "recursion", "transform", "hierarchy", "table", "lagrangian"]
    for k in order if kind is None else [kind]:
        if k == "operator" and key in cat.operators:
            return k, to_json(cat.operators[key])
        if k == "symmetry" and key in cat.symmetries:
            s = cat.symmetries[key]
            return k, {"params": list(s.params), "characteristic": to_json(s.characteristic), "note": s.note}
        if k == "hamiltonian" and key in cat.hamiltonians:
            h = cat.hamiltonians[key]
            return k, {"density": to_json(h.value()), "operator": h.operator, "flow": to_json(h.flow()),
                       "generates": h.generates, "note": h.note}
        if k == "recursion" and key in cat.recursion:
            f = cat.recursion[key]
            return k, {"source": to_json(f.source()), "expected": to_json(f.expected()), "mode": f.mode,
                       "times": f.times, "note": f.note}
        if k == "transform" and key in cat.transforms:
            f = cat.transforms[key]
            return k, {"source": to_json(f.source()), "expected": to_json(f.expected()), "note": f.note}
        if k == "hierarchy" and key in cat.hierarchy:
            f = cat.hierarchy[key]
            return k, {"kind": f.kind, "lhs": to_json(f.lhs()),
                       "expected": to_json(f.expected()) if f.expected else None, "note": f.note}
        if k == "table":
            for c in cat.table.cells:
                if f"{c.row}|{c.col}" == key:
                    return k, {"row": c.row, "col": c.col, "label": c.label}
        if k == "lagrangian" and key == "L":
            lag = cat.lagrangian
            return k, {"density": to_json(lag.density), "momenta": to_json(list(lag.momenta)),
                       "legendre_density": to_json(lag.legendre_density)}
    return None


def _show(cfg: CliConfig) -> int:
    kind, key = (cfg.item.split(":", 1) if ":" in cfg.item else (None, cfg.item))
    found = []
    for sys_, cat in _catalogs(cfg):
        hit = _lookup(cat, kind, key)
        if hit is not None:
            found.append({"system": sys_.name, "kind": hit[0], "id": key, "value": hit[1]})
    if not found:
        raise _UsageError(f"no catalog entry {cfg.item!r}")
    out = found[0] if len(found) == 1 else found
    _write(json.dumps(out, indent=1, sort_keys=True), cfg.output)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        return {"verify": _verify, "list": _list, "show": _show}[cfg.command](cfg)
    except _UsageError as exc:
        sys.stderr.write(f"heavenly: error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"heavenly: error: {exc}\n")
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
