"""Command-line front end.

    foliab <command> --scenario <path> [--out <dir>] [--seed <n>] [--tol-scale <f>]

Exit codes: 0 all checks pass, 1 some check failed, 2 scenario error,
3 unknown fixture, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import os
import platform
import sys
import tempfile
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__, fixtures, suites
from .audit import AuditConfig
from .core import GeometryError

SCHEMA_VERSION = 1
COMMANDS = ("identities", "jacobi", "normal-chart", "audit", "partition")
EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_FIXTURE, EXIT_NUMERIC = 0, 1, 2, 3, 4


class ScenarioError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# scenario schema ----------------------------------------------------------------------
def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos(v):
    return _num(v) and v > 0


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _box(v):
    return isinstance(v, list) and v and all(isinstance(r, list) and len(r) == 2 and all(map(_num, r)) and r[0] < r[1]
                                             for r in v)


def _pair(v):
    return isinstance(v, list) and len(v) == 2 and all(map(_pos, v))


_KEYS = {
    "schema_version": (lambda v: v == SCHEMA_VERSION, f"must equal {SCHEMA_VERSION}"),
    "command": (lambda v: v in COMMANDS, f"must be one of {list(COMMANDS)}"),
    "fixture": (lambda v: isinstance(v, str), "must be a fixture name"),
    "metric": (lambda v: isinstance(v, dict), "must be an inline fixture definition"),
    "params": (lambda v: isinstance(v, dict), "must be an object"),
    "seed": (lambda v: _int(v) and v >= 0, "must be a nonnegative integer"),
    "tolerance_scale": (_pos, "must be positive"),
    "points": (lambda v: _int(v) and v > 0, "must be a positive integer"),
    "solves": (lambda v: _int(v) and v > 0, "must be a positive integer"),
    "curves": (lambda v: _int(v) and v > 0, "must be a positive integer"),
    "richardson": (lambda v: isinstance(v, bool), "must be a boolean"),
    "integral": (lambda v: isinstance(v, bool), "must be a boolean"),
    "center": (lambda v: isinstance(v, list) and all(map(_num, v)), "must be a coordinate list"),
    "radii": (_pair, "must be two positive numbers"),
    "audit": (lambda v: isinstance(v, dict), "must be an object of audit settings"),
    "injectivity": (lambda v: isinstance(v, bool), "must be a boolean"),
    "chart_bounds": (lambda v: isinstance(v, bool), "must be a boolean"),
    "r1": (_pos, "must be positive"),
    "region": (_box, "must be a list of [lo, hi] intervals"),
    "cover_radii": (_pair, "must be two positive numbers"),
    "test_lattice": (lambda v: _int(v) and v > 1, "must be an integer > 1"),
    "queries": (lambda v: _int(v) and v > 0, "must be a positive integer"),
    "out": (lambda v: isinstance(v, str), "must be a path"),
}
_REQUIRED = ("schema_version",)
_RANDOM = ("identities", "jacobi", "normal-chart", "partition")
_AUDIT_FIELDS = {f.name: f for f in dataclasses.fields(AuditConfig)}


def parse_scenario(data: Any, command: str) -> dict:
    """Validate a scenario dict; raises :class:`ScenarioError` naming the offending key."""
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    for key in data:
        if key not in _KEYS:
            raise ScenarioError(key, "unknown key")
    for key in _REQUIRED:
        if key not in data:
            raise ScenarioError(key, "missing required key")
    for key, value in data.items():
        ok, msg = _KEYS[key]
        if not ok(value):
            raise ScenarioError(key, msg)
    if "command" in data and data["command"] != command:
        raise ScenarioError("command", f"scenario is for {data['command']!r}, not {command!r}")
    if ("fixture" in data) == ("metric" in data):
        raise ScenarioError("fixture", "give exactly one of 'fixture' or 'metric'")
    for k, v in data.get("params", {}).items():
        if not (_num(v) or (isinstance(v, list) and v and all(map(_num, v)))):
            raise ScenarioError(f"params.{k}", "must be a number or a list of numbers")
    for k, v in data.get("audit", {}).items():
        if k not in _AUDIT_FIELDS or k in ("sample_points",):
            raise ScenarioError(f"audit.{k}", "unknown audit setting")
    if command == "partition":
        for k in ("r1", "region"):
            if k not in data:
                raise ScenarioError(k, "required by the partition command")
    return dict(data)


def _audit_config(raw: dict, region: Optional[list]) -> AuditConfig:
    kw = {}
    for k, v in raw.items():
        kw[k] = tuple(tuple(r) if isinstance(r, list) else r for r in v) if isinstance(v, list) else v
    if region is not None and "region" not in kw:
        kw["region"] = tuple(tuple(r) for r in region)
    try:
        return AuditConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("audit", str(exc)) from None


def _fixtures_for(sc: dict) -> list[tuple[str, Any]]:
    """Fixture instances, one per combination of swept parameters."""
    params = sc.get("params", {})
    keys = sorted(params)
    grids = [params[k] if isinstance(params[k], list) else [params[k]] for k in keys]
    out = []
    for combo in itertools.product(*grids):
        kw = dict(zip(keys, combo))
        label = ", ".join(f"{k}={v:g}" for k, v in kw.items())
        try:
            if "fixture" in sc:
                fx = fixtures.get(sc["fixture"], **kw)
                name = sc["fixture"]
            else:
                name = "inline"
                fx = fixtures.build_fixture(name, sc["metric"], **kw)
        except fixtures.FixtureMissing:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioError("metric" if "metric" in sc else "params", str(exc)) from None
        out.append((f"{name}[{label}]" if label else name, fx))
    return out


# report emission -------------------------------------------------------------------------
def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def config_hash(sc: dict) -> str:
    blob = json.dumps(_clean(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_report(command: str, sc: dict, results: list[tuple[str, suites.SuiteResult]]) -> dict:
    rows = []
    info = {}
    for label, res in results:
        for c in res.checks:
            d = c.as_dict()
            d["fixture"] = label
            rows.append(d)
        info[label] = res.info
    return {
        "command": command,
        "passed": all(r["pass"] for r in rows),
        "checks": rows,
        "details": info,
        "metadata": {
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
            "config_hash": config_hash(sc),
            "scenario": sc,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


def write_outputs(out: Path, report: dict, results: list[tuple[str, suites.SuiteResult]]):
    atomic_write(out / "report.json", json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    check_rows = [{k: r[k] for k in ("fixture", "name", "anchor", "residual", "tolerance", "pass")} for r in report["checks"]]
    atomic_write(out / "checks.csv", to_csv(check_rows))
    for label, res in results:
        for tname, rows in res.tables.items():
            safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label)
            atomic_write(out / f"{tname}_{safe}.csv", to_csv([dict({"fixture": label}, **r) for r in rows]))


# commands -----------------------------------------------------------------------------------
def run_command(command: str, sc: dict) -> list[tuple[str, suites.SuiteResult]]:
    scale = float(sc.get("tolerance_scale", 1.0))
    seed = sc.get("seed")
    if command in _RANDOM and seed is None:
        raise ScenarioError("seed", "required because this command samples randomly")
    results = []
    for label, fx in _fixtures_for(sc):
        if command == "identities":
            res = suites.identities(fx, sc.get("points", 5), seed, scale)
        elif command == "jacobi":
            res = suites.jacobi(fx, sc.get("solves", 20), sc.get("curves", 2), seed, scale, sc.get("richardson", False))
        elif command == "normal-chart":
            radii = tuple(sc.get("radii", (0.2, 0.2)))
            res = suites.normal_chart(fx, sc.get("center"), radii, sc.get("points", 3), seed, scale,
                                      sc.get("integral", False))
        elif command == "audit":
            cfg = _audit_config(sc.get("audit", {}), sc.get("region"))
            res = suites.audit_rows(fx, cfg, sc.get("injectivity", False), sc.get("chart_bounds", False), scale)
        else:
            res = suites.partition(fx, sc["r1"], sc["region"], sc.get("cover_radii"), sc.get("test_lattice", 100),
                                   sc.get("queries", 1000), seed, scale)
        results.append((label, res))
    if command == "audit" and len(results) > 1:
        results.append(("sweep", _sweep_trend(results)))
    return results


def _sweep_trend(results) -> suites.SuiteResult:
    """Ratios of successive sup norms across a parameter sweep (informational rows)."""
    res = suites.SuiteResult()
    sups = [r.info["sup"] for _, r in results]
    res.tables["trend"] = [dict({"fixture": label}, **{k: v for k, v in s.items()}) for (label, _), s in zip(results, sups)]
    ratios = {}
    for k in sups[0]:
        vals = [s[k] for s in sups]
        ratios[k] = [b / a if a > 0 else (math.inf if b > 0 else 1.0) for a, b in zip(vals, vals[1:])]
    res.info["ratios"] = ratios
    return res


def list_fixtures_table() -> str:
    rows = fixtures.list_fixtures()
    lines = [f"{'name':<20}{'n_prime':>8}{'n_leaf':>8}  pi   description"]
    for r in rows:
        lines.append(f"{r['name']:<20}{r['n_transverse']:>8}{r['n_leafwise']:>8}  {r['projection']:<4} {r['description']}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="foliab", description="Numerical checks for Riemannian foliations.")
    ap.add_argument("command", choices=COMMANDS + ("list-fixtures",))
    ap.add_argument("--scenario", type=Path, help="scenario JSON file")
    ap.add_argument("--out", type=Path, help="output directory (default: from scenario or ./foliab-out)")
    ap.add_argument("--seed", type=int, help="override the scenario seed")
    ap.add_argument("--tol-scale", type=float, help="multiply every tolerance")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-fixtures":
        print(list_fixtures_table())
        return EXIT_OK
    if args.scenario is None:
        print("error: --scenario is required", file=sys.stderr)
        return EXIT_PARSE
    try:
        raw = json.loads(args.scenario.read_text())
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except json.JSONDecodeError as exc:
        print(f"error: scenario is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        sc = parse_scenario(raw, args.command)
        if args.seed is not None:
            sc["seed"] = args.seed
        if args.tol_scale is not None:
            if not args.tol_scale > 0:
                raise ScenarioError("--tol-scale", "must be positive")
            sc["tolerance_scale"] = args.tol_scale
        out = args.out or Path(sc.get("out", "foliab-out"))
        sc.pop("out", None)
        results = run_command(args.command, sc)
    except ScenarioError as exc:
        print(f"error: invalid scenario key {exc}", file=sys.stderr)
        return EXIT_PARSE
    except fixtures.FixtureMissing as exc:
        print(f"error: unknown fixture {exc.args[0]!r}", file=sys.stderr)
        return EXIT_FIXTURE
    except (GeometryError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = build_report(args.command, sc, results)
    write_outputs(out, report, results)
    for r in report["checks"]:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['fixture']}: {r['name']}  {r['residual']:.3e} <= {r['tolerance']:.1e}")
    print(f"report written to {out / 'report.json'}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
