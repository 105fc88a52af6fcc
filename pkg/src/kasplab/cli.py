"""Scenario runner: read a TOML config, run the requested checks, write
report.json, spectra.csv and plots.svg.

Exit codes: 0 every verdict true, 1 some check failed (a full report is still
written), 2 usage, config or expression errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import approxid, deficiency, finmod, kasparov, multiplier, operators
from .expr import SECOND_ORDER_HEAD, Expression, ParseError, parse, parse_operator
from .funcspace import Grid, make_grid
from .plots import emit_plot

log = logging.getLogger("kasplab")

SCHEMA_VERSION = 1
KNOWN_CHECKS = ("deficiency", "adequacy", "kasparov", "multiplier", "finmod-battery", "spectrum")
# checks run in this order regardless of how they are listed
CHECK_ORDER = {name: j for j, name in enumerate(
    ("deficiency", "spectrum", "adequacy", "kasparov", "multiplier", "finmod-battery"))}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

def _parse_bound(v) -> float:
    if isinstance(v, (int, float)):
        return float(v)
    s = str(v).strip().lower()
    if s in ("inf", "+inf", "infinity", "oo"):
        return math.inf
    if s in ("-inf", "-infinity", "-oo"):
        return -math.inf
    return float(s)


def parse_interval(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).strip().strip("()[]").split(",")
    if len(parts) != 2:
        raise ConfigError(f"interval needs two endpoints, got {text!r}")
    try:
        return _parse_bound(parts[0]), _parse_bound(parts[1])
    except ValueError:
        raise ConfigError(f"bad interval {text!r}") from None


def _line_of(raw: str, needle: str) -> int | None:
    for j, line in enumerate(raw.splitlines(), 1):
        if needle and needle in line:
            return j
    return None


@dataclass
class Scenario:
    name: str
    kind: str
    potential: Expression
    interval: tuple
    grid: dict
    cutoff: dict
    checks: list
    sections: dict
    seed: int
    raw: str = field(repr=False)
    path: str = ""

    def make_grid(self) -> Grid:
        g = make_grid(float(self.grid.get("half_width", 20.0)), int(self.grid.get("n_points", 2001)))
        return g.refined(int(self.grid.get("refine", 0))) if self.grid.get("refine") else g


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        cfg = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    overrides = overrides or {}
    op = cfg.get("operator", {})
    kind = op.get("kind", "first_order")
    if kind not in ("first_order", "sturm_liouville"):
        raise ConfigError(f"{path}: unknown operator kind {kind!r} (line {_line_of(raw, 'kind')})")
    pot_text = str(op.get("potential", "0"))
    try:
        if "expression" in op:
            kind, pot = parse_operator(str(op["expression"]))
            pot_text = str(op["expression"])
        else:
            pot = parse(pot_text)
    except ParseError as exc:
        line = _line_of(raw, pot_text)
        raise ConfigError(f"{path}: {exc.at_line(line) if line else exc}") from None
    interval = parse_interval(op.get("interval", ["-inf", "inf"]))
    grid = dict(cfg.get("grid", {}))
    for key in ("half_width", "n_points", "refine"):
        if overrides.get(key) is not None:
            grid[key] = overrides[key]
    checks = list(cfg.get("checks", []))
    unknown = [c for c in checks if c not in KNOWN_CHECKS]
    if unknown:
        raise ConfigError(f"{path}: unknown checks {unknown} (line {_line_of(raw, unknown[0])})")
    needs_grid = {"adequacy", "kasparov", "spectrum"}
    if needs_grid & set(checks) and not grid:
        raise ConfigError(f"{path}: checks {sorted(needs_grid & set(checks))} need a [grid] section")
    if "adequacy" in checks and "cutoff" not in cfg:
        raise ConfigError(f"{path}: the adequacy check needs a [cutoff] section")
    seed = overrides.get("seed")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    name = str(cfg.get("name", Path(path).stem))
    sections = {k: v for k, v in cfg.items() if isinstance(v, dict)}
    return Scenario(name, kind, pot, interval, grid, dict(cfg.get("cutoff", {})), checks,
                    sections, seed, raw, str(path))


# --------------------------------------------------------------------------
# checks

def _first_order_D(sc: Scenario, g: Grid):
    return operators.first_order(g, sc.potential)


def _rho(name: str):
    return {"abs": approxid.abs_rho, "smooth": approxid.default_rho}[name]


def check_deficiency(sc: Scenario, jobs=None) -> dict:
    sec = sc.sections.get("deficiency", {})
    R = float(sec.get("r_max", 30.0))
    tol = float(sec.get("ode_tolerance", 1e-10))
    kind = deficiency.FIRST_ORDER if sc.kind == "first_order" else deficiency.STURM_LIOUVILLE
    op = deficiency.ContinuumOp(kind, sc.potential, sc.interval, sc.potential.expr)
    result = {"interval": [_num(v) for v in sc.interval], "tolerance": tol, "r_max": R}
    sweep = [str(s) for s in sec.get("sweep", [])]
    try:
        rep = deficiency.deficiency_indices(op, R_max=R, ode_tolerance=tol)
        result.update(rep.to_dict())
        verdict = rep.esa
        if "expect" in sec:
            verdict = list(rep.indices) == [int(v) for v in sec["expect"]]
            result["expected"] = [int(v) for v in sec["expect"]]
    except deficiency.InconclusiveError as exc:
        result["error"] = str(exc)
        verdict = False
    if sweep:
        rows = deficiency.perturbation_sweep(op, [parse(s) for s in sweep], labels=sweep,
                                             jobs=jobs, R_max=R, ode_tolerance=tol)
        table = []
        for lab, r in rows:
            if isinstance(r, Exception):
                table.append({"potential": lab, "error": str(r)})
                verdict = False
            else:
                table.append({"potential": lab, "n_plus": r.n_plus, "n_minus": r.n_minus,
                              "esa": r.esa})
                if "expect" in sec:
                    verdict = verdict and [r.n_plus, r.n_minus] == [int(v) for v in sec["expect"]]
                else:
                    verdict = verdict and r.esa
        result["sweep"] = table
    result["verdict"] = bool(verdict)
    return result


def check_spectrum(sc: Scenario) -> dict:
    sec = sc.sections.get("spectrum", {})
    g = sc.make_grid()
    count = int(sec.get("count", 10))
    if sc.kind == "first_order":
        Dp, Dm = operators.upwind_pair(g, sc.potential)
        T = operators.assemble_even(Dp, Dm, g)
        s = operators.even_spectrum(T, count + 4)
        # singular values come from D+* D+, so zero is resolved to ~ sqrt(eps) ||D+||
        zero = 10 * np.sqrt(np.finfo(float).eps) * abs(Dp).sum(axis=1).max()
        positive = s[s > zero][:count]
        eigs = sorted([-v for v in positive] + list(positive))
        values = list(positive)
    else:
        H = operators.schrodinger(g, sc.potential)
        w = operators.eigenvalues(H, subset=(0, count - 1))
        eigs = list(w)
        values = list(w)
    result = {"eigenvalues": [float(v) for v in eigs], "count": count,
              "domain_tag": f"L={g.half_width:g},n={g.n_points}"}
    verdict = True
    if "reference" in sec:
        ref = parse(str(sec["reference"]))(np.arange(1, len(values) + 1, dtype=float))
        tol = float(sec.get("rtol", 1e-2))
        rel = np.abs(np.array(values) - ref) / np.abs(ref)
        result.update({"reference": sec["reference"], "relative_errors": rel.tolist(),
                       "tolerance": tol})
        verdict = bool(len(values) == count and np.all(rel <= tol))
    result["verdict"] = verdict
    return result


def check_adequacy(sc: Scenario) -> dict:
    g = sc.make_grid()
    cut = sc.cutoff
    ks = [int(k) for k in cut.get("indices", list(range(1, 11)))]
    chi = approxid.plateau(float(cut.get("smoothing", 0.0)))
    fam = approxid.cutoff_family(chi, _rho(cut.get("rho", "abs")), ks, g)
    D = _first_order_D(sc, g) if sc.kind == "first_order" else operators.schrodinger(g, sc.potential)
    rep = approxid.certify_adequate(D, fam)
    out = rep.to_dict()
    sec = sc.sections.get("adequacy", {})
    verdict = rep.decay_verdict
    if "scaled_window" in sec:
        lo, hi = (float(v) for v in sec["scaled_window"])
        scaled = rep.scaled()
        out["scaled"] = scaled.tolist()
        out["scaled_window"] = [lo, hi]
        verdict = verdict and bool(np.all((scaled >= lo) & (scaled <= hi)))
    out["grid"] = {"half_width": g.half_width, "n_points": g.n_points}
    out["verdict"] = bool(verdict)
    return out


def check_kasparov(sc: Scenario) -> dict:
    sec = sc.sections.get("kasparov", {})
    g = sc.make_grid()
    D = _first_order_D(sc, g)
    radius = float(sec.get("bump_radius", 5.0))
    a = operators.bump_element(g, radius)
    cert = kasparov.certify_module(D, [a], names=[f"bump_r{radius:g}"])
    out = {"certificate": cert.to_dict(), "threshold": kasparov.DECAY_THRESHOLD,
           "drift_limit": kasparov.DRIFT_LIMIT}
    verdict = cert.overall
    if "perturbation" in sec:
        M = operators.multiplication(g, parse(str(sec["perturbation"])))
        prof = kasparov.perturbation_class_check(D, M, a)
        out["perturbation"] = prof.to_dict()
        out["kucerovsky_condition1"] = kasparov.kucerovsky_condition1(D, M, a)
        verdict = verdict and prof.decay_verdict and prof.refinement_stability
    if sec.get("reduction", False):
        Dp, Dm = operators.upwind_pair(g, sc.potential)
        red = kasparov.reduce_even_to_odd(operators.assemble_even(Dp, Dm, g))
        out["reduction"] = red.to_dict()
        out["reduction"]["tolerance"] = kasparov.EXACT_TOL
    out["verdict"] = bool(verdict)
    return out


def check_multiplier(sc: Scenario) -> dict:
    sec = sc.sections.get("multiplier", {})
    spacing = float(sec.get("spacing", 2.0))
    depth = int(sec.get("depth", 7))
    n_trunc = int(sec.get("n_trunc", depth - 1))
    sel_L = float(sec.get("selection_half_width", 33000.0))
    dom_L = float(sec.get("domain_half_width", 10000.0))
    lambdas = [float(v) for v in sec.get("lambdas", multiplier.DEFAULT_LAMBDAS)]
    scheme = str(sec.get("scheme", "upwind"))
    g_sel = make_grid(sel_L, int(round(2 * sel_L / spacing)) + 1)
    ks = sorted({int(round(2 ** (j / 4))) for j in range(0, 4 * int(math.log2(sel_L)) + 1)})
    raw = approxid.cutoff_family(approxid.plateau(), approxid.abs_rho, ks, g_sel)
    D = _first_order_D(sc, g_sel)
    totals = [operators.bump_element(g_sel, 3.0, c) for c in (0.0, 1.0, -1.0, 2.0, -2.0)]
    out: dict = {"spacing": spacing, "tolerance_mass": multiplier.MASS_LIMIT}
    try:
        sel = multiplier.select_subsequence(raw, totals, D, depth=depth)
    except multiplier.SelectionError as exc:
        out.update({"error": str(exc), "verdict": False})
        return out
    cert_ok = multiplier.verify_certificate(sel, D)
    series = multiplier.build_multiplier(sel, n_trunc)
    tail = multiplier.resolvent_in_A(series)
    g_dom = make_grid(dom_L, int(round(2 * dom_L / spacing)) + 1)
    cr = multiplier.compact_resolvent_certify(_first_order_D(sc, g_dom), series,
                                              lambdas=lambdas, scheme=scheme)
    out.update({"series": series.to_dict(), "certificate_verified": cert_ok,
                "resolvent_in_A": tail.to_dict(), "compact_resolvent": cr.to_dict()})
    out["verdict"] = bool(cert_ok and tail.verdict and cr.verdict)
    return out


def check_finmod(sc: Scenario, jobs=None) -> dict:
    sec = sc.sections.get("finmod", {})
    n = int(sec.get("instances", 100))
    try:
        rep = finmod.check_lemma_battery(sc.seed, instances=n, jobs=jobs)
        rep["verdict"] = True
    except finmod.BatteryFailure as exc:
        rep = {"failure": exc.instance, "error": exc.error, "verdict": False,
               "note": finmod.NOTE}
    return rep


def run_scenario(sc: Scenario, jobs=None) -> dict:
    start = time.perf_counter()
    results = {}
    for name in sorted(sc.checks, key=CHECK_ORDER.__getitem__):
        if name == "deficiency":
            results[name] = check_deficiency(sc, jobs)
        elif name == "spectrum":
            results[name] = check_spectrum(sc)
        elif name == "adequacy":
            results[name] = check_adequacy(sc)
        elif name == "kasparov":
            results[name] = check_kasparov(sc)
        elif name == "multiplier":
            results[name] = check_multiplier(sc)
        elif name == "finmod-battery":
            results[name] = check_finmod(sc, jobs)
    elapsed = time.perf_counter() - start
    provenance = {
        "config_sha256": hashlib.sha256(sc.raw.encode("utf-8")).hexdigest(),
        "grid": {k: _num(v) for k, v in sorted(sc.grid.items())},
        "seed": sc.seed,
        "package_version": __version__,
        "tolerances": {"deficiency_ode": 1e-10, "exact_identities": kasparov.EXACT_TOL,
                       "compactness_ratio": kasparov.DECAY_THRESHOLD,
                       "refinement_drift": kasparov.DRIFT_LIMIT,
                       "boundary_mass": multiplier.MASS_LIMIT, "finmod": finmod.TOL},
        "wall_clock_seconds": elapsed,
    }
    return {"schema_version": SCHEMA_VERSION, "scenario": sc.name, "checks": results,
            "all_passed": all(r.get("verdict", False) for r in results.values()),
            "provenance": provenance}


# --------------------------------------------------------------------------
# output

def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return _num(obj)


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def spectra_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenvalue", "domain_tag"])
    spectrum = report.get("checks", {}).get("spectrum")
    if spectrum:
        for j, v in enumerate(spectrum["eigenvalues"]):
            w.writerow([j, repr(float(v)), spectrum["domain_tag"]])
    return buf.getvalue()


# --------------------------------------------------------------------------
# entry points

def _overrides(args) -> dict:
    return {"n_points": args.grid_n, "half_width": args.half_width, "refine": args.refine,
            "seed": args.seed}


def _cmd_run(args) -> int:
    try:
        scenarios = [load_scenario(p, _overrides(args)) for p in args.configs]
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if len(scenarios) > 1 and (args.json_out or args.csv_out or args.svg_out):
        print("error: explicit output paths need a single config", file=sys.stderr)
        return 2
    code = 0
    for sc in scenarios:
        base = Path(args.out_dir) / (sc.name if len(scenarios) > 1 else "")
        report = run_scenario(sc, jobs=args.jobs)
        atomic_write(args.json_out or base / "report.json", dumps_report(report))
        atomic_write(args.csv_out or base / "spectra.csv", spectra_csv(report))
        if args.svg_out or args.plots:
            atomic_write(args.svg_out or base / "plots.svg", emit_plot(_clean(report)))
        status = "PASS" if report["all_passed"] else "FAIL"
        for name, res in report["checks"].items():
            print(f"{sc.name}:{name}: {'pass' if res.get('verdict') else 'FAIL'}")
        print(f"{sc.name}: {status}")
        if not report["all_passed"]:
            code = 1
    return code


def _cmd_deficiency(args) -> int:
    try:
        kind, pot = parse_operator(args.operator)
        interval = parse_interval(args.interval)
    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    k = deficiency.FIRST_ORDER if kind == "first_order" else deficiency.STURM_LIOUVILLE
    op = deficiency.ContinuumOp(k, pot, interval, pot.expr)
    try:
        rep = deficiency.deficiency_indices(op, R_max=args.r_max)
    except deficiency.InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return 1
    print(f"deficiency indices (n+, n-) = ({rep.n_plus}, {rep.n_minus}); "
          f"essentially self-adjoint: {rep.esa}")
    if args.json_out:
        atomic_write(args.json_out, dumps_report({
            "schema_version": SCHEMA_VERSION, "operator": args.operator,
            "interval": [_num(v) for v in interval], "deficiency": rep.to_dict()}))
    return 0 if rep.esa else 1


def _cmd_spectrum(args) -> int:
    try:
        sc = load_scenario(args.config, _overrides(args))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sc.checks = ["spectrum"]
    report = run_scenario(sc, jobs=args.jobs)
    text = spectra_csv(report)
    if args.csv_out:
        atomic_write(args.csv_out, text)
    else:
        sys.stdout.write(text)
    if args.json_out:
        atomic_write(args.json_out, dumps_report(report))
    if args.svg_out:
        atomic_write(args.svg_out, emit_plot(_clean(report)))
    return 0 if report["all_passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kasplab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"kasplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--grid-n", type=int, help="override grid n_points")
        sp_.add_argument("--half-width", type=float, help="override grid half width L")
        sp_.add_argument("--refine", type=int, help="grid refinement levels (n -> 2n - 1 each)")
        sp_.add_argument("--json-out", help="path of report.json")
        sp_.add_argument("--svg-out", help="path of plots.svg")
        sp_.add_argument("--seed", type=int, help="override the config seed")
        sp_.add_argument("--jobs", type=int, default=None, help="worker threads")

    r = sub.add_parser("run", help="run one or more scenario configs")
    r.add_argument("configs", nargs="+")
    common(r)
    r.add_argument("--csv-out", help="path of spectra.csv")
    r.add_argument("--out-dir", default=".", help="directory for default output files")
    r.add_argument("--plots", action="store_true", help="also write plots.svg")
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("deficiency", help="deficiency indices of a continuum operator")
    d.add_argument("operator", help="e.g. 'i_d_dx + x' or '-d2_dx2 + x^2'")
    d.add_argument("--interval", default="-inf,inf", help="endpoints a,b (inf allowed)")
    d.add_argument("--r-max", type=float, default=30.0)
    d.add_argument("--json-out")
    d.set_defaults(func=_cmd_deficiency)

    s = sub.add_parser("spectrum", help="low-lying spectrum of the configured operator")
    s.add_argument("config")
    common(s)
    s.add_argument("--csv-out", help="path of spectra.csv (stdout if omitted)")
    s.set_defaults(func=_cmd_spectrum)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    # an operator starting with '-' would otherwise read as an option: move it
    # behind a '--' separator
    if argv and argv[0] == "deficiency" and "--" not in argv:
        # same for an interval such as '-inf,inf'
        joined, it = [], iter(argv)
        for a in it:
            joined.append(f"--interval={next(it, '')}" if a == "--interval" else a)
        argv = joined
        heads = [a for a in argv[1:] if a.startswith(SECOND_ORDER_HEAD)]
        if heads:
            rest = [a for a in argv[1:] if not a.startswith(SECOND_ORDER_HEAD)]
            argv = [argv[0], *rest, "--", *heads]
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
