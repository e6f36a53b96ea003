"""Command-line front end: ``quhe solve | sweep | verify-paper | robustness``.

Exit codes: 0 success, 1 a check failed, 2 usage or parse error,
3 infeasible scenario. Outputs are deterministic for fixed inputs; wall
times are written only with ``--timing``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import qkd
from .convex import ConvexSolveError
from .objective import breakdown, check_feasibility, objective_terms
from .orchestrator import SolverTrace, run_baseline, run_quhe, sample_robustness
from .scenario import ScenarioError, load_scenario, surfnet_default
from .stage1 import Stage1InfeasibleError
from .verify import run_reference_checks

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_SEED = 42
METHODS = ("quhe", "aa", "olaa", "occr")
SWEEP_COLUMNS = ("method", "param", "value", "seed", "objective", "t_total_s", "e_total_j",
                 "u_msl", "u_qkd", "converged", "wall_ms")
INFEASIBLE = (Stage1InfeasibleError, qkd.QKDDomainError, ConvexSolveError)


class UsageError(Exception):
    pass


# -- sweeps ------------------------------------------------------------------

def _set_b_total(s, v):
    return s.with_server(b_total=v)


def _set_f_total(s, v):
    return s.with_server(f_total=v)


def _set_p_max(s, v):
    return s.with_clients(p_max=v)


def _set_f_max(s, v):
    return s.with_clients(f_max=v)

SWEEP_PARAMS = {
    "b_total": _set_b_total,
    "p_max": _set_p_max,
    "f_max_client": _set_f_max,
    "f_total_server": _set_f_total,
}


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    methods: tuple
    seeds: tuple

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise UsageError(f"unknown sweep parameter {self.param!r}; "
                             f"expected one of {sorted(SWEEP_PARAMS)}")
        if not self.values:
            raise UsageError("sweep needs at least one value")
        if not self.methods:
            raise UsageError("sweep needs at least one method")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {bad}; expected {list(METHODS)}")
        if not self.seeds:
            raise UsageError("sweep needs at least one seed")


def solve_method(scenario, method):
    """Run a method; returns (state, objective, converged, trace)."""
    if method == "quhe":
        res = run_quhe(scenario)
        return res.state, res.objective, res.converged, res.trace
    res = run_baseline(scenario, method.upper())
    trace = SolverTrace(converged=res.converged, start="baseline")
    trace.add(0, method, res.objective)
    return res.state, res.objective, res.converged, trace


def _sweep_row(args):
    scenario, spec_param, value, method, seed, timing = args
    sc = SWEEP_PARAMS[spec_param](scenario, value).with_seed(seed)
    row = {"method": method, "param": spec_param, "value": value, "seed": seed}
    t0 = time.perf_counter()
    try:
        state, obj, converged, _ = solve_method(sc, method)
        terms = objective_terms(sc, state)
        converged = converged and check_feasibility(sc, state).ok
        row.update(objective=obj, t_total_s=terms.T, e_total_j=terms.e_total,
                   u_msl=terms.u_msl, u_qkd=terms.u_qkd, converged=converged)
    except (*INFEASIBLE, ValueError) as exc:
        row.update(objective="nan", t_total_s="nan", e_total_j="nan", u_msl="nan",
                   u_qkd="nan", converged=False, error=str(exc))
    row["wall_ms"] = round(1e3 * (time.perf_counter() - t0), 3) if timing else 0
    return row


def run_sweep(scenario, spec: SweepSpec, workers=1, timing=False) -> list:
    """One row per (value, method, seed), sorted by value then method."""
    jobs = [(scenario, spec.param, float(v), m, int(s), timing)
            for v in spec.values for m in spec.methods for s in spec.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    rows.sort(key=lambda r: (r["value"], METHODS.index(r["method"]), r["seed"]))
    return rows


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


# -- documents ---------------------------------------------------------------

def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def result_document(scenario, method, state, objective, converged, seed) -> dict:
    terms = objective_terms(scenario, state)
    return {
        "method": method,
        "seed": seed,
        "settings": scenario.settings.as_dict(),
        "objective": objective,
        "converged": converged,
        "state": state.as_dict(),
        "terms": {"u_qkd": terms.u_qkd, "u_msl": terms.u_msl, "T": terms.T,
                  "e_total": terms.e_total},
        "costs": breakdown(scenario, state).as_dict(),
        "feasibility": check_feasibility(scenario, state).as_dict(),
    }


def _write_atomic(files: dict):
    """Write every file or none: stage into temporaries, then rename."""
    staged = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


# -- commands ----------------------------------------------------------------

def _scenario(args):
    sc = load_scenario(args.scenario) if args.scenario else surfnet_default()
    changes = {"seed": args.seed}
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.max_iters is not None:
        changes["max_outer_iters"] = args.max_iters
    return sc.with_settings(**changes)


def cmd_solve(args) -> int:
    method = args.method or "quhe"
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {list(METHODS)}")
    sc = _scenario(args)
    state, obj, converged, trace = solve_method(sc, method)
    doc = result_document(sc, method, state, obj, converged, args.seed)
    tdoc = trace.as_dict(timing=args.timing)
    tdoc.update(method=method, seed=args.seed)
    out = Path(args.out)
    _write_atomic({out / "result.json": _json(doc), out / "trace.json": _json(tdoc)})
    print(f"{method}: objective {obj:.10g} converged={converged} -> {out}")
    return EXIT_OK


def _csv_list(text, cast):
    if text is None:
        return ()
    items = [t.strip() for t in text.split(",")]
    try:
        return tuple(cast(t) for t in items if t)
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from None


def cmd_sweep(args) -> int:
    methods = _csv_list(args.method, str) if args.method is not None else METHODS
    seeds = _csv_list(args.seeds, int) if args.seeds else (args.seed,)
    spec = SweepSpec(args.param, _csv_list(args.values, float), methods, seeds)
    sc = _scenario(args)
    rows = run_sweep(sc, spec, workers=args.workers, timing=args.timing)
    _write_atomic({Path(args.out): sweep_csv(rows)})
    failed = sum(1 for r in rows if "error" in r)
    print(f"sweep: {len(rows)} rows ({failed} failed) -> {args.out}")
    return EXIT_OK


def cmd_verify_paper(args) -> int:
    sc = load_scenario(args.scenario) if args.scenario else surfnet_default()
    checks = run_reference_checks(sc)
    ok = all(c.passed for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}")
    if args.out:
        _write_atomic({Path(args.out): _json({"passed": ok,
                                               "checks": [c.as_dict() for c in checks]})})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_robustness(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    sc = _scenario(args)
    summary = sample_robustness(sc, args.count, args.seed, workers=args.workers)
    doc = summary.as_dict()
    doc["seed"] = args.seed
    if args.out:
        _write_atomic({Path(args.out): _json(doc)})
    shares = ", ".join(f"{k} {v:.0%}" for k, v in summary.band_shares.items())
    print(f"robustness: {args.count} runs, max {summary.maximum:.6g}, "
          f"min {summary.minimum:.6g}, bands: {shares}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _common(p, out_required=False):
    p.add_argument("--scenario", help="scenario document (default: bundled SURFnet)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="channel/solver seed")
    p.add_argument("--epsilon", type=float, help="outer convergence tolerance")
    p.add_argument("--max-iters", type=int, dest="max_iters", help="outer iteration cap")
    p.add_argument("--out", required=out_required, help="output path")
    p.add_argument("--timing", action="store_true", help="record wall-clock times")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quhe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one scenario")
    _common(p, out_required=True)
    p.add_argument("--method", choices=METHODS, default="quhe")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep one resource budget")
    _common(p, out_required=True)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--method", help="comma-separated methods (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-paper", help="regression checks on bundled SURFnet")
    p.add_argument("--scenario", help="scenario to check instead of the bundled one")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_verify_paper)

    p = sub.add_parser("robustness", help="solve from random initial configurations")
    _common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except INFEASIBLE as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
