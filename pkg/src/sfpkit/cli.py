"""Scenario-driven batch runner.

A scenario is one JSON document::

    {
      "family":    {"corpus": "ex33"}  or  {"C": {...}, "Q": {...}, "A": [[...]],
                                            "param_dim": 1, "param_domain": {"lo": [...], "hi": [...]}},
      "reference": {"p": [0.0], "x": [0.0]},        optional for corpus families
      "solver":    {"max_iters": 1000, "tol_feas": 1e-9, ...},
      "sampling":  {"count": 10000, "anchor_every": 16},
      "analyses":  [{"kind": "tau", "delta": 0.5}, ...],
      "seed":      0,
      "output":    {"path": "report.json", "format": "json"}
    }

Infinite numbers are written as the strings "inf" / "-inf". Analyses run in
the listed order; a failing analysis is recorded and the rest still run.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import geometry as geo
from .corpus import CORPUS_IDS, corpus_example, corpus_oracle
from .family import SfpFamily
from .moduli import (
    DEFAULT_RADII,
    check_isolated_calmness,
    check_solv_convexity,
    compare_bound_theorems,
    estimate_aubin,
    estimate_calm,
    estimate_liplsc,
    estimate_lipusc,
    verify_error_bound,
)
from .regularity import SamplingPlan, drc_holds, estimate_tau, estimate_tau_global
from .solver import SolverConfig, solve, solver_oracle

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
REQUIRED = object()
ORACLES = ("auto", "corpus", "solver")

ANALYSIS_PARAMS: dict[str, dict] = {
    "solve": {"p": None, "x0": None},
    "tau": {"delta": REQUIRED, "count": None, "threshold": None},
    "tau_global": {"p": None, "x_box_radius": REQUIRED, "count": None, "threshold": None},
    "error_bound": {"constant": REQUIRED, "p_radius": REQUIRED, "x_radius": REQUIRED,
                    "grid_density": 41, "oracle": "auto"},
    "liplsc": {"radii": list(DEFAULT_RADII), "samples": 64, "oracle": "auto"},
    "calm": {"radii": list(DEFAULT_RADII), "x_radius": 1.0, "samples": 64, "x_starts": 8, "oracle": "auto"},
    "lipusc": {"radii": list(DEFAULT_RADII), "x_box_radius": 10.0, "x_radius": None, "samples": 64,
               "x_starts": 8, "oracle": "auto"},
    "aubin": {"radii": list(DEFAULT_RADII), "x_radius": 1.0, "samples": 64, "x_starts": 8, "oracle": "auto"},
    "isolated_calmness": {"eta_schedule": [1.0, 0.1, 0.01], "samples": 64},
    "convexity": {"pairs": 1000, "p_radius": 1.0, "x_radius": 1.0, "oracle": "auto"},
    "compare_bounds": {"data_moduli": REQUIRED, "estimated": None},
}
ANALYSIS_KINDS = tuple(ANALYSIS_PARAMS)
MODULI_KINDS = ("liplsc", "calm", "lipusc", "aubin")
SCENARIO_KEYS = ("family", "reference", "solver", "sampling", "analyses", "seed", "output")


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending field."""


# -- infinity-aware JSON ----------------------------------------------------


def to_jsonable(obj):
    """Plain JSON types with non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _number(v, path: str) -> float:
    if isinstance(v, bool):
        raise ScenarioError(f"{path}: expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return geo._parse_bound(v)
        except (ValueError, geo.GeometryError):
            pass
    raise ScenarioError(f"{path}: expected a number, got {v!r}")


def _vector(v, path: str) -> list[float]:
    if isinstance(v, (int, float, str)) and not isinstance(v, bool):
        return [_number(v, path)]
    if not isinstance(v, list) or not v:
        raise ScenarioError(f"{path}: expected a nonempty list of numbers")
    return [_number(t, f"{path}[{i}]") for i, t in enumerate(v)]


# -- scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    family: dict
    reference: dict | None
    solver: dict
    sampling: dict
    analyses: tuple
    seed: int
    output: dict

    def to_json(self) -> dict:
        return copy.deepcopy({
            "family": self.family,
            "reference": self.reference,
            "solver": self.solver,
            "sampling": self.sampling,
            "analyses": list(self.analyses),
            "seed": self.seed,
            "output": self.output,
        })

    def sha256(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def is_corpus(self) -> bool:
        return "corpus" in self.family


def _check_analysis(entry, i: int) -> dict:
    path = f"analyses[{i}]"
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ScenarioError(f"{path}: expected an object with a 'kind' field")
    kind = entry["kind"]
    if kind not in ANALYSIS_PARAMS:
        raise ScenarioError(f"{path}.kind: unknown analysis {kind!r}; known: {', '.join(ANALYSIS_KINDS)}")
    spec = ANALYSIS_PARAMS[kind]
    extra = sorted(set(entry) - set(spec) - {"kind"})
    if extra:
        raise ScenarioError(f"{path}: unknown parameter(s) {extra} for {kind}")
    out = {"kind": kind}
    for key, default in spec.items():
        if key in entry:
            out[key] = entry[key]
        elif default is REQUIRED:
            raise ScenarioError(f"{path}.{key}: required for {kind}")
        else:
            out[key] = copy.deepcopy(default)
    if "oracle" in out and out["oracle"] not in ORACLES:
        raise ScenarioError(f"{path}.oracle: expected one of {ORACLES}")
    return out


def parse_scenario(doc: dict) -> Scenario:
    """Validate a decoded scenario document and fill analysis defaults."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: top level must be a JSON object")
    extra = sorted(set(doc) - set(SCENARIO_KEYS))
    if extra:
        raise ScenarioError(f"scenario: unknown key(s) {extra}")
    if "seed" not in doc:
        raise ScenarioError("seed: required")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed: expected a nonnegative integer")
    fam = doc.get("family")
    if not isinstance(fam, dict):
        raise ScenarioError("family: required object")
    if "corpus" in fam:
        if fam["corpus"] not in CORPUS_IDS:
            raise ScenarioError(f"family.corpus: unknown id {fam['corpus']!r}; known: {', '.join(CORPUS_IDS)}")
    else:
        for key in ("C", "Q", "A"):
            if key not in fam:
                raise ScenarioError(f"family.{key}: required for an inline family")
        if doc.get("reference") is None:
            raise ScenarioError("reference: required for an inline family")
    ref = doc.get("reference")
    if ref is not None:
        if not isinstance(ref, dict) or set(ref) != {"p", "x"}:
            raise ScenarioError("reference: expected {'p': [...], 'x': [...]}")
        ref = {"p": _vector(ref["p"], "reference.p"), "x": _vector(ref["x"], "reference.x")}
    solver = doc.get("solver", {})
    try:
        solver = SolverConfig.from_json(solver).to_json()
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"solver: {exc}") from exc
    sampling = dict(doc.get("sampling", {}))
    extra = sorted(set(sampling) - {"count", "anchor_every"})
    if extra:
        raise ScenarioError(f"sampling: unknown key(s) {extra}")
    sampling.setdefault("count", 10000)
    sampling.setdefault("anchor_every", 16)
    for key in ("count", "anchor_every"):
        if isinstance(sampling[key], bool) or not isinstance(sampling[key], int) or sampling[key] < 0:
            raise ScenarioError(f"sampling.{key}: expected a nonnegative integer")
    analyses = doc.get("analyses", [])
    if not isinstance(analyses, list):
        raise ScenarioError("analyses: expected a list")
    analyses = tuple(_check_analysis(a, i) for i, a in enumerate(analyses))
    output = dict(doc.get("output") or {})
    extra = sorted(set(output) - {"path", "format"})
    if extra:
        raise ScenarioError(f"output: unknown key(s) {extra}")
    if output.get("format", "json") not in ("json", "csv"):
        raise ScenarioError("output.format: expected 'json' or 'csv'")
    return Scenario(copy.deepcopy(fam), ref, solver, sampling, analyses, seed, output)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file; JSON syntax errors report line and column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc)


def build_family(scenario: Scenario) -> SfpFamily:
    """The family with the scenario's reference pair; raises ScenarioError if that pair is not a solution."""
    try:
        if scenario.is_corpus():
            fam = corpus_example(scenario.family["corpus"]).family
            if scenario.reference is not None:
                fam = replace(fam, p_ref=scenario.reference["p"], x_ref=scenario.reference["x"])
        else:
            fam = SfpFamily.from_json(scenario.family, scenario.reference["p"], scenario.reference["x"],
                                      name=scenario.family.get("name", "inline"))
            fam.check_domain(seed=scenario.seed)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"family: {exc}") from exc
    return fam


# -- running ----------------------------------------------------------------


class _Context:
    def __init__(self, scenario: Scenario, family: SfpFamily, seed: int, threads: int):
        self.scenario = scenario
        self.family = family
        self.seed = seed
        self.threads = threads
        self.solver = SolverConfig.from_json({**scenario.solver, "seed": seed})
        self.tau = None
        self.tau_global = None
        self.moduli: dict = {}

    def oracle(self, choice: str):
        if choice == "corpus" and not self.scenario.is_corpus():
            raise ScenarioError("oracle 'corpus' needs a corpus family")
        if choice in ("auto", "corpus") and self.scenario.is_corpus():
            return corpus_oracle(corpus_example(self.scenario.family["corpus"]))
        return solver_oracle(self.family, self.solver)

    def plan(self, count):
        s = self.scenario.sampling
        return SamplingPlan(int(s["count"] if count is None else count), self.seed, int(s["anchor_every"]))


def _vec_or(v, default):
    return np.asarray(default if v is None else v, dtype=float).reshape(-1)


def _run_solve(ctx, a):
    p = _vec_or(a["p"], ctx.family.p_ref)
    x0 = _vec_or(a["x0"], ctx.family.x_ref)
    out = solve(ctx.family, p, x0, ctx.solver)
    return {"p": p, "x0": x0, "status": out.status, "point": out.point, "residual": out.residual, "iters": out.iters}


def _with_drc(res, est, threshold):
    if threshold is not None:
        ok, _ = drc_holds(est, float(threshold))
        res.update({"threshold": float(threshold), "drc_holds": ok})
    return res


def _run_tau(ctx, a):
    est = estimate_tau(ctx.family, float(a["delta"]), ctx.plan(a["count"]), threads=ctx.threads)
    ctx.tau = est
    return _with_drc(est.to_json(), est, a["threshold"])


def _run_tau_global(ctx, a):
    p = _vec_or(a["p"], ctx.family.p_ref)
    est = estimate_tau_global(ctx.family, p, float(a["x_box_radius"]), ctx.plan(a["count"]), threads=ctx.threads)
    ctx.tau_global = est
    res = est.to_json()
    res["p"] = p
    return _with_drc(res, est, a["threshold"])


def _run_error_bound(ctx, a):
    constant = a["constant"]
    if constant == "auto":
        if ctx.tau is None or not ctx.tau.tau > 0:
            raise ValueError("constant 'auto' needs an earlier tau analysis with tau > 0")
        constant = 1.0 / ctx.tau.tau
    rep = verify_error_bound(ctx.family, float(constant), float(a["p_radius"]), float(a["x_radius"]),
                             int(a["grid_density"]), ctx.oracle(a["oracle"]))
    return {**rep.to_json(), "p_radius": a["p_radius"], "x_radius": a["x_radius"]}


def _run_modulus(ctx, a):
    kind, oracle = a["kind"], ctx.oracle(a["oracle"])
    common = {"radii": a["radii"], "seed": ctx.seed, "dist_oracle": oracle, "threads": ctx.threads}
    if kind == "liplsc":
        est = estimate_liplsc(ctx.family, samples_per_radius=int(a["samples"]), **common)
    else:
        extra = {"samples": int(a["samples"]), "x_starts": int(a["x_starts"]), "solver_config": ctx.solver}
        if kind == "calm":
            est = estimate_calm(ctx.family, x_radius=float(a["x_radius"]), **extra, **common)
        elif kind == "aubin":
            est = estimate_aubin(ctx.family, x_radius=float(a["x_radius"]), **extra, **common)
        else:
            xr = None if a["x_radius"] is None else float(a["x_radius"])
            est = estimate_lipusc(ctx.family, x_box_radius=float(a["x_box_radius"]), x_radius=xr, **extra, **common)
    ctx.moduli[kind] = est
    return est.to_json()


def _run_isolated(ctx, a):
    holds, ev = check_isolated_calmness(ctx.family, a["eta_schedule"], int(a["samples"]), ctx.seed,
                                        solver_config=ctx.solver)
    return {"holds": holds, **ev}


def _run_convexity(ctx, a):
    holds, worst, ev = check_solv_convexity(ctx.family, int(a["pairs"]), ctx.seed, ctx.oracle(a["oracle"]),
                                            p_radius=float(a["p_radius"]), x_radius=float(a["x_radius"]),
                                            solver_config=ctx.solver)
    return {"holds": holds, "max_midpoint_violation": worst, **ev}


def _run_compare(ctx, a):
    if ctx.tau is None:
        raise ValueError("compare_bounds needs an earlier tau analysis")
    estimated = dict(ctx.moduli)
    if a["estimated"] is not None:
        estimated.update({k: _number(v, f"estimated.{k}") for k, v in a["estimated"].items()})
    data = {k: {c: _number(v, f"data_moduli.{k}.{c}") for c, v in parts.items()}
            for k, parts in a["data_moduli"].items()}
    rows = compare_bound_theorems(data, ctx.tau, estimated, tau_global=ctx.tau_global)
    return {"rows": rows, "any_exceeds": any(r["exceeds"] for r in rows)}


_RUNNERS = {
    "solve": _run_solve,
    "tau": _run_tau,
    "tau_global": _run_tau_global,
    "error_bound": _run_error_bound,
    "liplsc": _run_modulus,
    "calm": _run_modulus,
    "lipusc": _run_modulus,
    "aubin": _run_modulus,
    "isolated_calmness": _run_isolated,
    "convexity": _run_convexity,
    "compare_bounds": _run_compare,
}


def run_scenario(scenario: Scenario, *, seed: int | None = None, threads: int = 1) -> dict:
    """Run every analysis in order and return the report.

    The report's ``timing`` entry is the only part that varies between
    identical runs.
    """
    if seed is not None:
        scenario = replace(scenario, seed=int(seed))
    family = build_family(scenario)
    ctx = _Context(scenario, family, scenario.seed, threads)
    results, timing = [], []
    for i, a in enumerate(scenario.analyses):
        t0 = time.perf_counter()
        try:
            payload = _RUNNERS[a["kind"]](ctx, a)
            results.append({"index": i, "kind": a["kind"], "status": "ok", "result": to_jsonable(payload)})
        except Exception as exc:  # recorded per analysis; the run continues
            results.append({"index": i, "kind": a["kind"], "status": "error",
                            "error": f"{type(exc).__name__}: {exc}"})
        timing.append({"index": i, "kind": a["kind"], "seconds": time.perf_counter() - t0})
    return {
        "tool": {"name": "sfpkit", "version": __version__},
        "scenario_sha256": scenario.sha256(),
        "scenario": to_jsonable(scenario.to_json()),
        "dims": {"param": family.m, "decision": family.n, "image": family.k},
        "results": results,
        "timing": timing,
    }


def deterministic_payload(report: dict) -> str:
    """Canonical JSON of the report without the timing section."""
    body = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


# -- emitting ---------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ";".join(_cell(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _witness_cols(prefix, values, dim):
    values = values if values is not None else [None] * dim
    return {f"{prefix}{i}": values[i] for i in range(dim)}


def csv_tables(report: dict) -> dict[str, list[dict]]:
    """Flat rows per analysis kind, columns in a fixed order."""
    m, n = report["dims"]["param"], report["dims"]["decision"]
    tables: dict[str, list[dict]] = {}

    def add(name, row):
        tables.setdefault(name, []).append(row)

    for item in report["results"]:
        kind = item["kind"]
        if item["status"] != "ok":
            add("errors", {"analysis": kind, "index": item["index"], "error": item["error"]})
            continue
        r = item["result"]
        if kind == "solve":
            add(kind, {"analysis": kind, "p": r["p"], "x0": r["x0"], "status": r["status"], "point": r["point"],
                       "residual": r["residual"], "iters": r["iters"]})
        elif kind in ("tau", "tau_global"):
            w = r["witness"] or {}
            row = {"analysis": kind}
            if kind == "tau":
                row["delta"] = r["delta"]
            else:
                row.update({"p": r["p"], "x_box_radius": r["x_box_radius"]})
            row.update({"tau_aq": r["tau_aq"], "tau_c": r["tau_c"], "tau": r["tau"], "samples": r["samples"]})
            row.update(_witness_cols("witness_p", w.get("p"), m))
            row.update(_witness_cols("witness_x", w.get("x"), n))
            add(kind, row)
        elif kind == "error_bound":
            w = r["witness"] or {}
            row = {"analysis": kind, "constant": r["constant"], "grid_size": r["grid_size"],
                   "max_violation": r["max_violation"]}
            row.update(_witness_cols("witness_p", w.get("p"), m))
            row.update(_witness_cols("witness_x", w.get("x"), n))
            add(kind, row)
        elif kind in MODULI_KINDS:
            for rad, val in zip(r["radii"], r["per_radius_values"]):
                add(kind, {"analysis": kind, "radius": rad, "value": val})
        elif kind == "isolated_calmness":
            add(kind, {k: ({"analysis": kind} | r).get(k) for k in
                       ("analysis", "eta", "holds", "v1", "v2", "max_spread", "feasible_found")})
        elif kind == "convexity":
            add(kind, {"analysis": kind, "holds": r["holds"], "max_midpoint_violation": r["max_midpoint_violation"],
                       "pairs": r["pairs"]})
        elif kind == "compare_bounds":
            for row in r["rows"]:
                add(kind, {"analysis": kind, **{k: row[k] for k in
                                                ("theorem", "modulus", "tau", "bound", "estimated", "exceeds")}})
    return tables


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(rows[0]))
    for row in rows:
        writer.writerow([_cell(v) for v in row.values()])
    return buf.getvalue()


def emit_report(report: dict, fmt: str = "json", out: str | None = None) -> list[str]:
    """Write the report; returns the paths written (empty when printing to stdout).

    CSV output writes one file per analysis kind, named ``<stem>_<kind>.csv``.
    """
    if fmt == "json":
        text = json.dumps(report, indent=2) + "\n"
        if out is None:
            sys.stdout.write(text)
            return []
        Path(out).write_text(text)
        return [str(out)]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    tables = csv_tables(report)
    if out is None:
        sys.stdout.write("\n".join(_csv_text(rows) for rows in tables.values()))
        return []
    base = Path(out)
    stem = base.with_suffix("") if base.suffix == ".csv" else base
    paths = []
    for name, rows in tables.items():
        path = Path(f"{stem}_{name}.csv")
        path.write_text(_csv_text(rows))
        paths.append(str(path))
    return paths


# -- command line -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sfpkit", description="Parameterized split feasibility analyses.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--out", help="output path (default: scenario output.path, else stdout)")
    run.add_argument("--format", choices=("json", "csv"), help="report format (default json)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads inside analyses")
    corpus = sub.add_parser("corpus", help="inspect built-in examples")
    csub = corpus.add_subparsers(dest="corpus_command", required=True, parser_class=_Parser)
    csub.add_parser("list", help="list example ids")
    show = csub.add_parser("show", help="print one example as JSON")
    show.add_argument("id")
    return ap


def _corpus_show(id_: str) -> dict:
    ex = corpus_example(id_)
    return to_jsonable({
        "id": ex.id,
        "family": ex.family.to_json(),
        "reference": {"p": ex.family.p_ref, "x": ex.family.x_ref},
        "notes": ex.notes,
    })


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "corpus":
        if args.corpus_command == "list":
            for id_ in CORPUS_IDS:
                print(id_)
            return EXIT_OK
        if args.id not in CORPUS_IDS:
            print(f"sfpkit: unknown corpus id {args.id!r}; known: {', '.join(CORPUS_IDS)}", file=sys.stderr)
            return EXIT_USAGE
        print(json.dumps(_corpus_show(args.id), indent=2))
        return EXIT_OK

    if args.threads < 1:
        print("sfpkit: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None and args.seed < 0:
            raise ScenarioError("--seed must be nonnegative")
        report = run_scenario(scenario, seed=args.seed, threads=args.threads)
    except ScenarioError as exc:
        print(f"sfpkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    fmt = args.format or scenario.output.get("format", "json")
    out = args.out or scenario.output.get("path")
    try:
        emit_report(report, fmt, out)
    except OSError as exc:
        print(f"sfpkit: cannot write report: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = [r for r in report["results"] if r["status"] != "ok"]
    for r in failed:
        print(f"sfpkit: analysis {r['index']} ({r['kind']}) failed: {r['error']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK
