"""Command-line front end: run scenarios, sweep grids, verify reports.

Reports are canonical JSON (sorted keys, native floats) so a rerun with the
same scenario and seed produces byte-identical files; measured wall-clock
goes to stderr only, the report field stays null. Exit codes: 0 pass,
2 certificate/verdict failure, 3 configuration error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kernels
from .algorithms import run_algorithm
from .certify import (
    CertificateConstructionError,
    WeightCertificate,
    verify_certificate,
)
from .convexlib import (
    Huber,
    Quadratic,
    default_function,
    function_from_dict,
    function_to_dict,
)
from .simnet import InternalInvariantError, Scenario, ScenarioError
from .trimagg import BracketError, FunctionEnsemble

OUT_ENV = "BYZOPT_OUT"

EXIT_OK = 0
EXIT_VERDICT_FAIL = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4


def _plain(obj):
    """Recursively convert numpy scalars/containers to JSON-native types."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _plain(obj.item())
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, float) and not math.isfinite(obj):
        return {math.inf: "inf", -math.inf: "-inf"}.get(obj, "nan")
    return obj


@dataclass
class RunReport:
    scenario: dict
    outcome: dict
    certificate_verdicts: list
    residuals: dict
    seed: int
    wall_clock_s: Optional[float] = None

    def to_dict(self) -> dict:
        return _plain({
            "scenario": self.scenario,
            "outcome": self.outcome,
            "certificate_verdicts": self.certificate_verdicts,
            "residuals": self.residuals,
            "seed": self.seed,
            "wall_clock_s": self.wall_clock_s,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_dict(d: dict) -> "RunReport":
        return RunReport(
            scenario=d["scenario"],
            outcome=d["outcome"],
            certificate_verdicts=d.get("certificate_verdicts", []),
            residuals=d.get("residuals", {}),
            seed=d["seed"],
            wall_clock_s=d.get("wall_clock_s"),
        )


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    return Scenario.from_dict(data)


def _out_dir(explicit: Optional[str]) -> Path:
    base = explicit or os.environ.get(OUT_ENV) or "byzopt-out"
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_report(report: RunReport, outcome_traces, round_logs,
                 out_dir: Path, name: str) -> tuple[Path, Path]:
    report_path = out_dir / f"{name}.report.json"
    trace_path = out_dir / f"{name}.trace.jsonl"
    report_path.write_text(report.to_json())
    with trace_path.open("w") as fh:
        for log in round_logs:
            fh.write(json.dumps(_plain({"type": "round", **log.to_dict()}),
                                sort_keys=True) + "\n")
        for entry in outcome_traces:
            fh.write(json.dumps(_plain({"type": "trace", **entry}),
                                sort_keys=True) + "\n")
    return report_path, trace_path


def run_scenario(path_or_scenario, overrides: Optional[dict] = None,
                 out_dir: Optional[str] = None,
                 write: bool = True) -> tuple[RunReport, int, Optional[Path]]:
    """Load, run, optionally persist; returns (report, exit_code, report_path)."""
    if isinstance(path_or_scenario, Scenario):
        scn = path_or_scenario
        if overrides:
            data = scn.to_dict()
            data.update(overrides)
            scn = Scenario.from_dict(data)
    else:
        data = json.loads(Path(path_or_scenario).read_text()) \
            if not isinstance(path_or_scenario, dict) else dict(path_or_scenario)
        if overrides:
            data.update(overrides)
        scn = Scenario.from_dict(data)
    outcome = run_algorithm(scn)
    verdicts = ([outcome.certificate_check]
                if outcome.certificate_check is not None else [])
    report = RunReport(
        scenario=scn.to_dict(),
        outcome=outcome.to_dict(),
        certificate_verdicts=verdicts,
        residuals={"final": outcome.stats.get("residual")},
        seed=scn.seed,
        wall_clock_s=None,
    )
    path = None
    if write:
        directory = _out_dir(out_dir)
        name = scn.name or "scenario"
        path, _ = write_report(report, outcome.trace, outcome.round_logs,
                               directory, name)
    code = EXIT_OK if outcome.verdict_ok else EXIT_VERDICT_FAIL
    return report, code, path


# --- sweeps -----------------------------------------------------------------

def _materialize_functions(spec, n: int, seed: int) -> dict[int, object]:
    """Expand a function table or a generator spec to n concrete functions."""
    if isinstance(spec, dict) and "generator" not in spec:
        return {int(a): function_from_dict(d) for a, d in spec.items()}
    gen = spec.get("generator", "vertex_line")
    if gen == "vertex_line":
        lo = float(spec.get("lo", 1.0))
        hi = float(spec.get("hi", float(n)))
        vertices = np.linspace(lo, hi, n)
        kind = spec.get("kind", "quadratic")
        if kind == "quadratic":
            return {i + 1: Quadratic(float(v), float(spec.get("scale", 1.0)))
                    for i, v in enumerate(vertices)}
        if kind == "huber":
            return {i + 1: Huber(float(v), float(spec.get("slope", 2.0)),
                                 float(spec.get("width", 1.0)))
                    for i, v in enumerate(vertices)}
        raise ScenarioError(f"unknown generator kind {kind!r}")
    if gen == "random_quadratic":
        rng = np.random.default_rng(seed)
        lo = float(spec.get("lo", -4.0))
        hi = float(spec.get("hi", 4.0))
        return {i + 1: Quadratic(float(rng.uniform(lo, hi)),
                                 float(rng.uniform(0.5, 3.0)))
                for i in range(n)}
    raise ScenarioError(f"unknown function generator {gen!r}")


def _materialize_faulty(spec, n: int) -> list[int]:
    if isinstance(spec, dict):
        count = int(spec.get("count", 0))
        pick = spec.get("pick", "last")
        if pick == "last":
            return list(range(n - count + 1, n + 1))
        if pick == "first":
            return list(range(1, count + 1))
        raise ScenarioError(f"unknown faulty pick {pick!r}")
    return [int(a) for a in spec]


def build_cell(template: dict, overrides: dict) -> Scenario:
    data = dict(template)
    data.update(overrides)
    n = int(data["n"])
    if data.get("f") == "auto":
        data["f"] = (n - 1) // 3
    fns = _materialize_functions(data["functions"], n,
                                 int(data.get("seed", 0)))
    faulty = _materialize_faulty(data.get("faulty", []), n)
    raw_adv = data.get("adversary", {})
    data = {**data,
            "functions": {str(a): function_to_dict(fn)
                          for a, fn in fns.items()},
            "faulty": faulty}
    if isinstance(raw_adv, dict) and raw_adv and "kind" not in raw_adv:
        data["adversary"] = {str(a): v for a, v in raw_adv.items()
                             if int(a) in set(faulty)}
    return Scenario.from_dict(data)


def sweep(template_path, grid_path, out_dir: Optional[str] = None
          ) -> tuple[list[dict], Path, int]:
    """Cartesian product over the grid; failures are recorded, not fatal.

    Returns (summary rows, csv path, exit code).
    """
    template = json.loads(Path(template_path).read_text())
    grid = json.loads(Path(grid_path).read_text())
    keys = sorted(grid)
    values = [grid[k] if isinstance(grid[k], list) else [grid[k]]
              for k in keys]
    directory = _out_dir(out_dir)
    rows = []
    any_fail = False
    cells = itertools.product(*values) if keys else iter(())
    for combo in cells:
        overrides = dict(zip(keys, combo))
        label = "_".join(f"{k}-{v}" for k, v in sorted(overrides.items()))
        row = {"name": label, "n": overrides.get("n", template.get("n")),
               "f": None, "phi": None,
               "algorithm": overrides.get("algorithm",
                                          template.get("algorithm")),
               "output": None, "residual": None,
               "gamma_achieved": None, "beta_achieved": None,
               "status": "ok"}
        try:
            scn = build_cell(template, overrides)
            scn.name = scn.name or label
            report, code, _ = run_scenario(scn, out_dir=str(directory))
            outcome = report.outcome
            outputs = outcome["outputs"]
            row["f"] = scn.f
            row["phi"] = scn.phi
            row["output"] = next(iter(outputs.values()), None)
            row["residual"] = report.residuals.get("final")
            cert = outcome.get("certificate")
            if cert:
                row["beta_achieved"] = cert["beta"]
            if outcome.get("certificate_check"):
                row["gamma_achieved"] = \
                    outcome["certificate_check"]["threshold_count"]
            if code != EXIT_OK:
                row["status"] = "verdict_fail"
                any_fail = True
        except ScenarioError as exc:
            row["status"] = f"config_error: {exc}"
            any_fail = True
        except (InternalInvariantError, BracketError,
                CertificateConstructionError) as exc:
            row["status"] = f"internal_error: {exc}"
            any_fail = True
        rows.append(row)
    csv_path = directory / "sweep_summary.csv"
    fields = ["name", "n", "f", "phi", "algorithm", "output", "residual",
              "gamma_achieved", "beta_achieved", "status"]
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return rows, csv_path, (EXIT_VERDICT_FAIL if any_fail else EXIT_OK)


# --- verify -----------------------------------------------------------------

def verify_report(path) -> int:
    """Re-verify the certificate embedded in a report file."""
    data = json.loads(Path(path).read_text())
    report = RunReport.from_dict(data)
    cert_dict = report.outcome.get("certificate")
    if not cert_dict:
        ok = report.outcome.get("verdict_ok", False)
        print(f"no certificate in report; recorded verdict_ok={ok}")
        return EXIT_OK if ok else EXIT_VERDICT_FAIL
    cert = WeightCertificate.from_dict(cert_dict)
    scn = Scenario.from_dict(report.scenario)
    # weights touch only non-faulty agents, so faulty slots can be anything
    fns = [scn.functions[a] if a not in scn.faulty else default_function()
           for a in range(1, scn.n + 1)]
    ens = FunctionEnsemble(tuple(fns), scn.f)
    check = verify_certificate(cert, ens, scn.faulty)
    for item in check.checks:
        state = "PASS" if item["ok"] else "FAIL"
        print(f"[{state}] {item['name']}: measured={item['measured']}")
    return EXIT_OK if check.ok else EXIT_VERDICT_FAIL


# --- CLI --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are config errors, not verdicts
        raise ScenarioError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="byzopt",
                     description="Fault-tolerant scalar optimization runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./byzopt-out)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-rounds", type=int, default=None)
    p_run.add_argument("--tol", type=float, default=None)

    p_sweep = sub.add_parser("sweep", help="run a template over a grid file")
    p_sweep.add_argument("template")
    p_sweep.add_argument("grid")
    p_sweep.add_argument("--out", default=None)

    p_verify = sub.add_parser("verify", help="re-verify a report file")
    p_verify.add_argument("report")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.max_rounds is not None:
                overrides["max_rounds"] = args.max_rounds
            if args.tol is not None:
                overrides["tol"] = args.tol
            t0 = time.perf_counter()
            report, code, path = run_scenario(args.scenario, overrides,
                                              args.out)
            wall = time.perf_counter() - t0
            print(f"report: {path}", file=sys.stderr)
            print(f"backend={kernels.BACKEND} wall_clock_s={wall:.3f}",
                  file=sys.stderr)
            outputs = report.outcome["outputs"]
            out_val = next(iter(outputs.values()), None)
            print(f"output={out_val} residual={report.residuals.get('final')} "
                  f"verdict_ok={report.outcome['verdict_ok']}")
            return code
        if args.command == "sweep":
            rows, csv_path, code = sweep(args.template, args.grid, args.out)
            print(f"summary: {csv_path} ({len(rows)} cells)", file=sys.stderr)
            for row in rows:
                print(f"{row['name']}: status={row['status']} "
                      f"output={row['output']}")
            return code
        if args.command == "verify":
            return verify_report(args.report)
        raise ScenarioError(f"unknown command {args.command!r}")
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InternalInvariantError, BracketError,
            CertificateConstructionError) as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
