"""Command-line front end: ``validate``, ``run``, ``oracle`` and ``batch``.

Exit codes are a stable contract: 0 success, 1 runtime error or oracle
mismatch, 2 invalid input (unreadable or malformed scenario, instance too
large for an oracle).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import BUNDLED_SCENARIOS, __version__, scenario_path
from .busevac import solve_ebpd
from .ccu import Scene
from .cover import solve_accp
from .dispatch import Patient, make_fleet, solve_group_dispatch
from .net import apply_contraflow
from .oracles import InstanceTooLarge, accp_exhaustive, dispatch_exhaustive, ebpd_exhaustive
from .sim import Metrics, Scenario, ScenarioError, load_scenario, scenario_problems, run

OUT_ENV = "CITYEVAC_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
ORACLE_MODULES = ("accp", "dispatch", "ebpd")


@dataclass(frozen=True)
class RunConfig:
    scenario: Path
    out: Path
    seed: int | None = None
    solver: str = "auto"
    quiet: bool = False


def resolve_scenario(ref: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    path = Path(ref)
    if not path.exists() and ref in BUNDLED_SCENARIOS:
        return Path(str(scenario_path(ref)))
    return path


def default_out(scenario: Path) -> Path:
    return Path(os.environ.get(OUT_ENV) or "cityevac-out") / scenario.stem


def validation_report(path: Path) -> list[str]:
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        return [f"{path}: cannot read ({exc.strerror})"]
    except json.JSONDecodeError as exc:
        return [f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})"]
    return scenario_problems(doc, path.parent)


def metrics_table(rows: Sequence[tuple[str, object]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {_fmt(v)}" for k, v in rows)


def _fmt(v) -> str:
    return f"{v:.3f}" if isinstance(v, float) else str(v)


# -- commands ----------------------------------------------------------------


def cmd_validate(path: Path) -> int:
    problems = validation_report(path)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} problem(s) in {path}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def execute(config: RunConfig) -> tuple[Metrics, str, list[Path]]:
    scenario = load_scenario(config.scenario, config.seed)
    result = run(scenario, config.solver)
    written = result.write(config.out)
    return result.metrics, result.checksum(), written


def cmd_run(config: RunConfig) -> int:
    metrics, checksum, written = execute(config)
    if not config.quiet:
        print(metrics_table(metrics.rows()))
        print(f"trace sha256 {checksum}")
        print(f"{len(written)} files written to {config.out}")
    return EXIT_OK


def oracle_instance(sc: Scenario, module: str):
    """Arguments for the production solver and the oracle, taken from a scenario.

    The instance is the one the simulation would hand to the department:
    planning starts one notification latency after the first matching
    incident, on the network as the mitigation departments leave it.
    """
    if module == "accp":
        if not sc.hospitals or not sc.communities:
            raise ScenarioError(["accp oracle needs hospitals and communities"])
        t = _first_incident_time(sc, Scene.HOUSEHOLD)
        return sc.net, t
    fac, t = _first_facility(sc)
    net = apply_contraflow(sc.net, fac.contraflow_arcs) if fac.contraflow_arcs else sc.net
    return fac, net, t


def _first_incident_time(sc: Scenario, scene: Scene) -> float:
    hits = sorted(m.timestamp for m in sc.incidents if m.scene is scene)
    return (hits[0] if hits else sc.start) + sc.latency


def _first_facility(sc: Scenario):
    for m in sorted(sc.incidents, key=lambda m: (m.timestamp, m.id)):
        fac = sc.facility_at(m.location) if m.scene is Scene.FACILITY else None
        if fac is not None:
            return fac, m.timestamp + sc.latency
    raise ScenarioError(["scenario has no facility incident"])


def oracle_pair(sc: Scenario, module: str) -> tuple[tuple, tuple]:
    """``(solver objective, oracle objective)`` for ``module`` on ``sc``."""
    if module == "accp":
        net, t = oracle_instance(sc, module)
        expected, _ = accp_exhaustive(net, sc.hospitals, sc.communities, sc.threshold, t)
        got = solve_accp(net, sc.hospitals, sc.communities, sc.threshold, t, "auto", sc.evo).objective
        return tuple(got), tuple(expected)
    fac, net, t = oracle_instance(sc, module)
    if module == "dispatch":
        fleet = make_fleet(sc.hospitals, sc.fleets)
        patients = [Patient(p.id, p.location, p.group, t - sc.latency if p.onset is None else p.onset)
                    for p in fac.patients]
        expected = dispatch_exhaustive(net, sc.hospitals, fleet, patients, t, sc.service)
        got = solve_group_dispatch(net, sc.hospitals, fleet, patients, t, "auto", sc.service,
                                   evo_config=sc.evo).objective
        return (got,), (expected,)
    if module == "ebpd":
        pickups = [p for p in sc.pickups if p.id in fac.pickups]
        shelters = [s for s in sc.shelters if s.id in fac.shelters]
        expected = ebpd_exhaustive(net, sc.depots, pickups, shelters, sc.deadline, t, sc.boarding)
        got = solve_ebpd(net, sc.depots, pickups, shelters, sc.deadline, t, "auto", sc.boarding, sc.evo).objective
        return tuple(got), tuple(expected)
    raise ValueError(f"unknown oracle module {module!r}")


def cmd_oracle(path: Path, module: str, seed: int | None = None) -> int:
    sc = load_scenario(path, seed)
    got, expected = oracle_pair(sc, module)
    ok = got == expected
    print(f"{module} solver {list(got)} oracle {list(expected)} {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _batch_one(config: RunConfig):
    try:
        metrics, checksum, _ = execute(config)
        return config, metrics, checksum, None, EXIT_OK
    except (ScenarioError, OSError) as exc:  # reported per row, the batch carries on
        return config, None, None, f"invalid: {exc}", EXIT_INVALID
    except Exception as exc:
        return config, None, None, f"{type(exc).__name__}: {exc}", EXIT_RUNTIME


def cmd_batch(configs: Sequence[RunConfig], jobs: int, quiet: bool) -> int:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_one, configs))
    else:
        results = [_batch_one(c) for c in configs]
    header = ["scenario", "tet_s", "ct_s", "max_patient_wait_s", "total_evacuated", "trace_sha256"]
    rows = []
    status = EXIT_OK
    for config, metrics, checksum, err, code in results:
        status = max(status, code)
        if err is not None:
            rows.append([str(config.scenario), "error", err, "", "", ""])
            continue
        rows.append([config.scenario.stem, _fmt(metrics.tet), _fmt(metrics.ct), _fmt(metrics.max_patient_wait),
                     str(metrics.total_evacuated), checksum[:16]])
    if not quiet:
        widths = [max(len(r[k]) for r in [header, *rows]) for k in range(len(header))]
        for r in [header, *rows]:
            print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return status


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cityevac", description="Emergency response and evacuation simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_arg(p, many=False):
        p.add_argument("--scenario", required=True, action="append" if many else "store",
                       help="scenario JSON file or bundled name (" + ", ".join(BUNDLED_SCENARIOS) + ")")

    p = sub.add_parser("validate", help="check a scenario and list every problem")
    scenario_arg(p)

    for name, many, help_ in (("run", False, "simulate one scenario"),
                              ("batch", True, "simulate several scenarios (repeat --scenario)")):
        p = sub.add_parser(name, help=help_)
        scenario_arg(p, many)
        p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./cityevac-out)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--solver", choices=("auto", "exact", "evo", "greedy"), default="auto",
                       help="planning method for every department (default: auto)")
        p.add_argument("--quiet", action="store_true", help="print nothing on success")
        if many:
            p.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel")

    p = sub.add_parser("oracle", help="compare a solver with its brute-force oracle")
    scenario_arg(p)
    p.add_argument("--module", choices=ORACLE_MODULES, required=True)
    p.add_argument("--seed", type=int, help="override the scenario seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(resolve_scenario(args.scenario))
        if args.command == "run":
            path = resolve_scenario(args.scenario)
            out = args.out or default_out(path)
            return cmd_run(RunConfig(path, out, args.seed, args.solver, args.quiet))
        if args.command == "oracle":
            return cmd_oracle(resolve_scenario(args.scenario), args.module, args.seed)
        paths = [resolve_scenario(s) for s in args.scenario]
        base = args.out or Path(os.environ.get(OUT_ENV) or "cityevac-out")
        names = [p.stem for p in paths]
        configs = [
            RunConfig(p, base / (p.stem if names.count(p.stem) == 1 else f"{p.stem}-{k}"), args.seed, args.solver)
            for k, p in enumerate(paths)
        ]
        return cmd_batch(configs, max(1, args.jobs), args.quiet)
    except ScenarioError as exc:
        for p in exc.problems:
            print(p, file=sys.stderr)
        return EXIT_INVALID
    except InstanceTooLarge as exc:
        print(f"instance too large: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"{exc.filename or 'file'}: {exc.strerror}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
