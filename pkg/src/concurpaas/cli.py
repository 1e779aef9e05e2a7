"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 scenario/validation error,
3 regression (``compare`` only: Direct mean latency not below Proxied).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .harness import (
    ScenarioError, Simulation, compare_modes, load_scenario,
)
from .iot import IoTError, parse_reprogram_args
from .netfabric import MODES

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_REGRESSION = 0, 1, 2, 3
DEFAULT_SCENARIO = "default.json"

SYNOPSIS = """\
usage: concurpaas run <scenario> [--csv DIR] [--mode Direct|Proxied]
       concurpaas compare <scenario> [--json] [--trace-dir DIR]
       concurpaas trace <scenario> -o FILE
       concurpaas registry ls [--scenario FILE] [--at T_US]
       concurpaas reprogram <sensor_id> key=value ... [--scenario FILE] [--at T_US]
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="concurpaas", add_help=True)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", parser_class=_Parser)

    p = sub.add_parser("run", help="run a scenario and print its report")
    p.add_argument("scenario")
    p.add_argument("--csv", metavar="DIR")
    p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("compare", help="run Direct and Proxied modes with one seed")
    p.add_argument("scenario")
    p.add_argument("--json", action="store_true")
    p.add_argument("--trace-dir", metavar="DIR")

    p = sub.add_parser("trace", help="write the event trace of a run")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("registry", help="inspect the service registry")
    p.add_argument("action", choices=["ls"])
    p.add_argument("--scenario", default=DEFAULT_SCENARIO)
    p.add_argument("--at", type=int, metavar="T_US")

    p = sub.add_parser("reprogram", help="apply a sensor reprogram command (interface C)")
    p.add_argument("sensor_id")
    p.add_argument("params", nargs="*", metavar="key=value")
    p.add_argument("--scenario", default=DEFAULT_SCENARIO)
    p.add_argument("--at", type=int, default=0, metavar="T_US")
    return ap


def _run_to(sim: Simulation, at: Optional[int]) -> None:
    horizon = sim.engine.horizon
    t = horizon if at is None else at
    if not 0 <= t <= horizon:
        raise UsageError(f"--at must be within [0, {horizon}]")
    sim.engine.run_until(t)


def _dispatch(args) -> int:
    out = sys.stdout
    if args.cmd == "run":
        sc = load_scenario(args.scenario)
        if args.mode:
            sc = sc.with_mode(args.mode)
        sim = Simulation(sc)
        report = sim.run()
        if args.csv:
            sim.write_csv(args.csv)
        out.write(report.to_json())
        return EXIT_OK
    if args.cmd == "compare":
        cmp = compare_modes(args.scenario, trace_dir=args.trace_dir)
        if args.json:
            out.write(json.dumps(cmp.to_dict(), indent=2, sort_keys=True) + "\n")
        else:
            out.write(cmp.table())
        return EXIT_REGRESSION if cmp.regression else EXIT_OK
    if args.cmd == "trace":
        sim = Simulation(load_scenario(args.scenario))
        sim.run()
        with open(args.output, "w") as fh:
            fh.write(sim.trace_header())
            fh.write(sim.engine.trace_text())
        return EXIT_OK
    if args.cmd == "registry":
        sim = Simulation(load_scenario(args.scenario))
        _run_to(sim, args.at)
        out.write(sim.registry.dump())
        return EXIT_OK
    if args.cmd == "reprogram":
        if not args.params:
            raise UsageError("reprogram needs at least one key=value parameter")
        cmd = parse_reprogram_args(args.sensor_id, args.params)
        sim = Simulation(load_scenario(args.scenario))
        _run_to(sim, args.at)
        applied = sim.gateway.apply_reprogram(cmd)
        out.write(json.dumps({"sensor_id": args.sensor_id, "applied_at_us": sim.engine.now,
                              "params": applied}, sort_keys=True) + "\n")
        return EXIT_OK
    raise UsageError("no command given")


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return _dispatch(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n{SYNOPSIS}")
        return EXIT_USAGE
    except (ScenarioError, IoTError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
