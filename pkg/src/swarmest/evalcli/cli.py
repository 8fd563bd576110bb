"""Command line entry point: ``swarmest <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..simworld import build_world, load_scenario
from ..simworld.logio import (
    read_measurement_log,
    write_ground_truth,
    write_injection_log,
    write_measurement_log,
)
from ..simworld.scenario import ConfigError
from .runner import ABLATIONS, RunOptions, compare_pruning, run_ablations, run_world

log = logging.getLogger("swarmest")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="scenario TOML file or bundled scenario name")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario key, e.g. noise.uwb_sigma=0.1")


def _run_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ablate", choices=ABLATIONS, default="none")
    p.add_argument("--loss-uwb", type=float)
    p.add_argument("--loss-vio", type=float)
    p.add_argument("--m-max", type=int)
    p.add_argument("--pruning", choices=("random", "fifo"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmest", description="Swarm pose-graph estimation on simulated flights.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="generate ground truth and measurement logs")
    _common(p)
    p = sub.add_parser("estimate", help="simulate (or replay a measurement log) and run the estimators")
    _common(p, config_required=False)
    _run_opts(p)
    p.add_argument("--log", type=Path, help="replay this measurement log instead of simulating")
    p = sub.add_parser("evaluate", help="print the metrics report of a finished run")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p = sub.add_parser("ablate", help="full system and each edge type removed")
    _common(p)
    _run_opts(p)
    p = sub.add_parser("compare-pruning", help="random versus oldest-first frame deletion")
    _common(p)
    _run_opts(p)
    return ap


def _scenario(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_scenario(args.config, overrides)


def _opts(args) -> RunOptions:
    return RunOptions(args.ablate, args.loss_uwb, args.loss_vio, args.m_max, args.pruning)


def _write_reports(reports: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in reports.items():
        (out / f"metrics_{name}.json").write_text(rep.to_json())
    table = {name: {"re": {k: (v["pos_norm"] if v else None) for k, v in rep.re.items()},
                    "ate": {k: v["pos"] for k, v in rep.ate.items()},
                    "diverged": rep.solver["diverged"]}
             for name, rep in reports.items()}
    text = json.dumps(table, indent=2, sort_keys=True) + "\n"
    (out / "summary.json").write_text(text)
    sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            path = args.out_dir / "metrics.json"
            if not path.exists():
                log.error("no metrics report in %s", args.out_dir)
                return 2
            sys.stdout.write(path.read_text())
            return 1 if json.loads(path.read_text())["solver"]["diverged"] else 0
        replaying = args.command == "estimate" and args.log is not None
        if not replaying and args.config is None:
            log.error("--config is required unless --log is given")
            return 2
        scenario = None if replaying else _scenario(args)
        if args.command == "simulate":
            world = build_world(scenario)
            args.out_dir.mkdir(parents=True, exist_ok=True)
            write_measurement_log(world.meas, args.out_dir / "measurements.jsonl")
            write_ground_truth(world, args.out_dir / "ground_truth.jsonl")
            write_injection_log(world, (), args.out_dir / "injections.jsonl")
            return 0
        if args.command == "estimate":
            if args.log is not None:
                # the log header carries the scenario; truth is regenerated from it
                meas = read_measurement_log(args.log)
                world = build_world(meas.scenario)
                world.meas = meas
            else:
                world = build_world(scenario)
            result = run_world(world, _opts(args), args.out_dir)
            sys.stdout.write(result.report.to_json())
            if result.diverged:
                log.error("estimator diverged")
                return 1
            return 0
        if args.command == "ablate":
            reports = run_ablations(scenario, _opts(args))
        else:
            reports = compare_pruning(scenario, _opts(args))
        _write_reports(reports, args.out_dir)
        return 1 if any(r.solver["diverged"] for r in reports.values()) else 0
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
