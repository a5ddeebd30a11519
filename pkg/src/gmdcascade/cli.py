"""Command-line entry point: run | couple | synth | validate.

Exit codes: 0 for a completed simulation (horizon elapsed or blackout)
and for successful utility commands, 1 for input errors, 2 when the
cascade stops on a solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import cascade, coupling, geofield, netmodel, synth
from .cascade import CascadeConfig, TerminationCause

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_SOLVER_FAILURE = 2


@dataclass
class RunManifest:
    """Everything one simulation needs: the case, exactly one scenario
    source, configuration overrides, and where to write results."""

    case_path: str
    field_dir: Optional[str] = None
    branch_voltages: Optional[str] = None
    b_series: Optional[str] = None
    tf_dir: Optional[str] = None
    out_dir: str = "out"
    dt: float = 300.0
    horizon: float = 3600.0
    relay_tau: float = 600.0
    pickup_ratio: float = 1.0
    solver_tol: float = 1e-6
    seed: int = 0

    def scenario_sources(self) -> list[str]:
        found = []
        if self.field_dir:
            found.append("field_dir")
        if self.branch_voltages:
            found.append("branch_voltages")
        if self.b_series or self.tf_dir:
            found.append("b_series+tf_dir")
        return found


def _manifest_from_args(args) -> RunManifest:
    manifest = RunManifest(case_path=args.case)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, val in overrides.items():
            if not hasattr(manifest, key):
                raise netmodel.CaseParseError(f"unknown manifest key '{key}'")
            setattr(manifest, key, val)
    for key in (
        "field_dir", "branch_voltages", "b_series", "tf_dir", "out_dir",
        "dt", "horizon", "relay_tau", "pickup_ratio", "solver_tol", "seed",
    ):
        val = getattr(args, key, None)
        if val is not None:
            setattr(manifest, key, val)
    return manifest


def _load_scenario(manifest: RunManifest, case) -> dict[int, coupling.CoupledVoltageSeries]:
    sources = manifest.scenario_sources()
    if len(sources) != 1:
        raise netmodel.CaseParseError(
            f"exactly one scenario source required, got {sources or 'none'}"
        )
    if manifest.branch_voltages:
        return coupling.read_branch_voltages(manifest.branch_voltages)
    if manifest.field_dir:
        grid = geofield.read_field_grid(manifest.field_dir)
    else:
        if not (manifest.b_series and manifest.tf_dir):
            raise netmodel.CaseParseError(
                "the b-series scenario source needs both --b-series and --tf-dir"
            )
        b = geofield.read_magnetic_series(manifest.b_series)
        sites = geofield.read_tf_dir(manifest.tf_dir)
        grid = geofield.grid_from_tf_sites(sites, b)
    return coupling.couple_case(case, grid)


def cmd_run(manifest: RunManifest) -> int:
    try:
        case = netmodel.load_case(manifest.case_path)
        scenario = _load_scenario(manifest, case)
        cfg = CascadeConfig(
            dt=manifest.dt,
            horizon=manifest.horizon,
            pickup_ratio=manifest.pickup_ratio,
            trip_threshold=manifest.relay_tau,
            solver_tol=manifest.solver_tol,
        )
    except (netmodel.CaseError, cascade.CascadeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        trace = cascade.run_cascade(case, scenario, cfg)
    except cascade.CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.txt").write_text(cascade.trace_to_text(trace))
    (out / "events.txt").write_text(cascade.events_to_text(trace))
    (out / "summary.txt").write_text(cascade.summary_to_text(trace))
    print(cascade.summary_to_text(trace), end="")
    if trace.termination is TerminationCause.SOLVER_FAILURE:
        return EXIT_SOLVER_FAILURE
    return EXIT_OK


def cmd_couple(manifest: RunManifest) -> int:
    try:
        case = netmodel.load_case(manifest.case_path)
        if manifest.branch_voltages:
            raise netmodel.CaseParseError(
                "couple needs a field source, not a precomputed voltage file"
            )
        scenario = _load_scenario(manifest, case)
    except (netmodel.CaseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "branch_voltages.txt"
    coupling.write_branch_voltages(path, scenario)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_synth(count: int, seed: int, out_path: str) -> int:
    try:
        case = synth.synth_case(count, seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    netmodel.save_case(case, out_path)
    print(
        f"wrote {out_path}: {len(case.buses)} buses, {len(case.branches)} branches, "
        f"{len(case.generators)} generators, mean line length "
        f"{synth.mean_line_length_km(case):.1f} km"
    )
    return EXIT_OK


def cmd_validate(case_path: str) -> int:
    try:
        case = netmodel.load_case(case_path)
    except netmodel.CaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    lines = sum(1 for b in case.branches if b.kind is netmodel.BranchKind.LINE)
    print(
        f"{case_path}: ok ({len(case.buses)} buses, {lines} lines, "
        f"{len(case.branches) - lines} transformers, {len(case.generators)} gens, "
        f"{len(case.loads)} loads, {len(case.substations)} substations)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmdcascade",
        description="GMD-induced cascading failure simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_flags(p):
        p.add_argument("--case", required=True, help="case file (JSON)")
        p.add_argument("--config", help="optional manifest JSON; flags override it")
        p.add_argument("--field-dir", dest="field_dir", help="field grid directory")
        p.add_argument(
            "--branch-voltages", dest="branch_voltages",
            help="precomputed per-branch coupled-voltage file",
        )
        p.add_argument("--b-series", dest="b_series", help="magnetic series file")
        p.add_argument("--tf-dir", dest="tf_dir", help="transfer-function directory")
        p.add_argument("--out", dest="out_dir", help="output directory")

    run_p = sub.add_parser("run", help="run the cascade simulation")
    add_scenario_flags(run_p)
    run_p.add_argument("--dt", type=float, help="seconds per iteration")
    run_p.add_argument("--horizon", type=float, help="scenario horizon, seconds")
    run_p.add_argument("--relay-tau", dest="relay_tau", type=float,
                       help="relay trip threshold, seconds of overload")
    run_p.add_argument("--pickup-ratio", dest="pickup_ratio", type=float)
    run_p.add_argument("--solver-tol", dest="solver_tol", type=float)
    run_p.add_argument("--seed", type=int)

    couple_p = sub.add_parser("couple", help="write per-branch coupled voltages")
    add_scenario_flags(couple_p)

    synth_p = sub.add_parser("synth", help="generate a synthetic case")
    synth_p.add_argument("--count", type=int, required=True, help="total bus count")
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--out", dest="out_path", default="synthetic_case.json")

    val_p = sub.add_parser("validate", help="parse and validate a case file")
    val_p.add_argument("--case", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            manifest = _manifest_from_args(args)
        except (netmodel.CaseError, OSError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        return cmd_run(manifest)
    if args.command == "couple":
        try:
            manifest = _manifest_from_args(args)
        except (netmodel.CaseError, OSError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        return cmd_couple(manifest)
    if args.command == "synth":
        return cmd_synth(args.count, args.seed, args.out_path)
    if args.command == "validate":
        return cmd_validate(args.case)
    return EXIT_INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
