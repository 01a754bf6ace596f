"""Command-line interface.

Subcommands: run (execute a config, print final metrics), sweep (full grid to
CSV + sidecar, optional figures), gen-data, check-privacy, adjacency-probe
and report.  Exit code 0 when all cells completed (infeasible rows allowed);
nonzero on I/O or schema errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .core import NONE


def _load_spec(path, seed_override=None):
    spec = harness.ExperimentSpec.from_path(path)
    if seed_override is not None:
        spec.seeds = [seed_override]
    return spec


def _cmd_run(args) -> int:
    spec = _load_spec(args.config, args.seed)
    if args.diagnostics:
        spec.run = {**spec.run, "diagnostics": True}
    out = Path(args.out) if args.out else Path(args.config).with_suffix(".results.csv")
    summary = harness.run_experiment(spec, out, threads=args.threads)
    print(f"wrote {summary.csv_path} ({summary.n_cells} cells, "
          f"{summary.n_infeasible} infeasible)")
    for row in summary.rows:
        if row[9].startswith("infeasible"):
            print(f"  {row[0]} eps={row[1]} seed={row[2]}: {row[9]}")
    finals = {}
    for row in summary.rows:
        if row[9] == "ok":
            finals[(row[0], row[1], row[2])] = row
    for (alg, eps, seed), row in sorted(finals.items()):
        print(f"  {alg} eps={eps} seed={seed}: round={row[3]} "
              f"risk={row[4]} grad_map={row[6]} eps_spent={row[7]}")
    return 0


def _cmd_sweep(args) -> int:
    spec = _load_spec(args.config, args.seed)
    if args.diagnostics:
        spec.run = {**spec.run, "diagnostics": True}
    summary = harness.run_experiment(spec, Path(args.out), threads=args.threads)
    print(f"wrote {summary.csv_path} ({summary.n_cells} cells, "
          f"{summary.n_infeasible} infeasible)")
    if args.plots:
        from .report import render_report
        for path in render_report(summary.csv_path):
            print(f"wrote {path}")
    return 0


def _cmd_gen_data(args) -> int:
    params = json.loads(args.params) if args.params else {}
    if args.seed is not None:
        params["seed"] = args.seed
    desc = harness.gen_data(args.generator, params, args.out)
    print(json.dumps(desc, indent=2, sort_keys=True, default=str))
    return 0


def _cmd_check_privacy(args) -> int:
    spec = _load_spec(args.config, args.seed)
    print(json.dumps(harness.check_privacy(spec), indent=2, sort_keys=True,
                     default=str))
    return 0


def _cmd_adjacency(args) -> int:
    spec = _load_spec(args.config, args.seed)
    problem = spec.build_problem()
    n = problem.dataset.records_per_silo
    reports = []
    for alg in spec.algorithms:
        config = harness.build_config(spec, alg, spec.epsilon_grid[0],
                                      spec.seeds[0], n)
        config = config.with_updates(mechanism=NONE, privacy=None)
        report = harness.adjacency_probe(alg.name, problem, swaps=args.swaps,
                                         seed=spec.seeds[0], config=config)
        reports.append(report.as_dict())
    print(json.dumps(reports, indent=2, sort_keys=True, default=str))
    return 0 if all(r["ok"] for r in reports) else 1


def _cmd_report(args) -> int:
    from .report import render_report
    for path in render_report(args.results, args.out):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privfed",
        description="Private federated optimization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment spec JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed list with one seed")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel worker processes for sweep cells")
        p.add_argument("--diagnostics", action="store_true",
                       help="record estimator diagnostics where supported")

    p = sub.add_parser("run", help="run the config and print final metrics")
    common(p)
    p.add_argument("--out", default=None, help="results CSV path")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run the full grid to CSV + sidecar")
    common(p)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--plots", action="store_true",
                   help="also render report figures next to the CSV")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--generator", required=True,
                   choices=["quadratic", "least_squares", "logistic"])
    p.add_argument("--params", default="{}",
                   help="generator parameters as a JSON object")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("check-privacy",
                       help="print every algorithm's noise plan as JSON")
    common(p)
    p.set_defaults(func=_cmd_check_privacy)

    p = sub.add_parser("adjacency-probe",
                       help="measure pre-noise message sensitivity")
    common(p)
    p.add_argument("--swaps", type=int, default=100)
    p.set_defaults(func=_cmd_adjacency)

    p = sub.add_parser("report", help="render figures from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default=None, help="figure directory (default: beside CSV)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
