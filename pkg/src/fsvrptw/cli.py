"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 the greedy loop stalled.
The output directory defaults to ``$FSVRPTW_OUTPUT_DIR`` or ``./out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .bench import METHODS, BenchConfig, run_battery, write_outputs
from .greedy import GreedyConfig, Stall, run
from .instance import (
    InfeasibleDiscretization,
    SolomonParseError,
    bundled,
    build_time_grid,
    load_solomon,
    running_example,
    sample_customers,
)
from .model import ModelInfeasible, build_constraints, compile_qubo, enumerate_variables, write_qubo, write_variable_map
from .samplers import ExactSampler, SimulatedAnnealingSampler

ENV_OUT = "FSVRPTW_OUTPUT_DIR"
RUNNING_EXAMPLE = "running-example"

log = logging.getLogger("fsvrptw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    """``5..10`` (inclusive) or ``5,6,9``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 0..9 or a list like 1,2,3, got {text!r}")


def _theta(text: str) -> float:
    x = float(text)
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie strictly between 0 and 1, got {x}")
    return x


def _instance_args(p):
    p.add_argument("--instance", default=RUNNING_EXAMPLE,
                   help=f"Solomon file, bundled name (R101, R201) or {RUNNING_EXAMPLE} (default)")
    p.add_argument("--n", type=int, default=None, help="customers to sample (default: all of the running example)")
    p.add_argument("--seed", type=int, default=0, help="sampling and annealing seed (default 0)")
    p.add_argument("--penalties", type=float, nargs=2, metavar=("P_COV", "P_FLOW"), default=None,
                   help="penalty weights (default 2|W|+1 each)")


def _common(p):
    p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./out)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsvrptw", description="Greedy annealing-based route generation for fleet sizing")
    parser.add_argument("--version", action="version", version=f"fsvrptw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="run the greedy loop on one instance")
    _instance_args(solve)
    solve.add_argument("--sampler", choices=("sa", "exact"), default="sa")
    solve.add_argument("--theta", type=_theta, default=0.5)
    solve.add_argument("--selection", choices=("fraction", "threshold"), default=None,
                       help="default: fraction for sa, threshold for exact")
    solve.add_argument("--strategy", choices=("multiple", "single"), default="multiple")
    solve.add_argument("--reads", type=int, default=1000, help="samples per annealing call (M)")
    solve.add_argument("--budget", type=int, default=1000, help="sweeps per read")
    solve.add_argument("--exact-threshold", type=int, default=40)
    solve.add_argument("--max-iterations", type=int, default=1000)
    solve.add_argument("--no-timing", action="store_true", help="write zero wall times (byte-stable output)")
    _common(solve)

    bench = sub.add_parser("bench", help="run a benchmark battery")
    bench.add_argument("--config", default=None, help="JSON config file")
    bench.add_argument("--instance", dest="instances", nargs="+", default=None,
                       help="bundled names or Solomon files (default R101 R201)")
    bench.add_argument("--ns", type=_int_list, default=None, help="e.g. 5..10")
    bench.add_argument("--seeds", type=_int_list, default=None, help="e.g. 0..9")
    bench.add_argument("--methods", nargs="+", choices=METHODS, default=None)
    bench.add_argument("--theta", type=_theta, default=None)
    bench.add_argument("--strategy", choices=("multiple", "single"), default=None)
    bench.add_argument("--reads", type=int, default=None)
    bench.add_argument("--budget", type=int, default=None)
    bench.add_argument("--penalties", type=float, nargs=2, default=None)
    bench.add_argument("--workers", type=int, default=None)
    bench.add_argument("--no-oracle", action="store_true", help="skip exact optima; gaps use the best found")
    bench.add_argument("--no-timing", action="store_true")
    _common(bench)

    export = sub.add_parser("export-qubo", help="write the initial QUBO and its variable map")
    _instance_args(export)
    _common(export)
    return parser


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(ENV_OUT) or "out")


def _load(args):
    """(sub-instance, grid) from the instance arguments."""
    if args.instance == RUNNING_EXAMPLE:
        if args.n not in (None, 2):
            raise UsageError("the running example has exactly 2 customers")
        sub, grid = running_example()
        return sub, grid
    path = Path(args.instance)
    if path.exists():
        inst = load_solomon(path)
    else:
        try:
            inst = bundled(args.instance)
        except FileNotFoundError:
            raise UsageError(f"no such instance file or bundled name: {args.instance}")
    if args.n is None:
        raise UsageError("--n is required for Solomon instances")
    if not 1 <= args.n <= inst.num_customers:
        raise UsageError(f"--n must be between 1 and {inst.num_customers}")
    sub = sample_customers(inst, args.n, args.seed)
    return sub, build_time_grid(sub)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_solve(args) -> int:
    sub, grid = _load(args)
    exact = args.sampler == "exact"
    config = GreedyConfig(
        theta=args.theta,
        selection=args.selection or ("threshold" if exact else "fraction"),
        strategy=args.strategy,
        num_reads=args.reads,
        budget=args.budget,
        max_iterations=args.max_iterations,
        exact_threshold=args.exact_threshold,
        seed=args.seed,
        penalties=tuple(args.penalties) if args.penalties else None,
        record_timing=not args.no_timing,
    )
    sampler = ExactSampler(10**6) if exact else SimulatedAnnealingSampler()
    out = _out_dir(args)
    try:
        sol = run(sub, grid, sampler, config)
    except Stall as exc:
        _write(out / "trace.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in exc.trace))
        print(f"stalled: {exc}", file=sys.stderr)
        return 2
    doc = sol.to_dict()
    doc["instance"] = {"name": sub.name, "source": args.instance, "n": sub.n, "sampler": args.sampler}
    _write(out / "solution.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")
    _write(out / "trace.jsonl", sol.trace_jsonl())
    print(f"{sub.name}: {sol.objective} vehicles, feasible={sol.feasible}, {len(sol.trace)} iterations -> {out}")
    return 0 if sol.feasible else 2


def cmd_bench(args) -> int:
    base = BenchConfig.from_json(args.config).to_dict() if args.config else BenchConfig().to_dict()
    overrides = {
        "instances": args.instances, "ns": args.ns, "seeds": args.seeds, "methods": args.methods,
        "theta": args.theta, "strategy": args.strategy, "num_reads": args.reads, "budget": args.budget,
        "penalties": args.penalties, "workers": args.workers,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_oracle:
        base["no_oracle"] = True
    if args.no_timing:
        base["record_timing"] = False
    config = BenchConfig.from_dict(base)
    for src in config.instances:
        try:
            BenchConfig.load(src)
        except FileNotFoundError:
            raise UsageError(f"no such instance file or bundled name: {src}")
    too_big = [n for n in config.ns if n > config.oracle_max_n]
    if too_big and not config.no_oracle:
        raise UsageError(
            f"N={too_big} exceeds the oracle limit of {config.oracle_max_n} customers; "
            "pass --no-oracle to report gaps against the best solution found"
        )
    rows = run_battery(config)
    files = write_outputs(rows, config, _out_dir(args))
    print("wrote " + ", ".join(str(p) for p in files.values()))
    return 0


def cmd_export_qubo(args) -> int:
    sub, grid = _load(args)
    vars = enumerate_variables(sub, grid)
    q = compile_qubo(build_constraints(vars, sub), vars, tuple(args.penalties) if args.penalties else None)
    if q.n == 0:
        raise UsageError("no active variables to export")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "qubo.txt", "w") as fh:
        write_qubo(q, fh)
    with open(out / "variables.csv", "w") as fh:
        write_variable_map(vars, fh)
    meta = {"instance": {"name": sub.name, "source": args.instance, "n": sub.n, "seed": args.seed},
            "penalties": list(args.penalties) if args.penalties else None, "variables": q.n,
            "version": __version__}
    _write(out / "export.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")
    print(f"{sub.name}: {q.n} variables, {len(q.values)} couplings -> {out}")
    return 0


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "export-qubo": cmd_export_qubo}


def main(argv=None) -> int:
    # numba reports an old TBB even though it then uses OpenMP
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (InfeasibleDiscretization, ModelInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except (SolomonParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
