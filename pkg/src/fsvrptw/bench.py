"""Seeded benchmark batteries: run methods over sampled sub-instances,
compare against the exact optimum and summarize gaps, feasibility and time.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .greedy import GreedyConfig, Stall, run
from .instance import (
    InfeasibleDiscretization,
    Instance,
    bundled,
    build_time_grid,
    load_solomon,
    sample_customers,
)
from .model import ModelInfeasible
from .oracle import OracleCache, filtering_baseline, optimum
from .samplers import ExactSampler, SimulatedAnnealingSampler

log = logging.getLogger(__name__)

METHODS = ("greedy+sa", "greedy+exact", "filtering+sa")
REFERENCE = "greedy+sa"
ABSENT = "NA"


@dataclass
class BenchConfig:
    instances: list = field(default_factory=lambda: ["R101", "R201"])  # bundled names or Solomon files
    ns: list = field(default_factory=lambda: list(range(5, 11)))
    seeds: list = field(default_factory=lambda: list(range(10)))
    methods: list = field(default_factory=lambda: list(METHODS))
    theta: float = 0.5
    selection: str = "fraction"
    strategy: str = "multiple"
    num_reads: int = 1000
    budget: int = 1000
    penalties: list | None = None
    exact_threshold: int = 40  # greedy falls back to exact search below this size
    exact_limit: int = 100_000  # largest model the greedy+exact backend will take
    oracle_max_n: int = 25
    no_oracle: bool = False
    oracle_cache: str | None = None
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        GreedyConfig(theta=self.theta, selection=self.selection, strategy=self.strategy)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def penalty_pair(self) -> tuple[float, float] | None:
        return tuple(self.penalties) if self.penalties else None

    def greedy(self, seed: int, exact: bool = False) -> GreedyConfig:
        return GreedyConfig(
            theta=self.theta,
            # an exact backend returns one sample, so only a threshold reads it faithfully
            selection="threshold" if exact else self.selection,
            strategy=self.strategy,
            num_reads=self.num_reads,
            budget=self.budget,
            exact_threshold=self.exact_threshold,
            seed=seed,
            penalties=self.penalty_pair,
            record_timing=self.record_timing,
        )

    @staticmethod
    def load(source: str) -> Instance:
        path = Path(source)
        return load_solomon(path) if path.exists() else bundled(source)


@dataclass
class BenchRow:
    instance: str
    n: int
    seed: int
    method: str
    objective: int | None
    optimum: int | None
    relative_gap: float | None
    feasible: bool
    wall_ms: int
    iterations: int
    optimum_source: str = "exact"
    note: str = ""


ROW_FIELDS = [f.name for f in fields(BenchRow)]


def relative_gap(objective, best) -> float | None:
    if objective is None or not best:
        return None
    return (objective - best) / best


def run_one(
    config: BenchConfig,
    source: str,
    n: int,
    seed: int,
    method: str,
    instance: Instance | None = None,
) -> BenchRow:
    inst = instance or config.load(source)
    row = BenchRow(inst.name, n, seed, method, None, None, None, False, 0, 0)
    try:
        sub = sample_customers(inst, n, seed)
        grid = build_time_grid(sub)
        if not config.no_oracle and n <= config.oracle_max_n:
            cache = OracleCache(config.oracle_cache) if config.oracle_cache else None
            row.optimum = optimum(sub, grid, config.exact_limit, cache).optimum
        else:
            row.optimum_source = "best-found"
        start = time.perf_counter()
        if method == "filtering+sa":
            res = filtering_baseline(sub, grid, SimulatedAnnealingSampler(), config.num_reads,
                                     config.budget, seed, config.penalty_pair)
            sol = res.solution
            row.iterations = 1
        else:
            exact = method == "greedy+exact"
            sampler = ExactSampler(config.exact_limit) if exact else SimulatedAnnealingSampler()
            sol = run(sub, grid, sampler, config.greedy(seed, exact))
            row.iterations = len(sol.trace)
        elapsed = time.perf_counter() - start
        row.wall_ms = int(round(1000 * elapsed)) if config.record_timing else 0
        if sol is not None and sol.feasible:
            row.objective, row.feasible = sol.objective, True
        else:
            row.note = "no feasible sample"
    except (InfeasibleDiscretization, ModelInfeasible) as exc:
        row.note = f"infeasible sub-instance: {exc}"
        log.warning("%s n=%d seed=%d: %s", inst.name, n, seed, exc)
    except Stall as exc:
        row.note = f"stall: {exc}"
        row.iterations = len(exc.trace)
    row.relative_gap = relative_gap(row.objective, row.optimum) if row.feasible else None
    return row


def _job(args):
    config, source, n, seed, method = args
    return run_one(BenchConfig.from_dict(config), source, n, seed, method)


def _order(row: BenchRow):
    return (row.instance, row.n, row.seed, METHODS.index(row.method))


def run_battery(config: BenchConfig) -> list[BenchRow]:
    """Every (instance, N, seed, method) combination, rows sorted in that order."""
    jobs = [(src, n, seed, m) for src in config.instances for n in config.ns
            for seed in config.seeds for m in config.methods]
    if config.workers > 1:
        payload = [(config.to_dict(), *job) for job in jobs]
        # spawn: forking after the annealer has started its thread pool is unsafe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(config.workers, mp_context=ctx) as pool:
            rows = list(pool.map(_job, payload))
    else:
        loaded = {src: config.load(src) for src in config.instances}
        rows = [run_one(config, src, n, seed, m, loaded[src]) for src, n, seed, m in jobs]
    rows.sort(key=_order)
    _fill_best_found(rows)
    return rows


def _fill_best_found(rows: list[BenchRow]) -> None:
    best: dict[tuple, int] = {}
    for r in rows:
        if r.feasible and r.optimum_source == "best-found":
            key = (r.instance, r.n, r.seed)
            best[key] = min(best.get(key, r.objective), r.objective)
    for r in rows:
        if r.optimum_source == "best-found":
            r.optimum = best.get((r.instance, r.n, r.seed))
            r.relative_gap = relative_gap(r.objective, r.optimum) if r.feasible else None


# -- aggregation ---------------------------------------------------------------


@dataclass
class SummaryRow:
    instance: str
    n: int
    method: str
    runs: int
    feasible_pct: float
    gap_mean: float | None
    gap_std: float | None
    time_mean_s: float | None
    time_std_s: float | None
    rel_time_diff: float | None


SUMMARY_FIELDS = [f.name for f in fields(SummaryRow)]


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def aggregate(rows: list[BenchRow], reference: str = REFERENCE) -> list[SummaryRow]:
    """Per (instance, N, method) statistics over feasible rows only.

    ``rel_time_diff`` averages (t_method - t_reference) / t_method over seeds
    where both runs are feasible; it is absent for the reference itself.
    """
    cells: dict[tuple, list[BenchRow]] = {}
    for r in sorted(rows, key=_order):
        if r.note.startswith("infeasible sub-instance"):
            continue
        cells.setdefault((r.instance, r.n, r.method), []).append(r)
    ref_time = {(r.instance, r.n, r.seed): r.wall_ms for r in rows if r.method == reference and r.feasible}
    out = []
    for (inst, n, method), group in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], METHODS.index(kv[0][2]))):
        ok = [r for r in group if r.feasible]
        gap_mean, gap_std = _mean_std([r.relative_gap for r in ok if r.relative_gap is not None])
        t_mean, t_std = _mean_std([r.wall_ms / 1000 for r in ok])
        diffs = []
        if method != reference:
            for r in ok:
                tg = ref_time.get((inst, n, r.seed))
                if tg is not None and r.wall_ms > 0:
                    diffs.append((r.wall_ms - tg) / r.wall_ms)
        out.append(SummaryRow(
            inst, n, method, len(group), 100.0 * len(ok) / len(group),
            gap_mean, gap_std, t_mean, t_std,
            float(np.mean(diffs)) if diffs else None,
        ))
    return out


# -- output --------------------------------------------------------------------


def _cell(x) -> str:
    if x is None:
        return ABSENT
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _parse(x: str, kind):
    if x == ABSENT:
        return None
    if kind is bool:
        return x == "1"
    return kind(x)


def _csv(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for rec in records:
        w.writerow([_cell(getattr(rec, h)) for h in header])
    return buf.getvalue()


def rows_csv(rows: list[BenchRow]) -> str:
    return _csv(ROW_FIELDS, rows)


def summary_csv(summary: list[SummaryRow]) -> str:
    return _csv(SUMMARY_FIELDS, summary)


def read_rows(text: str) -> list[BenchRow]:
    kinds = {"n": int, "seed": int, "objective": int, "optimum": int, "relative_gap": float,
             "feasible": bool, "wall_ms": int, "iterations": int}
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(BenchRow(**{k: _parse(v, kinds.get(k, str)) if k in kinds else v for k, v in rec.items()}))
    return rows


def read_summary(text: str) -> list[SummaryRow]:
    kinds = {"n": int, "runs": int, "feasible_pct": float, "gap_mean": float, "gap_std": float,
             "time_mean_s": float, "time_std_s": float, "rel_time_diff": float}
    return [SummaryRow(**{k: _parse(v, kinds[k]) if k in kinds else v for k, v in rec.items()})
            for rec in csv.DictReader(io.StringIO(text))]


def _fmt_pm(mean, std, scale=1.0, digits=1) -> str:
    if mean is None:
        return "n/a"
    return f"{mean * scale:.{digits}f} ± {std * scale:.{digits}f}"


def report_md(summary: list[SummaryRow], config: BenchConfig) -> str:
    """Markdown tables: gap, feasibility, time and relative time difference."""
    methods = [m for m in METHODS if any(s.method == m for s in summary)]
    instances = sorted({s.instance for s in summary})
    ns = sorted({s.n for s in summary})
    by = {(s.instance, s.n, s.method): s for s in summary}

    def table(title, render):
        head = ["N"] + [f"{inst} {m}" for inst in instances for m in methods]
        lines = [f"## {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for n in ns:
            cells = [str(n)]
            for inst in instances:
                for m in methods:
                    s = by.get((inst, n, m))
                    cells.append(render(s) if s else "n/a")
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    parts = [
        "# Benchmark report",
        "",
        f"fsvrptw {__version__}. Statistics use feasible runs only; n/a marks cells without any.",
        "",
        "```json",
        # the pool size never changes a result, so reports match across it
        json.dumps({k: v for k, v in config.to_dict().items() if k != "workers"}, sort_keys=True, indent=1),
        "```",
        "",
        table("Relative optimality gap (%)", lambda s: _fmt_pm(s.gap_mean, s.gap_std, 100)),
        table("Feasible runs (%)", lambda s: f"{s.feasible_pct:.0f}"),
        table("Wall time (s)", lambda s: _fmt_pm(s.time_mean_s, s.time_std_s, 1, 3)),
        table(f"Relative time difference against {REFERENCE}",
              lambda s: "n/a" if s.rel_time_diff is None else f"{s.rel_time_diff:.3f}"),
    ]
    return "\n".join(parts)


def write_outputs(rows: list[BenchRow], config: BenchConfig, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate(rows)
    files = {
        "rows": out / "rows.csv",
        "summary": out / "summary.csv",
        "report": out / "report.md",
    }
    files["rows"].write_text(rows_csv(rows))
    files["summary"].write_text(summary_csv(summary))
    files["report"].write_text(report_md(summary, config))
    return files


def feasible_fraction(rows: list[BenchRow], method: str) -> float:
    sel = [r for r in rows if r.method == method]
    return sum(r.feasible for r in sel) / len(sel) if sel else math.nan
