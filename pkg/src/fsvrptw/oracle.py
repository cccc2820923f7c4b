"""Ground truth for the discretized model and the energy-sort filtering baseline."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .dagpath import Path
from .greedy import Solution, validate_routes
from .instance import SubInstance, TimeGrid
from .model import (
    InvariantViolation,
    LinearModel,
    Variable,
    build_constraints,
    build_model,
    compile_qubo,
    enumerate_variables,
)
from .samplers import Sampler, exact_solve

EXHAUSTIVE_LIMIT = 22


@dataclass
class OracleResult:
    optimum: int
    assignment: np.ndarray
    variables: tuple
    nodes: int = 0
    exhausted: bool = True
    cross_checked: bool = False

    def to_dict(self) -> dict:
        return {
            "optimum": self.optimum,
            "assignment": "".join(str(int(b)) for b in self.assignment),
            "variables": [list(v) for v in self.variables],
            "nodes": self.nodes,
            "exhausted": self.exhausted,
            "cross_checked": self.cross_checked,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleResult":
        return cls(
            int(d["optimum"]),
            np.array([int(c) for c in d["assignment"]], dtype=np.uint8),
            tuple(Variable(*v) for v in d["variables"]),
            d.get("nodes", 0),
            d.get("exhausted", True),
            d.get("cross_checked", False),
        )


def exhaustive_optimum(model: LinearModel, chunk: int = 1 << 15) -> tuple[float, np.ndarray] | None:
    """Minimum objective over all 2^n assignments satisfying every row."""
    n = model.n
    if n > EXHAUSTIVE_LIMIT:
        raise ValueError(f"{n} variables is too many to enumerate")
    best: tuple[float, np.ndarray] | None = None
    shifts = np.arange(n, dtype=np.int64)
    for lo in range(0, 1 << n, chunk):
        codes = np.arange(lo, min(lo + chunk, 1 << n), dtype=np.int64)
        x = ((codes[:, None] >> shifts) & 1).astype(np.uint8)
        ok = model.is_feasible(x)
        if not ok.any():
            continue
        obj = model.objective_value(x[ok])
        k = int(np.argmin(obj))
        if best is None or obj[k] < best[0]:
            best = (float(obj[k]), x[ok][k])
    return best


class OracleCache:
    """One JSON file per (instance, grid), named by the hash of both."""

    def __init__(self, directory):
        self.dir = FsPath(directory)

    @staticmethod
    def key(sub: SubInstance, grid: TimeGrid) -> str:
        blob = json.dumps({"instance": sub.to_dict(), "grid": grid.to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, sub: SubInstance, grid: TimeGrid) -> OracleResult | None:
        path = self.dir / f"{self.key(sub, grid)}.json"
        if not path.exists():
            return None
        return OracleResult.from_dict(json.loads(path.read_text()))

    def put(self, sub: SubInstance, grid: TimeGrid, result: OracleResult) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.key(sub, grid)}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(result.to_dict(), sort_keys=True))
        tmp.replace(path)


def optimum(
    sub: SubInstance,
    grid: TimeGrid,
    limit: int = 100_000,
    cache: OracleCache | None = None,
) -> OracleResult:
    """Minimum fleet size on the untouched model, by branch and bound.

    Models small enough to enumerate are cross-checked bit by bit.
    """
    if cache is not None:
        hit = cache.get(sub, grid)
        if hit is not None:
            return hit
    vars = enumerate_variables(sub, grid)
    model = build_model(vars, build_constraints(vars, sub))
    ss = exact_solve(model, limit)
    result = OracleResult(
        int(round(float(ss.energies[0]))), ss.samples[0].copy(), model.variables,
        ss.info.get("nodes", 0), ss.info.get("exhausted", True),
    )
    if model.n <= EXHAUSTIVE_LIMIT:
        brute = exhaustive_optimum(model)
        if brute is None or brute[0] != result.optimum:
            raise InvariantViolation(f"branch and bound gives {result.optimum}, enumeration {brute and brute[0]}")
        result.cross_checked = True
    if cache is not None:
        cache.put(sub, grid, result)
    return result


def decode_routes(x, variables, sink: int) -> list[Path] | None:
    """Follow arcs set to 1 from the origin; ``None`` unless every such arc is
    used by exactly one origin-to-sink route.
    """
    ones = [v for v, b in zip(variables, x) if b]
    out: dict[tuple, list[Variable]] = {}
    for v in ones:
        out.setdefault(v.tail, []).append(v)
    routes = []
    used = 0
    for first in sorted(out.get((0, 0.0), [])):
        arcs = [first]
        while arcs[-1].j != sink:
            nxt = out.get(arcs[-1].head, [])
            if len(nxt) != 1 or len(arcs) > len(ones):
                return None
            arcs.append(nxt[0])
        used += len(arcs)
        routes.append(Path.from_arcs(arcs))
    if used != len(ones):
        return None
    return routes


@dataclass
class FilteringResult:
    solution: Solution | None
    samples: int
    feasible_samples: int
    info: dict = field(default_factory=dict)


def filtering_baseline(
    sub: SubInstance,
    grid: TimeGrid,
    sampler: Sampler,
    m: int = 1000,
    budget: int = 1000,
    seed: int = 0,
    penalties: tuple[float, float] | None = None,
) -> FilteringResult:
    """Sample the whole model once and keep the lowest-energy valid sample."""
    vars = enumerate_variables(sub, grid)
    q = compile_qubo(build_constraints(vars, sub), vars, penalties)
    ss = sampler.sample(q, m, budget, seed)
    good = 0
    best = None
    for r in ss.order():
        routes = decode_routes(ss.samples[r], q.variables, sub.sink)
        if routes is None or not validate_routes(routes, sub, grid).feasible:
            continue
        good += 1
        if best is None:
            routes = sorted(routes, key=lambda p: p.tuples)
            trace = [{"l": 0, "active_count": q.n, "selected_count": 0, "paths_found": len(routes),
                      "best_energy": float(ss.energies.min()), "wall_ms": 0}]
            config = {"num_reads": m, "budget": budget, "seed": seed,
                      "penalties": list(penalties) if penalties else None}
            best = Solution(routes, len(routes), trace, True, seed, config)
    return FilteringResult(best, len(ss), good, dict(ss.info))
