"""Greedy route generation: sample, select high-expectation arcs, extract
customer-disjoint paths, fix them in place and repeat on what is left.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import __version__
from .dagpath import Path, build_dag, extract_disjoint_paths
from .instance import TOL, SubInstance, TimeGrid
from .model import (
    ConstraintSet,
    InvariantViolation,
    Variable,
    VariableSet,
    build_constraints,
    compile_qubo,
    enumerate_variables,
    pruning_rule,
)
from .samplers import ExactSampler, InfeasibleModel, Sampler, one_body_expectations


class Stall(RuntimeError):
    """No pruning progress and no exact fallback available."""

    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GreedyConfig:
    theta: float = 0.5
    selection: str = "fraction"  # or "threshold"
    num_reads: int = 1000
    budget: int = 1000  # sweeps per read for annealing backends
    max_iterations: int = 1000
    exact_threshold: int = 40
    patience: int = 10
    seed: int = 0
    penalties: tuple[float, float] | None = None
    strategy: str = "multiple"
    record_timing: bool = True

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie strictly between 0 and 1, got {self.theta}")
        if self.selection not in ("fraction", "threshold"):
            raise ValueError(f"unknown selection mode {self.selection!r}")
        if self.strategy not in ("multiple", "single"):
            raise ValueError(f"unknown path strategy {self.strategy!r}")
        for name in ("num_reads", "budget", "max_iterations", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.exact_threshold < 0:
            raise ValueError("exact_threshold must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["penalties"] = list(self.penalties) if self.penalties is not None else None
        return d


class PruneRecord(NamedTuple):
    path: int  # position of the path within the batch
    k: int
    tuple: tuple
    variable: Variable
    value: int
    rule: str


@dataclass
class GreedyState:
    sub: SubInstance
    vars: VariableSet
    cons: ConstraintSet
    paths: list[Path] = field(default_factory=list)
    iteration: int = 0

    @classmethod
    def initial(cls, sub: SubInstance, grid: TimeGrid) -> "GreedyState":
        vars = enumerate_variables(sub, grid)
        return cls(sub, vars, build_constraints(vars, sub))

    def fix(self, v: Variable, value: int, rule: str) -> bool:
        if self.vars.fix(v, value, rule):
            self.cons.substitute(v, value)
            return True
        return False


def select_fraction(
    exps: Sequence[float],
    theta: float,
    variables: Sequence[Variable],
    threshold: bool = False,
) -> list[Variable]:
    """Highest-expectation variables: ``ceil(theta * n)`` of them, or all with
    expectation >= ``theta`` when ``threshold`` is set.

    Ties are broken by the variable's (i, s, j, t) order.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie strictly between 0 and 1, got {theta}")
    exps = np.asarray(exps, dtype=float)
    if len(exps) != len(variables):
        raise ValueError("expectations and variables differ in length")
    if threshold:
        return sorted(v for v, e in zip(variables, exps) if e >= theta)
    count = math.ceil(theta * len(variables))
    ranked = sorted(range(len(variables)), key=lambda k: (-exps[k], variables[k]))
    return sorted(variables[k] for k in ranked[:count])


def concat(paths: list[Path], p: Path, cons: ConstraintSet, sink: int) -> list[Path]:
    """Join ``p`` with the stored fragments that end where it starts or start
    where it ends, removing the constraints at the glued tuples.
    """
    head = tail = None
    for idx, r in enumerate(paths):
        if p.first[0] not in (0, sink) and r.last[0] == p.first[0]:
            head = idx
        if p.last[0] not in (0, sink) and r.first[0] == p.last[0]:
            tail = idx
    if head is not None and head == tail:
        raise InvariantViolation(f"joining {p.tuples} would close a cycle through customer {p.first[0]}")
    merged = p
    if head is not None:
        merged = paths[head] + merged
        cons.remove_flow(*p.first)
    if tail is not None:
        merged = merged + paths[tail]
        cons.remove_flow(*p.last)
        cons.remove_coverage(p.last[0])
    out = [r for idx, r in enumerate(paths) if idx not in (head, tail)]
    out.append(merged)
    return out


def prune(state: GreedyState, batch: Sequence[Path]) -> list[PruneRecord]:
    """Fix the arcs of every new path and everything they rule out.

    Returns one record per variable whose status changed, in the order the
    rules fired.
    """
    sub, vars, cons = state.sub, state.vars, state.cons
    sink = sub.sink
    records: list[PruneRecord] = []

    def fix(pi, k, tup, v, value, rule):
        if state.fix(v, value, rule):
            records.append(PruneRecord(pi, k, tup, v, value, rule))

    for pi, p in enumerate(batch):
        state.paths = concat(state.paths, p, cons, sink)
        last = len(p)
        for k, (ik, sk) in enumerate(p.tuples):
            tup = (ik, sk)
            if k < last:
                fix(pi, k, tup, p.arcs[k], 1, "along-path")
            if ik in (0, sink):
                # the origin has no incoming arcs and the sink accepts any arrival time
                continue
            if 0 < k < last:
                for v in vars.outgoing(ik):
                    fix(pi, k, tup, v, 0, "interior-1a" if v.s != sk else "interior-1b")
                for v in vars.incoming(ik):
                    fix(pi, k, tup, v, 0, "interior-2a" if v.t != sk else "interior-2b")
                cons.remove_flow(ik, sk)
            elif k == 0:
                for v in vars.outgoing(ik):
                    fix(pi, k, tup, v, 0, "exterior-1b")
                for v in vars.incoming(ik):
                    if v.t != sk:
                        fix(pi, k, tup, v, 0, "exterior-1b")
            else:
                for v in vars.incoming(ik):
                    fix(pi, k, tup, v, 0, "exterior-2b")
                for v in vars.outgoing(ik):
                    if v.s != sk:
                        fix(pi, k, tup, v, 0, "exterior-2b")
            if k != 0:
                cons.remove_coverage(ik)
    return records


def interior_violations(state: GreedyState) -> list[tuple[int, Variable]]:
    """Active variables touching a customer interior to a stored path."""
    out = []
    for p in state.paths:
        for ik, _ in p.tuples[1:-1]:
            out.extend((ik, v) for v in state.vars.outgoing(ik) + state.vars.incoming(ik))
    return out


@dataclass
class Solution:
    routes: list[Path]
    objective: int
    trace: list[dict]
    feasible: bool = False
    seed: int = 0
    config: dict = field(default_factory=dict)

    def route_nodes(self) -> list[list[int]]:
        return [[i for i, _ in r.tuples] for r in self.routes]

    def to_dict(self) -> dict:
        return {
            "routes": [[[i, s] for i, s in r.tuples] for r in self.routes],
            "objective": self.objective,
            "feasible": self.feasible,
            "seed": self.seed,
            "config": self.config,
            "version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.trace)


def iteration_seed(seed: int, l: int) -> int:
    return int(np.random.SeedSequence([seed, l]).generate_state(1)[0])


def run(
    sub: SubInstance,
    grid: TimeGrid,
    sampler: Sampler,
    config: GreedyConfig = GreedyConfig(),
    callback: Callable[[GreedyState, list[PruneRecord]], None] | None = None,
) -> Solution:
    """Iterate sample, select, extract and prune until no variable is active.

    After ``patience`` iterations without a pruned variable the remaining
    system is solved exactly if it has at most ``exact_threshold`` variables;
    otherwise the sweep budget is raised fourfold once before giving up.
    """
    state = GreedyState.initial(sub, grid)
    trace: list[dict] = []
    budget, theta, threshold = config.budget, config.theta, config.selection == "threshold"
    escalated = exact_mode = False
    idle = 0
    while state.vars.active():
        l = state.iteration
        if l >= config.max_iterations:
            raise Stall(f"no solution after {l} iterations", trace)
        start = time.perf_counter()
        q = compile_qubo(state.cons, state.vars, config.penalties)
        try:
            ss = sampler.sample(q, config.num_reads, budget, iteration_seed(config.seed, l))
        except InfeasibleModel as exc:
            raise Stall(f"remaining system is infeasible: {exc}", trace) from exc
        weights = dict(zip(q.variables, ss.samples.sum(axis=0).tolist()))
        selected = select_fraction(one_body_expectations(ss), theta, q.variables, threshold)
        batch = extract_disjoint_paths(build_dag(selected, weights), sub.sink, config.strategy)
        records = prune(state, batch)
        if callback is not None:
            callback(state, records)
        trace.append({
            "l": l,
            "active_count": q.n,
            "selected_count": len(selected),
            "paths_found": len(batch),
            "best_energy": float(ss.energies.min()),
            "wall_ms": round(1000 * (time.perf_counter() - start), 3) if config.record_timing else 0,
        })
        state.iteration += 1
        idle = 0 if records else idle + 1
        if idle >= config.patience:
            idle = 0
            if not exact_mode and len(state.vars.active()) <= config.exact_threshold:
                sampler, exact_mode = ExactSampler(config.exact_threshold), True
                theta, threshold = 0.5, True
            elif not escalated and not exact_mode:
                budget, escalated = budget * 4, True
            else:
                raise Stall(f"no progress with {len(state.vars.active())} active variables", trace)
    for r in state.paths:
        if r.first != (0, 0.0) or r.last[0] != sub.sink:
            raise Stall(f"fragment {r.tuples} is not anchored at both depots", trace)
    routes = sorted(state.paths, key=lambda r: r.tuples)
    sol = Solution(routes, len(routes), trace, seed=config.seed, config=config.to_dict())
    sol.feasible = validate_solution(sol, sub, grid).feasible
    return sol


# -- validation ----------------------------------------------------------------


@dataclass
class Report:
    violations: list[str]
    objective: int

    @property
    def feasible(self) -> bool:
        return not self.violations


def route_time_violations(nodes: Sequence[int], sub: SubInstance) -> list[str]:
    """Propagate earliest service starts along a node sequence from the origin."""
    out = []
    depart = 0.0
    for i, j in zip(nodes, nodes[1:]):
        arrive = depart + float(sub.dist[i, j])
        start = max(sub.ready(j), arrive)
        if start > sub.due(j) + TOL:
            out.append(f"time window at customer {j}: arrival {start:g} > {sub.due(j):g}")
        depart = start + sub.service(j)
    return out


def validate_routes(routes: Sequence[Path | Sequence[tuple]], sub: SubInstance, grid: TimeGrid) -> Report:
    """Check that routes partition the customers and respect every window."""
    violations: list[str] = []
    seen: dict[int, int] = {}
    for r, route in enumerate(routes):
        tuples = [tuple(x) for x in (route.tuples if isinstance(route, Path) else route)]
        nodes = [i for i, _ in tuples]
        if not tuples or tuples[0] != (0, 0.0):
            violations.append(f"route {r} does not leave the origin at time 0")
        if not tuples or nodes[-1] != sub.sink:
            violations.append(f"route {r} does not end at the sink")
        for i, s in tuples:
            if not any(abs(s - t) <= TOL for t in grid.times(i)):
                violations.append(f"route {r}: time {s:g} is not a grid point of node {i}")
        for a, b in zip(tuples, tuples[1:]):
            rule = pruning_rule(Variable(*a, *b), sub)
            if rule is not None:
                violations.append(f"route {r}: arc {a}->{b} is inadmissible ({rule})")
        for i in nodes:
            if i not in (0, sub.sink):
                seen[i] = seen.get(i, 0) + 1
        violations.extend(f"route {r}: {msg}" for msg in route_time_violations(nodes, sub))
    for j in sub.customer_nodes:
        if seen.get(j, 0) != 1:
            violations.append(f"coverage of customer {j}: visited {seen.get(j, 0)} times")
    return Report(violations, len(routes))


def validate_solution(sol: Solution, sub: SubInstance, grid: TimeGrid) -> Report:
    report = validate_routes(sol.routes, sub, grid)
    if sol.objective != len(sol.routes):
        report.violations.append(f"objective {sol.objective} != route count {len(sol.routes)}")
    return report
