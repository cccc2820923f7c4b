import json

import numpy as np
import pytest

from conftest import small_problem
from fsvrptw.dagpath import Path, paths_are_disjoint
from fsvrptw.greedy import (
    GreedyConfig,
    GreedyState,
    Solution,
    Stall,
    concat,
    interior_violations,
    prune,
    route_time_violations,
    run,
    select_fraction,
    validate_routes,
    validate_solution,
)
from fsvrptw.instance import Customer, build_time_grid, make_subinstance
from fsvrptw.model import InvariantViolation, Variable, enumerate_variables
from fsvrptw.samplers import ExactSampler, ReplaySampler, SimulatedAnnealingSampler

# (variable, value) rows fixed by the first prune of the running example
FIRST_PRUNE = [
    ((1, 1, "N", 2), 1), ((0, 0, 1, 2), 0), ((0, 0, 1, 3), 0), ((1, 3, "N", 3), 0), ((1, 2, "N", 3), 0),
    ((0, 0, 2, 3), 1), ((2, 3, "N", 3), 1), ((0, 0, 2, 2), 0), ((2, 2, "N", 3), 0),
]


def first_round_script(X):
    return [[{X(0, 0, 2, 3), X(2, 3, "N", 3), X(1, 1, "N", 2)}], [{X(0, 0, 1, 1)}]]


REPLAY_CONFIG = GreedyConfig(theta=0.9, selection="threshold")


# -- selection -----------------------------------------------------------------


def test_select_fraction_sorting():
    vs = [Variable(0, 0.0, k, 1.0) for k in range(1, 5)]
    assert select_fraction([1.0, 0.9, 0.1, 0.0], 0.5, vs) == vs[:2]
    assert select_fraction([0.0, 0.1, 0.9, 1.0], 0.5, vs) == vs[2:]


def test_select_fraction_ties_and_count(example):
    sub, grid = example
    vs = list(enumerate_variables(sub, grid).active())
    assert len(select_fraction(np.linspace(0, 1, 10), 0.5, vs)) == 5
    assert select_fraction(np.full(10, 0.3), 0.5, vs) == vs[:5]
    assert len(select_fraction(np.full(10, 0.3), 0.01, vs)) == 1


def test_select_threshold():
    vs = [Variable(0, 0.0, k, 1.0) for k in range(1, 5)]
    assert select_fraction([1.0, 0.9, 0.89, 0.0], 0.9, vs, threshold=True) == vs[:2]
    assert select_fraction([0.1, 0.2, 0.0, 0.0], 0.9, vs, threshold=True) == []


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.2, 1.5])
def test_select_bad_theta(theta):
    with pytest.raises(ValueError):
        select_fraction([0.5], theta, [Variable(0, 0.0, 1, 1.0)])


def test_select_length_mismatch():
    with pytest.raises(ValueError):
        select_fraction([0.5, 0.1], 0.5, [Variable(0, 0.0, 1, 1.0)])


# -- prune and concat ------------------------------------------------------------


def test_running_example_prune(example, X):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    batch = [Path.from_arcs([X(1, 1, "N", 2)]), Path.from_arcs([X(0, 0, 2, 3), X(2, 3, "N", 3)])]
    records = prune(state, batch)
    assert sorted((r.variable, r.value) for r in records) == sorted((X(*v), val) for v, val in FIRST_PRUNE)
    assert {(r.variable, r.value) for r in records if r.path == 0} == {(X(*v), val) for v, val in FIRST_PRUNE[:5]}
    assert state.vars.active() == (X(0, 0, 1, 1),)
    assert interior_violations(state) == []
    # customer 1's coverage survives with the single remaining arc
    cov = state.cons.coverage[1]
    assert not cov.removed and cov.coeffs == {X(0, 0, 1, 1): 1} and cov.constant == -1
    assert state.cons.coverage[2].removed


def test_running_example_prune_rules(example, X):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    batch = [Path.from_arcs([X(1, 1, "N", 2)]), Path.from_arcs([X(0, 0, 2, 3), X(2, 3, "N", 3)])]
    rules = {r.variable: r.rule for r in prune(state, batch)}
    assert rules[X(1, 1, "N", 2)] == "along-path"
    assert rules[X(0, 0, 1, 2)] == rules[X(1, 2, "N", 3)] == "exterior-1b"
    assert rules[X(2, 2, "N", 3)] == "interior-1a"
    assert rules[X(0, 0, 2, 2)] == "interior-2a"


def test_empty_batch_is_noop(example):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    before = state.vars.active()
    assert prune(state, []) == []
    assert state.vars.active() == before and state.paths == []


def test_concat_joins_fragments(example, X):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    p1 = Path.from_arcs([X(1, 1, "N", 2)])
    paths = concat([], p1, state.cons, sub.sink)
    p3 = Path.from_arcs([X(0, 0, 1, 1)])
    paths = concat(paths, p3, state.cons, sub.sink)
    assert len(paths) == 1
    assert paths[0].tuples == (X(0, 0, 1, 1).tail, X(0, 0, 1, 1).head, X(1, 1, "N", 2).head)
    assert state.cons.flow[X(0, 0, 1, 1).head].removed
    assert state.cons.coverage[1].removed


def test_concat_disjoint_append(example, X):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    a = Path.from_arcs([X(0, 0, 1, 1), X(1, 1, "N", 2)])
    b = Path.from_arcs([X(0, 0, 2, 3)])
    paths = concat([a], b, state.cons, sub.sink)
    assert paths == [a, b]
    assert not any(c.removed for c in state.cons.all())


def test_concat_cycle_raises(example):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    stored = Path.from_arcs([Variable(1, 2.0, 2, 4.5)])
    closing = Path.from_arcs([Variable(2, 4.75, 1, 2.1)])
    with pytest.raises(InvariantViolation):
        concat([stored], closing, state.cons, sub.sink)


def chain_instance():
    depot = Customer(0, 0, 0, 0, 100, 0)
    cs = [Customer(1, 1, 0, 1, 2, 1), Customer(2, 2, 0, 3, 4, 1), Customer(3, 3, 0, 5, 6, 1)]
    sub = make_subinstance("chain", depot, cs)
    return sub, build_time_grid(sub)


def test_three_fragment_chain():
    sub, grid = chain_instance()
    n = sub.sink
    middle = {Variable(1, 2.0, 2, 4.0)}
    right = {Variable(2, 4.0, 3, 6.0)}
    ends = {Variable(0, 0.0, 1, 2.0), Variable(3, 6.0, n, 9.0)}
    sampler = ReplaySampler([[middle], [right], [ends]])
    seen = []

    def check(state, records):
        assert interior_violations(state) == []
        seen.append(len(state.paths))

    sol = run(sub, grid, sampler, GreedyConfig(theta=0.5, selection="threshold"), check)
    assert sol.route_nodes() == [[0, 1, 2, 3, n]]
    assert sol.objective == 1 and sol.feasible
    assert seen == [1, 1, 1]


def test_conflicting_fix_raises(example, X):
    sub, grid = example
    state = GreedyState.initial(sub, grid)
    prune(state, [Path.from_arcs([X(1, 1, "N", 2)])])
    with pytest.raises(InvariantViolation):
        state.fix(X(1, 2, "N", 3), 1, "test")


# -- the outer loop ----------------------------------------------------------------


def test_running_example_replay(example, X):
    sub, grid = example
    sol = run(sub, grid, ReplaySampler(first_round_script(X)), REPLAY_CONFIG)
    assert sol.route_nodes() == [[0, 1, 3], [0, 2, 3]]
    assert [r.tuples for r in sol.routes] == [
        ((0, 0.0), X(0, 0, 1, 1).head, X(1, 1, "N", 2).head),
        ((0, 0.0), X(0, 0, 2, 3).head, X(2, 3, "N", 3).head),
    ]
    assert sol.objective == 2 and sol.feasible
    assert [r["active_count"] for r in sol.trace] == [10, 1]


@pytest.mark.parametrize("selection", ["threshold", "fraction"])
def test_running_example_exact(example, selection):
    sub, grid = example
    sol = run(sub, grid, ExactSampler(), GreedyConfig(theta=0.9, selection=selection))
    assert sol.route_nodes() == [[0, 1, 3], [0, 2, 3]] and sol.objective == 2
    assert validate_solution(sol, sub, grid).feasible


@pytest.mark.parametrize("seed", range(5))
def test_running_example_sa(example, seed):
    sub, grid = example
    for config in (GreedyConfig(theta=0.9, seed=seed), GreedyConfig(seed=seed)):
        sol = run(sub, grid, SimulatedAnnealingSampler(), config)
        assert sol.route_nodes() == [[0, 1, 3], [0, 2, 3]] and sol.objective == 2


def test_one_iteration_with_exact_backend():
    sub, grid = small_problem("R201", 6, 3)
    sol = run(sub, grid, ExactSampler(10_000), GreedyConfig(selection="threshold"))
    assert len(sol.trace) == 1 and sol.feasible


def test_exact_fallback_after_idle(example):
    sub, grid = example
    sol = run(sub, grid, ReplaySampler([[set()]]), GreedyConfig(patience=2))
    assert sol.objective == 2 and sol.feasible
    assert len(sol.trace) == 3


def test_stall_carries_trace():
    sub, grid = small_problem("R101", 5, 0)
    with pytest.raises(Stall) as err:
        run(sub, grid, ReplaySampler([[set()]]), GreedyConfig(selection="threshold", patience=1, exact_threshold=0))
    assert len(err.value.trace) == 2
    with pytest.raises(Stall):
        run(sub, grid, ReplaySampler([[set()]]), GreedyConfig(selection="threshold", max_iterations=1))


def test_properties_along_a_run():
    sub, grid = small_problem("R201", 8, 4)
    sizes = []

    def check(state, records):
        assert interior_violations(state) == []
        for p in state.paths:
            assert set(p.arcs) <= set(state.vars.fixed(1))
        assert paths_are_disjoint(state.paths, sub.sink)
        sizes.append((len(state.vars.active()), bool(records)))

    sol = run(sub, grid, SimulatedAnnealingSampler(), GreedyConfig(num_reads=200, budget=200), check)
    counts = [r["active_count"] for r in sol.trace]
    assert counts == sorted(counts, reverse=True)
    for (after, pruned), before in zip(sizes, counts):
        assert after <= before
        if pruned:
            assert after < before
    assert sizes[-1][0] == 0
    assert sol.feasible


def test_fixed_ones_are_route_arcs():
    sub, grid = small_problem("R101", 7, 2)
    captured = {}
    sol = run(sub, grid, SimulatedAnnealingSampler(), GreedyConfig(num_reads=200, budget=200),
              lambda state, records: captured.update(state=state))
    arcs = {a for r in sol.routes for a in r.arcs}
    assert set(captured["state"].vars.fixed(1)) == arcs


def test_deterministic_json():
    sub, grid = small_problem("R101", 6, 5)
    config = GreedyConfig(num_reads=100, budget=100, seed=11, record_timing=False)
    a = run(sub, grid, SimulatedAnnealingSampler(), config)
    b = run(sub, grid, SimulatedAnnealingSampler(), config)
    assert a.to_json() == b.to_json() and a.trace_jsonl() == b.trace_jsonl()
    doc = json.loads(a.to_json())
    assert set(doc) == {"routes", "objective", "feasible", "seed", "config", "version"}
    assert doc["config"]["seed"] == 11
    rec = json.loads(a.trace_jsonl().splitlines()[0])
    assert set(rec) == {"l", "active_count", "selected_count", "paths_found", "best_energy", "wall_ms"}
    assert rec["wall_ms"] == 0


@pytest.mark.parametrize("kwargs", [
    {"theta": 1.0}, {"selection": "top"}, {"strategy": "all"}, {"num_reads": 0}, {"exact_threshold": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GreedyConfig(**kwargs)


# -- validation ----------------------------------------------------------------------


def test_validate_optimal_routes(example, X):
    sub, grid = example
    routes = [Path.from_arcs([X(0, 0, 1, 1), X(1, 1, "N", 2)]),
              Path.from_arcs([X(0, 0, 2, 3), X(2, 3, "N", 3)])]
    sol = Solution(routes, 2, [])
    report = validate_solution(sol, sub, grid)
    assert report.feasible and report.objective == 2


def test_validate_missing_customer(example, X):
    sub, grid = example
    report = validate_routes([Path.from_arcs([X(0, 0, 1, 1), X(1, 1, "N", 2)])], sub, grid)
    assert report.violations == ["coverage of customer 2: visited 0 times"]


def test_validate_late_arrival(example):
    sub, _ = example
    assert route_time_violations([0, 2, 1, 3], sub) == ["time window at customer 1: arrival 6.5 > 1.15"]


def test_validate_bad_objective_and_anchor(example, X):
    sub, grid = example
    routes = [Path.from_arcs([X(0, 0, 1, 1), X(1, 1, "N", 2)]),
              Path.from_arcs([X(0, 0, 2, 3), X(2, 3, "N", 3)])]
    report = validate_solution(Solution(routes, 3, []), sub, grid)
    assert report.violations == ["objective 3 != route count 2"]
    report = validate_routes([routes[0], [X(2, 3, "N", 3).tail, X(2, 3, "N", 3).head]], sub, grid)
    assert "route 1 does not leave the origin at time 0" in report.violations
