import pytest
from hypothesis import given, settings, strategies as st

from fsvrptw.dagpath import (
    Dag,
    Path,
    build_dag,
    elementary,
    extract_disjoint_paths,
    longest_path,
    paths_are_disjoint,
    to_dot,
)
from fsvrptw.model import InvariantViolation, Variable, build_constraints, enumerate_variables

SINK = 9


def V(i, s, j, t):
    return Variable(i, float(s), j, float(t))


def test_running_example_dag(example):
    sub, grid = example
    dag = build_dag(enumerate_variables(sub, grid).active())
    assert len(dag.nodes) == 8
    assert len(dag.arcs) == 10
    assert dag.nodes[0] == (0, 0.0)


def test_empty_and_singleton():
    empty = build_dag([])
    assert empty.nodes == () and empty.arcs == ()
    assert longest_path(empty) is None
    assert extract_disjoint_paths(empty, SINK) == []
    one = build_dag([V(0, 0, 1, 1)])
    assert len(one.nodes) == 2 and len(one.arcs) == 1
    p = longest_path(one)
    assert p.arcs == (V(0, 0, 1, 1),)
    assert p.tuples == ((0, 0.0), (1, 1.0))


def test_selected_arcs_extraction(X):
    selected = [X(0, 0, 2, 3), X(2, 3, "N", 3), X(1, 1, "N", 2)]
    dag = build_dag(selected)
    p = longest_path(dag)
    assert [a for a in p.arcs] == [X(0, 0, 2, 3), X(2, 3, "N", 3)]
    paths = extract_disjoint_paths(dag, 3)
    assert {p.arcs for p in paths} == {(X(0, 0, 2, 3), X(2, 3, "N", 3)), (X(1, 1, "N", 2),)}
    assert extract_disjoint_paths(dag, 3, "single") == [p]


def test_chain_beats_single_arc():
    chain = [V(0, 0, 1, 1), V(1, 1, 2, 2), V(2, 2, 3, 3)]
    dag = build_dag(chain + [V(4, 1, SINK, 5)])
    assert all_paths_max(dag) == 3
    assert longest_path(dag).arcs == tuple(chain)


def test_single_chain_is_one_path():
    chain = [V(0, 0, 1, 1), V(1, 1, 2, 2), V(2, 2, SINK, 3)]
    paths = extract_disjoint_paths(build_dag(chain), SINK)
    assert len(paths) == 1 and paths[0].arcs == tuple(chain)


def test_parallel_chains_both_returned():
    a = [V(0, 0, 1, 1), V(1, 1, SINK, 2)]
    b = [V(0, 0, 2, 1), V(2, 1, SINK, 3)]
    paths = extract_disjoint_paths(build_dag(a + b), SINK)
    assert sorted(p.arcs for p in paths) == sorted([tuple(a), tuple(b)])
    assert paths_are_disjoint(paths, SINK)


def test_extraction_removes_customer_at_other_times():
    # customer 1 appears at two times; once taken, its other copy goes too
    arcs = [V(0, 0, 1, 1), V(1, 1, 2, 2), V(2, 2, SINK, 3), V(0, 0, 1, 4), V(1, 4, SINK, 5)]
    paths = extract_disjoint_paths(build_dag(arcs), SINK)
    assert len(paths) == 1
    assert paths[0].customers(SINK) == [1, 2]


def test_tie_breaks():
    heavy = [V(0, 0, 1, 2), V(1, 2, SINK, 3)]
    light = [V(0, 0, 2, 1), V(2, 1, SINK, 3)]
    weights = {heavy[0]: 5, heavy[1]: 5, light[0]: 1, light[1]: 1}
    assert longest_path(build_dag(heavy + light, weights)).arcs == tuple(heavy)
    # no weights: earlier start, then lexicographic tuples
    early = [V(1, 1, 2, 2), V(2, 2, SINK, 3)]
    late = [V(3, 2, 4, 3), V(4, 3, SINK, 4)]
    assert longest_path(build_dag(late + early)).arcs == tuple(early)
    assert longest_path(build_dag(light + heavy)).arcs == tuple(heavy)


def test_cycle_detected():
    with pytest.raises(InvariantViolation):
        build_dag([V(1, 1, 2, 2), V(2, 2, 1, 1)])


def test_elementary_trims_revisit():
    arcs = [V(0, 0, 1, 1), V(1, 1, 2, 2), V(2, 2, 1, 3), V(1, 3, SINK, 4)]
    p = Path.from_arcs(arcs)
    q = elementary(p, SINK)
    assert q.arcs == tuple(arcs[:2])
    assert elementary(Path.from_arcs(arcs[:2]), SINK) == Path.from_arcs(arcs[:2])


def test_path_validation_and_join():
    with pytest.raises(ValueError):
        Path(((0, 0.0), (1, 1.0)), ())
    with pytest.raises(ValueError):
        Path(((0, 0.0), (1, 1.0)), (V(0, 0, 2, 1),))
    with pytest.raises(ValueError):
        Path.from_arcs([])
    a = Path.from_arcs([V(0, 0, 1, 1)])
    b = Path.from_arcs([V(1, 1, SINK, 2)])
    ab = a + b
    assert ab.tuples == ((0, 0.0), (1, 1.0), (SINK, 2.0)) and len(ab) == 2
    with pytest.raises(InvariantViolation):
        b + a


def test_without():
    dag = build_dag([V(0, 0, 1, 1), V(1, 1, 2, 2), V(0, 0, 2, 2)])
    assert len(dag.without(nodes=[(1, 1.0)]).arcs) == 1
    assert len(dag.without(arcs=[V(0, 0, 2, 2)]).arcs) == 2


def test_dot(X, example):
    sub, grid = example
    dag = build_dag(enumerate_variables(sub, grid).active())
    p = longest_path(dag)
    text = to_dot(dag, [p], label=lambda u: f"({sub.node_label(u[0])},{grid.label(*u)})")
    assert text.startswith("digraph G {")
    assert text.count("->") == 10
    assert text.count("color=blue") == len(p)
    assert '"(N,3)"' in text


# -- exhaustive oracle ------------------------------------------------------------


def all_paths_max(dag):
    """Most arcs over every path, by depth-first enumeration."""
    def walk(u):
        return max((1 + walk(a.head) for a in dag.succ.get(u, ())), default=0)
    return max((walk(u) for u in dag.nodes), default=0)


def all_paths(dag):
    out = []

    def walk(u, arcs):
        if arcs:
            out.append(tuple(arcs))
        for a in dag.succ.get(u, ()):
            walk(a.head, arcs + [a])
    for u in dag.nodes:
        walk(u, [])
    return out


@st.composite
def random_dags(draw):
    k = draw(st.integers(1, 12))
    # node ids double as times so every arc points forward in time
    nodes = [(draw(st.integers(0, 5)), float(t)) for t in range(k)]
    arcs = []
    for a in range(k):
        for b in range(a + 1, k):
            if nodes[a][0] != nodes[b][0] and draw(st.booleans()):
                arcs.append(Variable(*nodes[a], *nodes[b]))
    weights = {v: draw(st.integers(0, 3)) for v in arcs}
    return Dag(arcs, weights)


@settings(max_examples=300, deadline=None)
@given(random_dags())
def test_longest_path_is_maximal(dag):
    p = longest_path(dag)
    if not dag.arcs:
        assert p is None
        return
    assert len(p) == all_paths_max(dag)
    assert set(p.arcs) <= set(dag.arcs)
    # among maximal paths it has the largest weight
    best = max(sum(dag.weights[a] for a in path) for path in all_paths(dag) if len(path) == len(p))
    assert sum(dag.weights[a] for a in p.arcs) == best


@settings(max_examples=200, deadline=None)
@given(random_dags(), st.sampled_from(["multiple", "single"]))
def test_extraction_properties(dag, strategy):
    sink = 5
    paths = extract_disjoint_paths(dag, sink, strategy)
    assert paths_are_disjoint(paths, sink)
    arcs = set(dag.arcs)
    for p in paths:
        assert set(p.arcs) <= arcs
    if strategy == "single":
        assert len(paths) <= 1
    used = [a for p in paths for a in p.arcs]
    assert len(used) == len(set(used))


def test_running_example_extraction_disjoint(example):
    sub, grid = example
    vars = enumerate_variables(sub, grid)
    build_constraints(vars, sub)
    paths = extract_disjoint_paths(build_dag(vars.active()), sub.sink)
    assert paths_are_disjoint(paths, sub.sink)
    assert sorted(c for p in paths for c in p.customers(sub.sink)) == [1, 2]
