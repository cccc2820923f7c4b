"""DAG view of a variable subset and customer-disjoint path extraction."""
from __future__ import annotations

from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Mapping, Sequence

from .model import InvariantViolation, Variable

Node = tuple  # (node index, time)


@dataclass(frozen=True)
class Path:
    tuples: tuple[Node, ...]
    arcs: tuple[Variable, ...]

    def __post_init__(self):
        if len(self.arcs) != max(len(self.tuples) - 1, 0):
            raise ValueError("a path with k arcs visits k + 1 tuples")
        for a, (u, w) in zip(self.arcs, zip(self.tuples, self.tuples[1:])):
            if a.tail != u or a.head != w:
                raise ValueError(f"arc {a} does not join {u} -> {w}")

    @classmethod
    def from_arcs(cls, arcs: Sequence[Variable]) -> "Path":
        arcs = tuple(arcs)
        if not arcs:
            raise ValueError("empty arc sequence")
        return cls((arcs[0].tail,) + tuple(a.head for a in arcs), arcs)

    def __len__(self) -> int:
        return len(self.arcs)

    @property
    def first(self) -> Node:
        return self.tuples[0]

    @property
    def last(self) -> Node:
        return self.tuples[-1]

    def customers(self, sink: int) -> list[int]:
        return [i for i, _ in self.tuples if i != 0 and i != sink]

    def __add__(self, other: "Path") -> "Path":
        """Concatenate at the shared tuple ``self.last == other.first``."""
        if self.last != other.first:
            raise InvariantViolation(f"cannot join path ending {self.last} to one starting {other.first}")
        return Path(self.tuples + other.tuples[1:], self.arcs + other.arcs)


class Dag:
    """One node per (node, time) tuple and one arc per variable."""

    def __init__(self, arcs: Iterable[Variable], weights: Mapping[Variable, float] | None = None):
        self.arcs: tuple[Variable, ...] = tuple(sorted(set(arcs)))
        self.weights = {a: (weights or {}).get(a, 0) for a in self.arcs}
        nodes = set()
        self.succ: dict[Node, list[Variable]] = {}
        self.pred: dict[Node, list[Variable]] = {}
        for a in self.arcs:
            nodes.update((a.tail, a.head))
            self.succ.setdefault(a.tail, []).append(a)
            self.pred.setdefault(a.head, []).append(a)
        self.nodes: tuple[Node, ...] = tuple(sorted(nodes))
        sorter = TopologicalSorter({u: [a.tail for a in self.pred.get(u, ())] for u in self.nodes})
        try:
            self.order: tuple[Node, ...] = tuple(sorter.static_order())
        except CycleError as exc:
            raise InvariantViolation(f"variable subset contains a cycle: {exc.args[1]}") from None

    def __len__(self) -> int:
        return len(self.arcs)

    def without(self, nodes: Iterable[Node] = (), arcs: Iterable[Variable] = ()) -> "Dag":
        drop_nodes, drop_arcs = set(nodes), set(arcs)
        keep = [a for a in self.arcs
                if a not in drop_arcs and a.tail not in drop_nodes and a.head not in drop_nodes]
        return Dag(keep, self.weights)


def build_dag(subset: Iterable[Variable], weights: Mapping[Variable, float] | None = None) -> Dag:
    return Dag(subset, weights)


def _better(cand, cur) -> bool:
    # entries are (arc count, weight, tuples, arcs)
    if cur is None or cand[0] != cur[0]:
        return cur is None or cand[0] > cur[0]
    if cand[1] != cur[1]:
        return cand[1] > cur[1]
    if cand[2][0][1] != cur[2][0][1]:
        return cand[2][0][1] < cur[2][0][1]
    return cand[2] < cur[2]


def longest_path(dag: Dag) -> Path | None:
    """Path with the most arcs, by dynamic programming in topological order.

    Ties go to the larger summed arc weight, then the smaller start time, then
    the lexicographically smaller tuple sequence. Every tie-break key is
    preserved under extension by a common arc, so the DP is exact.
    """
    if not dag.arcs:
        return None
    best = {}
    for u in dag.order:
        here = None
        for a in dag.pred.get(u, ()):
            length, weight, tuples, arcs = best.get(a.tail) or (0, 0, (a.tail,), ())
            cand = (length + 1, weight + dag.weights[a], tuples + (u,), arcs + (a,))
            if _better(cand, here):
                here = cand
        if here is not None:
            best[u] = here
    winner = None
    for cand in best.values():
        if _better(cand, winner):
            winner = cand
    return Path(winner[2], winner[3])


def elementary(p: Path, sink: int) -> Path:
    """Longest window of ``p`` that visits no customer twice (earliest on ties)."""
    best = (0, 0)
    lo = 0
    last_seen: dict[int, int] = {}
    for hi, (i, _) in enumerate(p.tuples):
        if i not in (0, sink):
            if last_seen.get(i, -1) >= lo:
                lo = last_seen[i] + 1
            last_seen[i] = hi
        if hi - lo > best[1] - best[0]:
            best = (lo, hi)
    lo, hi = best
    return Path(p.tuples[lo:hi + 1], p.arcs[lo:hi])


def extract_disjoint_paths(dag: Dag, sink: int, strategy: str = "multiple") -> list[Path]:
    """Repeatedly take the longest path and delete its customers' nodes.

    A longest path that revisits a customer at a later time is cut down to
    its longest customer-distinct window. Depot tuples (origin 0 and
    ``sink``) are shared: only the arcs of an extracted path are removed from
    them. ``strategy="single"`` stops after the first path.
    """
    if strategy not in ("multiple", "single"):
        raise ValueError(f"unknown strategy {strategy!r}")
    paths: list[Path] = []
    current = dag
    while current.arcs:
        p = elementary(longest_path(current), sink)
        paths.append(p)
        if strategy == "single":
            break
        taken = set(p.customers(sink))
        current = current.without(
            nodes=[u for u in current.nodes if u[0] in taken],
            arcs=p.arcs,
        )
    return paths


def paths_are_disjoint(paths: Sequence[Path], sink: int) -> bool:
    seen: set[int] = set()
    for p in paths:
        cs = p.customers(sink)
        if len(set(cs)) != len(cs) or seen.intersection(cs):
            return False
        seen.update(cs)
    return True


def to_dot(dag: Dag, paths: Sequence[Path] = (), label=None) -> str:
    """Graphviz source; arcs on ``paths`` are drawn bold blue."""
    label = label or (lambda node: f"({node[0]},{node[1]:g})")
    on_path = {a for p in paths for a in p.arcs}
    ids = {u: f"n{k}" for k, u in enumerate(dag.nodes)}
    lines = ["digraph G {", "  rankdir=LR;"]
    for u in dag.nodes:
        lines.append(f'  {ids[u]} [label="{label(u)}"];')
    for a in dag.arcs:
        style = ' [color=blue, penwidth=2]' if a in on_path else ""
        lines.append(f"  {ids[a.tail]} -> {ids[a.head]}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"
