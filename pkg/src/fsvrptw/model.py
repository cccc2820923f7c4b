"""Arc variables, the constrained fleet-sizing program and its penalty QUBO.

A variable ``Variable(i, s, j, t)`` means a vehicle leaves node ``i`` at time
``s`` and then leaves node ``j`` at time ``t``. Everything is ordered
lexicographically on ``(i, s, j, t)``; QUBO indices follow that order.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, TextIO

import numpy as np

from .instance import TOL, SubInstance, TimeGrid


class ModelInfeasible(ValueError):
    def __init__(self, customer: int, message: str):
        self.customer = customer
        super().__init__(message)


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates a logic fault."""


class Variable(NamedTuple):
    i: int
    s: float
    j: int
    t: float

    @property
    def tail(self) -> tuple[int, float]:
        return (self.i, self.s)

    @property
    def head(self) -> tuple[int, float]:
        return (self.j, self.t)


class Status(enum.Enum):
    ACTIVE = "active"
    FIXED0 = "fixed0"
    FIXED1 = "fixed1"


def earliest_service_start(i: int, s: float, j: int, sub: SubInstance) -> float:
    """Earliest time service can begin at ``j`` after leaving ``i`` at ``s``."""
    return max(sub.ready(j), s + sub.dist[i, j])


# Pre-processing rules, checked in this order; the first that fires is recorded.
RULES = (
    "enter-origin",        # cannot enter the original depot
    "leave-sink",          # cannot leave the final depot
    "origin-after-zero",   # the original depot is only left at time 0
    "late-arrival",        # service cannot start before the due date
    "early-departure",     # cannot leave j before its service ends
    "self-loop",
    "customer-at-zero",    # customers are never left at time 0
    "arrive-at-zero",      # nothing is left at time 0 after another node
    "origin-to-sink",      # no empty routes
)


def pruning_rule(v: Variable, sub: SubInstance) -> str | None:
    """Name of the first pre-processing rule excluding ``v``, or None."""
    i, s, j, t = v
    sink = sub.sink
    if j == 0:
        return "enter-origin"
    if i == sink:
        return "leave-sink"
    if i == 0 and s != 0:
        return "origin-after-zero"
    if i != j:
        b = earliest_service_start(i, s, j, sub)
        if b > sub.due(j) + TOL:
            return "late-arrival"
        if t < b + sub.service(j) - TOL:
            return "early-departure"
    else:
        return "self-loop"
    if i != 0 and s == 0:
        return "customer-at-zero"
    if t == 0:
        return "arrive-at-zero"
    if i == 0 and j == sink:
        return "origin-to-sink"
    return None


class VariableSet:
    """All enumerated arc variables with their status and audit rule."""

    def __init__(self, variables: Iterable[Variable], rules: Mapping[Variable, str | None]):
        self.variables: tuple[Variable, ...] = tuple(sorted(variables))
        self.status: dict[Variable, Status] = {}
        self.rule: dict[Variable, str | None] = {}
        self._out: dict[int, set[Variable]] = {}
        self._in: dict[int, set[Variable]] = {}
        for v in self.variables:
            r = rules.get(v)
            self.rule[v] = r
            self.status[v] = Status.ACTIVE if r is None else Status.FIXED0
            if r is None:
                self._out.setdefault(v.i, set()).add(v)
                self._in.setdefault(v.j, set()).add(v)
        self._active_cache: tuple[Variable, ...] | None = None

    def __len__(self) -> int:
        return len(self.active())

    def active(self) -> tuple[Variable, ...]:
        if self._active_cache is None:
            self._active_cache = tuple(v for v in self.variables if self.status[v] is Status.ACTIVE)
        return self._active_cache

    def is_active(self, v: Variable) -> bool:
        return self.status.get(v) is Status.ACTIVE

    def fixed(self, value: int) -> tuple[Variable, ...]:
        st = Status.FIXED1 if value else Status.FIXED0
        return tuple(v for v in self.variables if self.status[v] is st)

    def outgoing(self, node: int) -> list[Variable]:
        return sorted(self._out.get(node, ()))

    def incoming(self, node: int) -> list[Variable]:
        return sorted(self._in.get(node, ()))

    def fix(self, v: Variable, value: int, rule: str) -> bool:
        """Fix ``v``; returns False if it was already fixed to ``value``."""
        target = Status.FIXED1 if value else Status.FIXED0
        current = self.status[v]
        if current is target:
            return False
        if current is not Status.ACTIVE:
            raise InvariantViolation(f"{v} already {current.value}, cannot set to {value}")
        self.status[v] = target
        self.rule[v] = rule
        self._out[v.i].discard(v)
        self._in[v.j].discard(v)
        self._active_cache = None
        return True

    @property
    def fixed_depot_departures(self) -> int:
        """Objective contribution already committed by variables fixed to 1."""
        return sum(1 for v in self.variables if v.i == 0 and self.status[v] is Status.FIXED1)


def enumerate_variables(sub: SubInstance, grid: TimeGrid) -> VariableSet:
    """All (node, time) pairs of the grid, filtered by the pre-processing rules.

    Arcs into the sink are additionally restricted to the earliest admissible
    sink time; later arrivals at the final depot are interchangeable.
    """
    tuples = [(node, t) for node in sub.nodes for t in grid.times(node)]
    rules: dict[Variable, str | None] = {}
    best_sink: dict[tuple[int, float], float] = {}
    for (i, s) in tuples:
        for (j, t) in tuples:
            v = Variable(i, s, j, t)
            r = pruning_rule(v, sub)
            rules[v] = r
            if r is None and j == sub.sink:
                key = (i, s)
                best_sink[key] = min(best_sink.get(key, math.inf), t)
    for v, r in rules.items():
        if r is None and v.j == sub.sink and v.t != best_sink[(v.i, v.s)]:
            rules[v] = "dominated-sink-time"
    vs = VariableSet(rules.keys(), rules)
    for j in sub.customer_nodes:
        if not vs.incoming(j):
            raise ModelInfeasible(j, f"customer {j} (id {sub.original_id(j)}) has no admissible incoming arc")
    return vs


@dataclass
class Constraint:
    """Linear equality ``sum(coeffs[v] * x[v]) + constant == 0``.

    Fixing a variable to 1 folds its coefficient into ``constant``.
    """

    kind: str
    key: tuple
    coeffs: dict[Variable, int]
    constant: int = 0
    removed: bool = False

    def residual(self, x: Mapping[Variable, int]) -> int:
        return sum(c * x.get(v, 0) for v, c in self.coeffs.items()) + self.constant


class ConstraintSet:
    def __init__(self, coverage: dict[int, Constraint], flow: dict[tuple[int, float], Constraint]):
        self.coverage = coverage
        self.flow = flow
        self._by_var: dict[Variable, list[Constraint]] = {}
        for c in self.all():
            for v in c.coeffs:
                self._by_var.setdefault(v, []).append(c)

    def all(self) -> list[Constraint]:
        return [self.coverage[k] for k in sorted(self.coverage)] + [self.flow[k] for k in sorted(self.flow)]

    def live(self) -> list[Constraint]:
        return [c for c in self.all() if not c.removed]

    def substitute(self, v: Variable, value: int) -> None:
        for c in self._by_var.pop(v, ()):
            coef = c.coeffs.pop(v)
            if value:
                c.constant += coef

    def remove_coverage(self, j: int) -> None:
        if j in self.coverage:
            self.coverage[j].removed = True

    def remove_flow(self, i: int, s: float) -> None:
        if (i, s) in self.flow:
            self.flow[(i, s)].removed = True


def build_constraints(vars: VariableSet, sub: SubInstance) -> ConstraintSet:
    """Coverage per customer and flow balance per visited (customer, time)."""
    active = vars.active()
    coverage = {
        j: Constraint("coverage", (j,), {v: 1 for v in active if v.j == j}, -1)
        for j in sub.customer_nodes
    }
    flow: dict[tuple[int, float], Constraint] = {}
    for v in active:
        if v.j in sub.customer_nodes:
            flow.setdefault(v.head, Constraint("flow", v.head, {})).coeffs[v] = 1
        if v.i in sub.customer_nodes:
            flow.setdefault(v.tail, Constraint("flow", v.tail, {})).coeffs[v] = -1
    return ConstraintSet(coverage, flow)


class Row(NamedTuple):
    kind: str
    key: tuple
    index: np.ndarray
    coef: np.ndarray
    constant: int


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Immutable snapshot of the active variables and surviving equalities."""

    variables: tuple[Variable, ...]
    rows: tuple[Row, ...]
    objective: np.ndarray
    objective_offset: float = 0.0

    @property
    def n(self) -> int:
        return len(self.variables)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Residual of every row; ``x`` is (n,) or (M, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], len(self.rows)))
        for r, row in enumerate(self.rows):
            out[:, r] = x[:, row.index] @ row.coef + row.constant
        return out

    def objective_value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.objective + self.objective_offset

    def is_feasible(self, x: np.ndarray) -> np.ndarray:
        return np.all(self.residuals(x) == 0, axis=1)


def build_model(vars: VariableSet, cons: ConstraintSet) -> LinearModel:
    variables = vars.active()
    index = {v: k for k, v in enumerate(variables)}
    rows = []
    for c in cons.live():
        items = sorted(c.coeffs.items())
        idx = np.array([index[v] for v, _ in items], dtype=np.int64)
        coef = np.array([cf for _, cf in items], dtype=float)
        rows.append(Row(c.kind, c.key, idx, coef, c.constant))
    objective = np.array([1.0 if v.i == 0 else 0.0 for v in variables])
    return LinearModel(variables, tuple(rows), objective, float(vars.fixed_depot_departures))


def default_penalty(num_customers: int) -> float:
    """Weight that makes any violation costlier than the largest fleet."""
    return 2.0 * num_customers + 1.0


@dataclass(frozen=True, eq=False)
class Qubo:
    """Energy ``x @ linear + sum(J_ab x_a x_b) + offset`` with a < b."""

    variables: tuple
    linear: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    offset: float
    penalties: tuple[float, float] = (math.nan, math.nan)
    model: LinearModel | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.linear)

    def energies(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e = x @ self.linear + self.offset
        if len(self.values):
            e = e + (x[:, self.rows] * x[:, self.cols]) @ self.values
        return e

    def energy(self, x: Sequence[int]) -> float:
        return float(self.energies(np.asarray(x))[0])

    def matrix(self) -> np.ndarray:
        """Dense upper-triangular Q with the linear terms on the diagonal."""
        q = np.diag(self.linear).astype(float)
        q[self.rows, self.cols] += self.values
        return q

    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric CSR (indptr, indices, data) of the couplings."""
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        d = np.concatenate([self.values, self.values])
        order = np.lexsort((c, r))
        r, c, d = r[order], c[order], d[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        return np.cumsum(indptr), c.astype(np.int64), d.astype(float)

    def to_ising(self) -> "IsingModel":
        return to_ising(self)


def qubo_from_model(model: LinearModel, penalties: tuple[float, float]) -> Qubo:
    p_cov, p_flow = penalties
    if p_cov <= 0 or p_flow <= 0:
        raise ValueError(f"penalties must be positive, got {penalties}")
    n = model.n
    linear = model.objective.astype(float).copy()
    offset = model.objective_offset
    quad: dict[tuple[int, int], float] = {}
    for row in model.rows:
        p = p_cov if row.kind == "coverage" else p_flow
        c0 = row.constant
        offset += p * c0 * c0
        idx, coef = row.index, row.coef
        # (sum c_k x_k + c0)^2 with x_k^2 = x_k
        linear[idx] += p * (coef * coef + 2.0 * c0 * coef)
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                ia, ib = idx[a], idx[b]
                key = (ia, ib) if ia < ib else (ib, ia)
                quad[key] = quad.get(key, 0.0) + 2.0 * p * coef[a] * coef[b]
    keys = sorted(k for k, val in quad.items() if val != 0.0)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    values = np.array([quad[k] for k in keys], dtype=float)
    return Qubo(model.variables, linear, rows, cols, values, float(offset), (p_cov, p_flow), model)


def compile_qubo(
    cons: ConstraintSet,
    vars: VariableSet,
    penalties: tuple[float, float] | None = None,
) -> Qubo:
    """Penalty QUBO over the active variables of ``vars``."""
    if penalties is None:
        p = default_penalty(len(cons.coverage))
        penalties = (p, p)
    return qubo_from_model(build_model(vars, cons), penalties)


def penalized_energy(model: LinearModel, penalties: tuple[float, float], x: np.ndarray) -> np.ndarray:
    """Objective plus penalty-weighted squared residuals, straight from the rows."""
    res = model.residuals(x)
    weights = np.array([penalties[0] if r.kind == "coverage" else penalties[1] for r in model.rows])
    return model.objective_value(x) + (res ** 2) @ weights


@dataclass(frozen=True, eq=False)
class IsingModel:
    """``sum h_a z_a + sum J_ab z_a z_b + constant`` over spins in {-1, +1}."""

    h: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    constant: float

    def energies(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        e = z @ self.h + self.constant
        if len(self.values):
            e = e + (z[:, self.rows] * z[:, self.cols]) @ self.values
        return e


def to_ising(q: Qubo) -> IsingModel:
    """Substitute x = (z + 1) / 2."""
    h = q.linear / 2.0
    constant = q.offset + q.linear.sum() / 2.0
    quarter = q.values / 4.0
    np.add.at(h, q.rows, quarter)
    np.add.at(h, q.cols, quarter)
    constant += quarter.sum()
    return IsingModel(h, q.rows.copy(), q.cols.copy(), quarter, float(constant))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_qubo(q: Qubo, fh: TextIO) -> None:
    """Sparse text form: header ``n m offset`` then ``a b coeff`` with a <= b."""
    entries = [(a, a, q.linear[a]) for a in range(q.n) if q.linear[a] != 0.0]
    entries += list(zip(q.rows.tolist(), q.cols.tolist(), q.values.tolist()))
    entries.sort(key=lambda e: (e[0], e[1]))
    fh.write(f"{q.n} {len(entries)} {_fmt(q.offset)}\n")
    for a, b, val in entries:
        fh.write(f"{a} {b} {_fmt(val)}\n")


def read_qubo(fh: TextIO) -> Qubo:
    header = fh.readline().split()
    if len(header) != 3:
        raise ValueError("QUBO header must be 'n m offset'")
    n, m, offset = int(header[0]), int(header[1]), float(header[2])
    linear = np.zeros(n)
    quad = []
    for _ in range(m):
        a, b, val = fh.readline().split()
        a, b, val = int(a), int(b), float(val)
        if a > b:
            raise ValueError(f"entry ({a}, {b}) is below the diagonal")
        if a == b:
            linear[a] = val
        else:
            quad.append((a, b, val))
    rows = np.array([e[0] for e in quad], dtype=np.int64)
    cols = np.array([e[1] for e in quad], dtype=np.int64)
    values = np.array([e[2] for e in quad], dtype=float)
    return Qubo(tuple(range(n)), linear, rows, cols, values, offset)


def qubo_to_text(q: Qubo) -> str:
    buf = io.StringIO()
    write_qubo(q, buf)
    return buf.getvalue()


def write_variable_map(vars: VariableSet, fh: TextIO) -> None:
    """CSV ``index,i,s,j,t,status,rule``; index is the QUBO column for active ones."""
    index = {v: k for k, v in enumerate(vars.active())}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["index", "i", "s", "j", "t", "status", "rule"])
    for v in vars.variables:
        w.writerow([index.get(v, ""), v.i, _fmt(v.s), v.j, _fmt(v.t), vars.status[v].value, vars.rule[v] or ""])
