"""QUBO samplers: seeded simulated annealing, an exact branch-and-bound
backend working on the constraint system, and a replay sampler for scripted
runs. All of them return a :class:`SampleSet`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence, TextIO

import numba
import numpy as np
from scipy.optimize import linprog

from .model import LinearModel, Qubo


class EmptyModelError(ValueError):
    pass


class ModelTooLarge(ValueError):
    def __init__(self, size: int, limit: int):
        self.size, self.limit = size, limit
        super().__init__(f"{size} active variables exceed the exact limit of {limit}")


class InfeasibleModel(ValueError):
    """No assignment satisfies the constraints; ``constraint`` names a witness row."""

    def __init__(self, constraint=None):
        self.constraint = constraint
        where = f" (constraint {constraint[0]} {constraint[1]})" if constraint else ""
        super().__init__("constraint system is infeasible" + where)


@dataclass(frozen=True, eq=False)
class SampleSet:
    samples: np.ndarray
    energies: np.ndarray
    variables: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2 or len(self.samples) < 1:
            raise ValueError("a sample set holds at least one assignment")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_variables(self) -> int:
        return self.samples.shape[1]

    def lowest(self) -> np.ndarray:
        return self.samples[int(np.argmin(self.energies))]

    def order(self) -> np.ndarray:
        """Read indices sorted by energy; ties keep read order."""
        return np.argsort(self.energies, kind="stable")

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["read", "energy", "bits"])
        for r, (bits, e) in enumerate(zip(self.samples, self.energies)):
            w.writerow([r, repr(float(e)), "".join(str(int(b)) for b in bits)])


class Sampler(Protocol):
    def sample(self, qubo: Qubo, num_reads: int, budget: int, seed: int) -> SampleSet: ...


def one_body_expectations(ss: SampleSet) -> np.ndarray:
    """Fraction of reads with x_i = 1, i.e. (<Z_i> + 1) / 2."""
    return ss.samples.mean(axis=0, dtype=float)


def spin_expectations(ss: SampleSet) -> np.ndarray:
    """<Z_i> under x = (Z + 1) / 2."""
    return (2.0 * ss.samples.astype(float) - 1.0).mean(axis=0)


# -- simulated annealing ----------------------------------------------------


@numba.njit(cache=True, inline="always")
def _next(state):
    # splitmix64
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@numba.njit(cache=True, parallel=True)
def _anneal(linear, indptr, indices, data, betas, seeds, quench, out):
    num_reads, n = out.shape
    for r in numba.prange(num_reads):
        state = seeds[r]
        x = np.empty(n, dtype=np.uint8)
        for k in range(n):
            state, z = _next(state)
            x[k] = np.uint8(z >> np.uint64(63))
        field = np.zeros(n)
        for k in range(n):
            if x[k]:
                for p in range(indptr[k], indptr[k + 1]):
                    field[indices[p]] += data[p]
        for sweep in range(betas.shape[0]):
            beta = betas[sweep]
            for k in range(n):
                delta = linear[k] + field[k]
                if x[k]:
                    delta = -delta
                accept = delta <= 0.0
                # exp(-40) is below the resolution of the uniform draw
                if not accept and beta * delta < 40.0:
                    state, z = _next(state)
                    u = (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
                    accept = u < math.exp(-beta * delta)
                if accept:
                    x[k] ^= np.uint8(1)
                    sign = 1.0 if x[k] else -1.0
                    for p in range(indptr[k], indptr[k + 1]):
                        field[indices[p]] += sign * data[p]
        # quench: strictly downhill flips until a single-flip local minimum
        changed = quench
        while changed:
            changed = False
            for k in range(n):
                delta = linear[k] + field[k]
                if x[k]:
                    delta = -delta
                if delta < 0.0:
                    x[k] ^= np.uint8(1)
                    sign = 1.0 if x[k] else -1.0
                    for p in range(indptr[k], indptr[k + 1]):
                        field[indices[p]] += sign * data[p]
                    changed = True
        out[r, :] = x


def default_beta_range(q: Qubo) -> tuple[float, float]:
    """Hot and cold inverse temperatures from single-flip energy bounds."""
    absq = np.abs(q.values)
    bound = np.abs(q.linear).copy()
    np.add.at(bound, q.rows, absq)
    np.add.at(bound, q.cols, absq)
    coeffs = np.concatenate([np.abs(q.linear), absq])
    nonzero = coeffs[coeffs > 0]
    if not len(nonzero):
        return 1.0, 1.0
    de_max = float(bound.max())
    de_min = float(nonzero.min())
    return math.log(2.0) / de_max, math.log(100.0) / de_min


def read_seeds(seed: int, num_reads: int) -> np.ndarray:
    """One independent RNG stream per read, derived from (seed, read index)."""
    return np.random.SeedSequence(seed).generate_state(num_reads, dtype=np.uint64)


def sa_sample(
    q: Qubo,
    num_reads: int = 1000,
    num_sweeps: int = 1000,
    seed: int = 0,
    beta_range: tuple[float, float] | None = None,
    quench: bool = True,
) -> SampleSet:
    """Metropolis single-flip annealing under a geometric beta schedule.

    With ``quench`` each read ends with a zero-temperature descent, so every
    returned sample is a single-flip local minimum.
    """
    if q.n == 0:
        raise EmptyModelError("cannot sample a QUBO with no variables")
    if num_reads < 1 or num_sweeps < 1:
        raise ValueError("num_reads and num_sweeps must be positive")
    hot, cold = beta_range if beta_range is not None else default_beta_range(q)
    betas = np.geomspace(hot, cold, num_sweeps) if num_sweeps > 1 else np.array([cold])
    indptr, indices, data = q.adjacency()
    out = np.empty((num_reads, q.n), dtype=np.uint8)
    _anneal(q.linear.astype(float), indptr, indices, data, betas, read_seeds(seed, num_reads), quench, out)
    info = {"sampler": "sa", "num_reads": num_reads, "budget": num_sweeps, "seed": seed,
            "beta_range": (float(hot), float(cold)), "quench": quench}
    return SampleSet(out, q.energies(out), q.variables, info)


@dataclass
class SimulatedAnnealingSampler:
    beta_range: tuple[float, float] | None = None

    def sample(self, qubo: Qubo, num_reads: int = 1000, budget: int = 1000, seed: int = 0) -> SampleSet:
        return sa_sample(qubo, num_reads, budget, seed, self.beta_range)


# -- exact branch and bound ---------------------------------------------------


class _Search:
    def __init__(self, model: LinearModel):
        self.model = model
        n = model.n
        self.n = n
        self.row_index = [r.index for r in model.rows]
        self.row_coef = [r.coef.astype(np.int64) for r in model.rows]
        self.row_const = [int(r.constant) for r in model.rows]
        self.var_rows: list[list[int]] = [[] for _ in range(n)]
        for r, idx in enumerate(self.row_index):
            for k in idx:
                self.var_rows[k].append(r)
        self.coverage_rows = [r for r, row in enumerate(model.rows) if row.kind == "coverage"]
        if model.rows:
            a = np.zeros((len(model.rows), n))
            for r, (idx, coef) in enumerate(zip(self.row_index, self.row_coef)):
                a[r, idx] = coef
            self.a_eq = a
            self.b_eq = -np.array(self.row_const, dtype=float)
        else:
            self.a_eq = None
            self.b_eq = None
        self.nodes = 0
        self.best_value = math.inf
        self.best: np.ndarray | None = None

    def propagate(self, fixed: np.ndarray, queue: list[int]) -> int | None:
        """Unit propagation; returns the index of a violated row or None."""
        pending = set(queue)
        stack = list(queue)
        while stack:
            r = stack.pop()
            pending.discard(r)
            idx, coef = self.row_index[r], self.row_coef[r]
            vals = fixed[idx]
            free = vals < 0
            rest = self.row_const[r] + int(coef[~free] @ vals[~free])
            pos = int(np.count_nonzero(coef[free] > 0))
            neg = int(np.count_nonzero(coef[free] < 0))
            need = -rest
            if need > pos or need < -neg:
                return r
            if not free.any():
                continue
            if need == pos:
                assign = np.where(coef > 0, 1, 0)
            elif need == -neg:
                assign = np.where(coef > 0, 0, 1)
            else:
                continue
            for k, val in zip(idx[free], assign[free]):
                fixed[k] = val
                for r2 in self.var_rows[k]:
                    if r2 != r and r2 not in pending:
                        pending.add(r2)
                        stack.append(r2)
        return None

    def bound(self, fixed: np.ndarray):
        lo = np.where(fixed == 1, 1.0, 0.0)
        hi = np.where(fixed == 0, 0.0, 1.0)
        c = self.model.objective
        if self.a_eq is None:
            return float(c @ lo), lo
        res = linprog(c, A_eq=self.a_eq, b_eq=self.b_eq, bounds=np.column_stack([lo, hi]), method="highs")
        if res.status != 0:
            return None, None
        return float(res.fun), res.x

    def branch_variable(self, fixed: np.ndarray, lp_x: np.ndarray) -> int:
        best_row, best_free = None, None
        for r in self.coverage_rows:
            idx = self.row_index[r]
            free = idx[fixed[idx] < 0]
            if len(free) >= 2 and (best_free is None or len(free) < len(best_free)):
                best_row, best_free = r, free
        if best_free is None:
            free = np.flatnonzero(fixed < 0)
            frac = np.abs(lp_x[free] - 0.5)
            return int(free[np.argmin(frac)])
        # highest LP value inside the most constrained coverage row
        return int(best_free[np.argmax(lp_x[best_free])])

    def solve(self, fixed: np.ndarray) -> None:
        self.nodes += 1
        lp_value, lp_x = self.bound(fixed)
        if lp_value is None:
            return
        if math.ceil(lp_value - 1e-6) >= self.best_value:
            return
        free = fixed < 0
        if not free.any():
            self.best_value, self.best = lp_value, fixed.copy()
            return
        rounded = np.round(lp_x)
        if np.all(np.abs(lp_x - rounded) < 1e-9):
            cand = np.where(free, rounded, fixed).astype(np.int8)
            if np.all(self.model.residuals(cand) == 0):
                value = float(self.model.objective_value(cand)[0]) - self.model.objective_offset
                if value < self.best_value:
                    self.best_value, self.best = value, cand
                return
        k = self.branch_variable(fixed, lp_x)
        for val in (1, 0):
            child = fixed.copy()
            child[k] = val
            if self.propagate(child, list(self.var_rows[k])) is None:
                self.solve(child)


def exact_solve(model: LinearModel, limit: int = 40) -> SampleSet:
    """Optimal assignment of the constrained program by branch and bound.

    Unit propagation on coverage/flow rows, LP-relaxation bounds, branching on
    the coverage row with the fewest free variables. Returns a one-read
    :class:`SampleSet` whose energy is the objective value.
    """
    if model.n == 0:
        raise EmptyModelError("no active variables")
    if model.n > limit:
        raise ModelTooLarge(model.n, limit)
    search = _Search(model)
    fixed = np.full(model.n, -1, dtype=np.int8)
    bad = search.propagate(fixed, list(range(len(model.rows))))
    if bad is not None:
        row = model.rows[bad]
        raise InfeasibleModel((row.kind, row.key))
    search.solve(fixed)
    if search.best is None:
        raise InfeasibleModel()
    x = search.best.astype(np.uint8)[None, :]
    energy = model.objective_value(x)
    info = {"sampler": "exact", "num_reads": 1, "nodes": search.nodes, "exhausted": True}
    return SampleSet(x, energy, model.variables, info)


@dataclass
class ExactSampler:
    """Solves the constraint system behind a compiled QUBO to optimality."""

    limit: int = 40

    def sample(self, qubo: Qubo, num_reads: int = 1, budget: int = 0, seed: int = 0) -> SampleSet:
        if qubo.model is None:
            raise ValueError("exact sampling needs the QUBO's source constraint model")
        ss = exact_solve(qubo.model, self.limit)
        return SampleSet(ss.samples, qubo.energies(ss.samples), ss.variables, ss.info)


@dataclass
class ReplaySampler:
    """Returns prescribed assignments, keyed by variable, in call order.

    Each entry of ``script`` is a list of reads; a read is the set of variables
    equal to 1. Variables absent from the current QUBO are ignored.
    """

    script: Sequence[Sequence[set]]
    calls: int = 0

    def sample(self, qubo: Qubo, num_reads: int = 0, budget: int = 0, seed: int = 0) -> SampleSet:
        reads = self.script[min(self.calls, len(self.script) - 1)]
        self.calls += 1
        pos = {v: k for k, v in enumerate(qubo.variables)}
        x = np.zeros((len(reads), qubo.n), dtype=np.uint8)
        for r, ones in enumerate(reads):
            for v in ones:
                if v in pos:
                    x[r, pos[v]] = 1
        return SampleSet(x, qubo.energies(x), qubo.variables, {"sampler": "replay", "num_reads": len(reads)})
