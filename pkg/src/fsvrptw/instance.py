"""Solomon instances, customer sub-sampling and time discretization.

Node indexing inside a :class:`SubInstance` is fixed: ``0`` is the origin
depot, ``1..n`` are the sampled customers (ascending original id) and
``n + 1`` is the duplicated sink depot.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

TOL = 1e-9

_COLUMNS = ("CUST NO.", "XCOORD.", "YCOORD.", "DEMAND", "READY TIME", "DUE DATE", "SERVICE TIME")


class SolomonParseError(ValueError):
    """Raised for malformed Solomon files; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleDiscretization(ValueError):
    def __init__(self, customer: int, message: str):
        self.customer = customer
        super().__init__(message)


@dataclass(frozen=True)
class Customer:
    id: int
    x: float
    y: float
    ready: float
    due: float
    service: float
    demand: float = 0.0

    def __post_init__(self):
        if self.ready > self.due:
            raise ValueError(f"customer {self.id}: ready time {self.ready} after due date {self.due}")
        if self.service < 0:
            raise ValueError(f"customer {self.id}: negative service time")


@dataclass(frozen=True)
class Instance:
    """A full benchmark instance; ``customers[0]`` is the depot."""

    name: str
    customers: tuple[Customer, ...]
    vehicles: int | None = None
    capacity: float | None = None

    @property
    def depot(self) -> Customer:
        return self.customers[0]

    @property
    def num_customers(self) -> int:
        return len(self.customers) - 1


def _number(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise SolomonParseError(f"non-numeric field {token!r}", lineno) from None


def parse_solomon(text: str | Iterable[str], name: str | None = None) -> Instance:
    """Parse the standard Solomon VRPTW layout.

    The demand column is read but plays no role in fleet sizing.
    """
    lines = text.splitlines() if isinstance(text, str) else [l.rstrip("\n") for l in text]
    if name is None:
        name = next((l.strip() for l in lines if l.strip()), "instance")

    vehicles = capacity = None
    table_start = None
    for idx, line in enumerate(lines):
        upper = line.strip().upper()
        if upper.startswith("NUMBER") and "CAPACITY" in upper:
            for follow in range(idx + 1, len(lines)):
                parts = lines[follow].split()
                if parts:
                    if len(parts) < 2:
                        raise SolomonParseError("vehicle block needs NUMBER and CAPACITY", follow + 1)
                    vehicles = int(_number(parts[0], follow + 1))
                    capacity = _number(parts[1], follow + 1)
                    break
        if upper.startswith("CUST NO"):
            table_start = idx + 1
            break
    if table_start is None:
        raise SolomonParseError("missing CUSTOMER table header")

    customers = []
    for idx in range(table_start, len(lines)):
        parts = lines[idx].split()
        if not parts:
            continue
        if len(parts) != len(_COLUMNS):
            raise SolomonParseError(
                f"expected {len(_COLUMNS)} columns, found {len(parts)}", idx + 1
            )
        cid, x, y, demand, ready, due, service = (_number(p, idx + 1) for p in parts)
        try:
            customers.append(Customer(int(cid), x, y, ready, due, service, demand))
        except ValueError as exc:
            raise SolomonParseError(str(exc), idx + 1) from None
    if not customers:
        raise SolomonParseError("customer table is empty")
    if customers[0].id != 0:
        raise SolomonParseError("first customer row must be the depot (id 0)", table_start + 1)
    return Instance(name=name, customers=tuple(customers), vehicles=vehicles, capacity=capacity)


def load_solomon(path: str | Path) -> Instance:
    path = Path(path)
    return parse_solomon(path.read_text(), name=path.stem)


def bundled(name: str) -> Instance:
    """Load one of the shipped instances (``"R101"`` or ``"R201"``)."""
    ref = resources.files("fsvrptw") / "data" / f"{name.upper()}.txt"
    return parse_solomon(ref.read_text(), name=name.upper())


@dataclass(frozen=True, eq=False)
class SubInstance:
    """Customers W plus the depot duplicated into origin 0 and sink n+1."""

    name: str
    depot: Customer
    customers: tuple[Customer, ...]
    dist: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        k = len(self.customers) + 2
        if d.shape != (k, k):
            raise ValueError(f"distance matrix must be {k}x{k}, got {d.shape}")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    @property
    def n(self) -> int:
        return len(self.customers)

    @property
    def sink(self) -> int:
        return self.n + 1

    @property
    def nodes(self) -> range:
        return range(self.n + 2)

    @property
    def customer_nodes(self) -> range:
        return range(1, self.n + 1)

    def is_depot(self, node: int) -> bool:
        return node == 0 or node == self.sink

    def node_label(self, node: int) -> str:
        if node == self.sink:
            return "N"
        return str(node)

    def ready(self, node: int) -> float:
        return 0.0 if self.is_depot(node) else self.customers[node - 1].ready

    def due(self, node: int) -> float:
        return math.inf if self.is_depot(node) else self.customers[node - 1].due

    def service(self, node: int) -> float:
        return 0.0 if self.is_depot(node) else self.customers[node - 1].service

    def original_id(self, node: int) -> int:
        return self.depot.id if self.is_depot(node) else self.customers[node - 1].id

    def to_dict(self) -> dict:
        def cust(c: Customer) -> dict:
            return {"id": c.id, "x": c.x, "y": c.y, "ready": c.ready, "due": c.due,
                    "service": c.service, "demand": c.demand}

        return {
            "name": self.name,
            "seed": self.seed,
            "depot": cust(self.depot),
            "customers": [cust(c) for c in self.customers],
            "dist": [[float(v) for v in row] for row in self.dist],
        }

    def to_json(self) -> str:
        """Canonical serialization: sorted keys, compact separators."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubInstance":
        depot = Customer(**data["depot"])
        customers = tuple(Customer(**c) for c in data["customers"])
        return cls(data["name"], depot, customers, np.array(data["dist"], dtype=float), data.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "SubInstance":
        return cls.from_dict(json.loads(text))


def euclidean_matrix(points: Sequence[tuple[float, float]], decimals: int | None = None) -> np.ndarray:
    xy = np.asarray(points, dtype=float)
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    if decimals is not None:
        scale = 10.0 ** decimals
        d = np.floor(d * scale) / scale
    return d


def make_subinstance(
    name: str,
    depot: Customer,
    customers: Sequence[Customer],
    seed: int | None = None,
    decimals: int | None = None,
) -> SubInstance:
    pts = [(depot.x, depot.y)] + [(c.x, c.y) for c in customers] + [(depot.x, depot.y)]
    return SubInstance(name, depot, tuple(customers), euclidean_matrix(pts, decimals), seed)


def sample_customers(instance: Instance, n: int, seed: int, decimals: int | None = None) -> SubInstance:
    """Draw ``n`` customers without replacement, deterministically in ``seed``.

    ``decimals=1`` truncates distances to one decimal, as some VRPTW studies do.
    """
    pool = instance.customers[1:]
    if not 1 <= n <= len(pool):
        raise ValueError(f"n must be in [1, {len(pool)}], got {n}")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(pool), size=n, replace=False))
    chosen = [pool[k] for k in picked]
    return make_subinstance(f"{instance.name}-n{n}-s{seed}", instance.depot, chosen, seed, decimals)


@dataclass(frozen=True)
class GridConfig:
    extra_points: int = 0


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Discretized departure times.

    ``departures[j]`` lists the times at which node ``j`` may be left; the
    origin depot only at 0, the sink's entries are its admissible arrival
    times. ``labels`` optionally renames (node, time) pairs for display.
    """

    departures: Mapping[int, tuple[float, ...]]
    labels: Mapping[tuple[int, float], object] = field(default_factory=dict)

    @property
    def points(self) -> tuple[float, ...]:
        pts = {t for times in self.departures.values() for t in times}
        return tuple(sorted(pts))

    def times(self, node: int) -> tuple[float, ...]:
        return self.departures.get(node, ())

    def label(self, node: int, t: float):
        return self.labels.get((node, t), t)

    def to_dict(self) -> dict:
        return {str(k): list(v) for k, v in sorted(self.departures.items())}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def departure_window(sub: SubInstance, j: int) -> tuple[float, float]:
    """Interval of useful departure times from customer ``j``.

    Service must start inside [e_j, l_j] and no arrival precedes d_0j.
    """
    lo = max(sub.ready(j), sub.dist[0, j]) + sub.service(j)
    hi = sub.due(j) + sub.service(j)
    return lo, hi


def build_time_grid(sub: SubInstance, config: GridConfig = GridConfig()) -> TimeGrid:
    """Smallest grid giving every customer a feasible departure time.

    Each customer contributes its earliest departure unless an existing point
    already falls inside its departure window. Windows are processed from the
    latest earliest-departure down, which stabs the intervals with the fewest
    points.
    """
    windows = {}
    for j in sub.customer_nodes:
        lo, hi = departure_window(sub, j)
        if lo > hi + TOL:
            raise InfeasibleDiscretization(
                j, f"customer {j} (id {sub.original_id(j)}) cannot be reached before its due date"
            )
        windows[j] = (lo, hi)

    points: list[float] = []
    for j in sorted(windows, key=lambda j: (-windows[j][0], j)):
        lo, hi = windows[j]
        if not any(lo - TOL <= p <= hi + TOL for p in points):
            points.append(lo)
        for k in range(1, config.extra_points + 1):
            p = lo + k * (hi - lo) / config.extra_points
            if all(abs(p - q) > TOL for q in points):
                points.append(p)
    points.sort()

    departures: dict[int, tuple[float, ...]] = {0: (0.0,)}
    for j, (lo, hi) in windows.items():
        departures[j] = tuple(p for p in points if lo - TOL <= p <= hi + TOL)
    horizon = max(
        (departures[j][-1] + sub.dist[j, sub.sink] for j in windows), default=0.0
    )
    departures[sub.sink] = (float(horizon),)
    return TimeGrid(departures)


def grid_problems(sub: SubInstance, grid: TimeGrid) -> list[str]:
    """Consistency checks for a grid; empty list means the grid is valid."""
    problems = []
    if grid.times(0) != (0.0,):
        problems.append("origin depot must be left at time 0 only")
    if not grid.times(sub.sink):
        problems.append("sink has no arrival time")
    for j in sub.customer_nodes:
        times = grid.times(j)
        if not times:
            problems.append(f"customer {j} has no departure point")
        for t in times:
            start = t - sub.service(j)
            if not sub.ready(j) - TOL <= start <= sub.due(j) + TOL:
                problems.append(f"customer {j}: departure {t} implies service start outside window")
    return problems


def redundant_points(sub: SubInstance, grid: TimeGrid) -> list[float]:
    """Customer grid points whose removal leaves every customer still served."""
    cust_points = sorted({t for j in sub.customer_nodes for t in grid.times(j)})
    redundant = []
    for p in cust_points:
        if all(any(abs(t - p) > TOL for t in grid.times(j)) for j in sub.customer_nodes):
            redundant.append(p)
    return redundant


def running_example() -> tuple[SubInstance, TimeGrid]:
    """The two-customer example with its hand-placed time grid.

    Grid times are chosen so that the admissible arcs are exactly those of the
    ten-variable example DAG; ``grid.labels`` maps them to the small integer
    times used to name nodes in that example.
    """
    data = json.loads((resources.files("fsvrptw") / "data" / "running_example.json").read_text())
    sub = SubInstance.from_dict(data["instance"])
    departures = {}
    labels = {}
    for node_key, entries in data["grid"].items():
        node = sub.sink if node_key == "N" else int(node_key)
        departures[node] = tuple(sorted(e["time"] for e in entries))
        for e in entries:
            labels[(node, e["time"])] = e["label"]
    return sub, TimeGrid(departures, labels)
