"""
The two-customer running example, step by step
===============================================

Builds the arc variables, compiles the QUBO, samples it, and walks the
greedy loop one prune at a time. Run with ``python3 notebooks/running_example.py``.
"""

import numpy as np

from fsvrptw.dagpath import build_dag, longest_path, to_dot
from fsvrptw.greedy import GreedyConfig, run
from fsvrptw.instance import running_example
from fsvrptw.model import build_constraints, compile_qubo, enumerate_variables
from fsvrptw.samplers import SimulatedAnnealingSampler, one_body_expectations

sub, grid = running_example()


def name(v):
    """Arcs printed with the small integer times of the example."""
    lab = lambda i, s: f"{sub.node_label(i)},{grid.label(i, s)}"
    return f"x[{lab(v.i, v.s)} -> {lab(v.j, v.t)}]"


# %% pre-processing leaves ten arcs
vars = enumerate_variables(sub, grid)
for k, v in enumerate(vars.active()):
    print(k, name(v))

# %% the penalty QUBO and its lowest energy
cons = build_constraints(vars, sub)
q = compile_qubo(cons, vars)
print(f"{q.n} variables, {len(q.values)} couplings, penalties {q.penalties}")
ss = SimulatedAnnealingSampler().sample(q, 1000, 1000, 0)
print("lowest sampled energy:", ss.energies.min())

# %% one-body expectations drive the selection
exp = one_body_expectations(ss)
for v, e in sorted(zip(vars.active(), exp), key=lambda p: -p[1]):
    print(f"{name(v):24s} {e:.3f}")

# %% the longest path through the selected arcs
chosen = [v for v, e in zip(vars.active(), exp) if e >= np.sort(exp)[-5]]
path = longest_path(build_dag(chosen))
print("longest path:", " ; ".join(name(a) for a in path.arcs))
print(to_dot(build_dag(vars.active()), [path]))

# %% the full loop, printing what each prune fixed


def show(state, records):
    print(f"prune {state.iteration}: {len(state.vars.active())} arcs still active")
    for r in records:
        print(f"   {name(r.variable):24s} = {r.value}  ({r.rule})")


sol = run(sub, grid, SimulatedAnnealingSampler(), GreedyConfig(seed=0), show)
print("routes:", sol.route_nodes(), "vehicles:", sol.objective, "feasible:", sol.feasible)
