"""
A small benchmark battery
=========================

Two sizes, five seeds and all three methods on each bundled instance,
summarized the same way ``fsvrptw bench`` does. Runs in seconds.
"""

from fsvrptw.bench import BenchConfig, aggregate, report_md, run_battery

config = BenchConfig(ns=[5, 7], seeds=list(range(5)), num_reads=300, budget=300)
rows = run_battery(config)

# %% one line per run
for r in rows:
    print(r.instance, r.n, r.seed, f"{r.method:13s}", r.objective, r.optimum, r.iterations, r.note)

# %% the markdown report
print(report_md(aggregate(rows), config))

# %% settings tuned for the annealer close most of the gap
tuned = BenchConfig(**{**config.to_dict(), "strategy": "single", "penalties": [2.0, 2.0],
                       "methods": ["greedy+sa"]})
print(report_md(aggregate(run_battery(tuned)), tuned))
