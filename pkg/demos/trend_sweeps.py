"""Small sweeps over UE count, window mode and MEC count; prints CSV.

Run: python3 demos/trend_sweeps.py [seeds]
"""

import sys

import numpy as np

from sdaeto.sim import SimConfig, critical_ues, simulate, summarize

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)


def mean_of(key, **kw):
    vals = [summarize(simulate(SimConfig(seed=s, **kw)))[key] for s in seeds]
    return float(np.mean([v for v in vals if v is not None]))


window, bu = 50, 0.6
print(f"# fixed window {window}, task arrival {bu}: critical UE count {critical_ues(window, bu):g}")
print("ues,fixed_delay,floating_delay")
for u in range(10, 70, 10):
    fixed = mean_of("mean_delay", num_ues=u, task_arrival=bu, window_mode="fixed", window=window)
    floating = mean_of("mean_delay", num_ues=u, task_arrival=bu)
    print(f"{u},{fixed:.4f},{floating:.4f}")

print("\nmecs,edge_offload_rate,analytic_hit_rate")
for m in (1, 2, 4, 8):
    print(f"{m},{mean_of('edge_offload_rate', num_mecs=m):.4f},"
          f"{mean_of('analytic_hit_rate', num_mecs=m):.4f}")
