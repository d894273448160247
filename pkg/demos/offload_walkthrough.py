"""Five subtasks from three UEs: matrix, priorities, queue and schedule.

Run: python3 demos/offload_walkthrough.py
"""

from importlib import resources
from pathlib import Path

from sdaeto.cli import load_plan, load_scenario, scenario_matrix
from sdaeto.offload import (design_queue, evaluate_schedule, integration_priority,
                            matrix_to_csv, redefined_sequence, schedule_to_csv)

data = Path(str(resources.files("sdaeto") / "data"))
sc = load_scenario(data / "five_subtasks.json")
plan = load_plan(data / "five_subtasks_plan.json", sc)
matrix = scenario_matrix(sc, plan)

print("offload matrix (- = not hosted)")
print(matrix_to_csv(matrix))

prio = {}
for st in sc.subtasks:
    prio[st] = integration_priority(matrix, st, sc.catalog)
    seq = " ".join(f"{i}:{t}" for i, t in redefined_sequence(matrix, st).items())
    print(f"{st.label:6} sequence [{seq}]  priority ({prio[st].main}, {prio[st].sub})")

queue = design_queue(sc.subtasks, prio)
print("\nqueue:", " ".join(st.label for st in queue))
sched = evaluate_schedule(queue, matrix, prio)
print(schedule_to_csv(sched), end="")
print("T_total", sched.makespan)
