"""Replay the nine-step runtime script and print what each phase did to the clients.

Steps: bad start config, optimize, delay Ireland, re-optimize, remove the delay,
revert, crash the leader, view change, redistribute weights.

Run with:  python3 demos/runtime_behavior.py [seed]
"""

import sys
import time
from importlib import resources

from aware.simnet import Simulation, load_scenario

text = resources.files("aware.fixtures").joinpath("runtime_behavior.json").read_text()
scenario = load_scenario(text)
seed = int(sys.argv[1]) if len(sys.argv) > 1 else scenario.seed

t = time.perf_counter()
log = Simulation(scenario, seed).run()
print(f"simulated {log.end_ms / 1000:.0f} s in {time.perf_counter() - t:.1f} s wall clock, "
      f"{len(log.instances)} instances, {len(log.clients)} client requests\n")

for e in log.events:
    print(f"{e.time_ms / 1000:8.1f} s  {e.kind:<14} {e.detail}")

# phase boundaries are the logged events themselves
marks = [0.0] + [e.time_ms for e in log.events] + [log.end_ms]
names = ["start"] + [e.kind for e in log.events]
clients = {c: scenario.labels[scenario.clients[c - scenario.shape.n].attach] for c in log.trimmed_means()}

print("\nclient trimmed means per phase (ms)")
print("phase".ljust(26) + "".join(f"{v:>11}" for v in clients.values()) + "   consensus")
for k in range(len(marks) - 1):
    t0, t1 = marks[k], marks[k + 1]
    tm = log.trimmed_means(t0, t1)
    lat = [r.latency_ms for r in log.instances if t0 <= r.decide_time_ms < t1]
    row = "".join(f"{tm.get(c, float('nan')):11.1f}" for c in clients)
    cons = sum(lat) / len(lat) if lat else float("nan")
    print(f"{names[k]:<14}{t0 / 1000:7.0f} s   " + row + f"   {cons:9.1f}")
