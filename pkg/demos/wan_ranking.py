"""Rank every (leader, weights) choice on the five-region WAN matrix.

Run with:  python3 demos/wan_ranking.py
"""

import json
from importlib import resources

import numpy as np

from aware.model import count_configurations, derive_shape, enumerate_configurations
from aware.monitoring import sanitize
from aware.predictor import LatencyModel
from aware.simnet import oracle_mean_leader_latency

fx = json.loads(resources.files("aware.fixtures").joinpath("fig7.json").read_text())
labels = fx["labels"]
raw = np.array(fx["raw_write_ms"])

# Virginia reports an all-zero row; sanitizing takes the pairwise max, so its
# lie is replaced by what the other replicas measured towards it.
print("raw WRITE medians (ms)")
print(raw)
m = sanitize(raw)
print("\nsanitized")
print(m)

shape = derive_shape(1, 1)
print(f"\nn={shape.n}, {count_configurations(shape)} configurations, q_v={shape.q_v}")

model = LatencyModel(shape, m, m)
configs = enumerate_configurations(shape)
ranked = sorted(configs, key=model.predict_ns)

print("\nrank  leader      heavy replicas              predicted  oracle")
for k, cfg in enumerate(ranked, 1):
    heavy = ", ".join(labels[i] for i in cfg.r_max)
    pred = model.predict(cfg)
    ora = oracle_mean_leader_latency(shape, cfg, m, m, 1000)
    print(f"{k:>4}  {labels[cfg.leader]:<10}  {heavy:<26}  {pred:8.1f}  {ora:6.1f}")

best, worst = model.predict(ranked[0]), model.predict(ranked[-1])
print(f"\nbest vs worst: {best:.0f} ms vs {worst:.0f} ms ({worst / best:.2f}x)")
