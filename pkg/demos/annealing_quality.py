"""How close does seeded annealing get to the exhaustive optimum at n=13?

Compares annealing (1160 probes) with the optimum over all 10296
configurations and with a baseline that probes 1160 evenly spaced ones.

Run with:  python3 demos/annealing_quality.py [setups]
"""

import sys
import time

import numpy as np

from aware.model import derive_shape, enumerate_configurations
from aware.optimizer import exhaustive_search, simulated_annealing
from aware.predictor import LatencyModel

setups = int(sys.argv[1]) if len(sys.argv) > 1 else 50
shape = derive_shape(3, 3)
configs = enumerate_configurations(shape)
rng = np.random.default_rng(2024)

sa_r, ps_r = [], []
t_sa = t_ex = 0.0
for k in range(setups):
    m = rng.uniform(0, 300, (shape.n, shape.n))
    m = np.maximum(m, m.T)
    np.fill_diagonal(m, 0)
    model = LatencyModel(shape, m, m)

    t = time.perf_counter()
    best = exhaustive_search(shape, m, m, model=model)
    t_ex += time.perf_counter() - t

    t = time.perf_counter()
    start = configs[int(rng.integers(len(configs)))]
    sa = simulated_annealing(shape, m, m, start, seed=k, model=model)
    t_sa += time.perf_counter() - t

    picked = configs[:: len(configs) // sa.probes][: sa.probes]
    ps = model.predict_many_ns(picked).min() / 1000 / 1e6
    sa_r.append(sa.predicted / best.predicted)
    ps_r.append(ps / best.predicted)

print(f"{setups} random symmetric matrices, n={shape.n}")
print(f"annealing / optimum   mean {np.mean(sa_r):.4f}  worst {np.max(sa_r):.4f}  "
      f"exact hits {sum(r == 1.0 for r in sa_r)}")
print(f"pick-sample / optimum mean {np.mean(ps_r):.4f}  worst {np.max(ps_r):.4f}")
print(f"time per search: annealing {t_sa / setups * 1000:.0f} ms, exhaustive {t_ex / setups * 1000:.0f} ms")
