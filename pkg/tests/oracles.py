"""Slow, independent reference implementations used only by the tests."""

import math
from itertools import combinations

import numpy as np

M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def brute_quorum_times(start, mw, weights, q):
    """Earliest time each receiver holds q weight: min over heavy-enough sender
    subsets of the latest arrival in the subset. No sorting involved."""
    n = len(start)
    out = []
    for i in range(n):
        best = math.inf
        for k in range(1, n + 1):
            for subset in combinations(range(n), k):
                if sum(weights[j] for j in subset) >= q:
                    best = min(best, max(start[j] + mw[j][i] for j in subset))
        out.append(best)
    return out


def brute_count(f, delta):
    """(r_max, leader) pairs by scanning every bitmask of n replicas."""
    n = 3 * f + 1 + delta
    total = 0
    for mask in range(1 << n):
        members = [i for i in range(n) if mask >> i & 1]
        if len(members) == 2 * f:
            total += len(members)
    return total


def weighted_subsets(n, weights, q):
    return [m for m in range(1 << n)
            if sum(weights[i] for i in range(n) if m >> i & 1) >= q]


def splitmix_numpy(seed, count):
    """SplitMix64 on numpy uint64 wrap-around arithmetic."""
    out = []
    with np.errstate(over="ignore"):
        state = np.uint64(seed)
        for _ in range(count):
            state = state + np.uint64(0x9E3779B97F4A7C15)
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            out.append(int(z ^ (z >> np.uint64(31))))
    return out


def pick_sample(configs, model, probes, rounds=1000):
    """Baseline: probe configs spaced evenly through the enumeration."""
    step = max(1, len(configs) // probes)
    picked = configs[::step][:probes]
    totals = model.predict_many_ns(picked, rounds)
    k = int(np.argmin(totals))
    return picked[k], int(totals[k])


def random_sanitized(rng, n, low=0.0, high=300.0):
    m = rng.uniform(low, high, (n, n))
    m = np.maximum(m, m.T)
    np.fill_diagonal(m, 0.0)
    return m
