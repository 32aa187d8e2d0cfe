"""Search for the fastest (leader, weight distribution) and the reconfigure rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SystemShape, WeightConfig, count_configurations, enumerate_configurations
from .predictor import DEFAULT_ROUNDS, INF_NS, NS_PER_MS, LatencyModel

MASK64 = (1 << 64) - 1
DEFAULT_ALPHA = 1.05
DEFAULT_BUDGET = 50_000


class SplitMix64:
    """64-bit SplitMix generator. Replicas seeded alike draw identical streams."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_int(self, k: int) -> int:
        return math.floor(self.next_double() * k)


@dataclass(frozen=True)
class ConfigCandidate:
    config: WeightConfig
    predicted: float
    probes: int = 0

    @property
    def leader(self) -> int:
        return self.config.leader


@dataclass(frozen=True)
class SaParams:
    t0: float = 120.0
    theta: float = 0.0055
    threshold: float = 0.2

    def __post_init__(self):
        if not self.t0 > self.threshold > 0:
            raise ValueError("need t0 > threshold > 0")
        if not 0 < self.theta < 1:
            raise ValueError("need 0 < theta < 1")

    def probe_count(self) -> int:
        """Neighbours probed before the temperature falls to the threshold."""
        temp, k = self.t0, 0
        while temp > self.threshold:
            temp *= 1 - self.theta
            k += 1
        return k


@dataclass(frozen=True)
class ReconfigDecision:
    reconfigure: bool
    config: WeightConfig | None
    leader_change: bool
    ratio: float


class BudgetExceeded(RuntimeError):
    pass


def _ms(total_ns: int, rounds: int) -> float:
    return math.inf if total_ns >= INF_NS else total_ns / rounds / NS_PER_MS


def exhaustive_search(shape: SystemShape, m_p, m_w, leader_candidates=None,
                      rounds: int = DEFAULT_ROUNDS, current: WeightConfig | None = None,
                      budget: int = DEFAULT_BUDGET, model: LatencyModel | None = None) -> ConfigCandidate:
    """Global argmin over every configuration.

    Ties go to the first configuration in enumeration order, except that a
    tied configuration led by the current leader wins over the others.
    """
    if count_configurations(shape) > budget:
        raise BudgetExceeded(
            f"{count_configurations(shape)} configurations exceed the budget of {budget}; "
            "use simulated annealing")
    configs = enumerate_configurations(shape, leader_candidates)
    model = model or LatencyModel(shape, m_p, m_w)
    totals = model.predict_many_ns(configs, rounds)
    best = int(totals.min())
    tied = np.flatnonzero(totals == best)
    pick = int(tied[0])
    if current is not None:
        for k in tied:
            if configs[k].leader == current.leader:
                pick = int(k)
                break
    return ConfigCandidate(configs[pick], _ms(best, rounds), probes=len(configs))


def simulated_annealing(shape: SystemShape, m_p, m_w, current: WeightConfig, seed: int,
                        params: SaParams = SaParams(), rounds: int = DEFAULT_ROUNDS,
                        model: LatencyModel | None = None, trace: list | None = None) -> ConfigCandidate:
    """Seeded annealing over single v_max/v_min swaps.

    Neighbours swap ``sorted(r_max)[next_int(u)]`` with
    ``sorted(r_min)[next_int(n - u)]``; a second draw decides acceptance only
    when the neighbour is not strictly better. Returns the best seen.
    """
    model = model or LatencyModel(shape, m_p, m_w)
    rng = SplitMix64(seed)
    n, u = shape.n, shape.u
    r_max, r_min, leader = list(current.r_max), list(current.r_min), current.leader
    weights = np.asarray(current.scaled_weights(shape), dtype=np.int64)
    c_pred = model.predict_ns(current, rounds)
    best, best_pred = current, c_pred
    temp = params.t0
    probes = 0
    while temp > params.threshold:
        out_replica = r_max[rng.next_int(u)]
        in_replica = r_min[rng.next_int(n - u)]
        nxt_leader = in_replica if out_replica == leader else leader
        weights[out_replica], weights[in_replica] = shape.w_min, shape.w_max
        nxt_pred = model.predict_weights_ns(weights, nxt_leader, rounds)
        probes += 1
        accept = nxt_pred < c_pred
        if not accept:
            draw = rng.next_double()
            if nxt_pred < INF_NS:
                energy = (nxt_pred - c_pred) / rounds / NS_PER_MS
                accept = math.exp(-energy / temp) > draw
        improved = nxt_pred < best_pred
        if accept or improved:
            nxt_max = sorted(in_replica if i == out_replica else i for i in r_max)
            if improved:
                best, best_pred = WeightConfig(tuple(nxt_max), nxt_leader, n), nxt_pred
        if accept:
            r_max = nxt_max
            r_min = sorted(out_replica if i == in_replica else i for i in r_min)
            leader, c_pred = nxt_leader, nxt_pred
        else:
            weights[out_replica], weights[in_replica] = shape.w_max, shape.w_min
        if trace is not None:
            trace.append((WeightConfig(tuple(r_max), leader, n), _ms(nxt_pred, rounds), _ms(best_pred, rounds)))
        temp *= 1 - params.theta
    return ConfigCandidate(best, _ms(best_pred, rounds), probes=probes)


def search(shape: SystemShape, m_p, m_w, current: WeightConfig, seed: int,
           strategy: str = "auto", leader_candidates=None, rounds: int = DEFAULT_ROUNDS,
           params: SaParams = SaParams(), budget: int = DEFAULT_BUDGET,
           model: LatencyModel | None = None) -> ConfigCandidate:
    """Exhaustive below the budget, annealing above it (``strategy="auto"``)."""
    if strategy == "auto":
        strategy = "exhaustive" if count_configurations(shape) <= budget else "annealing"
    if strategy == "exhaustive":
        return exhaustive_search(shape, m_p, m_w, leader_candidates, rounds, current, budget, model)
    if strategy == "annealing":
        return simulated_annealing(shape, m_p, m_w, current, seed, params, rounds, model)
    raise ValueError(f"unknown strategy {strategy!r}")


def decide(current: ConfigCandidate, best: ConfigCandidate, alpha: float = DEFAULT_ALPHA) -> ReconfigDecision:
    if current.config == best.config:
        return ReconfigDecision(False, None, False, 1.0)
    cur, new = current.predicted, best.predicted
    if new == 0:
        ratio = math.inf if cur > 0 else 1.0
    elif math.isinf(new):
        ratio = 0.0
    else:
        ratio = cur / new
    if new < cur and ratio >= alpha:
        return ReconfigDecision(True, best.config, best.leader != current.leader, ratio)
    return ReconfigDecision(False, None, False, ratio)
