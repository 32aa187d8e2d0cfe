"""Deterministic consensus-latency prediction for weighted quorums.

Latencies enter in milliseconds and are quantised to integer nanoseconds, so
every replica computing a prediction from the same matrices gets the same
bits and exact ties between configurations stay exact.

One round of the model costs O(n^2 log n): each replica sorts the ``n``
arrival times of a phase. Rounds are chained through per-replica offsets
(how much later than the leader a replica finished the previous instance).
The offset vector fully determines the next round, so once it repeats the
remaining rounds are a replay of the detected cycle and are summed in closed
form. The result is identical to running every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import SystemShape, WeightConfig

INF_NS = np.int64(1 << 60)
NS_PER_MS = 1_000_000
DEFAULT_ROUNDS = 1000


def to_ns(matrix) -> np.ndarray:
    """Convert a millisecond array (``inf`` allowed) to saturated integer ns."""
    m = np.asarray(matrix, dtype=float)
    if np.any(m < 0) or np.any(np.isnan(m)):
        raise ValueError("latencies must be non-negative numbers")
    out = np.full(m.shape, INF_NS, dtype=np.int64)
    finite = np.isfinite(m)
    out[finite] = np.rint(m[finite] * NS_PER_MS).astype(np.int64)
    return np.minimum(out, INF_NS)


def to_ms(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    out = v.astype(float) / NS_PER_MS
    out[v >= INF_NS] = np.inf
    return out


@njit(cache=True)
def _form_qv_kernel(start, mw, weights, q, out, arr_t, arr_w):
    n = start.shape[0]
    inf = INF_NS
    for i in range(n):
        for j in range(n):
            t = start[j] + mw[j, i]
            if t > inf:
                t = inf
            # insertion into sorted prefix, ascending time
            k = j
            while k > 0 and arr_t[k - 1] > t:
                arr_t[k] = arr_t[k - 1]
                arr_w[k] = arr_w[k - 1]
                k -= 1
            arr_t[k] = t
            arr_w[k] = weights[j]
        acc = 0
        res = inf
        for k in range(n):
            if arr_t[k] >= inf:
                break
            acc += arr_w[k]
            if acc >= q:
                res = arr_t[k]
                break
        out[i] = res


@njit(cache=True)
def _predict_kernel(mp, mw, weights, leader, q, rounds, first_round):
    """Sum of the leader's per-round latency over ``rounds`` rounds.

    Returns INF_NS if the leader cannot decide. ``first_round`` receives the
    round-1 stage times (proposed, written, accepted) as a 3 x n array.
    """
    n = mp.shape[0]
    inf = INF_NS
    offsets = np.zeros(n, dtype=np.int64)
    proposed = np.empty(n, dtype=np.int64)
    written = np.empty(n, dtype=np.int64)
    accepted = np.empty(n, dtype=np.int64)
    arr_t = np.empty(n, dtype=np.int64)
    arr_w = np.empty(n, dtype=np.int64)
    history = np.empty((rounds, n), dtype=np.int64)
    hashes = np.empty(rounds, dtype=np.uint64)
    lat = np.empty(rounds, dtype=np.int64)
    total = 0
    for r in range(rounds):
        h = np.uint64(1469598103934665603)
        for i in range(n):
            h = (h ^ np.uint64(offsets[i])) * np.uint64(1099511628211)
        for m in range(r):
            if hashes[m] != h:
                continue
            same = True
            for i in range(n):
                if history[m, i] != offsets[i]:
                    same = False
                    break
            if same:
                period = r - m
                cycle_sum = 0
                for x in range(m, r):
                    cycle_sum += lat[x]
                remaining = rounds - r
                total += (remaining // period) * cycle_sum
                for x in range(m, m + remaining % period):
                    total += lat[x]
                return total
        hashes[r] = h
        for i in range(n):
            history[r, i] = offsets[i]

        for i in range(n):
            p = mp[leader, i]
            proposed[i] = p if p > offsets[i] else offsets[i]
        _form_qv_kernel(proposed, mw, weights, q, written, arr_t, arr_w)
        _form_qv_kernel(written, mw, weights, q, accepted, arr_t, arr_w)
        if r == 0:
            for i in range(n):
                first_round[0, i] = proposed[i]
                first_round[1, i] = written[i]
                first_round[2, i] = accepted[i]
        tl = accepted[leader]
        if tl >= inf:
            return inf
        lat[r] = tl
        total += tl
        for i in range(n):
            if accepted[i] >= inf:
                offsets[i] = inf
            else:
                offsets[i] = accepted[i] - tl
    return total


@njit(cache=True)
def _predict_many_kernel(mp, mw, rmax_masks, leaders, w_max, w_min, q, rounds):
    b = leaders.shape[0]
    n = mp.shape[0]
    out = np.empty(b, dtype=np.int64)
    weights = np.empty(n, dtype=np.int64)
    scratch = np.empty((3, n), dtype=np.int64)
    for k in range(b):
        for i in range(n):
            weights[i] = w_max if rmax_masks[k, i] else w_min
        out[k] = _predict_kernel(mp, mw, weights, leaders[k], q, rounds, scratch)
    return out


def _scaled_weights(shape: SystemShape, weights) -> np.ndarray:
    scaled = []
    for w in weights:
        s = w * shape.f
        if s != int(s):
            raise ValueError(f"weight {w} is not a multiple of 1/f")
        scaled.append(int(s))
    return np.asarray(scaled, dtype=np.int64)


def form_qv(shape: SystemShape, m_w, start_times, weights) -> np.ndarray:
    """Earliest time (ms) each replica has collected ``q_v`` vote weight.

    ``start_times[j]`` is when replica ``j`` sends its vote; the vote reaches
    ``i`` at ``start_times[j] + m_w[j][i]``. Unreachable thresholds give inf.
    """
    mw = to_ns(m_w)
    start = to_ns(start_times)
    out = np.empty(shape.n, dtype=np.int64)
    arr_t = np.empty(shape.n, dtype=np.int64)
    arr_w = np.empty(shape.n, dtype=np.int64)
    _form_qv_kernel(start, mw, _scaled_weights(shape, weights), shape.q_scaled, out, arr_t, arr_w)
    return to_ms(out)


@dataclass(frozen=True)
class StageTimes:
    proposed: np.ndarray
    written: np.ndarray
    accepted: np.ndarray


class LatencyModel:
    """Sanitised PROPOSE/WRITE matrices ready for repeated predictions."""

    def __init__(self, shape: SystemShape, m_p, m_w):
        self.shape = shape
        self.mp = to_ns(m_p)
        self.mw = to_ns(m_w)
        n = shape.n
        if self.mp.shape != (n, n) or self.mw.shape != (n, n):
            raise ValueError(f"matrices must be {n}x{n}")
        self._scratch = np.empty((3, n), dtype=np.int64)

    def predict_ns(self, config: WeightConfig, rounds: int = DEFAULT_ROUNDS) -> int:
        """Summed leader latency over ``rounds`` in ns, or ``INF_NS``."""
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        weights = np.asarray(config.scaled_weights(self.shape), dtype=np.int64)
        scratch = np.empty((3, self.shape.n), dtype=np.int64)
        return int(
            _predict_kernel(
                self.mp, self.mw, weights, config.leader, self.shape.q_scaled, rounds, scratch
            )
        )

    def predict_weights_ns(self, weights: np.ndarray, leader: int, rounds: int = DEFAULT_ROUNDS) -> int:
        return int(_predict_kernel(self.mp, self.mw, weights, leader, self.shape.q_scaled,
                                   rounds, self._scratch))

    def predict(self, config: WeightConfig, rounds: int = DEFAULT_ROUNDS) -> float:
        return _mean_ms(self.predict_ns(config, rounds), rounds)

    def predict_many_ns(self, configs, rounds: int = DEFAULT_ROUNDS) -> np.ndarray:
        configs = list(configs)
        n = self.shape.n
        masks = np.zeros((len(configs), n), dtype=np.bool_)
        leaders = np.empty(len(configs), dtype=np.int64)
        for k, c in enumerate(configs):
            masks[k, list(c.r_max)] = True
            leaders[k] = c.leader
        return _predict_many_kernel(
            self.mp, self.mw, masks, leaders,
            self.shape.w_max, self.shape.w_min, self.shape.q_scaled, rounds,
        )

    def stage_times(self, config: WeightConfig) -> StageTimes:
        """Per-replica stage times of a single zero-offset round."""
        weights = np.asarray(config.scaled_weights(self.shape), dtype=np.int64)
        first = np.full((3, self.shape.n), INF_NS, dtype=np.int64)
        _predict_kernel(self.mp, self.mw, weights, config.leader, self.shape.q_scaled, 1, first)
        return StageTimes(to_ms(first[0]), to_ms(first[1]), to_ms(first[2]))


def _mean_ms(total_ns: int, rounds: int) -> float:
    if total_ns >= INF_NS:
        return float("inf")
    return total_ns / rounds / NS_PER_MS


def predict_latency(
    shape: SystemShape, config: WeightConfig, m_p, m_w, rounds: int = DEFAULT_ROUNDS
) -> float:
    """Leader consensus latency in ms, averaged over ``rounds`` pipelined rounds."""
    return LatencyModel(shape, m_p, m_w).predict(config, rounds)


def predict_latency_unrolled(
    shape: SystemShape, config: WeightConfig, m_p, m_w, rounds: int = DEFAULT_ROUNDS
) -> float:
    """Same model, evaluated round by round in plain Python with no cycle shortcut."""
    mp = to_ns(m_p).tolist()
    mw = to_ns(m_w).tolist()
    n = shape.n
    weights = config.scaled_weights(shape)
    leader = config.leader
    inf = int(INF_NS)

    def qv(start):
        out = []
        for i in range(n):
            arrivals = sorted((min(start[j] + mw[j][i], inf), weights[j]) for j in range(n))
            acc, t_next = 0, inf
            for t, w in arrivals:
                if t >= inf:
                    break
                acc += w
                if acc >= shape.q_scaled:
                    t_next = t
                    break
            out.append(t_next)
        return out

    offsets = [0] * n
    total = 0
    for _ in range(rounds):
        proposed = [max(mp[leader][i], offsets[i]) for i in range(n)]
        accepted = qv(qv(proposed))
        tl = accepted[leader]
        if tl >= inf:
            return float("inf")
        total += tl
        offsets = [inf if a >= inf else a - tl for a in accepted]
    return _mean_ms(total, rounds)
