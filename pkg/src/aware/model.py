"""Weighted quorum sizing, voting weights and the configuration space.

Weights are kept exact. ``Fraction`` is used on the public surface; the
predictor works on integer weights scaled by ``f`` (``v_max * f = f + delta``,
``v_min * f = f``) so every threshold comparison is integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence


@dataclass(frozen=True)
class SystemShape:
    f: int
    delta: int
    n: int
    v_max: Fraction
    v_min: Fraction
    q_v: Fraction
    traditional_quorum: int

    @property
    def total_weight(self) -> Fraction:
        return 2 * self.f * self.v_max + (self.n - 2 * self.f) * self.v_min

    # Integer weights scaled by f.
    @property
    def w_max(self) -> int:
        return self.f + self.delta

    @property
    def w_min(self) -> int:
        return self.f

    @property
    def q_scaled(self) -> int:
        return self.f * (2 * (self.f + self.delta) + 1)

    @property
    def u(self) -> int:
        """Number of replicas holding the maximum weight."""
        return 2 * self.f


def derive_shape(f: int, delta: int) -> SystemShape:
    if f < 1:
        raise ValueError(f"f must be >= 1, got {f}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    n = 3 * f + 1 + delta
    v_max = 1 + Fraction(delta, f)
    q_v = Fraction(2 * (f + delta) + 1)
    assert q_v == 2 * f * v_max + 1
    return SystemShape(
        f=f,
        delta=delta,
        n=n,
        v_max=v_max,
        v_min=Fraction(1),
        q_v=q_v,
        traditional_quorum=-(-(n + f + 1) // 2),
    )


@dataclass(frozen=True)
class WeightConfig:
    """Which replicas hold ``v_max`` and who leads.

    ``r_max`` is stored sorted so equal configurations compare and hash equal.
    """

    r_max: tuple[int, ...]
    leader: int
    n: int = field(compare=True)

    def __post_init__(self):
        object.__setattr__(self, "r_max", tuple(sorted(self.r_max)))
        if len(set(self.r_max)) != len(self.r_max):
            raise ValueError(f"duplicate replica in r_max {self.r_max}")
        if self.leader not in self.r_max:
            raise ValueError(f"leader {self.leader} not in r_max {self.r_max}")
        if any(i < 0 or i >= self.n for i in self.r_max):
            raise ValueError(f"r_max {self.r_max} out of range for n={self.n}")

    @property
    def r_min(self) -> tuple[int, ...]:
        held = set(self.r_max)
        return tuple(i for i in range(self.n) if i not in held)

    def weight_of(self, shape: SystemShape, i: int) -> Fraction:
        return shape.v_max if i in self.r_max else shape.v_min

    def scaled_weights(self, shape: SystemShape) -> list[int]:
        held = set(self.r_max)
        return [shape.w_max if i in held else shape.w_min for i in range(self.n)]

    def swap(self, out_replica: int, in_replica: int) -> "WeightConfig":
        """Move ``v_max`` from ``out_replica`` to ``in_replica``.

        The leader follows its weight when it is the one swapped out.
        """
        r_max = [in_replica if i == out_replica else i for i in self.r_max]
        leader = in_replica if out_replica == self.leader else self.leader
        return WeightConfig(tuple(r_max), leader, self.n)

    def label(self) -> str:
        others = [i for i in self.r_max if i != self.leader]
        return f"{self.leader}:" + ",".join(str(i) for i in [self.leader, *others])

    def __str__(self):
        return self.label()


def make_config(shape: SystemShape, leader: int, r_max: Iterable[int]) -> WeightConfig:
    r_max = tuple(r_max)
    if len(r_max) != shape.u:
        raise ValueError(f"r_max must hold exactly {shape.u} replicas, got {len(r_max)}")
    return WeightConfig(r_max, leader, shape.n)


def parse_config(shape: SystemShape, text: str) -> WeightConfig:
    """Parse ``"leader:a,b,..."``; the leader is added to r_max if omitted."""
    head, _, tail = text.partition(":")
    leader = int(head)
    members = [int(x) for x in tail.split(",") if x.strip()] if tail else []
    if leader not in members:
        members = [leader, *members]
    return make_config(shape, leader, members)


def is_quorum(shape: SystemShape, config: WeightConfig, subset: Iterable[int]) -> bool:
    return sum(config.weight_of(shape, i) for i in set(subset)) >= shape.q_v


def count_configurations(shape: SystemShape) -> int:
    return math.comb(shape.n, shape.u) * shape.u


def enumerate_configurations(
    shape: SystemShape, leader_candidates: Iterable[int] | None = None
) -> list[WeightConfig]:
    """All (r_max, leader) pairs, ordered by sorted r_max then leader id."""
    if leader_candidates is None:
        candidates = set(range(shape.n))
    else:
        candidates = set(leader_candidates)
    if not candidates:
        raise ValueError("leader candidate set is empty")
    out = []
    for r_max in combinations(range(shape.n), shape.u):
        for leader in r_max:
            if leader in candidates:
                out.append(WeightConfig(r_max, leader, shape.n))
    if not out:
        raise ValueError(f"no leader candidate in {sorted(candidates)} fits any r_max")
    return out


def fast_quorum_ratio(shape: SystemShape) -> Fraction:
    return Fraction(2 * shape.f + 1, shape.traditional_quorum)


def minimal_quorums(shape: SystemShape, config: WeightConfig) -> list[frozenset[int]]:
    """Quorums from which no replica can be removed. Exponential; small n only."""
    weights = config.scaled_weights(shape)
    out = []
    for k in range(1, shape.n + 1):
        for subset in combinations(range(shape.n), k):
            total = sum(weights[i] for i in subset)
            if total >= shape.q_scaled and all(
                total - weights[i] < shape.q_scaled for i in subset
            ):
                out.append(frozenset(subset))
    return out


def quorum_subsets(shape: SystemShape, weights: Sequence[int]) -> list[int]:
    """Bitmasks of every subset whose scaled weight reaches the threshold."""
    n = shape.n
    out = []
    for mask in range(1 << n):
        total = 0
        m = mask
        i = 0
        while m:
            if m & 1:
                total += weights[i]
            m >>= 1
            i += 1
        if total >= shape.q_scaled:
            out.append(mask)
    return out
