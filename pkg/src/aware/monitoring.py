"""Latency monitoring: challenge-tagged probes, moving medians, synchronized
matrices and sanitization."""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

INF = math.inf
DEFAULT_WINDOW = 100
DEFAULT_SYNC_PERIOD = 10


class Kind(IntEnum):
    PROPOSE = 0
    WRITE = 1


def median(samples) -> float:
    """Median of a sample set; the mean of the middle two for even sizes."""
    s = sorted(samples)
    if not s:
        return INF
    mid = len(s) // 2
    if len(s) % 2:
        return float(s[mid])
    return (s[mid - 1] + s[mid]) / 2


class LatencyWindow:
    """Bounded per-peer sample buffers."""

    def __init__(self, n: int, window_size: int = DEFAULT_WINDOW):
        if window_size < 1:
            raise ValueError("window_size must be >= 1")
        self.window_size = window_size
        self.samples = [deque(maxlen=window_size) for _ in range(n)]

    def add(self, peer: int, value: float):
        self.samples[peer].append(value)

    def median(self, peer: int) -> float:
        return median(self.samples[peer])


@dataclass(frozen=True)
class LatencyVector:
    owner: int
    kind: Kind
    values: tuple[float, ...]

    def __post_init__(self):
        if self.values[self.owner] != 0:
            raise ValueError("self entry of a latency vector must be 0")
        if any(v < 0 or math.isnan(v) for v in self.values):
            raise ValueError("latency vector entries must be >= 0 or inf")


@dataclass(frozen=True)
class Challenge:
    nonce: int


class Monitor:
    """One replica's one-way latency measurements.

    Every monitored message carries a fresh nonce; the response must echo it
    back from the peer it was sent to. Half the round trip is the sample.
    """

    def __init__(self, owner: int, n: int, window_size: int = DEFAULT_WINDOW, rng=None):
        import random

        self.owner = owner
        self.n = n
        self.windows = {k: LatencyWindow(n, window_size) for k in Kind}
        self._outstanding: dict[int, tuple[Kind, int, float]] = {}
        self._rng = rng if rng is not None else random.Random(owner)

    def issue(self, kind: Kind, peer: int, t_send: float) -> Challenge:
        nonce = self._rng.getrandbits(64)
        while nonce in self._outstanding:
            nonce = self._rng.getrandbits(64)
        self._outstanding[nonce] = (Kind(kind), peer, t_send)
        return Challenge(nonce)

    def record_probe(self, kind: Kind, peer: int, t_send: float, t_recv: float,
                     challenge: Challenge) -> bool:
        if t_recv < t_send:
            raise ValueError("t_recv must be >= t_send")
        entry = self._outstanding.get(challenge.nonce)
        if entry is None or entry[0] != kind or entry[1] != peer:
            return False
        del self._outstanding[challenge.nonce]
        self.windows[Kind(kind)].add(peer, (t_recv - t_send) / 2)
        return True

    def respond(self, kind: Kind, peer: int, t_recv: float, challenge: Challenge) -> bool:
        """Accept a response using the send time stored with the challenge."""
        entry = self._outstanding.get(challenge.nonce)
        if entry is None:
            return False
        return self.record_probe(kind, peer, entry[2], t_recv, challenge)

    def expire_unanswered(self, now: float, timeout: float) -> int:
        """Count probes unanswered for longer than ``timeout`` as inf samples."""
        stale = [k for k, (_, _, t) in self._outstanding.items() if now - t > timeout]
        for nonce in stale:
            kind, peer, _ = self._outstanding.pop(nonce)
            self.windows[kind].add(peer, INF)
        return len(stale)

    def snapshot_vector(self, kind: Kind) -> LatencyVector:
        w = self.windows[Kind(kind)]
        values = [0.0 if j == self.owner else w.median(j) for j in range(self.n)]
        return LatencyVector(self.owner, Kind(kind), tuple(values))


def initial_matrix(n: int) -> np.ndarray:
    m = np.full((n, n), INF)
    np.fill_diagonal(m, 0.0)
    return m


class LatencyMatrixPair:
    """Synchronized PROPOSE/WRITE matrices; row i is what replica i reported."""

    def __init__(self, n: int):
        self.n = n
        self.m_propose = initial_matrix(n)
        self.m_write = initial_matrix(n)
        self.freshness = [None] * n

    def copy(self) -> "LatencyMatrixPair":
        other = LatencyMatrixPair(self.n)
        other.m_propose = self.m_propose.copy()
        other.m_write = self.m_write.copy()
        other.freshness = list(self.freshness)
        return other

    def digest(self) -> bytes:
        return self.m_propose.tobytes() + self.m_write.tobytes() + repr(self.freshness).encode()


def apply_measure_message(matrices: LatencyMatrixPair, sender: int, l_p, l_w, decided_at: int) -> bool:
    """Overwrite row ``sender`` with a decided MEASURE. Malformed vectors are dropped."""
    n = matrices.n
    vp = getattr(l_p, "values", l_p)
    vw = getattr(l_w, "values", l_w)
    if not (0 <= sender < n) or len(vp) != n or len(vw) != n:
        return False
    rp = np.asarray(vp, dtype=float)
    rw = np.asarray(vw, dtype=float)
    if np.any(np.isnan(rp)) or np.any(np.isnan(rw)) or np.any(rp < 0) or np.any(rw < 0):
        return False
    rp[sender] = 0.0
    rw[sender] = 0.0
    matrices.m_propose[sender] = rp
    matrices.m_write[sender] = rw
    matrices.freshness[sender] = decided_at
    return True


def expire_stale(matrices: LatencyMatrixPair, current_cid: int, c: int):
    """Reset rows not refreshed within the closed window [current_cid - c, current_cid]."""
    for i in range(matrices.n):
        fresh = matrices.freshness[i]
        if fresh is None or fresh < current_cid - c:
            for m in (matrices.m_propose, matrices.m_write):
                m[i, :] = INF
                m[i, i] = 0.0


def sanitize(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    return np.maximum(m, m.T)


def dummy_proposer_for(cid: int, omega: float, n: int, leader: int):
    """Non-leader that broadcasts a DUMMY-PROPOSE in instance ``cid``, or None.

    Exactly ``floor(cid * omega)`` of the instances 1..cid carry one; the
    proposers rotate over the non-leaders in id order.
    """
    if not 0 <= omega <= 1:
        raise ValueError("omega must lie in [0, 1]")
    if n < 2 or cid < 1:
        return None
    count = math.floor(cid * omega)
    if count == math.floor((cid - 1) * omega):
        return None
    others = [i for i in range(n) if i != leader]
    return others[(count - 1) % len(others)]


_MEASURE_HEAD = struct.Struct("<HBH")


def encode_measure(sender: int, l_p, l_w) -> bytes:
    """Two records, one per kind: sender u16, kind u8, n u16, n float64 (little endian)."""
    out = bytearray()
    for kind, vec in ((Kind.PROPOSE, l_p), (Kind.WRITE, l_w)):
        values = list(getattr(vec, "values", vec))
        out += _MEASURE_HEAD.pack(sender, int(kind), len(values))
        out += struct.pack(f"<{len(values)}d", *values)
    return bytes(out)


def decode_measure(payload: bytes):
    """Inverse of :func:`encode_measure`: ``(sender, l_p, l_w)``."""
    vectors = {}
    sender = None
    off = 0
    for _ in range(2):
        s, kind, n = _MEASURE_HEAD.unpack_from(payload, off)
        off += _MEASURE_HEAD.size
        values = struct.unpack_from(f"<{n}d", payload, off)
        off += 8 * n
        if sender is not None and s != sender:
            raise ValueError("MEASURE records disagree on sender")
        sender = s
        vectors[Kind(kind)] = tuple(values)
    if off != len(payload):
        raise ValueError("trailing bytes in MEASURE payload")
    return sender, vectors[Kind.PROPOSE], vectors[Kind.WRITE]


def format_latency(value: float) -> str:
    return "inf" if math.isinf(value) else repr(float(value))


def parse_latency(text) -> float:
    if isinstance(text, str):
        t = text.strip().lower()
        if t in ("inf", "+inf", "infinity"):
            return INF
        return float(t)
    return float(text)
