"""Weighted PROPOSE/WRITE/ACCEPT consensus with the self-optimization loop.

A :class:`Replica` is a deterministic state machine driven by messages. It
talks to the outside only through a transport object exposing ``now()``
(integer ns), ``send(src, dst, msg)`` and an optional ``observer`` for
metrics and invariant checks.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

import numpy as np

from .model import SystemShape, WeightConfig
from .monitoring import (
    DEFAULT_SYNC_PERIOD,
    DEFAULT_WINDOW,
    Challenge,
    Kind,
    LatencyMatrixPair,
    Monitor,
    apply_measure_message,
    decode_measure,
    dummy_proposer_for,
    encode_measure,
    expire_stale,
    sanitize,
)
from .optimizer import DEFAULT_ALPHA, ConfigCandidate, SaParams, decide, search
from .predictor import DEFAULT_ROUNDS, LatencyModel, NS_PER_MS

COLLUSION_CLAIM_MS = 0.001


class MsgKind(IntEnum):
    PROPOSE = 1
    WRITE = 2
    ACCEPT = 3
    WRITE_RESPONSE = 4
    PROPOSE_RESPONSE = 5
    DUMMY_PROPOSE = 6
    MEASURE = 7
    CLIENT_REQUEST = 8
    CLIENT_REPLY = 9
    VIEW_CHANGE = 10


class InvariantViolation(AssertionError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


@dataclass(frozen=True)
class Request:
    """A client operation, or a replica's MEASURE when ``measure`` is set."""

    client: int
    seq: int
    measure: bytes | None = None

    @property
    def key(self):
        return (self.measure is not None, self.client, self.seq)

    def to_bytes(self) -> bytes:
        body = self.measure or b""
        return struct.pack("<BIQI", self.measure is not None, self.client, self.seq, len(body)) + body


Batch = tuple


def batch_bytes(batch) -> bytes:
    return struct.pack("<I", len(batch)) + b"".join(r.to_bytes() for r in batch)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def batch_digest(batch) -> int:
    return fnv1a64(batch_bytes(batch))


@dataclass(slots=True)
class Message:
    kind: MsgKind
    view: int
    cid: int
    sender: int
    payload: Any = None
    nonce: int | None = None


_HEAD = struct.Struct("<BIQH")


def encode_message(msg: Message) -> bytes:
    """Length-prefixed record: kind u8, view u32, cid u64, sender u16, payload."""
    kind = MsgKind(msg.kind)
    body = b""
    if msg.nonce is not None:
        body += struct.pack("<Q", msg.nonce)
    p = msg.payload
    if kind in (MsgKind.PROPOSE, MsgKind.DUMMY_PROPOSE):
        body += batch_bytes(p)
    elif kind in (MsgKind.WRITE, MsgKind.ACCEPT):
        body += struct.pack("<Q", p)
    elif kind == MsgKind.CLIENT_REQUEST:
        body += p.to_bytes()
    elif kind == MsgKind.CLIENT_REPLY:
        measure, client, seq = p[0]
        body += struct.pack("<BIQQ", measure, client, seq, p[1])
    elif kind == MsgKind.PROPOSE_RESPONSE and p is not None:
        body += batch_bytes(p)
    elif kind == MsgKind.MEASURE:
        body += p
    record = _HEAD.pack(kind, msg.view, msg.cid, msg.sender) + body
    return struct.pack("<I", len(record)) + record


def decode_message(data: bytes):
    """Split a record into ``(kind, view, cid, sender, payload_bytes)``."""
    (length,) = struct.unpack_from("<I", data, 0)
    if length + 4 != len(data):
        raise ValueError("length prefix does not match record size")
    kind, view, cid, sender = _HEAD.unpack_from(data, 4)
    return MsgKind(kind), view, cid, sender, data[4 + _HEAD.size:]


@dataclass
class AwareParams:
    enabled: bool = True
    alpha: float = DEFAULT_ALPHA
    calc_interval: int = 500
    omega: float = 0.0
    window: int = DEFAULT_WINDOW
    sync_period: int = DEFAULT_SYNC_PERIOD
    strategy: str = "auto"
    sa: SaParams = field(default_factory=SaParams)
    rounds: int = DEFAULT_ROUNDS
    leader_candidates: tuple[int, ...] | None = None
    probe_timeout_ms: float = 2000.0


@dataclass
class ProtocolParams:
    max_batch_size: int = 100
    request_timeout_ms: float = 2000.0
    # clients broadcast to every replica; forwarding only matters when they don't
    forward_requests: bool = False


@dataclass
class View:
    view_number: int
    config: WeightConfig
    shape: SystemShape


@dataclass
class Instance:
    cid: int
    view: int
    batch: Batch | None = None
    digest: int | None = None
    writes: dict = field(default_factory=dict)
    accepts: dict = field(default_factory=dict)
    sent_write: bool = False
    sent_accept: bool = False


@dataclass(frozen=True)
class CalcRecord:
    cid: int
    replica: int
    m_propose: np.ndarray
    m_write: np.ndarray
    current: ConfigCandidate
    best: ConfigCandidate
    reconfigure: bool
    leader_change: bool
    installed: WeightConfig

    def matrix_digest(self) -> bytes:
        return self.m_propose.tobytes() + self.m_write.tobytes()


class Replica:
    def __init__(self, rid: int, shape: SystemShape, config: WeightConfig, net,
                 aware: AwareParams | None = None, params: ProtocolParams | None = None,
                 rng: random.Random | None = None, observer=None):
        self.id = rid
        self.shape = shape
        self.n = shape.n
        self.net = net
        self.aware = aware or AwareParams()
        self.params = params or ProtocolParams()
        self.observer = observer
        self.rng = rng or random.Random(f"replica:{rid}")
        self.monitor = Monitor(rid, self.n, self.aware.window, self.rng)
        self.matrices = LatencyMatrixPair(self.n)
        # (first cid, view number, config), ascending by first cid
        self.schedule: list[tuple[int, int, WeightConfig]] = [(1, 0, config)]
        self.instances: dict[int, Instance] = {}
        self.decided: dict[int, int] = {}
        self.decide_time: dict[int, int] = {}
        self.delivered_upto = 0
        self.log: list[int] = []
        self.pending: dict = {}
        self.delivered_keys: set = set()
        self.proposed: dict[int, int] = {}
        self.propose_time: dict[int, int] = {}
        self.reproposals: dict[int, Batch] = {}
        self.deferred: list[Message] = []
        self.measure_seq = 0
        self.calc_records: list[CalcRecord] = []
        self.byz_zero_vectors = False
        self.byz_silent = False
        self.byz_colluders: set[int] = set()

    # -- views and configuration schedule ---------------------------------

    def _next_calc_point(self) -> int | None:
        if not self.aware.enabled:
            return None
        c = self.aware.calc_interval
        return (self.delivered_upto // c + 1) * c

    def view_at(self, cid: int):
        """(view number, config) for ``cid``; None while a calculation point
        before ``cid`` is still undelivered."""
        p = self._next_calc_point()
        if p is not None and cid > p:
            return None
        for start, view, cfg in reversed(self.schedule):
            if start <= cid:
                return view, cfg
        return self.schedule[0][1:]

    @property
    def current_view(self) -> View:
        _, view, cfg = self.schedule[-1]
        return View(view, cfg, self.shape)

    def is_leader(self) -> bool:
        return self.schedule[-1][2].leader == self.id

    def _weight(self, cfg: WeightConfig, sender: int) -> int:
        return self.shape.w_max if sender in cfg.r_max else self.shape.w_min

    # -- outbound ----------------------------------------------------------

    def _now(self) -> int:
        return self.net.now()

    def _send(self, dst: int, msg: Message):
        self.net.send(self.id, dst, msg)

    def _broadcast_probed(self, kind: MsgKind, view: int, cid: int, payload, probe: Kind | None):
        now = self._now() / NS_PER_MS
        for dst in range(self.n):
            nonce = None
            if probe is not None and dst != self.id:
                nonce = self.monitor.issue(probe, dst, now).nonce
            self._send(dst, Message(kind, view, cid, self.id, payload, nonce))

    # -- client requests ---------------------------------------------------

    def on_client_request(self, request: Request, from_client: bool = False):
        if request.key in self.delivered_keys or request.key in self.pending:
            return
        self.pending[request.key] = [request, self._now()]
        if from_client and self.params.forward_requests and not self.is_leader():
            leader = self.schedule[-1][2].leader
            self._send(leader, Message(MsgKind.CLIENT_REQUEST, self.schedule[-1][1], 0, self.id, request))
            return
        self.try_propose()

    def try_propose(self):
        # batches carried over a view change go first, in cid order
        while self.reproposals:
            cid = min(self.reproposals)
            if cid > self.delivered_upto + 1:
                break
            batch = self.reproposals.pop(cid)
            va = self.view_at(cid)
            if va is not None and va[1].leader == self.id:
                self._propose(cid, va[0], batch)
        cid = self.delivered_upto + 1
        va = self.view_at(cid)
        if va is None or cid in self.reproposals:
            return
        view, cfg = va
        if cfg.leader != self.id or self.proposed.get(cid, -1) >= view or not self.pending:
            return
        batch = tuple(r for r, _ in list(self.pending.values())[: self.params.max_batch_size])
        self._propose(cid, view, batch)

    def _propose(self, cid: int, view: int, batch: Batch):
        self.proposed[cid] = view
        self.propose_time[cid] = self._now()
        self._broadcast_probed(MsgKind.PROPOSE, view, cid, batch, Kind.PROPOSE)

    # -- message dispatch --------------------------------------------------

    def on_message(self, msg: Message):
        kind = msg.kind
        if kind == MsgKind.WRITE:
            self._respond(msg, MsgKind.WRITE_RESPONSE)
            self.on_write(msg)
        elif kind == MsgKind.ACCEPT:
            self.on_accept(msg)
        elif kind == MsgKind.PROPOSE:
            self._respond(msg, MsgKind.PROPOSE_RESPONSE, msg.payload)
            self.on_propose(msg)
        elif kind == MsgKind.WRITE_RESPONSE:
            self.monitor.respond(Kind.WRITE, msg.sender, self._now() / NS_PER_MS, Challenge(msg.nonce))
        elif kind == MsgKind.PROPOSE_RESPONSE:
            self.monitor.respond(Kind.PROPOSE, msg.sender, self._now() / NS_PER_MS, Challenge(msg.nonce))
        elif kind == MsgKind.DUMMY_PROPOSE:
            self._respond(msg, MsgKind.PROPOSE_RESPONSE, msg.payload)
        elif kind == MsgKind.CLIENT_REQUEST:
            self.on_client_request(msg.payload, from_client=msg.sender >= self.n)

    def _respond(self, msg: Message, kind: MsgKind, payload=None):
        if msg.nonce is not None and msg.sender != self.id:
            self._send(msg.sender, Message(kind, msg.view, msg.cid, self.id, payload, msg.nonce))

    def _instance(self, cid: int, view: int) -> Instance | None:
        inst = self.instances.get(cid)
        if inst is None or inst.view < view:
            old = inst
            inst = Instance(cid, view)
            if old is not None and old.batch is not None:
                inst.batch, inst.digest = old.batch, old.digest
            self.instances[cid] = inst
        elif inst.view > view:
            return None
        return inst

    def _accepts_view(self, msg: Message):
        """Config for the message's instance, deferring when not yet known."""
        if msg.cid <= self.delivered_upto - 2 * max(1, self.aware.calc_interval) and msg.cid not in self.instances:
            return None
        va = self.view_at(msg.cid)
        if va is None:
            self.deferred.append(msg)
            return None
        view, cfg = va
        if msg.view != view:
            return None
        return cfg

    def on_propose(self, msg: Message):
        cfg = self._accepts_view(msg)
        if cfg is None or msg.sender != cfg.leader:
            return
        inst = self._instance(msg.cid, msg.view)
        if inst is None:
            return
        if inst.batch is None or inst.digest != batch_digest(msg.payload):
            inst.batch = msg.payload
            inst.digest = batch_digest(msg.payload)
        omega = self.aware.omega if self.aware.enabled else 0.0
        if omega > 0 and dummy_proposer_for(msg.cid, omega, self.n, cfg.leader) == self.id:
            self._broadcast_probed(MsgKind.DUMMY_PROPOSE, msg.view, msg.cid, msg.payload, Kind.PROPOSE)
        self.try_write(msg.cid)
        self.try_deliver()

    def on_write(self, msg: Message):
        cfg = self._accepts_view(msg)
        if cfg is None:
            return
        inst = self._instance(msg.cid, msg.view)
        if inst is None or msg.sender in inst.writes:
            return
        inst.writes[msg.sender] = msg.payload
        self.try_accept(msg.cid)

    def on_accept(self, msg: Message):
        cfg = self._accepts_view(msg)
        if cfg is None:
            return
        inst = self._instance(msg.cid, msg.view)
        if inst is None or msg.sender in inst.accepts:
            return
        inst.accepts[msg.sender] = msg.payload
        self.try_decide(msg.cid)

    # -- phase transitions ---------------------------------------------------

    def _previous_done(self, cid: int) -> bool:
        return cid == 1 or cid - 1 <= self.delivered_upto or (cid - 1) in self.decided

    def try_write(self, cid: int):
        inst = self.instances.get(cid)
        if inst is None or inst.batch is None or inst.sent_write:
            return
        va = self.view_at(cid)
        if va is None or va[0] != inst.view or not self._previous_done(cid):
            return
        inst.sent_write = True
        if not self.byz_silent:
            self._broadcast_probed(MsgKind.WRITE, inst.view, cid, inst.digest, Kind.WRITE)

    def _quorum_digest(self, cfg: WeightConfig, votes: dict):
        tally: dict[int, int] = {}
        for sender, digest in votes.items():
            tally[digest] = tally.get(digest, 0) + self._weight(cfg, sender)
        for digest, weight in tally.items():
            if weight >= self.shape.q_scaled:
                return digest
        return None

    def try_accept(self, cid: int):
        inst = self.instances.get(cid)
        if inst is None or inst.sent_accept:
            return
        va = self.view_at(cid)
        if va is None or va[0] != inst.view:
            return
        digest = self._quorum_digest(va[1], inst.writes)
        if digest is None:
            return
        inst.sent_accept = True
        if not self.byz_silent:
            for dst in range(self.n):
                self._send(dst, Message(MsgKind.ACCEPT, inst.view, cid, self.id, digest))

    def try_decide(self, cid: int):
        if cid in self.decided:
            return
        inst = self.instances.get(cid)
        va = self.view_at(cid)
        if inst is None or va is None or va[0] != inst.view:
            return
        digest = self._quorum_digest(va[1], inst.accepts)
        if digest is None:
            return
        weight = sum(self._weight(va[1], s) for s, d in inst.accepts.items() if d == digest)
        if weight < self.shape.q_scaled:
            raise InvariantViolation("weighted safety", f"replica {self.id} cid {cid}")
        self.decided[cid] = digest
        self.decide_time[cid] = self._now()
        self.try_write(cid + 1)
        self.try_deliver()

    def try_deliver(self):
        while True:
            k = self.delivered_upto + 1
            digest = self.decided.get(k)
            inst = self.instances.get(k)
            if digest is None or inst is None or inst.batch is None or inst.digest != digest:
                return
            self._deliver(k, inst.batch, digest)

    def _deliver(self, cid: int, batch: Batch, digest: int):
        self.delivered_upto = cid
        self.log.append(digest)
        now = self._now()
        for req in batch:
            key = req.key
            if key in self.delivered_keys:
                continue
            self.delivered_keys.add(key)
            self.pending.pop(key, None)
            if req.measure is not None:
                sender, l_p, l_w = decode_measure(req.measure)
                apply_measure_message(self.matrices, sender, l_p, l_w, cid)
            else:
                self._send(req.client, Message(MsgKind.CLIENT_REPLY, self.current_view.view_number,
                                               cid, self.id, (key, digest)))
        # drop instance state far behind the delivered prefix
        old = cid - 2 * max(1, self.aware.calc_interval)
        if old in self.instances:
            del self.instances[old]
        if self.observer is not None:
            self.observer.on_deliver(self, cid, batch, digest, now)
        if self.aware.enabled:
            if cid % self.aware.sync_period == 0:
                self.issue_measure()
            if cid % self.aware.calc_interval == 0:
                self.optimize(cid)
                self._replay_deferred()
        self.try_write(cid + 1)
        self.try_accept(cid + 1)
        self.try_decide(cid + 1)
        self.try_propose()

    def _replay_deferred(self):
        msgs, self.deferred = self.deferred, []
        for msg in msgs:
            self.on_message_consensus(msg)

    def on_message_consensus(self, msg: Message):
        if msg.kind == MsgKind.PROPOSE:
            self.on_propose(msg)
        elif msg.kind == MsgKind.WRITE:
            self.on_write(msg)
        elif msg.kind == MsgKind.ACCEPT:
            self.on_accept(msg)

    # -- monitoring and self-optimization ------------------------------------

    def measurement_vectors(self):
        now_ms = self._now() / NS_PER_MS
        self.monitor.expire_unanswered(now_ms, self.aware.probe_timeout_ms)
        lw = list(self.monitor.snapshot_vector(Kind.WRITE).values)
        if self.aware.omega > 0:
            lp = list(self.monitor.snapshot_vector(Kind.PROPOSE).values)
            lp = [w if (not self.monitor.windows[Kind.PROPOSE].samples[j]) else p
                  for j, (p, w) in enumerate(zip(lp, lw))]
        else:
            lp = list(lw)
        if self.byz_zero_vectors:
            lp = [0.0] * self.n
            lw = [0.0] * self.n
        for peer in self.byz_colluders:
            lp[peer] = COLLUSION_CLAIM_MS
            lw[peer] = COLLUSION_CLAIM_MS
        return lp, lw

    def issue_measure(self):
        lp, lw = self.measurement_vectors()
        self.measure_seq += 1
        req = Request(self.id, self.measure_seq, encode_measure(self.id, lp, lw))
        view = self.current_view.view_number
        for dst in range(self.n):
            self._send(dst, Message(MsgKind.CLIENT_REQUEST, view, 0, self.id, req))

    def optimize(self, cid: int):
        aware = self.aware
        expire_stale(self.matrices, cid, aware.calc_interval)
        mp = sanitize(self.matrices.m_propose)
        mw = sanitize(self.matrices.m_write)
        view, cfg = self.schedule[-1][1], self.schedule[-1][2]
        model = LatencyModel(self.shape, mp, mw)
        current = ConfigCandidate(cfg, model.predict(cfg, aware.rounds))
        best = search(self.shape, mp, mw, cfg, seed=cid, strategy=aware.strategy,
                      leader_candidates=aware.leader_candidates, rounds=aware.rounds,
                      params=aware.sa, model=model)
        decision = decide(current, best, aware.alpha)
        installed = cfg
        if decision.reconfigure:
            installed = decision.config
            self.schedule.append((cid + 1, view + (1 if decision.leader_change else 0), installed))
        record = CalcRecord(cid, self.id, mp, mw, current, best, decision.reconfigure,
                            decision.leader_change, installed)
        self.calc_records.append(record)
        if self.observer is not None:
            self.observer.on_calc(self, record)

    # -- view change -----------------------------------------------------------

    def known_batches(self, from_cid: int) -> dict[int, Batch]:
        return {cid: inst.batch for cid, inst in self.instances.items()
                if cid >= from_cid and inst.batch is not None}

    def on_leader_timeout(self, new_view: int, new_leader: int, start_cid: int,
                          reproposals: dict[int, Batch] | None = None):
        """Install ``new_view`` led by ``new_leader`` from ``start_cid`` on."""
        base = self.view_at(start_cid)
        cfg = base[1] if base is not None else self.schedule[-1][2]
        if new_leader not in cfg.r_max:
            holders = [i for i in cfg.r_max if i != cfg.leader]
            cfg = cfg.swap(min(holders), new_leader)
        cfg = WeightConfig(cfg.r_max, new_leader, cfg.n)
        self.schedule = [e for e in self.schedule if e[0] < start_cid]
        self.schedule.append((start_cid, new_view, cfg))
        for cid, inst in list(self.instances.items()):
            if cid >= start_cid:
                fresh = Instance(cid, new_view, inst.batch, inst.digest)
                self.instances[cid] = fresh
        self.deferred = []
        now = self._now()
        for entry in self.pending.values():
            entry[1] = now
        if new_leader == self.id:
            self.reproposals = dict(reproposals or {})
            self.proposed = {c: v for c, v in self.proposed.items() if c < start_cid}
        self.try_propose()
