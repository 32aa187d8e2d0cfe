"""Deterministic discrete-event network, clients and fault injection.

Time is an integer count of nanoseconds. Events are ordered by
``(time, sequence number)``, so a scenario and seed always produce the same
trace. Every randomness consumer (a link sender, a client) owns its own
``random.Random`` stream derived from the seed and the entity id.
"""

from __future__ import annotations

import copy
import heapq
import json
import math
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .model import SystemShape, derive_shape, make_config, parse_config
from .optimizer import SaParams
from .predictor import NS_PER_MS, to_ns
from .protocol import (
    AwareParams,
    InvariantViolation,
    Message,
    MsgKind,
    ProtocolParams,
    Replica,
    Request,
)

WATCHDOG_PERIOD_MS = 100
THINK_TIME_MS = 150.0


class ScenarioError(ValueError):
    pass


# -- scenario format -----------------------------------------------------------

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer"}
_REPLICA = {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "string"}]}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "run"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object", "additionalProperties": False, "required": ["f", "delta"],
            "properties": {"f": {"type": "integer", "minimum": 1}, "delta": {"type": "integer", "minimum": 0}},
        },
        "matrix_ms": {"type": "array", "items": {"type": "array", "items": _NONNEG}},
        "fixture": {"type": "string"},
        "labels": {"type": "array", "items": {"type": "string"}},
        "start": {
            "type": "object", "additionalProperties": False, "required": ["leader", "r_max"],
            "properties": {"leader": _REPLICA, "r_max": {"type": "array", "items": _REPLICA}},
        },
        "jitter": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["none", "uniform", "normal"]}, "param_ms": _NONNEG},
        },
        "aware": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "alpha": {"type": "number", "minimum": 1},
                "calc_interval": {"type": "integer", "minimum": 1},
                "omega": {"type": "number", "minimum": 0, "maximum": 1},
                "window": {"type": "integer", "minimum": 1},
                "sync_period": {"type": "integer", "minimum": 1},
                "strategy": {"enum": ["auto", "exhaustive", "annealing"]},
                "rounds": {"type": "integer", "minimum": 1},
                "leader_candidates": {"type": "array", "items": _REPLICA},
                "probe_timeout_ms": _NONNEG,
                "sa": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"t0": _NUM, "theta": _NUM, "threshold": _NUM},
                },
            },
        },
        "protocol": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "max_batch_size": {"type": "integer", "minimum": 1},
                "request_timeout_ms": {"type": "number", "exclusiveMinimum": 0},
                "forward_requests": {"type": "boolean"},
            },
        },
        "clients": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["attach"],
                "properties": {
                    "attach": _REPLICA,
                    "count": {"type": "integer", "minimum": 1},
                    "requests": {"type": "integer", "minimum": 1},
                    "reply_quorum": {"type": "integer", "minimum": 1},
                    "think_ms": _NONNEG,
                },
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["action"],
                "properties": {
                    "at_ms": _NONNEG,
                    "at_cid": {"type": "integer", "minimum": 0},
                    "action": {"enum": ["crash", "add_delay", "remove_delay", "byz_zero_vectors",
                                        "byz_pair_collusion", "byz_silent_consensus"]},
                    "replica": _REPLICA,
                    "replicas": {"type": "array", "items": _REPLICA},
                    "out_ms": _NONNEG,
                    "jitter_ms": _NONNEG,
                },
            },
        },
        "run": {
            "type": "object", "additionalProperties": False, "required": ["seed"],
            "properties": {
                "seed": _INT,
                "horizon_ms": {"type": "number", "exclusiveMinimum": 0},
                "total_requests": {"type": "integer", "minimum": 1},
            },
        },
    },
}

FAULT_ACTIONS = {"crash", "byz_zero_vectors", "byz_pair_collusion", "byz_silent_consensus"}


def load_fixture(name: str) -> dict:
    ref = resources.files("aware.fixtures").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ScenarioError(f"unknown fixture {name!r}")
    return json.loads(ref.read_text(encoding="utf-8"))


@dataclass
class FaultEvent:
    action: str
    replicas: tuple[int, ...]
    at_ms: float | None = None
    at_cid: int | None = None
    out_ms: float = 0.0
    jitter_ms: float = 0.0


@dataclass
class ClientSpec:
    attach: int
    count: int = 1
    requests: int | None = None
    reply_quorum: int | None = None
    think_ms: float = THINK_TIME_MS


@dataclass
class Scenario:
    shape: SystemShape
    matrix_ms: np.ndarray
    labels: list[str]
    start: object
    jitter_kind: str
    jitter_ms: float
    aware: AwareParams
    protocol: ProtocolParams
    clients: list[ClientSpec]
    events: list[FaultEvent]
    seed: int
    horizon_ms: float | None
    total_requests: int | None
    name: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def load_scenario(source) -> Scenario:
    """Validate a scenario (path, JSON text or dict) and resolve names.

    Raises :class:`ScenarioError` describing the first problem found.
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = str(source)
        try:
            if not text.lstrip().startswith("{"):
                with open(text, encoding="utf-8") as fh:
                    text = fh.read()
            raw = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario: {exc}") from exc
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"scenario invalid at {where}: {exc.message}") from exc

    try:
        shape = derive_shape(raw["system"]["f"], raw["system"]["delta"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    n = shape.n

    fixture = load_fixture(raw["fixture"]) if "fixture" in raw else {}
    if "matrix_ms" in raw and fixture:
        raise ScenarioError("give either matrix_ms or fixture, not both")
    matrix = raw.get("matrix_ms", fixture.get("matrix_ms"))
    if matrix is None:
        raise ScenarioError("scenario needs matrix_ms or fixture")
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (n, n):
        raise ScenarioError(f"matrix is {matrix.shape}, system needs {n}x{n}")
    if np.any(np.diag(matrix) != 0):
        raise ScenarioError("matrix diagonal must be 0")
    labels = list(raw.get("labels", fixture.get("labels", [str(i) for i in range(n)])))
    if len(labels) != n:
        raise ScenarioError(f"{len(labels)} labels for {n} replicas")

    def rid(x) -> int:
        if isinstance(x, str):
            if x in labels:
                return labels.index(x)
            raise ScenarioError(f"unknown replica label {x!r}")
        if not 0 <= x < n:
            raise ScenarioError(f"replica {x} out of range")
        return x

    try:
        if "start" in raw:
            start = make_config(shape, rid(raw["start"]["leader"]), [rid(x) for x in raw["start"]["r_max"]])
        else:
            start = make_config(shape, 0, range(shape.u))
    except ValueError as exc:
        raise ScenarioError(f"bad start config: {exc}") from exc

    jit = raw.get("jitter", {"kind": "none"})
    a = raw.get("aware", {})
    try:
        sa = SaParams(**a.get("sa", {}))
    except ValueError as exc:
        raise ScenarioError(f"bad annealing parameters: {exc}") from exc
    cands = a.get("leader_candidates")
    aware = AwareParams(
        enabled=a.get("enabled", True),
        alpha=a.get("alpha", AwareParams.alpha),
        calc_interval=a.get("calc_interval", AwareParams.calc_interval),
        omega=a.get("omega", 0.0),
        window=a.get("window", AwareParams.window),
        sync_period=a.get("sync_period", AwareParams.sync_period),
        strategy=a.get("strategy", "auto"),
        sa=sa,
        rounds=a.get("rounds", AwareParams.rounds),
        leader_candidates=tuple(rid(x) for x in cands) if cands is not None else None,
        probe_timeout_ms=a.get("probe_timeout_ms", AwareParams.probe_timeout_ms),
    )
    protocol = ProtocolParams(**raw.get("protocol", {}))

    clients = [ClientSpec(rid(c["attach"]), c.get("count", 1), c.get("requests"),
                          c.get("reply_quorum"), c.get("think_ms", THINK_TIME_MS))
               for c in raw.get("clients", [])]
    for c in clients:
        if c.reply_quorum is not None and c.reply_quorum > n:
            raise ScenarioError(f"reply quorum {c.reply_quorum} exceeds n={n}")

    events = []
    for e in raw.get("events", []):
        if ("at_ms" in e) == ("at_cid" in e):
            raise ScenarioError(f"event {e} needs exactly one of at_ms / at_cid")
        if e["action"] == "byz_pair_collusion":
            reps = tuple(rid(x) for x in e.get("replicas", []))
            if len(reps) != 2 or reps[0] == reps[1]:
                raise ScenarioError("byz_pair_collusion needs two distinct replicas")
        else:
            if "replica" not in e:
                raise ScenarioError(f"event {e['action']} needs a replica")
            reps = (rid(e["replica"]),)
        events.append(FaultEvent(e["action"], reps, e.get("at_ms"), e.get("at_cid"),
                                 e.get("out_ms", 0.0), e.get("jitter_ms", 0.0)))
    faulty = set()
    for e in events:
        if e.action in FAULT_ACTIONS:
            faulty.update(e.replicas)
    if len(faulty) > shape.f:
        raise ScenarioError(f"{len(faulty)} faulty replicas {sorted(faulty)} exceed f={shape.f}")

    run = raw["run"]
    if "horizon_ms" not in run and "total_requests" not in run:
        raise ScenarioError("run needs horizon_ms or total_requests")
    if "total_requests" in run and not clients:
        raise ScenarioError("total_requests needs at least one client")
    return Scenario(shape, matrix, labels, start, jit["kind"], jit.get("param_ms", 0.0), aware,
                    protocol, clients, events, run["seed"], run.get("horizon_ms"),
                    run.get("total_requests"), raw.get("name", ""), raw)


# -- metrics ---------------------------------------------------------------------


def trimmed_mean(values) -> float:
    """Mean of the 11th to 90th percentile of ``values``."""
    x = sorted(values)
    if not x:
        return math.nan
    lo, hi = int(0.1 * len(x)), math.ceil(0.9 * len(x))
    core = x[lo:hi] or x
    return sum(core) / len(core)


@dataclass(frozen=True)
class InstanceRow:
    cid: int
    decide_time_ms: float
    leader: int
    config: str
    latency_ms: float


@dataclass(frozen=True)
class ClientRow:
    client: int
    req_id: int
    send_ms: float
    latency_ms: float


@dataclass(frozen=True)
class EventRow:
    time_ms: float
    kind: str
    detail: str


@dataclass
class MetricsLog:
    labels: list[str]
    instances: list[InstanceRow] = field(default_factory=list)
    clients: list[ClientRow] = field(default_factory=list)
    events: list[EventRow] = field(default_factory=list)
    calcs: list = field(default_factory=list)
    end_ms: float = 0.0

    def client_latencies(self, client=None, t0=-math.inf, t1=math.inf):
        return [r.latency_ms for r in self.clients
                if (client is None or r.client == client) and t0 <= r.send_ms < t1]

    def trimmed_means(self, t0=-math.inf, t1=math.inf) -> dict[int, float]:
        out = {}
        for c in sorted({r.client for r in self.clients}):
            vals = self.client_latencies(c, t0, t1)
            if vals:
                out[c] = trimmed_mean(vals)
        return out

    def config_periods(self):
        """Consecutive runs of instances under one config: (label, t_start, t_end)."""
        out = []
        for row in self.instances:
            if out and out[-1][0] == row.config:
                out[-1][2] = row.decide_time_ms
            else:
                out.append([row.config, row.decide_time_ms, row.decide_time_ms])
        return [tuple(p) for p in out]

    def events_of(self, kind: str):
        return [e for e in self.events if e.kind == kind]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for rows in (self.instances, self.clients, self.events):
            for r in rows:
                h.update(repr(r).encode())
        return h.hexdigest()


# -- network ---------------------------------------------------------------------------


class Simulation:
    """One scenario's event loop; replicas are ids 0..n-1, clients n and up."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.shape = scenario.shape
        n = self.n = self.shape.n
        self.base_ns = to_ns(scenario.matrix_ms)
        self.time = 0
        self._heap: list = []
        self._seq = 0
        self._last_arrival: dict[tuple[int, int], int] = {}
        self.crashed: set[int] = set()
        self.byzantine: set[int] = set()
        self.delays: dict[int, tuple[int, float]] = {}
        self.log = MetricsLog(list(scenario.labels))
        self._streams: dict[str, random.Random] = {}
        self.replicas = [
            Replica(i, self.shape, scenario.start, self, copy.deepcopy(scenario.aware),
                    copy.deepcopy(scenario.protocol), self.stream("replica", i), self)
            for i in range(n)
        ]
        self._agreed: dict[int, int] = {}
        self._calc_seen: dict[int, tuple] = {}
        self._instance_logged: set[int] = set()
        self._cid_events = sorted((e for e in scenario.events if e.at_cid is not None),
                                  key=lambda e: e.at_cid)
        self._max_delivered = 0
        self.clients: list[_Client] = []
        k = n
        for spec in scenario.clients:
            for _ in range(spec.count):
                self.clients.append(_Client(self, k, spec))
                k += 1
        self.requests_done = 0
        self.view_number = 0

    # -- plumbing used by replicas ------------------------------------------------

    def stream(self, kind: str, ident: int) -> random.Random:
        key = f"{kind}:{ident}"
        if key not in self._streams:
            self._streams[key] = random.Random(f"{self.seed}:{key}")
        return self._streams[key]

    def now(self) -> int:
        return self.time

    def schedule(self, at_ns: int, fn, *args):
        self._seq += 1
        heapq.heappush(self._heap, (at_ns, self._seq, fn, args))

    def _location(self, endpoint: int) -> int:
        return endpoint if endpoint < self.n else self.clients[endpoint - self.n].spec.attach

    def _jitter_ns(self, rng: random.Random) -> int:
        kind, j = self.sc.jitter_kind, self.sc.jitter_ms
        if kind == "none" or j == 0:
            return 0
        if kind == "uniform":
            x = rng.uniform(0, j)
        else:
            x = max(0.0, rng.gauss(0, j))
        return int(round(x * NS_PER_MS))

    def send(self, src: int, dst: int, msg: Message):
        if src in self.crashed or dst in self.crashed:
            return
        lat = 0
        if src != dst:
            a, b = self._location(src), self._location(dst)
            rng = self.stream("link", src)
            lat = int(self.base_ns[a, b]) + self._jitter_ns(rng)
            if src in self.delays:
                out_ns, jit_ms = self.delays[src]
                # netem style: out +- jitter, uniformly
                lat += max(0, out_ns + int(round(rng.uniform(-jit_ms, jit_ms) * NS_PER_MS)))
        arrival = max(self.time + lat, self._last_arrival.get((src, dst), 0))
        self._last_arrival[(src, dst)] = arrival
        self.schedule(arrival, self._deliver, dst, msg)

    def _deliver(self, dst: int, msg: Message):
        if dst in self.crashed:
            return
        if dst < self.n:
            self.replicas[dst].on_message(msg)
        else:
            self.clients[dst - self.n].on_reply(msg)

    def correct(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.crashed and i not in self.byzantine]

    def alive(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.crashed]

    # -- observer hooks -----------------------------------------------------------

    def on_deliver(self, replica: Replica, cid: int, batch, digest: int, now: int):
        rid = replica.id
        if rid not in self.byzantine:
            prev = self._agreed.get(cid)
            if prev is None:
                self._agreed[cid] = digest
            elif prev != digest:
                raise InvariantViolation("agreement", f"cid {cid}: replica {rid} delivered a different batch")
            if len(replica.log) != cid:
                raise InvariantViolation("total order", f"replica {rid} delivered cid {cid} after {len(replica.log) - 1}")
        va = replica.view_at(cid)
        if va is not None and va[1].leader == rid and cid not in self._instance_logged:
            self._instance_logged.add(cid)
            t_dec = replica.decide_time.get(cid, now)
            t_prop = replica.propose_time.get(cid)
            lat = (t_dec - t_prop) / NS_PER_MS if t_prop is not None else math.nan
            self.log.instances.append(InstanceRow(cid, t_dec / NS_PER_MS, rid, va[1].label(), lat))
        if cid > self._max_delivered:
            self._max_delivered = cid
            while self._cid_events and self._cid_events[0].at_cid <= cid:
                self.inject(self._cid_events.pop(0))

    def on_calc(self, replica: Replica, record):
        if replica.id in self.byzantine:
            return
        sig = (record.matrix_digest(), record.best.config, record.installed, record.reconfigure)
        prev = self._calc_seen.get(record.cid)
        if prev is None:
            self._calc_seen[record.cid] = sig
            self.log.calcs.append(record)
            if record.reconfigure:
                kind = "leader_change" if record.leader_change else "reconfigure"
                self.event(kind, f"cid={record.cid} {record.current.config.label()}->{record.installed.label()} "
                                 f"predicted {record.current.predicted:.3f}->{record.best.predicted:.3f}")
        elif prev != sig:
            raise InvariantViolation("matrix agreement",
                                     f"cid {record.cid}: replica {replica.id} computed a different decision")

    def event(self, kind: str, detail: str):
        self.log.events.append(EventRow(self.time / NS_PER_MS, kind, detail))

    # -- faults ---------------------------------------------------------------------

    def inject(self, ev: FaultEvent):
        names = ",".join(self.sc.labels[r] for r in ev.replicas)
        if ev.action in FAULT_ACTIONS:
            faulty = self.crashed | self.byzantine | set(ev.replicas)
            if len(faulty) > self.shape.f:
                raise ScenarioError(f"{ev.action}({names}) would exceed f={self.shape.f}")
        if ev.action == "crash":
            self.crashed.update(ev.replicas)
        elif ev.action == "add_delay":
            self.delays[ev.replicas[0]] = (int(round(ev.out_ms * NS_PER_MS)), ev.jitter_ms)
        elif ev.action == "remove_delay":
            self.delays.pop(ev.replicas[0], None)
        elif ev.action == "byz_zero_vectors":
            self.byzantine.add(ev.replicas[0])
            self.replicas[ev.replicas[0]].byz_zero_vectors = True
        elif ev.action == "byz_pair_collusion":
            a, b = ev.replicas
            self.byzantine.update(ev.replicas)
            self.replicas[a].byz_colluders.add(b)
            self.replicas[b].byz_colluders.add(a)
        elif ev.action == "byz_silent_consensus":
            self.byzantine.add(ev.replicas[0])
            self.replicas[ev.replicas[0]].byz_silent = True
        detail = names
        if ev.action == "add_delay":
            detail += f" out={ev.out_ms}ms jitter={ev.jitter_ms}ms"
        self.event(ev.action, detail)

    def _watchdog(self):
        timeout = int(self.sc.protocol.request_timeout_ms * NS_PER_MS)
        correct = self.correct()
        stuck = any(now_pending < self.time - timeout
                    for i in correct
                    for _, now_pending in self.replicas[i].pending.values())
        if stuck:
            self.view_change()
        self.schedule(self.time + WATCHDOG_PERIOD_MS * NS_PER_MS, self._watchdog)

    def view_change(self):
        alive = self.alive()
        lead = max(alive, key=lambda i: (self.replicas[i].current_view.view_number, -i))
        cur_view = self.replicas[lead].current_view
        new_view = cur_view.view_number + 1
        old_leader = cur_view.config.leader
        new_leader = next(j % self.n for j in range(old_leader + 1, old_leader + 1 + self.n)
                          if j % self.n in alive)
        correct = self.correct()
        start = min(self.replicas[i].delivered_upto for i in correct) + 1
        reproposals = {}
        for i in correct:
            r = self.replicas[i]
            for cid, batch in sorted(r.known_batches(start).items()):
                decided = cid in self._agreed or r.decided.get(cid) is not None
                if cid not in reproposals or decided:
                    if cid in self._agreed:
                        inst = r.instances.get(cid)
                        if inst is None or inst.digest != self._agreed[cid]:
                            continue
                    reproposals.setdefault(cid, batch)
        # only a gapless prefix can be re-run in order
        chain, k = {}, start
        while k in reproposals:
            chain[k] = reproposals[k]
            k += 1
        self.view_number = new_view
        self.event("view_change", f"view={new_view} leader={self.sc.labels[new_leader]} start_cid={start}")
        for i in alive:
            self.replicas[i].on_leader_timeout(new_view, new_leader, start, chain)

    # -- main loop -------------------------------------------------------------------

    def run(self) -> MetricsLog:
        sc = self.sc
        horizon = math.inf if sc.horizon_ms is None else int(sc.horizon_ms * NS_PER_MS)
        for ev in sc.events:
            if ev.at_ms is not None:
                self.schedule(int(round(ev.at_ms * NS_PER_MS)), self.inject, ev)
        for c in self.clients:
            c.start()
        self.schedule(WATCHDOG_PERIOD_MS * NS_PER_MS, self._watchdog)
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            if t > horizon:
                self.time = horizon
                break
            self.time = t
            fn(*args)
            if sc.total_requests is not None and self.requests_done >= sc.total_requests:
                break
            if not any(c.active for c in self.clients) and self.clients and sc.total_requests is None \
                    and sc.horizon_ms is None:
                break
        self.log.end_ms = self.time / NS_PER_MS
        self.log.instances.sort(key=lambda r: r.cid)
        return self.log


class _Client:
    """Closed-loop client: one outstanding request, broadcast to every replica."""

    def __init__(self, sim: Simulation, cid: int, spec: ClientSpec):
        self.sim = sim
        self.id = cid
        self.spec = spec
        self.rng = sim.stream("client", cid)
        self.quorum = spec.reply_quorum or 2 * sim.shape.f + 1
        self.seq = 0
        self.sent_at = 0
        self.replies: dict = {}
        self.active = True

    def start(self):
        self._think()

    def _think(self):
        if self.spec.requests is not None and self.seq >= self.spec.requests:
            self.active = False
            return
        delay = int(round(self.rng.uniform(0, self.spec.think_ms) * NS_PER_MS))
        self.sim.schedule(self.sim.time + delay, self._send)

    def _send(self):
        self.seq += 1
        self.sent_at = self.sim.time
        self.replies = {}
        req = Request(self.id, self.seq)
        for r in range(self.sim.n):
            self.sim.send(self.id, r, Message(MsgKind.CLIENT_REQUEST, 0, 0, self.id, req))

    def on_reply(self, msg: Message):
        key, digest = msg.payload
        if key[1] != self.id or key[2] != self.seq or self.replies is None:
            return
        self.replies.setdefault(digest, set()).add(msg.sender)
        if len(self.replies[digest]) >= self.quorum:
            self.replies = None
            lat = (self.sim.time - self.sent_at) / NS_PER_MS
            self.sim.log.clients.append(ClientRow(self.id, self.seq, self.sent_at / NS_PER_MS, lat))
            self.sim.requests_done += 1
            self._think()


def run(scenario, seed: int | None = None) -> MetricsLog:
    """Execute a scenario (anything :func:`load_scenario` accepts)."""
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    return Simulation(sc, seed).run()


def sim_threads() -> int:
    try:
        return max(1, int(os.environ.get("AWARE_SIM_THREADS", "1")))
    except ValueError:
        return 1


def run_many(scenarios, seeds=None, threads: int | None = None) -> list[MetricsLog]:
    """Run independent scenarios, one per worker thread."""
    scenarios = list(scenarios)
    seeds = list(seeds) if seeds is not None else [None] * len(scenarios)
    threads = threads or sim_threads()
    if threads == 1:
        return [run(s, sd) for s, sd in zip(scenarios, seeds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, scenarios, seeds))


# -- independent oracle -------------------------------------------------------------


def oracle_mean_leader_latency(shape: SystemShape, config, m_p, m_w, instances: int) -> float:
    """Mean interval between the leader's decisions, by plain event simulation.

    Saturated pipeline, no jitter: the leader proposes instance k+1 the moment
    it decides k, and a replica votes WRITE for k once it has both the
    proposal and its own decision of k-1.
    """
    n = shape.n
    mp = to_ns(m_p).tolist()
    mw = to_ns(m_w).tolist()
    weights = config.scaled_weights(shape)
    q = shape.q_scaled
    leader = config.leader
    heap = []
    seq = 0

    def push(t, *ev):
        nonlocal seq
        seq += 1
        heapq.heappush(heap, (t, seq, ev))

    have_proposal = [set() for _ in range(n)]
    decided = [set() for _ in range(n)]
    wrote = [set() for _ in range(n)]
    accepted = [set() for _ in range(n)]
    write_w = [dict() for _ in range(n)]
    acc_w = [dict() for _ in range(n)]
    last_decision = 0

    def propose(t, k):
        for i in range(n):
            push(t + mp[leader][i], "propose", i, k)

    def maybe_write(t, i, k):
        if k in wrote[i] or k not in have_proposal[i] or (k > 1 and k - 1 not in decided[i]):
            return
        wrote[i].add(k)
        for j in range(n):
            push(t + mw[i][j], "write", j, k, i)

    propose(0, 1)
    while heap:
        t, _, ev = heapq.heappop(heap)
        kind, i, k = ev[0], ev[1], ev[2]
        if kind == "propose":
            have_proposal[i].add(k)
            maybe_write(t, i, k)
        elif kind == "write":
            before = write_w[i].get(k, 0)
            write_w[i][k] = before + weights[ev[3]]
            if before < q <= write_w[i][k] and k not in accepted[i]:
                accepted[i].add(k)
                for j in range(n):
                    push(t + mw[i][j], "accept", j, k, i)
        elif kind == "accept":
            before = acc_w[i].get(k, 0)
            acc_w[i][k] = before + weights[ev[3]]
            if before < q <= acc_w[i][k]:
                decided[i].add(k)
                if i == leader:
                    last_decision = t
                    if k == instances:
                        return last_decision / instances / NS_PER_MS
                    propose(t, k + 1)
                maybe_write(t, i, k + 1)
    return math.inf
