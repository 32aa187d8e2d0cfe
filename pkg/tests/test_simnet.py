import copy
import json
import math
from importlib import resources

import numpy as np
import pytest

from aware.model import derive_shape, make_config
from aware.optimizer import exhaustive_search
from aware.predictor import predict_latency
from aware.simnet import (
    ScenarioError,
    Simulation,
    load_fixture,
    load_scenario,
    oracle_mean_leader_latency,
    run,
    run_many,
    trimmed_mean,
)

S5 = derive_shape(1, 1)


def base(**over):
    sc = {
        "fixture": "fig7",
        "system": {"f": 1, "delta": 1},
        "start": {"leader": "Sydney", "r_max": ["Sydney", "Sao Paulo"]},
        "aware": {"calc_interval": 100, "strategy": "exhaustive"},
        "clients": [{"attach": i} for i in range(5)],
        "run": {"seed": 3, "horizon_ms": 60000},
    }
    sc.update(over)
    return sc


def saturated(**over):
    sc = base(aware={"enabled": False}, clients=[{"attach": i, "count": 8, "think_ms": 0} for i in range(5)])
    sc.update(over)
    return sc


def test_fixture_contents(fig7):
    assert fig7["labels"] == ["Oregon", "Ireland", "Sydney", "Sao Paulo", "Virginia"]
    m = np.array(fig7["matrix_ms"])
    assert m.shape == (5, 5) and np.array_equal(m, m.T) and not np.diag(m).any()
    assert load_fixture("fig7") == fig7
    with pytest.raises(ScenarioError):
        load_fixture("nope")


def test_trimmed_mean():
    xs = list(range(1, 11))  # keeps indices 1..8
    assert trimmed_mean(xs) == sum(range(2, 10)) / 8
    assert trimmed_mean([5.0]) == 5.0
    assert math.isnan(trimmed_mean([]))


def test_same_seed_same_log():
    sc = base(jitter={"kind": "uniform", "param_ms": 10})
    a, b = run(sc), run(sc)
    assert a.fingerprint() == b.fingerprint()
    assert a.instances == b.instances and a.clients == b.clients
    assert run(sc, seed=4).fingerprint() != a.fingerprint()


def test_run_many_matches_sequential():
    scs = [base(run={"seed": s, "horizon_ms": 20000}) for s in (1, 2, 3)]
    seq = [log.fingerprint() for log in run_many(scs, threads=1)]
    par = [log.fingerprint() for log in run_many(scs, threads=3)]
    assert seq == par


class _Tap(Simulation):
    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.order = {}
        self.seen = {}

    def send(self, src, dst, msg):
        if src not in self.crashed and dst not in self.crashed:
            self.order.setdefault((src, dst), []).append(msg)
        super().send(src, dst, msg)

    def _deliver(self, dst, msg):
        self.seen.setdefault((msg.sender, dst), []).append(msg)
        super()._deliver(dst, msg)


def test_fifo_per_link_under_jitter():
    sc = load_scenario(base(jitter={"kind": "normal", "param_ms": 40}, run={"seed": 1, "horizon_ms": 8000}))
    sim = _Tap(sc)
    sim.run()
    for link, got in sim.seen.items():
        sent = sim.order[link]
        assert [id(m) for m in got] == [id(m) for m in sent[: len(got)]]


@pytest.mark.parametrize("mutate,needle", [
    (lambda s: s.update(extra=1), "extra"),
    (lambda s: s["aware"].update(bogus=True), "bogus"),
    (lambda s: s.pop("run"), "run"),
    (lambda s: s["run"].pop("horizon_ms"), "horizon_ms"),
    (lambda s: s.update(fixture=None, matrix_ms=[[0, 1], [1, 0]]) or s.pop("fixture"), "5x5"),
    (lambda s: s.pop("fixture") and s.update(matrix_ms=(np.eye(5) * 3).tolist()), "diagonal"),
    (lambda s: s["start"].update(leader="Mars"), "Mars"),
    (lambda s: s["start"].update(leader="Oregon"), "start"),
    (lambda s: s.update(events=[{"action": "crash", "replica": 0}]), "at_ms"),
    (lambda s: s.update(events=[{"at_ms": 1, "at_cid": 2, "action": "crash", "replica": 0}]), "at_ms"),
    (lambda s: s.update(events=[{"at_ms": 1, "action": "crash", "replica": 0},
                                {"at_ms": 2, "action": "byz_zero_vectors", "replica": 1}]), "f=1"),
    (lambda s: s.update(events=[{"at_ms": 1, "action": "byz_pair_collusion", "replicas": [1, 1]}]), "distinct"),
    (lambda s: s["clients"][0].update(reply_quorum=6), "reply quorum"),
    (lambda s: s.update(jitter={"kind": "pareto"}), "jitter"),
    (lambda s: s["aware"].update(sa={"t0": 0.1}), "annealing"),
])
def test_invalid_scenarios_rejected(mutate, needle):
    sc = base()
    mutate(sc)
    with pytest.raises(ScenarioError, match=needle):
        load_scenario(sc)


def test_scenario_from_text_and_path(tmp_path):
    text = json.dumps(base())
    assert load_scenario(text).start == make_config(S5, 2, [2, 3])
    p = tmp_path / "s.json"
    p.write_text(text)
    assert load_scenario(str(p)).labels[3] == "Sao Paulo"
    with pytest.raises(ScenarioError):
        load_scenario(str(tmp_path / "missing.json"))
    with pytest.raises(ScenarioError):
        load_scenario("{not json")


def test_oracle_examples(fig7b):
    z = np.zeros((5, 5))
    cfg = make_config(S5, 0, [0, 1])
    assert oracle_mean_leader_latency(S5, cfg, z, z, 100) == 0
    best = exhaustive_search(S5, fig7b, fig7b)
    o = oracle_mean_leader_latency(S5, best.config, fig7b, fig7b, 1000)
    assert abs(o - best.predicted) / o <= 1e-3


def test_saturated_steady_interval_is_constant_and_predicted(fig7b):
    log = run(saturated())
    times = [r.decide_time_ms for r in log.instances]
    gaps = {round(b - a, 9) for a, b in zip(times[1:], times[2:])}
    assert len(gaps) == 1
    assert gaps.pop() == predict_latency(S5, make_config(S5, 2, [2, 3]), fig7b, fig7b)


def test_reconfigures_to_optimum_and_clients_gain(fig7b):
    sc = base(aware={"calc_interval": 500, "strategy": "exhaustive"}, run={"seed": 5, "horizon_ms": 300000})
    log = run(sc)
    rec = [e for e in log.events if e.kind in ("reconfigure", "leader_change")]
    assert rec and rec[0].detail.startswith("cid=500 2:2,3->")
    first = log.calcs[0]
    assert first.cid == 500 and first.reconfigure
    assert first.best.predicted == exhaustive_search(S5, fig7b, fig7b).predicted == 143.0
    assert log.instances[500].config == first.installed.label()  # cid 501
    assert log.instances[499].config == "2:2,3"
    t = rec[0].time_ms
    before, after = log.trimmed_means(0, t), log.trimmed_means(t + 5000)
    assert all(after[c] < before[c] for c in before)


def test_every_calc_point_agrees_and_is_logged_once():
    log = run(base(run={"seed": 2, "horizon_ms": 120000}))
    cids = [r.cid for r in log.calcs]
    assert cids == sorted(set(cids)) and cids[0] == 100


def test_crash_makes_row_infinite():
    sc = base(events=[{"at_cid": 100, "action": "crash", "replica": 3}], run={"seed": 1, "horizon_ms": 200000})
    log = run(sc)
    late = [r for r in log.calcs if r.cid >= 300]
    assert late
    row = late[-1].m_write[3]
    assert row[3] == 0 and all(math.isinf(x) for i, x in enumerate(row) if i != 3)
    assert all(math.isinf(x) for i, x in enumerate(late[-1].m_write[:, 3]) if i != 3)


def test_zero_vector_liar_is_bounded(fig7b):
    sc = base(events=[{"at_ms": 0, "action": "byz_zero_vectors", "replica": 4}])
    log = run(sc)
    m = log.calcs[-1].m_write
    assert list(m[4, :4]) == [40, 35, 99, 70] == list(fig7b[4, :4])
    assert list(m[:4, 4]) == [40, 35, 99, 70]


def test_silent_consensus_replica_keeps_system_live():
    sc = base(events=[{"at_ms": 1000, "action": "byz_silent_consensus", "replica": 1}],
              run={"seed": 1, "horizon_ms": 40000})
    log = run(sc)
    assert len(log.instances) > 50 and not log.events_of("view_change")


def _mesh(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(20, 150, (n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0)
    return a.tolist()


def test_pair_collusion_claim_survives_sanitization():
    sc = {
        "system": {"f": 2, "delta": 2}, "matrix_ms": _mesh(9, 3),
        "aware": {"calc_interval": 100},
        "clients": [{"attach": i} for i in range(9)],
        "events": [{"at_ms": 1000, "action": "byz_pair_collusion", "replicas": [3, 4]}],
        "run": {"seed": 1, "horizon_ms": 60000},
    }
    log = run(sc)
    m = log.calcs[-1].m_write
    assert m[3, 4] == m[4, 3] == 0.001
    t = log.events_of("byz_pair_collusion")[0].time_ms
    assert sum(r.decide_time_ms > t + 20000 for r in log.instances) > 50


def test_leader_crash_triggers_view_change_to_next_replica():
    sc = base(start={"leader": "Oregon", "r_max": ["Oregon", "Ireland"]},
              events=[{"at_ms": 10000, "action": "crash", "replica": "Oregon"}],
              aware={"enabled": False}, run={"seed": 1, "horizon_ms": 30000})
    log = run(sc)
    vc = log.events_of("view_change")
    assert len(vc) == 1 and "leader=Ireland" in vc[0].detail
    assert 12000 <= vc[0].time_ms <= 12200
    after = [r for r in log.instances if r.decide_time_ms > vc[0].time_ms]
    assert after and all(r.leader == 1 and r.config == "1:1,0" for r in after)


def test_total_requests_stops_the_run():
    sc = base(run={"seed": 1, "total_requests": 40})
    log = run(sc)
    assert len(log.clients) == 40


def test_runtime_fixture_loads():
    text = resources.files("aware.fixtures").joinpath("runtime_behavior.json").read_text()
    sc = load_scenario(text)
    assert sc.start == make_config(S5, 2, [2, 3])
    assert [e.action for e in sc.events] == ["add_delay", "remove_delay", "crash"]


def test_matrix_not_mutated_by_run():
    sc = base(run={"seed": 1, "horizon_ms": 5000})
    frozen = copy.deepcopy(sc)
    run(sc)
    assert sc == frozen
