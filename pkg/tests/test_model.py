from fractions import Fraction
from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aware.model import (
    WeightConfig,
    count_configurations,
    derive_shape,
    enumerate_configurations,
    fast_quorum_ratio,
    is_quorum,
    make_config,
    minimal_quorums,
    parse_config,
    quorum_subsets,
)

from .oracles import brute_count

shapes = st.tuples(st.integers(1, 3), st.integers(0, 4)).map(lambda t: derive_shape(*t))
small_shapes = st.tuples(st.integers(1, 2), st.integers(0, 3)).filter(
    lambda t: 3 * t[0] + 1 + t[1] <= 9).map(lambda t: derive_shape(*t))


def test_derive_shape_examples():
    s = derive_shape(1, 1)
    assert (s.n, s.v_max, s.v_min, s.q_v) == (5, 2, 1, 5)
    s = derive_shape(2, 0)
    assert (s.n, s.v_max, s.q_v, s.traditional_quorum) == (7, 1, 5, 5)
    s = derive_shape(2, 1)
    assert (s.n, s.v_max, s.q_v) == (8, Fraction(3, 2), 7)


@pytest.mark.parametrize("f,delta", [(0, 1), (-1, 0), (1, -1)])
def test_derive_shape_rejects(f, delta):
    with pytest.raises(ValueError):
        derive_shape(f, delta)


@given(shapes)
def test_shape_invariants(s):
    assert s.n == 3 * s.f + 1 + s.delta
    assert s.q_v == 2 * (s.f + s.delta) + 1 == 2 * s.f * s.v_max + 1
    assert s.v_min == 1 and s.v_max == 1 + Fraction(s.delta, s.f)
    assert s.total_weight == 3 * s.f + 3 * s.delta + 1
    # scaled integers agree with the rationals
    assert s.w_max == s.v_max * s.f and s.q_scaled == s.q_v * s.f
    assert derive_shape(s.f, s.delta) == s


@given(small_shapes, st.data())
def test_any_f_removed_leaves_quorum(s, data):
    r_max = data.draw(st.permutations(range(s.n))).copy()[: s.u]
    cfg = make_config(s, r_max[0], r_max)
    # worst case removes the f heaviest replicas
    for gone in combinations(range(s.n), s.f):
        assert is_quorum(s, cfg, set(range(s.n)) - set(gone))


def test_is_quorum_examples():
    s = derive_shape(1, 1)
    cfg = make_config(s, 0, [0, 1])
    assert is_quorum(s, cfg, {0, 1, 2})
    assert not is_quorum(s, cfg, {2, 3, 4})
    assert is_quorum(s, cfg, {0, 2, 3, 4})


@pytest.mark.parametrize("f,delta,expected", [(1, 1, 20), (2, 2, 504), (1, 0, 12), (3, 3, 10296)])
def test_count_examples(f, delta, expected):
    assert count_configurations(derive_shape(f, delta)) == expected


@pytest.mark.parametrize("f,delta", [(1, 0), (1, 1), (1, 3), (2, 0), (2, 2)])
def test_count_matches_bitmask_scan(f, delta):
    s = derive_shape(f, delta)
    assert count_configurations(s) == brute_count(f, delta) == len(enumerate_configurations(s))


def test_enumeration_order_and_candidates():
    s = derive_shape(1, 1)
    configs = enumerate_configurations(s)
    assert len(configs) == 20
    keys = [(c.r_max, c.leader) for c in configs]
    assert keys == sorted(keys)
    only3 = enumerate_configurations(s, {3})
    assert len(only3) == 4 and all(c.leader == 3 for c in only3)
    with pytest.raises(ValueError):
        enumerate_configurations(s, set())


def test_enumeration_empty_result_is_an_error():
    s = derive_shape(1, 1)
    with pytest.raises(ValueError):
        enumerate_configurations(s, {99})


@pytest.mark.parametrize("f,delta,ratio", [(1, 1, Fraction(3, 4)), (3, 3, Fraction(7, 9)), (1, 0, Fraction(1))])
def test_fast_quorum_ratio(f, delta, ratio):
    assert fast_quorum_ratio(derive_shape(f, delta)) == ratio


@given(small_shapes, st.data())
def test_minimal_quorum_sizes(s, data):
    r_max = data.draw(st.permutations(range(s.n)))[: s.u]
    cfg = make_config(s, r_max[0], r_max)
    sizes = {len(q) for q in minimal_quorums(s, cfg)}
    assert min(sizes) >= 2 * s.f + 1
    assert max(sizes) <= s.n - s.f


@given(small_shapes, st.data())
def test_quorums_intersect_in_f_plus_one(s, data):
    r_max = data.draw(st.permutations(range(s.n)))[: s.u]
    cfg = make_config(s, r_max[0], r_max)
    masks = quorum_subsets(s, cfg.scaled_weights(s))
    minimal = [m for m in masks if all((m & ~(1 << i)) not in set(masks) for i in range(s.n) if m >> i & 1)]
    for a in minimal:
        for b in minimal:
            assert bin(a & b).count("1") >= s.f + 1


def test_weight_config_validation():
    with pytest.raises(ValueError):
        WeightConfig((0, 1), 2, 5)
    with pytest.raises(ValueError):
        WeightConfig((0, 0), 0, 5)
    with pytest.raises(ValueError):
        make_config(derive_shape(1, 1), 0, [0, 1, 2])
    assert WeightConfig((1, 0), 0, 5) == WeightConfig((0, 1), 0, 5)


@given(shapes, st.data())
def test_swap_keeps_config_valid(s, data):
    perm = data.draw(st.permutations(range(s.n)))
    cfg = make_config(s, perm[0], perm[: s.u])
    out = data.draw(st.sampled_from(cfg.r_max))
    into = data.draw(st.sampled_from(cfg.r_min))
    nxt = cfg.swap(out, into)
    assert len(nxt.r_max) == s.u and nxt.leader in nxt.r_max
    assert into in nxt.r_max and out in nxt.r_min
    assert nxt.leader == (into if out == cfg.leader else cfg.leader)


def test_parse_and_label_round_trip():
    s = derive_shape(2, 1)
    cfg = parse_config(s, "3:3,0,5,7")
    assert cfg.leader == 3 and cfg.r_max == (0, 3, 5, 7)
    assert parse_config(s, cfg.label()) == cfg
    assert parse_config(derive_shape(1, 1), "4:0") == make_config(derive_shape(1, 1), 4, [0, 4])
