import copy
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from clocksync.collectives import (
    LeaderCollection, broadcast_schedule_recursive_doubling, circular_shift_steps,
    collect_sequential, distributed_average, doubling_jumps, gather_recursive_doubling,
    gather_schedule_recursive_doubling, leader_average, leader_average_per_peer_ticks,
    leader_average_rtt, leader_average_rtt_ticks, leader_average_ticks, leader_distribute_values,
    leader_rd_sync, leader_sync, pairwise_offset_ticks, recursive_doubled_shift_copy,
    ring_shift_copy_all, sequential_schedule,
)
from clocksync.netsim import LatencyModel, Network, validate_schedule
from clocksync.rtt import RttThresholds
from clocksync.timebase import SimulatedClock, to_ticks

from oracles import per_peer_mean, gathered_at, linear_max, reachable, rotation


def three_node():
    return LeaderCollection(100, [90, 110], [98, 99])


def network(offsets, latency=0.001, freq=None):
    freq = freq or [0.0] * len(offsets)
    clocks = [SimulatedClock(i, local_time=o, frequency_error=f)
              for i, (o, f) in enumerate(zip(offsets, freq))]
    return Network(clocks, LatencyModel(latency))


# leader computes

def test_leader_average_three_nodes():
    assert per_peer_mean(100, [90, 110], [98, 99]) == 101
    assert leader_average(three_node()) == 101


def test_leader_average_already_synced():
    assert leader_average(LeaderCollection(7.5, [7.5] * 4, [7.5] * 4)) == 7.5


def test_leader_average_single_node():
    assert leader_average(LeaderCollection(42.0)) == 42.0
    assert leader_average_rtt(LeaderCollection(42.0)) == 42.0


def test_leader_average_rtt():
    c = three_node()
    c.rtt_means = [2, 2]
    assert leader_average_rtt_ticks(c) == Fraction(305 * 10**9, 3)
    assert leader_average_rtt(c) == pytest.approx(305 / 3)


def test_leader_average_rtt_zero_rtt_reduces():
    c = three_node()
    c.rtt_means = [0, 0]
    assert leader_average_rtt_ticks(c) == leader_average_ticks(c)


def test_leader_average_rtt_missing_entry():
    with pytest.raises(ValueError):
        leader_average_rtt(three_node())


def test_misaligned_collection():
    with pytest.raises(ValueError):
        LeaderCollection(0, [1, 2], [1])


def test_distribute_values():
    c = LeaderCollection(0, [0, 0], [0, 0])
    assert leader_distribute_values(5, c) == [5, 5]
    c.compute_cost, c.send_delays = 1, [2]
    assert leader_distribute_values(5, c) == [6, 8]
    assert leader_distribute_values(5, LeaderCollection(0, [0], [0], compute_cost=1)) == [6]


@given(st.integers(0, 10**15), st.lists(st.tuples(st.integers(0, 10**15), st.integers(0, 10**15)),
                                          max_size=63))
def test_per_peer_form_equals_running_sums_bit_exact(t0, peers):
    to_s = lambda t: t / 1e9
    c = LeaderCollection(to_s(t0), [to_s(a) for a, _ in peers], [to_s(b) for _, b in peers])
    assert leader_average_ticks(c) == leader_average_per_peer_ticks(c)
    ticks = per_peer_mean(Fraction(to_ticks(c.leader_time)),
                          [to_ticks(x) for x in c.readings],
                          [to_ticks(x) for x in c.receipt_timestamps])
    assert leader_average_ticks(c) == ticks


# schedules

def test_broadcast_n8():
    s = broadcast_schedule_recursive_doubling(8)
    assert s.pairs() == [[(0, 4)], [(0, 2), (4, 6)], [(0, 1), (2, 3), (4, 5), (6, 7)]]


def test_broadcast_n1():
    assert broadcast_schedule_recursive_doubling(1).n_rounds == 0


def test_broadcast_n16_covers_all():
    s = broadcast_schedule_recursive_doubling(16)
    assert s.n_rounds == 4
    assert reachable(16, s.pairs()) == set(range(16))


def test_gather_n8():
    s = gather_schedule_recursive_doubling(8)
    assert s.n_rounds == 3
    last = s.rounds[-1]
    assert [(t.sender, t.receiver, t.payload_bits) for t in last] == [(4, 0, 4 * 32)]
    assert [t.payload_bits for t in s.rounds[0]] == [32] * 4


def test_gather_n2():
    assert gather_schedule_recursive_doubling(2).pairs() == [[(1, 0)]]


@pytest.mark.parametrize("n", range(1, 40))
def test_schedules_reach_everyone(n):
    assert reachable(n, broadcast_schedule_recursive_doubling(n).pairs()) == set(range(n))
    assert gathered_at(n, gather_schedule_recursive_doubling(n).pairs()) == set(range(n))
    assert broadcast_schedule_recursive_doubling(n).n_rounds == math.ceil(math.log2(n))


@pytest.mark.parametrize("n,q,steps", [(8, 2, 2), (8, 7, 1), (8, 4, 4)])
def test_circular_shift_steps(n, q, steps):
    assert circular_shift_steps(n, q) == steps


@pytest.mark.parametrize("q", [0, 8, -1])
def test_circular_shift_steps_range(q):
    with pytest.raises(ValueError):
        circular_shift_steps(8, q)


def test_sequential_schedule_rounds():
    assert sequential_schedule(8).n_rounds == 7
    assert validate_schedule(sequential_schedule(8, gather=False), 8) is None


# shift-copy family

def test_ring_n8_steps():
    res = ring_shift_copy_all(8, list(range(8)))
    assert (res.steps, res.comm_rounds) == (14, 7)


def test_ring_partial_holdings():
    # after k shift-copies each node holds k + 1 values
    held = {i: {i} for i in range(8)}
    pairs = ring_shift_copy_all(8, list(range(8))).schedule.pairs()
    latest = {i: i for i in range(8)}
    for k, rnd in enumerate(pairs, start=1):
        incoming = {b: latest[a] for a, b in rnd}
        for b, v in incoming.items():
            held[b].add(v)
            latest[b] = v
        assert all(len(h) == k + 1 for h in held.values())


def test_ring_n1():
    res = ring_shift_copy_all(1, ["x"])
    assert res.steps == 0
    assert res.values == [["x"]]


def test_ring_n5_rotation():
    res = ring_shift_copy_all(5, list(range(5)))
    assert res.values == [rotation(list(range(5)), i) for i in range(5)]


def test_rd_copy_n8():
    res = recursive_doubled_shift_copy(8, list("abcdefgh"))
    assert res.jumps == [4, 2, 1]
    assert res.comm_rounds == 3
    assert all(sorted(v) == list("abcdefgh") for v in res.values)


def test_rd_sum_n2():
    res = recursive_doubled_shift_copy(2, [3, 4], "running-sum")
    assert res.values == [7, 7]
    assert res.comm_rounds == 1


def test_rd_max_ties_break_to_lowest_origin():
    res = recursive_doubled_shift_copy(4, [(1, "a"), (5, "b"), (5, "c"), (0, "d")], "running-max-keyed")
    assert res.values == [(5, "b")] * 4


def test_non_power_of_two_falls_back_to_ring():
    res = recursive_doubled_shift_copy(6, list(range(6)))
    assert res.fallback
    assert res.jumps == [1] * 5


def test_doubling_jumps():
    assert doubling_jumps(64) == [32, 16, 8, 4, 2, 1]
    assert doubling_jumps(1) == []


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.randoms(use_true_random=False))
def test_shift_collectives_match_oracles(n, rnd):
    values = [rnd.randint(-10**6, 10**6) for _ in range(n)]
    keyed = [(rnd.randint(0, 5), rnd.random()) for _ in range(n)]
    for fn in (ring_shift_copy_all, recursive_doubled_shift_copy):
        copy_all = fn(n, values)
        assert copy_all.values == [rotation(values, i) for i in range(n)]
        assert validate_schedule(copy_all.schedule, n) is None
        assert fn(n, values, "running-sum").values == [sum(values)] * n
        assert fn(n, keyed, "running-max-keyed").values == [linear_max(keyed)] * n


# on a simulated network

def test_gather_matches_direct_collection():
    offsets = [0.0, 3.5, -2.25, 10.0, 0.125, -7.0, 1.0, 4.0]
    net = network(offsets)
    direct = copy.deepcopy(net)
    got = gather_recursive_doubling(net)
    want = {k: pairwise_offset_ticks(direct, 0, k, RttThresholds())[0] for k in range(1, 8)}
    assert got == {0: 0, **want}
    assert want == {k: to_ticks(offsets[k]) for k in range(1, 8)}


def test_distributed_equal_clocks():
    res = distributed_average(network([5.0] * 4, latency=0.0))
    assert res.mean_ticks == [to_ticks(5.0)] * 4


def test_distributed_four_nodes():
    net = network([0, 4, 8, 12])
    res = distributed_average(net)
    truth = net.truth.ticks
    assert all(abs(m - truth - to_ticks(6)) <= 1 for m in res.mean_ticks)
    assert res.comm_rounds == 2


@pytest.mark.parametrize("n", [3, 5, 6, 7])
def test_distributed_ring_fallback(n):
    offsets = [random.Random(n).uniform(-5, 5) for _ in range(n)]
    net = network(offsets)
    res = distributed_average(net)
    want = Fraction(sum(to_ticks(o) for o in offsets), n)
    assert all(abs(m - net.truth.ticks - want) <= 1 for m in res.mean_ticks)
    assert res.comm_rounds == n - 1


def test_distributed_needs_two_nodes():
    with pytest.raises(ValueError):
        distributed_average(network([0.0]))


def test_distributed_matches_leader_rtt_average():
    offsets = [0.3 * k for k in range(8)]
    a, b = network(offsets), network(offsets)
    res = distributed_average(a)
    c = collect_sequential(b)
    # zero drift: compare agreed means as offsets from true time
    leader = leader_average_rtt_ticks(c) - to_ticks(c.leader_time) + b.clocks[0].read_ticks() - b.truth.ticks
    assert abs((res.mean_ticks[0] - a.truth.ticks) - leader) <= 1


@pytest.mark.parametrize("sync", [leader_sync, leader_rd_sync])
def test_leader_methods_agree_with_distributed(sync):
    offsets = [1.0, -2.0, 0.5, 3.0, 0.0, 7.5]
    a, b = network(offsets), network(offsets)
    sync(a)
    res = distributed_average(b)
    for clock in a.clocks:
        assert abs((clock.read_ticks() - a.truth.ticks) - (res.mean_ticks[0] - b.truth.ticks)) <= 1
