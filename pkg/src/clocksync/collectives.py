"""Averaging and circulant-overlay collectives.

Two families live here:

* leader-computes averaging, where node 0 gathers every reading (one peer
  at a time, or by recursive doubling), averages, and hands the result back;
* distributed averaging built on circular shift-copy operations, either
  the plain ring (``N - 1`` shifts) or the recursively doubled variant
  whose jumps halve each round (``N/2, N/4, ..., 1``).

All averaging is done in integer ticks with :class:`fractions.Fraction`
for the final division, so different summation orders agree exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .netsim import CommSchedule, LatencyModel, Network, Transfer, execute
from .rtt import (
    PeerChannel, RttThresholds, TimedReading, UnstableChannelError, corrected_ticks,
    estimate_with_reading,
)
from .timebase import to_seconds, to_ticks

READING_BITS = 32


class ReductionKind(str, enum.Enum):
    COPY_ALL = "copy-all"
    RUNNING_SUM = "running-sum"
    RUNNING_MAX_KEYED = "running-max-keyed"


# --------------------------------------------------------------------------
# leader computes


@dataclass
class LeaderCollection:
    """What the leader holds after collecting N - 1 readings.

    Per-peer lists are aligned: entry k belongs to peer k + 1. All
    timestamps are on the leader's clock; readings are on the peers'.
    """

    leader_time: float
    readings: list[float] = field(default_factory=list)
    receipt_timestamps: list[float] = field(default_factory=list)
    request_timestamps: list[float] = field(default_factory=list)
    rtt_means: Optional[list[float]] = None
    compute_cost: float = 0.0
    send_delays: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.readings) != len(self.receipt_timestamps):
            raise ValueError("every reading needs a receipt timestamp")
        if self.request_timestamps and len(self.request_timestamps) != len(self.readings):
            raise ValueError("request timestamps do not match readings")

    @property
    def n(self) -> int:
        return len(self.readings) + 1


def _leader_sums(c: LeaderCollection) -> tuple[int, int, int]:
    t0 = to_ticks(c.leader_time)
    sum_readings = 0
    sum_stamps = 0
    for ti, t0i in zip(c.readings, c.receipt_timestamps):
        sum_readings += to_ticks(ti)
        sum_stamps += to_ticks(t0i)
    return t0, sum_readings, sum_stamps


def leader_average_ticks(c: LeaderCollection) -> Fraction:
    """Two running sums: (N*T0 + sum T_i - sum T_0i) / N."""
    t0, sum_readings, sum_stamps = _leader_sums(c)
    return Fraction(c.n * t0 + sum_readings - sum_stamps, c.n)


def leader_average_per_peer_ticks(c: LeaderCollection) -> Fraction:
    """Same mean, accumulating each peer's aged reading T_i - T_0i + T0."""
    t0 = to_ticks(c.leader_time)
    total = t0
    for ti, t0i in zip(c.readings, c.receipt_timestamps):
        total += t0 + (to_ticks(ti) - to_ticks(t0i))
    return Fraction(total, c.n)


def leader_average(c: LeaderCollection) -> float:
    return float(leader_average_ticks(c) / 10**9)


def leader_average_rtt_ticks(c: LeaderCollection) -> Fraction:
    if c.n == 1:
        return Fraction(to_ticks(c.leader_time))
    if c.rtt_means is None or len(c.rtt_means) != len(c.readings):
        raise ValueError("an RTT mean is required for every peer")
    t0, sum_readings, sum_stamps = _leader_sums(c)
    sum_rtt = sum(to_ticks(r) for r in c.rtt_means)
    return (c.n * t0 + sum_readings + Fraction(sum_rtt, 2) - sum_stamps) / c.n


def leader_average_rtt(c: LeaderCollection) -> float:
    return float(leader_average_rtt_ticks(c) / 10**9)


def leader_distribute_values(mean: float, c: LeaderCollection) -> list[float]:
    """Value handed to each peer when the leader sends one at a time.

    Peer 1 gets ``mean + compute_cost``; every later peer also gets the
    delays of the hops already completed.
    """
    out = []
    elapsed = c.compute_cost
    for k in range(c.n - 1):
        out.append(mean + elapsed)
        if k < len(c.send_delays):
            elapsed += c.send_delays[k]
    return out


# --------------------------------------------------------------------------
# schedules


def _halving_rounds(n: int) -> list[list[tuple[int, int, int]]]:
    """Recursive halving of [0, n): (sender, receiver, size of receiver's half)."""
    rounds = []
    ranges = [(0, n)]
    while any(hi - lo > 1 for lo, hi in ranges):
        rnd = []
        nxt = []
        for lo, hi in ranges:
            size = hi - lo
            if size == 1:
                nxt.append((lo, hi))
                continue
            mid = lo + size // 2
            rnd.append((lo, mid, hi - mid))
            nxt += [(lo, mid), (mid, hi)]
        rounds.append(rnd)
        ranges = nxt
    return rounds


def broadcast_schedule_recursive_doubling(n: int, root: int = 0,
                                          payload_bits: int = READING_BITS) -> CommSchedule:
    """Every holder forwards each round; ceil(log2 n) rounds.

    For n = 8 and root 0: {0->4}, {0->2, 4->6}, {0->1, 2->3, 4->5, 6->7}.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = CommSchedule(n)
    for rnd in _halving_rounds(n):
        s.add_round(Transfer((a + root) % n, (b + root) % n, payload_bits) for a, b, _ in rnd)
    return s


def gather_schedule_recursive_doubling(n: int, root: int = 0,
                                       reading_bits: int = READING_BITS) -> CommSchedule:
    """Broadcast run backwards; each sender forwards everything it has gathered."""
    if n < 1:
        raise ValueError("n must be >= 1")
    s = CommSchedule(n)
    for rnd in reversed(_halving_rounds(n)):
        s.add_round(
            Transfer((b + root) % n, (a + root) % n, size * reading_bits) for a, b, size in rnd
        )
    return s


def sequential_schedule(n: int, root: int = 0, gather: bool = True,
                        payload_bits: int = READING_BITS) -> CommSchedule:
    """One peer per round, as a single-port leader must do without forwarding."""
    s = CommSchedule(n)
    for k in range(1, n):
        peer = (root + k) % n
        pair = (peer, root) if gather else (root, peer)
        s.add_round([Transfer(*pair, payload_bits)])
    return s


def circular_shift_steps(n: int, q: int) -> int:
    if not 0 < q < n:
        raise ValueError(f"shift must satisfy 0 < q < N, got q={q}, N={n}")
    return min(q, n - q)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def doubling_jumps(n: int) -> list[int]:
    """Jumps floor(n / 2**k) for k = 1..log2 n."""
    return [n >> k for k in range(1, n.bit_length()) if n >> k]


def shift_schedule(n: int, jumps: Sequence[int], bits: Sequence[int]) -> CommSchedule:
    s = CommSchedule(n)
    for q, b in zip(jumps, bits):
        s.add_round(Transfer(i, (i + q) % n, b) for i in range(n))
    return s


# --------------------------------------------------------------------------
# shift-copy family


@dataclass
class CollectiveResult:
    values: list
    schedule: CommSchedule
    jumps: list[int]
    comm_rounds: int
    steps: int
    fallback: bool = False


def _item_bits(kind: ReductionKind) -> int:
    # a max-keyed item carries its key and its payload
    return 2 * READING_BITS if kind is ReductionKind.RUNNING_MAX_KEYED else READING_BITS


class _Reducer:
    """Per-node accumulator. Items are (origin, value) so ties break by origin."""

    def __init__(self, kind: ReductionKind, n: int, values: Sequence):
        self.kind = kind
        self.n = n
        if kind is ReductionKind.COPY_ALL:
            self.acc = [{i: values[i]} for i in range(n)]
        elif kind is ReductionKind.RUNNING_SUM:
            self.acc = [values[i] for i in range(n)]
        else:
            self.acc = [(values[i][0], -i, values[i][1]) for i in range(n)]

    def snapshot(self, node: int):
        a = self.acc[node]
        return dict(a) if self.kind is ReductionKind.COPY_ALL else a

    def merge(self, node: int, incoming) -> None:
        if self.kind is ReductionKind.COPY_ALL:
            self.acc[node].update(incoming)
        elif self.kind is ReductionKind.RUNNING_SUM:
            self.acc[node] = self.acc[node] + incoming
        elif incoming[:2] > self.acc[node][:2]:
            self.acc[node] = incoming

    def result(self, node: int):
        a = self.acc[node]
        if self.kind is ReductionKind.COPY_ALL:
            return [a[(node - k) % self.n] for k in range(self.n) if (node - k) % self.n in a]
        if self.kind is ReductionKind.RUNNING_SUM:
            return a
        return (a[0], a[2])


def _run_shift_rounds(n, values, kind, jumps, forward_latest, latency):
    red = _Reducer(kind, n, values)
    # the ring passes along only the item that arrived last round
    latest = [red.snapshot(i) for i in range(n)]
    if kind is ReductionKind.COPY_ALL and not forward_latest:
        bits = [(2 ** k) * READING_BITS for k in range(len(jumps))]
    else:
        bits = [_item_bits(kind)] * len(jumps)
    sched = shift_schedule(n, jumps, bits)

    def send(r, t):
        return latest[t.sender] if forward_latest else red.snapshot(t.sender)

    def receive(r, msg, payload):
        red.merge(msg.dst, payload)
        latest[msg.dst] = payload

    execute(sched, latency or LatencyModel(), send, receive)
    return red, sched


def ring_shift_copy_all(n: int, values: Sequence,
                        reduction: ReductionKind | str = ReductionKind.COPY_ALL,
                        latency: Optional[LatencyModel] = None) -> CollectiveResult:
    """Circular (N-1)-shift-copy on the ring: N-1 one-shifts, each followed by a copy.

    Node i ends with ``[v_i, v_{i-1}, ..., v_{i-N+1}]`` under copy-all.
    ``steps`` counts shift and copy separately, ``comm_rounds`` only shifts.
    """
    kind = ReductionKind(reduction)
    if n < 1 or len(values) != n:
        raise ValueError("need n >= 1 and exactly one value per node")
    jumps = [1] * (n - 1)
    red, sched = _run_shift_rounds(n, values, kind, jumps, True, latency)
    return CollectiveResult([red.result(i) for i in range(n)], sched, jumps,
                            comm_rounds=n - 1, steps=2 * (n - 1))


def recursive_doubled_shift_copy(n: int, values: Sequence,
                                 reduction: ReductionKind | str = ReductionKind.COPY_ALL,
                                 latency: Optional[LatencyModel] = None) -> CollectiveResult:
    """Circular (N-1)-shift-copy with the jump halving every round.

    Round k sends everything held so far to node ``i + N/2**k``. The sets a
    node holds and receives are always disjoint, so sums and maxima are
    exact. Falls back to the ring when ``n`` is not a power of two.
    """
    kind = ReductionKind(reduction)
    if n < 1 or len(values) != n:
        raise ValueError("need n >= 1 and exactly one value per node")
    if not is_power_of_two(n):
        res = ring_shift_copy_all(n, values, kind, latency)
        res.fallback = True
        return res
    jumps = doubling_jumps(n)
    red, sched = _run_shift_rounds(n, values, kind, jumps, False, latency)
    return CollectiveResult([red.result(i) for i in range(n)], sched, jumps,
                            comm_rounds=len(jumps), steps=2 * len(jumps))


# --------------------------------------------------------------------------
# end-to-end averaging on a simulated network


def pairwise_offset_ticks(network: Network, requester: int, peer: int,
                          thresholds: RttThresholds) -> tuple[int, TimedReading]:
    """Estimated ``T_peer - T_requester`` at the moment the reply lands."""
    try:
        tr = estimate_with_reading(PeerChannel(network, requester, peer), thresholds)
    except UnstableChannelError as exc:
        raise UnstableChannelError(f"channel {requester} <- {peer}: {exc}") from exc
    return corrected_ticks(tr) - to_ticks(tr.received_at), tr


@dataclass
class AverageResult:
    means: list[float]
    mean_ticks: list[Fraction]
    true_time: float
    comm_rounds: int
    schedule: CommSchedule

    @property
    def mean_offset(self) -> float:
        """Agreed mean minus true time, read at node 0."""
        return float(to_seconds(self.mean_ticks[0] - to_ticks(self.true_time)))


def distributed_average(network: Network, thresholds: Optional[RttThresholds] = None) -> AverageResult:
    """Every node learns the network-wide mean without a final broadcast.

    Nodes carry ``(count, sum of peer offsets relative to themselves)``.
    On receipt a node measures its offset to the sender with the RTT
    estimator and rebases the sender's partial sum onto its own clock.
    Offsets do not age, so readings taken in different rounds combine
    without further correction.
    """
    n = len(network)
    if n < 2:
        raise ValueError("distributed averaging needs at least two nodes")
    th = thresholds or RttThresholds()
    state = [(1, 0) for _ in range(n)]
    if is_power_of_two(n):
        jumps = doubling_jumps(n)
        forward_latest = False
    else:
        jumps = [1] * (n - 1)
        forward_latest = True
    sched = shift_schedule(n, jumps, [2 * READING_BITS] * len(jumps))
    # the ring forwards single origin items, rebased hop by hop, not partial sums
    latest = [(1, 0) for _ in range(n)]

    def send(r, t):
        return latest[t.sender] if forward_latest else state[t.sender]

    def receive(r, msg, payload):
        d, _ = pairwise_offset_ticks(network, msg.dst, msg.src, th)
        count, partial = payload
        rebased = partial + count * d
        c0, s0 = state[msg.dst]
        state[msg.dst] = (c0 + count, s0 + rebased)
        latest[msg.dst] = (count, rebased)

    execute(sched, network.latency, send, receive, network=network)
    assert all(c == n for c, _ in state), "a node missed some readings"
    mean_ticks = [network.clocks[i].read_ticks() + Fraction(s, n) for i, (_, s) in enumerate(state)]
    return AverageResult([float(m / 10**9) for m in mean_ticks], mean_ticks,
                         network.now(), sched.n_rounds, sched)


def gather_recursive_doubling(network: Network, root: int = 0,
                              thresholds: Optional[RttThresholds] = None) -> dict[int, int]:
    """Collect every node's offset at ``root`` over the recursive-doubling tree.

    Each sender forwards the offsets it has gathered, relative to its own
    clock; the receiver measures its offset to the sender and rebases them.
    Returns ``{node: T_node - T_root}`` in ticks, root included as 0.
    """
    th = thresholds or RttThresholds()
    n = len(network)
    held = [{i: 0} for i in range(n)]

    def send(r, t):
        return dict(held[t.sender])

    def receive(r, msg, payload):
        d, _ = pairwise_offset_ticks(network, msg.dst, msg.src, th)
        for origin, off in payload.items():
            held[msg.dst][origin] = off + d

    execute(gather_schedule_recursive_doubling(n, root), network.latency, send, receive,
            network=network)
    return held[root]


def leader_rd_sync(network: Network, root: int = 0,
                   thresholds: Optional[RttThresholds] = None) -> AverageResult:
    """Gather and broadcast by recursive doubling: 2*ceil(log2 N) rounds.

    The root averages the gathered offsets; the broadcast carries each
    sender's distance to the mean, which receivers rebase onto their own
    clock before adopting it.
    """
    th = thresholds or RttThresholds()
    n = len(network)
    offsets = gather_recursive_doubling(network, root, th)
    to_mean = [None] * n
    to_mean[root] = Fraction(sum(offsets.values()), n)

    def send(r, t):
        return to_mean[t.sender]

    def receive(r, msg, payload):
        d, _ = pairwise_offset_ticks(network, msg.dst, msg.src, th)
        to_mean[msg.dst] = payload + d

    bcast = broadcast_schedule_recursive_doubling(n, root)
    execute(bcast, network.latency, send, receive, network=network)
    means = [network.clocks[i].read_ticks() + to_mean[i] for i in range(n)]
    for clock, m in zip(network.clocks, means):
        clock.set_ticks(round(m))
    rounds = 2 * bcast.n_rounds
    return AverageResult([float(m / 10**9) for m in means], means, network.now(), rounds, bcast)


def collect_sequential(network: Network, leader: int = 0,
                       thresholds: Optional[RttThresholds] = None) -> LeaderCollection:
    """The leader fetches each peer's reading in turn, then reads its own clock."""
    th = thresholds or RttThresholds()
    n = len(network)
    readings, stamps, requests, rtts = [], [], [], []
    for k in range(1, n):
        peer = (leader + k) % n
        tr = estimate_with_reading(PeerChannel(network, leader, peer), th)
        readings.append(tr.reading)
        stamps.append(tr.received_at)
        requests.append(tr.requested_at)
        rtts.append(tr.estimate.mean)
    return LeaderCollection(network.clocks[leader].read(), readings, stamps, requests, rtts)


def leader_sync(network: Network, leader: int = 0,
                thresholds: Optional[RttThresholds] = None) -> LeaderCollection:
    """Sequential collection, RTT-corrected mean, one-at-a-time distribution.

    The leader adopts the mean at once; each peer sets its clock on arrival
    to the handed value plus half the RTT measured for it during collection.
    Takes ``2(N - 1)`` communication rounds.
    """
    n = len(network)
    c = collect_sequential(network, leader, thresholds)
    mean = leader_average_rtt_ticks(c)
    me = network.clocks[leader]
    me.set_ticks(round(mean))
    mean_s = leader_average_rtt(c)
    for k in range(1, n):
        peer = (leader + k) % n
        value = leader_distribute_values(mean_s, c)[k - 1]
        sent = me.read_ticks()
        network.elapse(network.latency.delay(leader, peer, READING_BITS))
        c.send_delays.append(to_seconds(me.read_ticks() - sent))
        network.clocks[peer].set_ticks(to_ticks(value) + to_ticks(0.5 * c.rtt_means[k - 1]))
    return c


def distributed_sync(network: Network, thresholds: Optional[RttThresholds] = None) -> AverageResult:
    """Run :func:`distributed_average` and have every node adopt its mean."""
    res = distributed_average(network, thresholds)
    for clock, m in zip(network.clocks, res.mean_ticks):
        clock.set_ticks(round(m))
    return res
