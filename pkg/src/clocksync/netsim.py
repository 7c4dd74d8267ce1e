"""Message passing over a complete graph with round-synchronous schedules.

A :class:`CommSchedule` is a list of rounds; each round is a list of
:class:`Transfer` objects. The single-port duplex rule allows every node at
most one outgoing and one incoming transfer per round.
"""
from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

from .timebase import GlobalClock, SimulatedClock, to_ticks


@dataclass
class LatencyModel:
    base_latency: float = 0.0
    per_bit_cost: float = 0.0
    jitter: tuple[float, float] = (0.0, 0.0)
    asymmetry: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.jitter
        if lo > hi:
            raise ValueError("jitter interval is reversed")
        if self.base_latency < 0 or self.per_bit_cost < 0:
            raise ValueError("latency parameters must be non-negative")
        self._rng = random.Random(self.seed)

    def delay(self, src: int, dst: int, payload_bits: int) -> float:
        d = self.base_latency + self.per_bit_cost * payload_bits
        if self.asymmetry:
            d *= self.asymmetry.get((src, dst), 1.0)
        lo, hi = self.jitter
        if hi > lo:
            d += self._rng.uniform(lo, hi)
        elif lo:
            d += lo
        return max(d, 0.0)


class _MessageFields(NamedTuple):
    src: int
    dst: int
    payload_bits: int
    send_time: float
    deliver_time: float


class Message(_MessageFields):
    # a tuple keeps construction cheap; executions create millions of these
    __slots__ = ()

    def __new__(cls, src, dst, payload_bits, send_time, deliver_time):
        if src == dst:
            raise ValueError("a node cannot message itself")
        if deliver_time < send_time:
            raise ValueError("message delivered before it was sent")
        return super().__new__(cls, src, dst, payload_bits, send_time, deliver_time)


@dataclass(frozen=True)
class CirculantTopology:
    order: int
    jump: int

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < self.jump < self.order:
            raise ValueError(f"jump must satisfy 0 < q < N, got q={self.jump}, N={self.order}")

    def edges(self) -> list[tuple[int, int]]:
        return [(i, (i + self.jump) % self.order) for i in range(self.order)]


def embed(topology: CirculantTopology, host_order: int) -> dict[tuple[int, int], frozenset]:
    """Map each directed circulant edge onto its undirected edge of K_host.

    Node labels are kept. Edges i->i+q and i+q->i land on the same host
    edge, so ``len(set(result.values()))`` is the number of distinct links.
    """
    if topology.order > host_order:
        raise ValueError(
            f"cannot embed a circulant of order {topology.order} into K_{host_order}"
        )
    return {(a, b): frozenset((a, b)) for a, b in topology.edges()}


@dataclass(frozen=True)
class Transfer:
    sender: int
    receiver: int
    payload_bits: int = 32


@dataclass
class CommSchedule:
    order: int
    rounds: list[list[Transfer]] = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def add_round(self, transfers: Iterable[Transfer]) -> None:
        self.rounds.append(list(transfers))

    def pairs(self) -> list[list[tuple[int, int]]]:
        return [[(t.sender, t.receiver) for t in rnd] for rnd in self.rounds]


@dataclass(frozen=True)
class Violation:
    round: int
    node: int
    reason: str

    def __str__(self):
        return f"round {self.round}: node {self.node} {self.reason}"


def validate_schedule(schedule: CommSchedule, n: int) -> Optional[Violation]:
    """Return the first single-port violation, or None if the schedule is legal."""
    for r, rnd in enumerate(schedule.rounds):
        senders: set[int] = set()
        receivers: set[int] = set()
        for t in rnd:
            for node in (t.sender, t.receiver):
                if not 0 <= node < n:
                    return Violation(r, node, f"is out of range for N={n}")
            if t.sender == t.receiver:
                return Violation(r, t.sender, "sends to itself")
            if t.sender in senders:
                return Violation(r, t.sender, "sends twice")
            if t.receiver in receivers:
                return Violation(r, t.receiver, "receives twice")
            senders.add(t.sender)
            receivers.add(t.receiver)
    return None


class ScheduleError(ValueError):
    pass


class ExecutionError(RuntimeError):
    def __init__(self, round_: int, node: int, cause: BaseException):
        super().__init__(f"handler failed in round {round_} at node {node}: {cause!r}")
        self.round = round_
        self.node = node
        self.__cause__ = cause


class Delivery(NamedTuple):
    round: int
    message: Message
    payload: object


@dataclass
class Trace:
    inbox: dict[int, list[Delivery]]
    messages: list[Message]
    start_time: float
    end_time: float


class Network:
    """A set of drifting clocks sharing one true timeline and a latency model."""

    def __init__(self, clocks: list[SimulatedClock], latency: Optional[LatencyModel] = None,
                 true_time: float = 0.0):
        self.clocks = clocks
        self.latency = latency or LatencyModel()
        self.truth = GlobalClock(true_time)

    def __len__(self):
        return len(self.clocks)

    def now(self) -> float:
        return self.truth.true_time

    def elapse(self, dt: float) -> None:
        ticks = to_ticks(dt)
        self.truth.advance_ticks(ticks)
        for c in self.clocks:
            c.advance_ticks(ticks)


SendHandler = Callable[[int, Transfer], object]
ReceiveHandler = Callable[[int, Message, object], None]


def execute(schedule: CommSchedule, latency: LatencyModel, send: SendHandler,
            receive: Optional[ReceiveHandler] = None, network: Optional[Network] = None,
            start_time: float = 0.0) -> Trace:
    """Run a schedule round by round.

    Every ``send`` of a round is evaluated before any ``receive`` of that
    round, so a handler never sees data from the round it is sending in.
    The round ends when its slowest message lands; with a ``network`` the
    shared clocks are advanced by that amount.
    """
    bad = validate_schedule(schedule, schedule.order)
    if bad is not None:
        raise ScheduleError(f"invalid schedule: {bad}")

    now = network.now() if network is not None else start_time
    begin = now
    inbox: dict[int, list[Delivery]] = {i: [] for i in range(schedule.order)}
    messages: list[Message] = []
    delay = latency.delay
    for r, rnd in enumerate(schedule.rounds):
        outgoing = []
        span = 0.0
        for t in rnd:
            try:
                payload = send(r, t)
            except Exception as exc:
                raise ExecutionError(r, t.sender, exc) from exc
            d = delay(t.sender, t.receiver, t.payload_bits)
            span = max(span, d)
            outgoing.append((Message(t.sender, t.receiver, t.payload_bits, now, now + d), payload))
        for msg, payload in outgoing:
            if receive is not None:
                try:
                    receive(r, msg, payload)
                except Exception as exc:
                    raise ExecutionError(r, msg.dst, exc) from exc
            inbox[msg.dst].append(Delivery(r, msg, payload))
            messages.append(msg)
        if network is not None:
            network.elapse(span)
            now = network.now()
        else:
            now += span
    return Trace(inbox, messages, begin, now)


SCHEDULE_COLUMNS = ("round", "sender", "receiver", "payload_bits")


def schedule_to_csv(schedule: CommSchedule, out=None) -> str:
    """Dump ``round,sender,receiver,payload_bits`` rows; rounds count from 1."""
    buf = out if out is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS)
    for r, rnd in enumerate(schedule.rounds, start=1):
        for t in rnd:
            w.writerow((r, t.sender, t.receiver, t.payload_bits))
    return buf.getvalue() if out is None else ""


def schedule_from_csv(text: str, order: int) -> CommSchedule:
    rows = list(csv.DictReader(io.StringIO(text)))
    n_rounds = max((int(row["round"]) for row in rows), default=0)
    rounds: list[list[Transfer]] = [[] for _ in range(n_rounds)]
    for row in rows:
        rounds[int(row["round"]) - 1].append(
            Transfer(int(row["sender"]), int(row["receiver"]), int(row["payload_bits"]))
        )
    return CommSchedule(order, rounds)

