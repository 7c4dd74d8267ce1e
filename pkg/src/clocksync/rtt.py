"""Round-trip-time estimation that brackets the retrieval of a peer's reading.

A channel is any object with two methods, both returning timestamps in
integer ticks of the *requester's* clock:

``probe() -> (sent, received)``
    1-bit request, 32-bit dummy answer.
``query() -> (sent, reading, received)``
    1-bit request for the peer's time, 32-bit answer carrying it.
    ``reading`` is on the peer's clock.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol

from .netsim import Network
from .timebase import TICKS_PER_SECOND, to_seconds, to_ticks

REQUEST_BITS = 1
RESPONSE_BITS = 32


class Channel(Protocol):
    def probe(self) -> tuple[int, int]: ...

    def query(self) -> tuple[int, int, int]: ...


class UnstableChannelError(RuntimeError):
    pass


@dataclass(frozen=True)
class RttEstimate:
    mean: float
    stddev: float
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("an estimate needs at least one sample")
        if self.stddev < 0 or self.mean < 0:
            raise ValueError("mean and stddev must be non-negative")


@dataclass(frozen=True)
class RttThresholds:
    """Acceptance limits for the two probe phases.

    Absolute limits are in seconds. Any limit left as ``None`` is taken
    relative to the phase-A mean (``relative_sigma`` for the spread,
    ``relative_diff`` for both A/B comparisons).
    """

    sigma_max: Optional[float] = None
    mean_diff_max: Optional[float] = None
    sigma_diff_max: Optional[float] = None
    samples_per_phase: int = 30
    max_attempts: int = 5
    relative_sigma: float = 0.10
    relative_diff: float = 0.05

    def __post_init__(self):
        for name in ("sigma_max", "mean_diff_max", "sigma_diff_max"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.samples_per_phase < 1 or self.max_attempts < 1:
            raise ValueError("samples_per_phase and max_attempts must be >= 1")

    def limits(self, mean_a: float) -> tuple[float, float, float]:
        rel_s = self.relative_sigma * mean_a
        rel_d = self.relative_diff * mean_a
        return (
            self.sigma_max if self.sigma_max is not None else rel_s,
            self.mean_diff_max if self.mean_diff_max is not None else rel_d,
            self.sigma_diff_max if self.sigma_diff_max is not None else rel_d,
        )


class TimedReading(NamedTuple):
    reading: float
    estimate: RttEstimate
    requested_at: float
    received_at: float

    @property
    def corrected(self) -> float:
        return correct_reading(self.reading, self.estimate)


def _phase(channel: Channel, j: int) -> tuple[float, float]:
    samples = []
    for _ in range(j):
        sent, received = channel.probe()
        samples.append(received - sent)
    mean = statistics.fmean(samples) if j > 1 else float(samples[0])
    sd = statistics.stdev(samples) if j > 1 else 0.0
    return mean / TICKS_PER_SECOND, sd / TICKS_PER_SECOND


def estimate_with_reading(channel: Channel, thresholds: RttThresholds = RttThresholds()) -> TimedReading:
    """Probe, fetch the peer's reading, probe again; accept only on a steady channel.

    The returned estimate carries the phase-A statistics. Raises
    :class:`UnstableChannelError` once ``max_attempts`` runs all fail.
    """
    j = thresholds.samples_per_phase
    last = ""
    for _ in range(thresholds.max_attempts):
        mean_a, sd_a = _phase(channel, j)
        sigma_max, mean_diff_max, sigma_diff_max = thresholds.limits(mean_a)
        if sd_a > sigma_max:
            last = f"phase A spread {sd_a:.6g}s exceeds {sigma_max:.6g}s"
            continue
        sent, reading, received = channel.query()
        mean_b, sd_b = _phase(channel, j)
        if abs(mean_a - mean_b) <= mean_diff_max and abs(sd_a - sd_b) <= sigma_diff_max:
            return TimedReading(
                to_seconds(reading), RttEstimate(mean_a, sd_a, j),
                to_seconds(sent), to_seconds(received),
            )
        last = (f"phase B disagrees (mean {mean_a:.6g}s vs {mean_b:.6g}s, "
                f"sd {sd_a:.6g}s vs {sd_b:.6g}s)")
    raise UnstableChannelError(
        f"no stable RTT after {thresholds.max_attempts} attempts: {last}"
    )


def correct_reading(reading: float, estimate: RttEstimate) -> float:
    return reading + 0.5 * estimate.mean


def corrected_ticks(reading: TimedReading) -> int:
    return to_ticks(reading.reading) + to_ticks(0.5 * reading.estimate.mean)


class PeerChannel:
    """Request/response link between two clocks of a simulated network.

    Each exchange elapses true time on the whole network, so every clock
    keeps drifting while the requester waits.
    """

    def __init__(self, network: Network, requester: int, peer: int):
        if requester == peer:
            raise ValueError("requester and peer must differ")
        self.network = network
        self.requester = requester
        self.peer = peer

    def _leg(self, src: int, dst: int, bits: int) -> None:
        self.network.elapse(self.network.latency.delay(src, dst, bits))

    def probe(self) -> tuple[int, int]:
        me = self.network.clocks[self.requester]
        sent = me.read_ticks()
        self._leg(self.requester, self.peer, REQUEST_BITS)
        self._leg(self.peer, self.requester, RESPONSE_BITS)
        return sent, me.read_ticks()

    def query(self) -> tuple[int, int, int]:
        me = self.network.clocks[self.requester]
        sent = me.read_ticks()
        self._leg(self.requester, self.peer, REQUEST_BITS)
        reading = self.network.clocks[self.peer].read_ticks()
        self._leg(self.peer, self.requester, RESPONSE_BITS)
        return sent, reading, me.read_ticks()
