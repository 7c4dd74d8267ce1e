"""True time and drifting local clocks.

Everything is kept in integer nanosecond ticks; the public surface speaks
seconds. Drift is piecewise linear: a clock runs at ``1 + frequency_error``
local seconds per true second until the next perturbation.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

TICKS_PER_SECOND = 1_000_000_000


def to_ticks(seconds: float) -> int:
    return round(seconds * TICKS_PER_SECOND)


def to_seconds(ticks) -> float:
    return ticks / TICKS_PER_SECOND


@dataclass(frozen=True)
class ClockEvent:
    """A disturbance applied to a clock.

    ``kind`` is one of ``frequency_shift``, ``phase_shift`` or ``burst``.
    A burst carries both a phase jump and a frequency change.
    """

    kind: str
    phase: float = 0.0
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind not in ("frequency_shift", "phase_shift", "burst"):
            raise ValueError(f"unknown clock event kind: {self.kind!r}")


class GlobalClock:
    """The authoritative time G. Starts at zero unless told otherwise."""

    def __init__(self, true_time: float = 0.0):
        self.ticks = to_ticks(true_time)

    @property
    def true_time(self) -> float:
        return to_seconds(self.ticks)

    def advance(self, dt: float) -> "GlobalClock":
        self.advance_ticks(to_ticks(dt))
        return self

    def advance_ticks(self, dt_ticks: int) -> None:
        if dt_ticks < 0:
            raise ValueError("cannot advance time backwards")
        self.ticks += dt_ticks

    def __repr__(self):
        return f"GlobalClock(true_time={self.true_time!r})"


@dataclass
class SimulatedClock:
    id: int = 0
    local_time: float = 0.0
    frequency_error: float = 0.0
    phase_offset: float = 0.0
    rng_seed: int = 0
    # local reading at the start of the current constant-rate segment, and
    # true ticks elapsed since then; keeps advance() exactly additive
    _anchor: int = field(init=False, repr=False)
    _elapsed: int = field(init=False, repr=False, default=0)
    rng: random.Random = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.frequency_error <= -1:
            raise ValueError("frequency_error must be > -1")
        self._anchor = to_ticks(self.local_time)
        self._elapsed = 0
        self.rng = random.Random(self.rng_seed)

    @property
    def ticks(self) -> int:
        return self._anchor + round(self._elapsed * (1.0 + self.frequency_error))

    def _sync_field(self):
        self.local_time = to_seconds(self.ticks)

    def _rebase(self):
        self._anchor = self.ticks
        self._elapsed = 0

    def advance(self, dt: float) -> "SimulatedClock":
        return self.advance_ticks(to_ticks(dt))

    def advance_ticks(self, dt_ticks: int) -> "SimulatedClock":
        if dt_ticks < 0:
            raise ValueError(f"negative time step: {dt_ticks} ticks")
        self._elapsed += dt_ticks
        self._sync_field()
        return self

    def perturb(self, event: ClockEvent) -> "SimulatedClock":
        if event.frequency:
            if self.frequency_error + event.frequency <= -1:
                raise ValueError("frequency shift would stop or reverse the clock")
            self._rebase()
            self.frequency_error += event.frequency
        if event.phase:
            self._anchor += to_ticks(event.phase)
            self.phase_offset += event.phase
        self._sync_field()
        return self

    def random_event(self, phase_scale: float, frequency_scale: float) -> ClockEvent:
        """Draw a burst from this clock's own generator (uniform, symmetric)."""
        return ClockEvent(
            "burst",
            phase=self.rng.uniform(-phase_scale, phase_scale),
            frequency=self.rng.uniform(-frequency_scale, frequency_scale),
        )

    def set_ticks(self, ticks: int) -> "SimulatedClock":
        """Overwrite the reading, as a synchronization does. Rate is kept."""
        self._anchor = ticks
        self._elapsed = 0
        self._sync_field()
        return self

    def set(self, seconds: float) -> "SimulatedClock":
        return self.set_ticks(to_ticks(seconds))

    def read(self) -> float:
        return to_seconds(self.ticks)

    def read_ticks(self) -> int:
        return self.ticks


def advance(clock: SimulatedClock, dt: float) -> SimulatedClock:
    return clock.advance(dt)


def perturb(clock: SimulatedClock, event: ClockEvent) -> SimulatedClock:
    return clock.perturb(event)


def read(clock: SimulatedClock) -> float:
    return clock.read()
