"""Mobile clocks around a global time source.

Each agent carries a drifting clock plus two records: ``gamma_sync_record``
(true time of its last sync from the source, possibly inherited through
peers) and ``clock_sync_record`` (true time of its last peer sync). Agents
inside the source's circle sync from it directly; agents outside sync in
ad hoc groups by electing the member with the freshest source record.

Two protocols share the same world:

``proposed``
    groups run the recursively doubled shift-max and adopt the winner's
    time, corrected for link delay.
``baseline``
    word of mouth: on contact the fresher clock hands its time over as is,
    and the receiver is set behind by a random manual-reset lag.
"""
from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .collectives import ReductionKind, recursive_doubled_shift_copy
from .timebase import ClockEvent, GlobalClock, SimulatedClock, to_ticks

NEVER = -math.inf
PROTOCOLS = ("proposed", "baseline")


class Mode(str, enum.Enum):
    PASSIVE = "passive"
    AGGRESSIVE = "aggressive"


class Zone(str, enum.Enum):
    IN_GAMMA = "in"
    OUT_GAMMA = "out"


@dataclass(frozen=True)
class Area:
    x: float
    y: float
    radius: float

    def distance(self, p: Sequence[float]) -> float:
        return math.hypot(p[0] - self.x, p[1] - self.y)

    def contains(self, p: Sequence[float]) -> bool:
        return self.distance(p) <= self.radius


@dataclass
class AgentClock:
    clock: SimulatedClock
    position: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    ranging_capable: bool = False
    authorized: bool = True
    broadcast_radius: float = 8.0
    mode: Mode = Mode.AGGRESSIVE
    state: Zone = Zone.OUT_GAMMA
    gamma_sync_record: float = NEVER
    clock_sync_record: float = NEVER
    disrupted: bool = False
    previous_position: Optional[tuple[float, float]] = None
    gamma_distance: Optional[float] = None
    previous_gamma_distance: Optional[float] = None
    waypoint: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.ranging_capable:
            self.mode = Mode.AGGRESSIVE
        if self.previous_position is None:
            self.previous_position = self.position

    @property
    def time(self) -> float:
        return self.clock.read()

    @property
    def receding_from_gamma(self) -> bool:
        if self.gamma_distance is None or self.previous_gamma_distance is None:
            return False
        return self.gamma_distance > self.previous_gamma_distance


# --------------------------------------------------------------------------
# per-agent protocol actions


def _adopt_gamma(agent: AgentClock, g_ticks: int, g: float) -> None:
    agent.clock.set_ticks(g_ticks)
    agent.gamma_sync_record = g


def in_gamma_passive(agent: AgentClock, g: float, threshold: float) -> AgentClock:
    """Query the source; reset only once the reading is off by more than Th."""
    if abs(g - agent.time) > threshold:
        _adopt_gamma(agent, to_ticks(g), g)
    return agent


def in_gamma_aggressive(agent: AgentClock, g: float) -> AgentClock:
    _adopt_gamma(agent, to_ticks(g), g)
    return agent


def update_mode(agent: AgentClock) -> None:
    """Ranging agents stay passive while approaching the source, else go aggressive."""
    if not agent.ranging_capable:
        agent.mode = Mode.AGGRESSIVE
    elif agent.receding_from_gamma:
        agent.mode = Mode.AGGRESSIVE
    else:
        agent.mode = Mode.PASSIVE


def _receding(a: AgentClock, b: AgentClock) -> bool:
    before = math.dist(a.previous_position, b.previous_position)
    return math.dist(a.position, b.position) > before


def form_adhoc_groups(agents: Sequence[AgentClock], candidates: Optional[Iterable[int]] = None,
                      exclude_receding: bool = True) -> list[list[int]]:
    """Connected components of the proximity graph among ``candidates``.

    A link needs both agents within each other's broadcast radius. A link
    is dropped when the pair is drifting apart and either side can range.
    Only components of two or more agents are returned, members sorted.
    """
    idx = sorted(range(len(agents)) if candidates is None else candidates)
    if len(idx) < 2:
        return []
    pos = np.array([agents[i].position for i in idx], dtype=float)
    prev = np.array([agents[i].previous_position for i in idx], dtype=float)
    radius = np.array([agents[i].broadcast_radius for i in idx], dtype=float)
    ranging = np.array([agents[i].ranging_capable for i in idx], dtype=bool)

    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    link = dist <= np.minimum(radius[:, None], radius[None, :])
    if exclude_receding:
        before = np.sqrt(((prev[:, None, :] - prev[None, :, :]) ** 2).sum(-1))
        apart = dist > before
        link &= ~(apart & (ranging[:, None] | ranging[None, :]))
    np.fill_diagonal(link, False)

    parent = list(range(len(idx)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(*np.nonzero(np.triu(link))):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, list[int]] = {}
    for k in range(len(idx)):
        comps.setdefault(find(k), []).append(idx[k])
    return [members for _, members in sorted(comps.items()) if len(members) >= 2]


def form_adhoc_group(agents: Sequence[AgentClock]) -> list[int]:
    """The largest group among ``agents`` (indices into the given sequence)."""
    groups = form_adhoc_groups(agents)
    return max(groups, key=len) if groups else []


@dataclass
class GroupSyncResult:
    winner: Optional[int]
    key: float
    comm_rounds: int
    updated: list[int] = field(default_factory=list)


def out_gamma_sync(agents: Sequence[AgentClock], group: Sequence[int], g: float,
                   departed: Iterable[int] = ()) -> GroupSyncResult:
    """Shift-max over the group on source records; members adopt the winner.

    The winner's reading travels with its key. Link delay is symmetric and
    removed by the half-RTT correction, so an adopter ends up with the
    winner's reading at the moment of adoption. Members listed in
    ``departed`` left before the exchange finished and are not touched.
    """
    if len(group) < 2:
        raise ValueError("a group needs at least two members")
    members = list(group)
    keyed = [(agents[m].gamma_sync_record, m) for m in members]
    res = recursive_doubled_shift_copy(len(members), keyed, ReductionKind.RUNNING_MAX_KEYED)
    key, winner = res.values[0]
    out = GroupSyncResult(winner, key, res.comm_rounds)
    if key == NEVER:
        return out
    gone = set(departed)
    source = agents[winner]
    reading = source.clock.read_ticks()
    for m in members:
        if m in gone:
            continue
        a = agents[m]
        if m != winner:
            a.clock.set_ticks(reading)
            a.gamma_sync_record = max(a.gamma_sync_record, key)
        a.clock_sync_record = g
        out.updated.append(m)
    return out


def baseline_contact_sync(source: AgentClock, target: AgentClock, lag: float) -> AgentClock:
    """Hand ``source``'s time to ``target`` with no delay correction.

    The manual reset takes ``lag`` seconds, so the target ends up that far
    behind. The target also inherits the source's record and can pass the
    time on, which is how word-of-mouth error accumulates.
    """
    if source.gamma_sync_record == NEVER:
        return target
    target.clock.set_ticks(source.clock.read_ticks() - to_ticks(lag))
    target.gamma_sync_record = max(target.gamma_sync_record, source.gamma_sync_record)
    return target


def word_of_mouth_chain(n: int, lag: float) -> list[float]:
    """Errors along p_1 -> p_2 -> ... -> p_n where p_1 is the authority.

    Returns ``|T_k - G|`` for every person after the chain has run.
    """
    if n < 1:
        raise ValueError("chain needs at least one person")
    truth = GlobalClock()
    people = [AgentClock(SimulatedClock(i, local_time=1000.0 * (i + 1))) for i in range(n)]
    in_gamma_aggressive(people[0], truth.true_time)
    for k in range(1, n):
        baseline_contact_sync(people[k - 1], people[k], lag)
    g = truth.true_time
    return [abs(p.time - g) for p in people]


def fraction_synchronized(agents: Sequence[AgentClock], g: float, threshold: float) -> float:
    if not agents:
        return 0.0
    g_ticks = to_ticks(g)
    th = to_ticks(threshold)
    return sum(abs(a.clock.read_ticks() - g_ticks) <= th for a in agents) / len(agents)


# --------------------------------------------------------------------------
# world


@dataclass
class ScenarioConfig:
    """One experiment. Distances in metres, times in seconds."""

    name: str = "A"
    width: float = 100.0
    height: float = 100.0
    gamma_x: float = 50.0
    gamma_y: float = 50.0
    gamma_radius: float = 15.0
    fenced: bool = False
    authorized_fraction: float = 1.0
    # chance that an authorized agent's next waypoint lies inside the fence
    authorized_return: float = 0.5
    disruption_areas: list[tuple[float, float, float]] = field(default_factory=list)
    agent_count: int = 100
    speed: float = 1.5
    broadcast_radius: float = 8.0
    ranging_fraction: float = 0.5
    threshold: float = 0.5
    dt: float = 0.1
    duration: float = 30.0
    initial_offset: float = 60.0
    frequency_ppm: float = 100.0
    lag_min: float = 0.2
    lag_max: float = 1.0
    burst_rate: float = 0.0
    burst_phase: float = 0.05
    burst_ppm: float = 10.0
    rng_seed: int = 0
    protocol: str = "proposed"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("world dimensions must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.dt <= 0 or self.duration < 0:
            raise ValueError("dt must be positive and duration non-negative")
        if self.agent_count < 0:
            raise ValueError("agent_count must be non-negative")
        if not 0 <= self.authorized_fraction <= 1 or not 0 <= self.ranging_fraction <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if not 0 <= self.lag_min <= self.lag_max:
            raise ValueError("lag range must satisfy 0 <= lag_min <= lag_max")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        for x, y, r in [(self.gamma_x, self.gamma_y, self.gamma_radius), *self.disruption_areas]:
            if r <= 0 or x - r < 0 or y - r < 0 or x + r > self.width or y + r > self.height:
                raise ValueError(f"area ({x}, {y}, r={r}) does not fit inside the world")

    @property
    def gamma(self) -> Area:
        return Area(self.gamma_x, self.gamma_y, self.gamma_radius)

    @property
    def ticks(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class MetricsSeries:
    scenario: str
    protocol: str
    seed: int
    records: list[tuple[float, float]] = field(default_factory=list)

    def append(self, t: float, fraction: float) -> None:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction out of range")
        if self.records and t <= self.records[-1][0]:
            raise ValueError("timestamps must increase")
        self.records.append((t, fraction))

    def steady_state(self) -> float:
        """Mean fraction over the last third of the records."""
        if not self.records:
            return float("nan")
        k = max(1, math.ceil(len(self.records) / 3))
        tail = self.records[-k:]
        return sum(f for _, f in tail) / len(tail)


class World:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.gamma = config.gamma
        self.disruptions = [Area(*a) for a in config.disruption_areas]
        self.truth = GlobalClock()
        self.tick = 0
        # separate streams keep the two protocols on identical trajectories
        self.move_rng = random.Random(f"move-{config.rng_seed}")
        self.proto_rng = random.Random(f"proto-{config.rng_seed}")
        self.drift_rng = random.Random(f"drift-{config.rng_seed}")
        self.agents = self._populate()
        self._refresh_states()

    def _random_point(self, inside: Optional[Area] = None) -> tuple[float, float]:
        rng = self.move_rng
        if inside is not None:
            r = inside.radius * math.sqrt(rng.random())
            a = rng.uniform(0, 2 * math.pi)
            return (inside.x + r * math.cos(a), inside.y + r * math.sin(a))
        return (rng.uniform(0, self.config.width), rng.uniform(0, self.config.height))

    def _populate(self) -> list[AgentClock]:
        cfg = self.config
        n_auth = round(cfg.authorized_fraction * cfg.agent_count) if cfg.fenced else cfg.agent_count
        agents = []
        for i in range(cfg.agent_count):
            rng = self.move_rng
            authorized = i < n_auth
            ranging = rng.random() < cfg.ranging_fraction
            offset = rng.uniform(-cfg.initial_offset, cfg.initial_offset)
            freq = rng.uniform(-cfg.frequency_ppm, cfg.frequency_ppm) * 1e-6
            home = self.gamma if cfg.fenced and authorized else None
            pos = self._random_point(home)
            clock = SimulatedClock(i, local_time=offset, frequency_error=freq,
                                   rng_seed=rng.randrange(2**32))
            agent = AgentClock(clock, pos, (0.0, 0.0), ranging, authorized, cfg.broadcast_radius)
            agent.waypoint = self._next_waypoint(agent)
            agents.append(agent)
        return agents

    def _next_waypoint(self, agent: AgentClock) -> tuple[float, float]:
        cfg = self.config
        if cfg.fenced and agent.authorized and self.move_rng.random() < cfg.authorized_return:
            return self._random_point(self.gamma)
        return self._random_point()

    def _move(self, agent: AgentClock, dt: float) -> None:
        cfg = self.config
        x, y = agent.position
        wx, wy = agent.waypoint
        dist = math.hypot(wx - x, wy - y)
        step = cfg.speed * dt
        if dist <= step:
            agent.velocity = ((wx - x) / dt, (wy - y) / dt) if dt else (0.0, 0.0)
            x, y = wx, wy
            agent.waypoint = self._next_waypoint(agent)
        else:
            vx, vy = cfg.speed * (wx - x) / dist, cfg.speed * (wy - y) / dist
            x, y = x + vx * dt, y + vy * dt
            agent.velocity = (vx, vy)
        # reflect at the walls
        if x < 0 or x > cfg.width:
            x = -x if x < 0 else 2 * cfg.width - x
            agent.velocity = (-agent.velocity[0], agent.velocity[1])
        if y < 0 or y > cfg.height:
            y = -y if y < 0 else 2 * cfg.height - y
            agent.velocity = (agent.velocity[0], -agent.velocity[1])
        agent.position = (x, y)

    def _refresh_states(self) -> None:
        for a in self.agents:
            a.previous_gamma_distance = a.gamma_distance
            a.gamma_distance = self.gamma.distance(a.position)
            a.disrupted = any(d.contains(a.position) for d in self.disruptions)
            allowed = not self.config.fenced or a.authorized
            a.state = Zone.IN_GAMMA if a.gamma_distance <= self.gamma.radius and allowed else Zone.OUT_GAMMA
            update_mode(a)

    def g(self) -> float:
        return self.truth.true_time

    def fraction_synchronized(self) -> float:
        return fraction_synchronized(self.agents, self.g(), self.config.threshold)


def _apply_drift(world: World, dt: float) -> None:
    cfg = world.config
    ticks = to_ticks(dt)
    p = cfg.burst_rate * dt
    for a in world.agents:
        a.clock.advance_ticks(ticks)
        if p and world.drift_rng.random() < p:
            a.clock.perturb(ClockEvent(
                "burst",
                phase=world.drift_rng.uniform(-cfg.burst_phase, cfg.burst_phase),
                frequency=world.drift_rng.uniform(-cfg.burst_ppm, cfg.burst_ppm) * 1e-6,
            ))


def _sync_in_gamma(world: World) -> None:
    g = world.g()
    th = world.config.threshold
    for a in world.agents:
        if a.state is not Zone.IN_GAMMA or a.disrupted:
            continue
        if world.config.protocol == "proposed" and a.mode is Mode.PASSIVE:
            in_gamma_passive(a, g, th)
        else:
            in_gamma_aggressive(a, g)


def _outside(world: World) -> list[int]:
    return [i for i, a in enumerate(world.agents)
            if a.state is Zone.OUT_GAMMA and not a.disrupted]


def _sync_proposed(world: World) -> None:
    g = world.g()
    for group in form_adhoc_groups(world.agents, _outside(world)):
        out_gamma_sync(world.agents, group, g)


def _sync_baseline(world: World) -> None:
    cfg = world.config
    agents = world.agents
    idx = _outside(world)
    for group in form_adhoc_groups(agents, idx, exclude_receding=False):
        for pos, i in enumerate(group):
            for j in group[pos + 1:]:
                a, b = agents[i], agents[j]
                if math.dist(a.position, b.position) > min(a.broadcast_radius, b.broadcast_radius):
                    continue
                if a.gamma_sync_record == b.gamma_sync_record:
                    continue
                src, dst = (a, b) if a.gamma_sync_record > b.gamma_sync_record else (b, a)
                lag = world.proto_rng.uniform(cfg.lag_min, cfg.lag_max)
                baseline_contact_sync(src, dst, lag)


def step_world(world: World, dt: Optional[float] = None) -> World:
    """Advance one tick: move, drift, reclassify, then run the protocol."""
    dt = world.config.dt if dt is None else dt
    for a in world.agents:
        a.previous_position = a.position
        world._move(a, dt)
    world.truth.advance(dt)
    _apply_drift(world, dt)
    world._refresh_states()
    _sync_in_gamma(world)
    if world.config.protocol == "proposed":
        _sync_proposed(world)
    else:
        _sync_baseline(world)
    world.tick += 1
    return world


def run_world(config: ScenarioConfig) -> MetricsSeries:
    world = World(config)
    series = MetricsSeries(config.name, config.protocol, config.rng_seed)
    for k in range(1, config.ticks + 1):
        step_world(world)
        series.append(round(k * config.dt, 9), world.fraction_synchronized())
    return series
