"""Queue-based mesoscopic simulator.

Every directed road link is a FIFO queue.  A vehicle entering a link may
leave no earlier than its free-flow time ``L / v_max`` and no earlier than
one headway after the previous scheduled exit; the headway jumps from
``h_free`` to ``h_jam`` once the link holds ``n_jam`` or more vehicles.
Travel times therefore depend on how many vehicles the operator sends.

``MesoEnv`` keeps the macro environment's interface (reset, step, observe,
post_dispatch, peek_demand, travel_times) and replaces its fixed-time
cohorts by vehicles moving through the link network.
"""
from __future__ import annotations

import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .macro_env import PASSENGER, REBALANCE, Cohort, FleetState, MacroEnv
from .scenario import RewardConfig, Scenario, ScenarioError

DEFAULT_SPEED = 10.0
SMOOTHING = 0.5
TIME_EPS = 1e-9


def headway(n: int, n_jam: float, h_free: float, h_jam: float) -> float:
    """Minimum spacing between consecutive exits; the boundary ``n == n_jam`` is congested."""
    if n < 0:
        raise ValueError("occupancy must be nonnegative")
    return h_free if n < n_jam else h_jam


@dataclass
class LinkQueue:
    length: float
    v_max: float
    n_jam: float = math.inf
    h_free: float = 0.0
    h_jam: float = 0.0
    background: int = 0
    src: int = -1
    dst: int = -1
    # (vehicle_id, entered_at, earliest_exit)
    occupants: deque = field(default_factory=deque)
    last_exit: float = -math.inf

    @property
    def free_flow(self) -> float:
        return self.length / self.v_max

    @property
    def occupancy(self) -> int:
        return len(self.occupants) + self.background


def inject(vehicle_id: int, link: LinkQueue, now: float) -> float:
    """Append a vehicle to ``link`` and return its scheduled exit time."""
    h = headway(link.occupancy, link.n_jam, link.h_free, link.h_jam)
    exit_t = now + link.free_flow
    if link.last_exit > -math.inf:
        exit_t = max(exit_t, link.last_exit + h)
    link.occupants.append((vehicle_id, now, exit_t))
    link.last_exit = exit_t
    return exit_t


@dataclass
class MesoVehicle:
    id: int
    route: list
    kind: str
    od: tuple
    departed_t: float
    hop: int = 0


@dataclass
class ArrivalEvent:
    vehicle_id: int
    station: int
    time: float


class MesoWorld:
    """All links and vehicles of one simulation, advanced by exit events.

    The heap holds only the head of each link; FIFO guarantees no other
    occupant can leave first.
    """

    def __init__(self, links: list[LinkQueue]):
        self.links = links
        self.vehicles: dict[int, MesoVehicle] = {}
        self.clock = 0.0
        self._heap: list = []
        self._next_id = 0
        self.traversals: list = []  # (link index, entered_at, exited_at)

    def _push_head(self, k: int) -> None:
        q = self.links[k].occupants
        if q:
            vid, _, ex = q[0]
            heapq.heappush(self._heap, (ex, k, vid))

    def depart(self, route: list, kind: str, od: tuple, now: float | None = None) -> int:
        now = self.clock if now is None else now
        if not route:
            raise ValueError("empty route")
        vid = self._next_id
        self._next_id += 1
        self.vehicles[vid] = MesoVehicle(vid, list(route), kind, tuple(od), now)
        self._enter(vid, route[0], now)
        return vid

    def _enter(self, vid: int, k: int, now: float) -> None:
        was_empty = not self.links[k].occupants
        inject(vid, self.links[k], now)
        if was_empty:
            self._push_head(k)

    def advance(self, until: float) -> list[ArrivalEvent]:
        """Process every exit up to and including ``until``."""
        if until < self.clock - TIME_EPS:
            raise ValueError("cannot advance backwards")
        events = []
        while self._heap and self._heap[0][0] <= until + TIME_EPS:
            ex, k, vid = heapq.heappop(self._heap)
            link = self.links[k]
            _, entered, _ = link.occupants.popleft()
            self.traversals.append((k, entered, ex))
            self._push_head(k)
            v = self.vehicles[vid]
            v.hop += 1
            if v.hop < len(v.route):
                self._enter(vid, v.route[v.hop], ex)
            else:
                events.append(ArrivalEvent(vid, link.dst, ex))
                del self.vehicles[vid]
        self.clock = max(self.clock, until)
        return events

    def n_on_links(self) -> int:
        return sum(len(l.occupants) for l in self.links)


class TravelTimeStats:
    """Exponentially smoothed realized OD travel times (seconds)."""

    def __init__(self, prior: np.ndarray, dt: float, alpha: float = SMOOTHING):
        self.prior = np.asarray(prior, dtype=np.float64)
        self.dt = float(dt)
        self.alpha = alpha
        self.est = np.full(self.prior.shape, np.nan)

    def observe(self, i: int, j: int, seconds: float) -> None:
        old = self.est[i, j] if not np.isnan(self.est[i, j]) else self.prior[i, j]
        self.est[i, j] = (1 - self.alpha) * old + self.alpha * seconds

    def seconds(self, i: int, j: int) -> float:
        return self.prior[i, j] if np.isnan(self.est[i, j]) else self.est[i, j]


def edge_travel_time(stats: TravelTimeStats, i: int, j: int) -> int:
    """Smoothed travel time for ``(i, j)`` in whole steps (ceiling, at least 1)."""
    return max(1, math.ceil(stats.seconds(i, j) / stats.dt - 1e-9))


def build_links(scenario: Scenario) -> tuple[list[LinkQueue], int]:
    """Link queues from the scenario's ``meso`` section.

    Without one, every station pair with a travel time gets a direct,
    uncongested link whose free-flow time equals that travel time.
    Returns the links and the number of graph nodes.
    """
    net = scenario.network
    spec = scenario.meso
    if not spec:
        links = []
        for i, j in zip(*np.nonzero(net.move_mask)):
            L = float(net.travel_time[i, j]) * net.dt_seconds * DEFAULT_SPEED
            links.append(LinkQueue(L, DEFAULT_SPEED, src=int(i), dst=int(j)))
        return links, net.n_stations
    try:
        raw = spec["links"]
        links = [LinkQueue(float(l["length_m"]), float(l["vmax_mps"]),
                           float(l.get("n_jam", math.inf)), float(l.get("h_free_s", 0.0)),
                           float(l.get("h_jam_s", l.get("h_free_s", 0.0))), int(l.get("background_n", 0)),
                           int(l["from"]), int(l["to"])) for l in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad meso link table: {exc}") from exc
    for l in links:
        if l.length <= 0 or l.v_max <= 0 or l.h_free < 0 or l.h_jam < l.h_free or l.background < 0:
            raise ScenarioError(f"invalid link {l.src}->{l.dst}")
    n_nodes = max([net.n_stations - 1] + [max(l.src, l.dst) for l in links]) + 1
    return links, n_nodes


def shortest_routes(links: list[LinkQueue], n_stations: int) -> dict:
    """Free-flow shortest route (list of link indices) for every station pair."""
    g = nx.DiGraph()
    for k, l in enumerate(links):
        if not g.has_edge(l.src, l.dst) or g[l.src][l.dst]["w"] > l.free_flow:
            g.add_edge(l.src, l.dst, w=l.free_flow, k=k)
    routes = {}
    for i in range(n_stations):
        if i not in g:
            continue
        paths = nx.single_source_dijkstra_path(g, i, weight="w")
        for j in range(n_stations):
            if j != i and j in paths:
                p = paths[j]
                routes[(i, j)] = [g[a][b]["k"] for a, b in zip(p, p[1:])]
    return routes


class MesoEnv(MacroEnv):
    """Macro interface over per-vehicle link queues with endogenous travel times."""

    kind = "meso"

    def __init__(self, scenario: Scenario, reward: RewardConfig | None = None, smoothing: float = SMOOTHING):
        super().__init__(scenario, reward)
        self.smoothing = smoothing
        self._links_template, _ = build_links(scenario)
        self.routes = shortest_routes(self._links_template, self.n)
        missing = [e for e in zip(*np.nonzero(self.mask)) if (int(e[0]), int(e[1])) not in self.routes]
        if missing:
            raise ScenarioError(f"no road route for station pairs {missing[:5]}")
        self.free_flow = np.zeros((self.n, self.n))
        for (i, j), r in self.routes.items():
            self.free_flow[i, j] = sum(self._links_template[k].free_flow for k in r)
        self.world: MesoWorld | None = None
        self.stats: TravelTimeStats | None = None
        self._vehicle_key: dict[int, tuple] = {}

    def _fresh_links(self) -> list[LinkQueue]:
        return [LinkQueue(l.length, l.v_max, l.n_jam, l.h_free, l.h_jam, l.background, l.src, l.dst)
                for l in self._links_template]

    def reset(self, seed: int | None = None, init=None) -> FleetState:
        st = super().reset(seed, init)
        self.world = MesoWorld(self._fresh_links())
        self.stats = TravelTimeStats(self.free_flow, self.net.dt_seconds, self.smoothing)
        self._vehicle_key = {}
        return st

    def travel_times(self) -> np.ndarray:
        tt = np.ones((self.n, self.n), dtype=np.int64)
        if self.stats is None:
            return np.maximum(np.ceil(self.free_flow / self.net.dt_seconds - 1e-9), 1).astype(np.int64)
        for i, j in self.routes:
            tt[i, j] = edge_travel_time(self.stats, i, j)
        return tt

    def _depart(self, s: FleetState, x: np.ndarray, y: np.ndarray) -> None:
        tt = self.travel_times()
        now = s.t * self.net.dt_seconds
        s.idle -= x.sum(1) + y.sum(1)
        for kind, f in ((PASSENGER, x), (REBALANCE, y)):
            for i, j in zip(*np.nonzero(f)):
                i, j = int(i), int(j)
                for _ in range(int(f[i, j])):
                    vid = self.world.depart(self.routes[(i, j)], kind, (i, j), now)
                    self._vehicle_key[vid] = (i, j, s.t, kind)
                    s.in_transit.append(Cohort(s.t + int(tt[i, j]), j, 1, kind, i, s.t))

    def _arrive(self, s: FleetState) -> None:
        dt = self.net.dt_seconds
        arrived = Counter()
        for ev in self.world.advance(s.t * dt):
            key = self._vehicle_key.pop(ev.vehicle_id)
            origin, dest, departed, _ = key
            s.idle[dest] += 1
            self.stats.observe(origin, dest, ev.time - departed * dt)
            arrived[key] += 1
        keep = []
        for c in s.in_transit:
            key = (c.origin, c.dest, c.departed_t, c.kind)
            if arrived[key] > 0:
                arrived[key] -= 1
                continue
            if c.arrival_t <= s.t:
                # still on the road: expect it next step
                c = Cohort(s.t + 1, c.dest, c.count, c.kind, c.origin, c.departed_t)
            keep.append(c)
        s.in_transit = keep
