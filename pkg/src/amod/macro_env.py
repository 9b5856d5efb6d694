"""Macroscopic AMoD simulator.

Idle vehicles, in-transit cohorts and waiting passengers evolve under
per-step flow actions.  Each step:

1. departures leave idle stock and become cohorts arriving at ``t + tau``;
2. served passengers are removed from the waiting queues, oldest first;
3. cohorts arriving at ``t + 1`` become idle at their destination;
4. demand for step ``t + 1`` is sampled and queued;
5. passengers older than ``tau_max`` steps leave the system;
6. the step profit ``sum (p - c) x - sum c y`` is returned.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenario import Scenario, RewardConfig, cost_matrix, demand_rng, sample_demand

PASSENGER, REBALANCE = "passenger", "rebalance"


class InfeasibleActionError(ValueError):
    pass


@dataclass(frozen=True)
class Cohort:
    arrival_t: int
    dest: int
    count: int
    kind: str
    origin: int = -1
    departed_t: int = -1


@dataclass
class FleetState:
    t: int
    idle: np.ndarray
    in_transit: list = field(default_factory=list)
    # (i, j) -> list of [arrived_t, count], oldest first
    waiting: dict = field(default_factory=dict)

    def copy(self) -> "FleetState":
        return FleetState(
            self.t,
            self.idle.copy(),
            list(self.in_transit),
            {k: [list(e) for e in v] for k, v in self.waiting.items()},
        )

    @property
    def n_stations(self) -> int:
        return len(self.idle)

    def waiting_matrix(self) -> np.ndarray:
        n = len(self.idle)
        w = np.zeros((n, n), dtype=np.int64)
        for (i, j), entries in self.waiting.items():
            w[i, j] = sum(c for _, c in entries)
        return w

    def n_in_transit(self, kind: str | None = None) -> int:
        return sum(c.count for c in self.in_transit if kind is None or c.kind == kind)

    def arrivals_matrix(self, t0: int, k: int) -> np.ndarray:
        """``out[s, i]`` = vehicles arriving at ``i`` at step ``t0 + 1 + s``, ``s < k``."""
        out = np.zeros((k, len(self.idle)))
        for c in self.in_transit:
            s = c.arrival_t - t0 - 1
            if 0 <= s < k:
                out[s, c.dest] += c.count
        return out


@dataclass
class FlowAction:
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "FlowAction":
        return cls(np.zeros((n, n), dtype=np.int64), np.zeros((n, n), dtype=np.int64))


@dataclass
class StepOutcome:
    reward: float
    served: int
    expired: int
    next: FleetState
    revenue: float = 0.0
    dispatch_cost: float = 0.0
    reb_cost: float = 0.0
    sampled: int = 0
    done: bool = False
    # (origin, wait_steps, count) for every served group
    waits: list = field(default_factory=list)
    n_match: int = 0
    n_reb: int = 0


@dataclass
class StepRecord:
    t: int
    idle: list
    served: int
    expired: int
    sampled: int
    waiting: int
    reward: float
    revenue: float
    dispatch_cost: float
    reb_cost: float
    n_match: int
    n_reb: int
    waits: list
    in_transit: int


@dataclass
class Trajectory:
    """Per-step log of one episode; consumed by ``metrics.compute_metrics``."""

    n_stations: int
    fleet_size: int
    dt_seconds: float
    horizon: int
    max_wait: int
    records: list = field(default_factory=list)
    done: bool = False

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"idle_{i}" for i in range(self.n_stations)]
                       + ["served", "expired", "reward", "reb_cost"])
            for r in self.records:
                w.writerow([r.t, *r.idle, r.served, r.expired, repr(r.reward), repr(r.reb_cost)])
        return path


def uniform_init(fleet_size: int, n: int) -> np.ndarray:
    """``floor(M / N)`` vehicles per station, remainder to the lowest indices."""
    base, rem = divmod(fleet_size, n)
    idle = np.full(n, base, dtype=np.int64)
    idle[:rem] += 1
    return idle


def check_action(state: FleetState, action: FlowAction, mask: np.ndarray) -> None:
    x, y = np.asarray(action.x), np.asarray(action.y)
    n = state.n_stations
    for name, a in (("x", x), ("y", y)):
        if a.shape != (n, n):
            raise InfeasibleActionError(f"{name} must be {n}x{n}, got {a.shape}")
        if (a < 0).any():
            i, j = np.argwhere(a < 0)[0]
            raise InfeasibleActionError(f"nonnegativity violated: {name}({i},{j}) = {a[i, j]}")
        if (np.diag(a) != 0).any():
            i = int(np.argmax(np.diag(a) != 0))
            raise InfeasibleActionError(f"{name}({i},{i}) must be 0: staying put is not a flow")
        if (a[~mask] != 0).any():
            i, j = np.argwhere((a != 0) & ~mask)[0]
            raise InfeasibleActionError(f"{name}({i},{j}) uses a missing edge")
    over = x > state.waiting_matrix()
    if over.any():
        i, j = np.argwhere(over)[0]
        raise InfeasibleActionError(f"demand constraint violated on ({i},{j}): x={x[i, j]} > waiting")
    out = x.sum(1) + y.sum(1)
    if (out > state.idle).any():
        i = int(np.argmax(out > state.idle))
        raise InfeasibleActionError(f"vehicle availability violated at station {i}: {out[i]} > idle {state.idle[i]}")


def serve_fifo(waiting: dict, x: np.ndarray, t: int) -> list:
    """Remove ``x`` passengers per OD pair, oldest first; returns ``(origin, wait, count)`` groups."""
    waits = []
    for i, j in zip(*np.nonzero(x)):
        need = int(x[i, j])
        q = waiting.get((int(i), int(j)), [])
        while need > 0:
            arrived, cnt = q[0]
            take = min(cnt, need)
            waits.append((int(i), t - arrived, take))
            need -= take
            if take == cnt:
                q.pop(0)
            else:
                q[0][1] = cnt - take
        if not q:
            waiting.pop((int(i), int(j)), None)
    return waits


class MacroEnv:
    """Macroscopic environment over a fixed scenario.

    ``reset(seed)`` fixes the episode's demand stream: the demand arriving at
    step ``t`` is a pure function of ``(seed, t)``, which lets oracle
    controllers look ahead through ``peek_demand``.
    """

    kind = "macro"

    def __init__(self, scenario: Scenario, reward: RewardConfig | None = None):
        self.scenario = scenario
        self.net = scenario.network
        self.dm = scenario.demand
        self.reward_cfg = reward if reward is not None else scenario.reward
        self.n = self.net.n_stations
        self.fleet_size = scenario.fleet_size
        self.mask = self.net.move_mask
        self.state: FleetState | None = None
        self.seed = scenario.demand.seed
        self.trajectory: Trajectory | None = None
        self.last_departures = np.zeros(self.n, dtype=np.int64)
        self.totals = defaultdict(int)

    # -- demand ----------------------------------------------------------------
    def peek_demand(self, t: int) -> np.ndarray:
        """Realized demand arriving at step ``t`` of the current episode (zeros past the horizon)."""
        if not 1 <= t <= self.dm.horizon:
            return np.zeros((self.n, self.n), dtype=np.int64)
        return sample_demand(self.dm, t, demand_rng(self.seed, t))

    def travel_times(self) -> np.ndarray:
        return self.net.travel_time

    # -- dynamics --------------------------------------------------------------
    def reset(self, seed: int | None = None, init=None) -> FleetState:
        if seed is not None:
            self.seed = int(seed)
        if init is None or (isinstance(init, str) and init == "uniform"):
            idle = uniform_init(self.fleet_size, self.n)
        else:
            idle = np.asarray(init, dtype=np.int64)
            if idle.shape != (self.n,) or (idle < 0).any():
                raise ValueError(f"custom init must be {self.n} nonnegative counts")
            if idle.sum() != self.fleet_size:
                raise ValueError(f"custom init sums to {idle.sum()}, fleet size is {self.fleet_size}")
        self.state = FleetState(0, idle.copy(), [], {})
        self.trajectory = Trajectory(self.n, self.fleet_size, self.net.dt_seconds, self.dm.horizon, self.dm.max_wait)
        self.last_departures = np.zeros(self.n, dtype=np.int64)
        self.totals = defaultdict(int)
        return self.state

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.t >= self.dm.horizon

    def post_dispatch(self, x: np.ndarray, state: FleetState | None = None) -> FleetState:
        """State seen after passenger departures at the current step (no time advance)."""
        s = (state or self.state).copy()
        x = np.asarray(x, dtype=np.int64)
        s.idle = s.idle - x.sum(1)
        serve_fifo(s.waiting, x, s.t)
        tt = self.travel_times()
        for i, j in zip(*np.nonzero(x)):
            s.in_transit.append(Cohort(s.t + int(tt[i, j]), int(j), int(x[i, j]), PASSENGER, int(i), s.t))
        return s

    def _depart(self, s: FleetState, x: np.ndarray, y: np.ndarray) -> None:
        tt = self.net.travel_time
        s.idle -= x.sum(1) + y.sum(1)
        for kind, f in ((PASSENGER, x), (REBALANCE, y)):
            for i, j in zip(*np.nonzero(f)):
                s.in_transit.append(Cohort(s.t + int(tt[i, j]), int(j), int(f[i, j]), kind, int(i), s.t))

    def _arrive(self, s: FleetState) -> None:
        keep = []
        for c in s.in_transit:
            if c.arrival_t <= s.t:
                s.idle[c.dest] += c.count
            else:
                keep.append(c)
        s.in_transit = keep

    def step(self, action: FlowAction) -> StepOutcome:
        s = self.state
        if s is None:
            raise RuntimeError("reset() must be called before step()")
        if self.done:
            raise RuntimeError("episode is over")
        x = np.asarray(action.x, dtype=np.int64)
        y = np.asarray(action.y, dtype=np.int64)
        check_action(s, FlowAction(x, y), self.mask)
        t = s.t
        price = self.net.price_at(t)
        cost = cost_matrix(self.net, self.reward_cfg, t)
        revenue = float((price * x).sum())
        dcost = float((cost * x).sum())
        rcost = float((cost * y).sum())

        s = s.copy()
        self._depart(s, x, y)
        waits = serve_fifo(s.waiting, x, t)
        n_match = s.n_in_transit(PASSENGER)
        n_reb = s.n_in_transit(REBALANCE)
        s.t = t + 1
        self._arrive(s)
        sampled = 0
        if s.t <= self.dm.horizon:
            d = self.peek_demand(s.t)
            sampled = int(d.sum())
            for i, j in zip(*np.nonzero(d)):
                s.waiting.setdefault((int(i), int(j)), []).append([s.t, int(d[i, j])])
        expired = self._expire(s)
        self.state = s
        self.last_departures = x.sum(1)
        out = StepOutcome(
            reward=revenue - dcost - rcost,
            served=int(x.sum()),
            expired=expired,
            next=s,
            revenue=revenue,
            dispatch_cost=dcost,
            reb_cost=rcost,
            sampled=sampled,
            done=s.t >= self.dm.horizon,
            waits=waits,
            n_match=n_match,
            n_reb=n_reb,
        )
        self._log(t, out)
        return out

    def _expire(self, s: FleetState) -> int:
        expired = 0
        tmax = self.dm.max_wait
        for key in list(s.waiting):
            q = s.waiting[key]
            while q and s.t - q[0][0] >= tmax:
                expired += q.pop(0)[1]
            if not q:
                del s.waiting[key]
        return expired

    def _log(self, t: int, out: StepOutcome) -> None:
        s = out.next
        tot = self.totals
        tot["sampled"] += out.sampled
        tot["served"] += out.served
        tot["expired"] += out.expired
        self.trajectory.records.append(StepRecord(
            t=t,
            idle=s.idle.tolist(),
            served=out.served,
            expired=out.expired,
            sampled=out.sampled,
            waiting=int(sum(c for q in s.waiting.values() for _, c in q)),
            reward=out.reward,
            revenue=out.revenue,
            dispatch_cost=out.dispatch_cost,
            reb_cost=out.reb_cost,
            n_match=out.n_match,
            n_reb=out.n_reb,
            waits=out.waits,
            in_transit=s.n_in_transit(),
        ))
        if out.done:
            self.trajectory.done = True

    # -- observation -------------------------------------------------------------
    def observe(self, state: FleetState | None = None, k_horizon: int = 3) -> np.ndarray:
        return observe(state or self.state, self.scenario, k_horizon)

    def feature_dim(self, k_horizon: int = 3) -> int:
        return feature_dim(k_horizon)


def feature_dim(k_horizon: int = 3) -> int:
    return 6 + 2 * k_horizon


def observe(state: FleetState, scenario: Scenario, k_horizon: int = 3) -> np.ndarray:
    """Per-station feature rows, in station order.

    Columns: idle share, passengers dispatched from the station at the
    current step, queued demand from the station, projected arrivals
    for the next ``k_horizon`` steps, expected outgoing demand for the next
    ``k_horizon`` steps, the fraction of the episode still to go, and
    ``sin``/``cos`` of the episode phase.  Counts are divided by the fleet
    share of one station, ``M / N``, so an even spread reads as 1.
    """
    M = float(scenario.fleet_size) / state.n_stations
    dm = scenario.demand
    n = state.n_stations
    t = state.t
    feats = np.zeros((n, feature_dim(k_horizon)))
    feats[:, 0] = state.idle / M
    for c in state.in_transit:
        if c.kind == PASSENGER and c.departed_t == t:
            feats[c.origin, 1] += c.count / M
    feats[:, 2] = state.waiting_matrix().sum(1) / M
    feats[:, 3:3 + k_horizon] = state.arrivals_matrix(t, k_horizon).T / M
    for s in range(k_horizon):
        ts = t + 1 + s
        if ts <= dm.horizon:
            feats[:, 3 + k_horizon + s] = dm.rate_at(ts).sum(1) / M
    feats[:, -3] = (dm.horizon - t) / dm.horizon
    phase = 2 * math.pi * t / dm.horizon
    feats[:, -2] = math.sin(phase)
    feats[:, -1] = math.cos(phase)
    return feats
