"""Transportation network, demand process and pricing for a station-based AMoD system.

A scenario bundles the station graph (travel times, prices, costs), a
time-dependent Poisson demand model and the reward configuration.  Scenarios
are loaded from / saved to JSON (see ``load_scenario``).  Time-indexed tables
are stored fully expanded as ``(T, n, n)`` arrays.

Timing convention: decisions happen at steps ``t = 0 .. T-1``; demand that
arrives at step ``t`` (``1 <= t <= T``) is drawn from ``rate[t - 1]``.
Prices and costs at decision step ``t`` come from ``price[t]``/``cost[t]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class ScenarioError(ValueError):
    """Malformed scenario file or violated scenario invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Directed station graph.

    ``travel_time[i, j]`` is a positive integer number of steps, or ``0`` when
    the edge is absent.  Self-loops always exist with travel time 1.
    """

    n_stations: int
    travel_time: np.ndarray
    price: np.ndarray
    cost: np.ndarray
    dt_seconds: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "travel_time", _frozen(np.asarray(self.travel_time, dtype=np.int64)))
        object.__setattr__(self, "price", _frozen(np.asarray(self.price, dtype=np.float64)))
        object.__setattr__(self, "cost", _frozen(np.asarray(self.cost, dtype=np.float64)))

    @property
    def edge_mask(self) -> np.ndarray:
        return self.travel_time > 0

    @property
    def edges(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(self.edge_mask)
        return list(zip(ii.tolist(), jj.tolist()))

    @property
    def move_mask(self) -> np.ndarray:
        """Edges usable for vehicle movements (no self-loops)."""
        m = self.edge_mask.copy()
        np.fill_diagonal(m, False)
        return m

    def price_at(self, t: int) -> np.ndarray:
        return self.price[min(max(t, 0), len(self.price) - 1)]

    def cost_at(self, t: int) -> np.ndarray:
        return self.cost[min(max(t, 0), len(self.cost) - 1)]

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.n_stations == other.n_stations
            and self.dt_seconds == other.dt_seconds
            and np.array_equal(self.travel_time, other.travel_time)
            and np.array_equal(self.price, other.price)
            and np.array_equal(self.cost, other.cost)
        )


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Independent Poisson arrivals per OD pair and step.

    ``rate[t - 1, i, j]`` is the mean number of requests from ``i`` to ``j``
    arriving at step ``t``.  With ``deterministic=True`` realized demand is
    ``round(rate)`` instead of a Poisson draw.
    """

    horizon: int
    rate: np.ndarray
    max_wait: int
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rate", _frozen(np.asarray(self.rate, dtype=np.float64)))

    @property
    def n_stations(self) -> int:
        return self.rate.shape[1]

    def rate_at(self, t: int) -> np.ndarray:
        """Arrival rates for demand arriving at step ``t`` (clamped to the horizon)."""
        return self.rate[min(max(t, 1), self.horizon) - 1]

    def __eq__(self, other):
        if not isinstance(other, DemandModel):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.max_wait == other.max_wait
            and self.seed == other.seed
            and self.deterministic == other.deterministic
            and np.array_equal(self.rate, other.rate)
        )


@dataclass(frozen=True)
class RewardConfig:
    beta: float | None = None
    discount: float = 0.97

    def __post_init__(self):
        if self.beta is not None and not self.beta >= 0:
            raise ScenarioError(f"beta must be nonnegative, got {self.beta}")
        if not 0 < self.discount <= 1:
            raise ScenarioError(f"gamma must lie in (0, 1], got {self.discount}")


@dataclass(frozen=True, eq=False)
class Scenario:
    network: Network
    demand: DemandModel
    reward: RewardConfig
    fleet_size: int
    meso: dict | None = None
    name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def n_stations(self) -> int:
        return self.network.n_stations

    @property
    def horizon(self) -> int:
        return self.demand.horizon

    def with_reward(self, reward: RewardConfig) -> "Scenario":
        return Scenario(self.network, self.demand, reward, self.fleet_size, self.meso, self.name, dict(self.extra))

    def with_demand(self, demand: DemandModel) -> "Scenario":
        return Scenario(self.network, demand, self.reward, self.fleet_size, self.meso, self.name, dict(self.extra))

    def __iter__(self):
        # allows ``net, dm, cfg = load_scenario(path)``
        return iter((self.network, self.demand, self.reward))

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.network == other.network
            and self.demand == other.demand
            and self.reward == other.reward
            and self.fleet_size == other.fleet_size
            and self.meso == other.meso
            and self.name == other.name
        )


# -- demand -----------------------------------------------------------------


def demand_rng(seed: int, t: int) -> np.random.Generator:
    """Random stream for the demand arriving at step ``t`` of an episode seeded ``seed``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(t)])


def sample_demand(model: DemandModel, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Realized demand ``d^t`` as an ``(n, n)`` integer matrix.

    Without an explicit ``rng`` the draw is a pure function of ``(model.seed, t)``.
    """
    if not 1 <= t <= model.horizon:
        raise ValueError(f"timestep {t} outside demand horizon [1, {model.horizon}]")
    lam = model.rate[t - 1]
    if model.deterministic:
        d = np.rint(lam).astype(np.int64)
    else:
        if rng is None:
            rng = demand_rng(model.seed, t)
        d = rng.poisson(lam).astype(np.int64)
    np.fill_diagonal(d, 0)
    return d


# -- costs --------------------------------------------------------------------


def effective_cost(net: Network, cfg: RewardConfig, i: int, j: int, t: int) -> float:
    if not (0 <= i < net.n_stations and 0 <= j < net.n_stations) or not net.edge_mask[i, j]:
        raise KeyError(f"unknown edge ({i},{j})")
    if cfg.beta is not None:
        return float(cfg.beta * net.travel_time[i, j])
    return float(net.cost_at(t)[i, j])


def cost_matrix(net: Network, cfg: RewardConfig, t: int) -> np.ndarray:
    """Vectorized ``effective_cost`` over all edges (0 on absent edges)."""
    if cfg.beta is not None:
        return cfg.beta * net.travel_time.astype(np.float64)
    return np.where(net.edge_mask, net.cost_at(t), 0.0)


# -- validation ---------------------------------------------------------------


def validate(scn: Scenario) -> None:
    net, dm = scn.network, scn.demand
    n = net.n_stations
    tt = net.travel_time
    if n < 1:
        raise ScenarioError("stations must be positive")
    if tt.shape != (n, n):
        raise ScenarioError(f"travel_time must be {n}x{n}, got {tt.shape}")
    if (tt < 0).any():
        i, j = np.argwhere(tt < 0)[0]
        raise ScenarioError(f"travel_time({i},{j}) must be a positive integer")
    if not (np.diag(tt) == 1).all():
        i = int(np.argmax(np.diag(tt) != 1))
        raise ScenarioError(f"travel_time({i},{i}) must be 1 (self-loop)")
    ncomp, _ = connected_components(csr_matrix(net.edge_mask.astype(np.int8)), directed=True, connection="strong")
    if ncomp != 1:
        raise ScenarioError(f"network is not strongly connected ({ncomp} components)")
    for name, arr in (("price", net.price), ("cost", net.cost), ("rate", dm.rate)):
        if arr.ndim != 3 or arr.shape[1:] != (n, n):
            raise ScenarioError(f"{name} must have shape (T, {n}, {n}), got {arr.shape}")
        bad = ~np.isfinite(arr) | (arr < 0)
        if bad.any():
            _, i, j = np.argwhere(bad)[0]
            raise ScenarioError(f"{name}({i},{j}) must be finite and nonnegative")
    if dm.rate.shape[0] != dm.horizon:
        raise ScenarioError(f"rate has {dm.rate.shape[0]} steps, horizon is {dm.horizon}")
    diag = np.einsum("tii->ti", dm.rate)
    if (diag > 0).any():
        i = int(np.argwhere(diag > 0)[0][1])
        raise ScenarioError(f"rate({i},{i}) must be 0 (no same-station trips)")
    off = (dm.rate > 0) & ~net.edge_mask[None]
    if off.any():
        _, i, j = np.argwhere(off)[0]
        raise ScenarioError(f"rate({i},{j}) positive on a missing edge")
    if dm.horizon < 1:
        raise ScenarioError("horizon must be positive")
    if dm.max_wait < 1:
        raise ScenarioError("tau_max must be a positive integer")
    if scn.fleet_size < 1:
        raise ScenarioError("fleet_size must be positive")
    if not net.dt_seconds > 0:
        raise ScenarioError("dt_seconds must be positive")


# -- serialization --------------------------------------------------------------


def _parse_table(spec, name: str, n: int, horizon: int) -> np.ndarray:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ScenarioError(f"{name} must be {{'constant': ...}} or {{'per_step': ...}}")
    (kind, values), = spec.items()
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name}: non-numeric entries") from exc
    if kind == "constant":
        if arr.shape != (n, n):
            raise ScenarioError(f"{name}.constant must be {n}x{n}, got {arr.shape}")
        return np.broadcast_to(arr, (horizon, n, n)).copy()
    if kind == "per_step":
        if arr.shape != (horizon, n, n):
            raise ScenarioError(f"{name}.per_step must be {horizon}x{n}x{n}, got {arr.shape}")
        return arr
    raise ScenarioError(f"{name}: unknown table kind {kind!r}")


def _parse_travel_time(values, n: int) -> np.ndarray:
    try:
        raw = np.array([[np.nan if v is None else v for v in row] for row in values], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("travel_time: non-numeric entries") from exc
    if raw.shape != (n, n):
        raise ScenarioError(f"travel_time must be {n}x{n}, got {raw.shape}")
    present = ~np.isnan(raw)
    vals = raw[present]
    if (vals != np.round(vals)).any():
        i, j = np.argwhere(present & (raw != np.round(np.nan_to_num(raw))))[0]
        raise ScenarioError(f"travel_time({i},{j}) = {raw[i, j]} is not an integer number of steps")
    if (vals < 1).any():
        i, j = np.argwhere(present & (np.nan_to_num(raw, nan=1.0) < 1))[0]
        raise ScenarioError(f"travel_time({i},{j}) must be a positive integer")
    return np.where(present, raw, 0).astype(np.int64)


def scenario_from_dict(d: dict) -> Scenario:
    required = ["stations", "horizon", "tau_max", "travel_time", "rate", "price", "cost", "fleet_size"]
    missing = [k for k in required if k not in d]
    if missing:
        raise ScenarioError(f"missing keys: {', '.join(missing)}")
    n, horizon = int(d["stations"]), int(d["horizon"])
    if n < 1 or horizon < 1:
        raise ScenarioError("stations and horizon must be positive")
    tt = _parse_travel_time(d["travel_time"], n)
    price = _parse_table(d["price"], "price", n, horizon)
    cost = _parse_table(d["cost"], "cost", n, horizon)
    rate = _parse_table(d["rate"], "rate", n, horizon)
    net = Network(n, tt, price, cost, float(d.get("dt_seconds", 60.0)))
    dm = DemandModel(horizon, rate, int(d["tau_max"]), int(d.get("seed", 0)), bool(d.get("deterministic", False)))
    beta = d.get("beta")
    reward = RewardConfig(None if beta is None else float(beta), float(d.get("gamma", 0.97)))
    scn = Scenario(net, dm, reward, int(d["fleet_size"]), d.get("meso"), str(d.get("name", "")))
    validate(scn)
    return scn


def _table(arr: np.ndarray) -> dict:
    if (arr == arr[0]).all():
        return {"constant": arr[0].tolist()}
    return {"per_step": arr.tolist()}


def scenario_to_dict(scn: Scenario) -> dict:
    net, dm = scn.network, scn.demand
    tt = [[int(v) if v > 0 else None for v in row] for row in net.travel_time]
    d = {
        "name": scn.name,
        "stations": net.n_stations,
        "dt_seconds": net.dt_seconds,
        "horizon": dm.horizon,
        "tau_max": dm.max_wait,
        "travel_time": tt,
        "rate": _table(dm.rate),
        "price": _table(net.price),
        "cost": _table(net.cost),
        "beta": scn.reward.beta,
        "gamma": scn.reward.discount,
        "fleet_size": scn.fleet_size,
        "seed": dm.seed,
    }
    if dm.deterministic:
        d["deterministic"] = True
    if scn.meso is not None:
        d["meso"] = scn.meso
    return d


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file.

    Raises ``ScenarioError`` for malformed files and violated invariants.
    The result unpacks as ``(network, demand, reward)``.
    """
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: top-level value must be an object")
    return scenario_from_dict(d)


def save_scenario(scn: Scenario, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scenario_to_dict(scn), indent=1))
    return path


def make_scenario(
    travel_time,
    rate,
    price,
    cost,
    fleet_size: int,
    horizon: int,
    tau_max: int = 3,
    dt_seconds: float = 60.0,
    beta: float | None = None,
    gamma: float = 0.97,
    seed: int = 0,
    deterministic: bool = False,
    name: str = "",
    meso: dict | None = None,
) -> Scenario:
    """Build a validated scenario in memory; 2-D tables are broadcast over time."""
    tt = np.asarray(travel_time, dtype=np.int64)
    n = tt.shape[0]

    def expand(a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 0:
            a = np.full((n, n), float(a))
        return np.broadcast_to(a, (horizon, n, n)).copy() if a.ndim == 2 else a

    rate = expand(rate)
    for t in range(horizon):
        np.fill_diagonal(rate[t], 0.0)
    net = Network(n, tt, expand(price), expand(cost), dt_seconds)
    dm = DemandModel(horizon, rate, tau_max, seed, deterministic)
    scn = Scenario(net, dm, RewardConfig(beta, gamma), fleet_size, meso, name)
    validate(scn)
    return scn


def steps_for(seconds: float, dt: float) -> int:
    """Whole timesteps needed to cover ``seconds`` (ceiling, at least 1)."""
    return max(1, math.ceil(seconds / dt - 1e-9))
