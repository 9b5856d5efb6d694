"""Synthetic scenario generators: Manhattan grids, stars and imbalanced networks."""
from __future__ import annotations

import math

import numpy as np

from .scenario import Scenario, ScenarioError, make_scenario

KINDS = ("grid", "star", "imbalanced")


def grid_positions(n: int) -> np.ndarray:
    """Row-major cell coordinates of ``n`` stations on a near-square grid."""
    cols = math.ceil(math.sqrt(n))
    return np.array([(k // cols, k % cols) for k in range(n)])


def manhattan_travel_time(n: int, block_steps: int = 1) -> np.ndarray:
    pos = grid_positions(n)
    d = np.abs(pos[:, None, :] - pos[None, :, :]).sum(-1) * block_steps
    tt = np.maximum(d, 1).astype(np.int64)
    np.fill_diagonal(tt, 1)
    return tt


def _pricing(tt: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray]:
    price = params.get("price_base", 2.0) + params.get("price_per_step", 3.0) * tt
    cost = params.get("cost_per_step", 1.0) * tt.astype(np.float64)
    np.fill_diagonal(price, 0.0)
    np.fill_diagonal(cost, 0.0)
    return price, cost


def generate_scenario(kind: str, n: int, params: dict | None = None) -> Scenario:
    """Build a validated synthetic scenario.

    Common ``params``: ``horizon``, ``tau_max``, ``dt_seconds``, ``fleet_size``,
    ``seed``, ``beta``, ``gamma``, ``deterministic``, ``price_base``,
    ``price_per_step``, ``cost_per_step``.

    * ``grid``: Manhattan travel times; rates ``rate`` (default ``2/(n-1)``,
      about two requests per station and step) scaled by a seeded random
      factor in [0.5, 1.5] per OD pair.
    * ``star``: station 0 is the hub, one step from every leaf; leaf-to-leaf
      trips take two steps.
    * ``imbalanced``: the first half of the stations are hot origins that
      send ``hot_rate`` passengers per step to each cold destination, which
      return only ``cold_rate``.  Vehicles pile up at the cold stations
      unless they are rebalanced.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ScenarioError(f"need at least 2 stations, got {n!r}")
    if kind not in KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    p = dict(params or {})
    rng = np.random.default_rng(p.get("seed", 0))
    if kind == "grid":
        tt = manhattan_travel_time(n, p.get("block_steps", 1))
        rate = p.get("rate", 2.0 / (n - 1)) * rng.uniform(0.5, 1.5, (n, n))
    elif kind == "star":
        tt = np.full((n, n), 2, dtype=np.int64)
        tt[0, :] = 1
        tt[:, 0] = 1
        np.fill_diagonal(tt, 1)
        rate = np.full((n, n), p.get("rate", 0.5))
        rate[0, :] *= p.get("hub_factor", 2.0)
        rate[:, 0] *= p.get("hub_factor", 2.0)
    else:
        hot = np.arange(n) < max(1, n // 2)
        tt = np.full((n, n), p.get("cross_steps", 1), dtype=np.int64)
        tt[np.ix_(hot, hot)] = 1
        tt[np.ix_(~hot, ~hot)] = 1
        np.fill_diagonal(tt, 1)
        rate = np.full((n, n), p.get("local_rate", 1.5))
        rate[np.ix_(hot, ~hot)] = p.get("hot_rate", 12.0)
        rate[np.ix_(~hot, hot)] = p.get("cold_rate", 3.0)
    np.fill_diagonal(rate, 0.0)
    price, cost = _pricing(tt, p)
    horizon = int(p.get("horizon", 24))
    fleet = p.get("fleet_size")
    if fleet is None:
        # enough vehicles to carry the mean demand once around the network
        fleet = max(n, int(round(rate.sum() * float((tt * rate).sum() / max(rate.sum(), 1e-9)))))
    return make_scenario(
        tt, rate, price, cost, int(fleet), horizon,
        tau_max=int(p.get("tau_max", 2)),
        dt_seconds=float(p.get("dt_seconds", 60.0)),
        beta=p.get("beta"),
        gamma=float(p.get("gamma", 0.97)),
        seed=int(p.get("seed", 0)),
        deterministic=bool(p.get("deterministic", False)),
        name=p.get("name", f"{kind}-{n}"),
    )
