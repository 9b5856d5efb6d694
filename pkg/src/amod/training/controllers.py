"""Fleet controllers: the three-step hierarchical pipeline, heuristics and MPC.

A controller's ``act(env)`` returns the ``FlowAction`` for the env's current
state plus an info dict.  Hierarchical controllers run

1. the dispatch LP on the current state,
2. a desired-distribution rule on the post-dispatch state,
3. the min-cost rebalancing LP toward that distribution.
"""
from __future__ import annotations

import numpy as np

from ..macro_env import FlowAction
from ..optim import dispatch, forecast_demand, mpc_plan, rebalance
from ..policy import DesiredDistribution, desired_to_counts, normalized_adjacency, sample_desired
from ..policy.dirichlet import dirichlet_log_prob

BASELINES = ("none", "equally_distributed", "plus_one")


def baseline_action(kind: str, state, net, history: dict | None = None) -> DesiredDistribution:
    """Heuristic desired distribution for the post-dispatch ``state``.

    ``history["last_departures"]`` holds per-station passenger departures of
    the previous step (used by ``plus_one``).
    """
    idle = np.asarray(state.idle, dtype=np.int64)
    m = int(idle.sum())
    n = len(idle)
    if kind == "none":
        u = idle / m if m else np.full(n, 1.0 / n)
        return DesiredDistribution(u, idle.copy())
    if kind in ("equally_distributed", "ed"):
        u = np.full(n, 1.0 / n)
        return DesiredDistribution(u, desired_to_counts(u, m))
    if kind in ("plus_one", "p1"):
        dep = np.zeros(n, dtype=np.int64)
        if history is not None and history.get("last_departures") is not None:
            dep = np.asarray(history["last_departures"], dtype=np.int64)
        raw = idle + dep
        if raw.sum() == 0:
            return DesiredDistribution(np.full(n, 1.0 / n), idle.copy())
        u = raw / raw.sum()
        return DesiredDistribution(u, desired_to_counts(u, m))
    raise ValueError(f"unknown baseline {kind!r}")


class Controller:
    name = "controller"

    def reset(self, env) -> None:
        pass

    def act(self, env):
        raise NotImplementedError


class HierarchicalController(Controller):
    """Dispatch LP, a desired-distribution rule, then the rebalancing LP."""

    def __init__(self, name: str, lp_method: str = "auto"):
        self.name = name
        self.lp_method = lp_method

    def desired(self, env, post) -> tuple[DesiredDistribution, dict]:
        raise NotImplementedError

    def act(self, env):
        state = env.state
        cfg = env.reward_cfg
        x = dispatch(state, env.net, cfg, self.lp_method)
        post = env.post_dispatch(x)
        desired, info = self.desired(env, post)
        y = rebalance(post, desired, env.net, cfg, self.lp_method)
        info.update(desired=desired, post=post)
        return FlowAction(x, y), info


class BaselineController(HierarchicalController):
    def __init__(self, kind: str, lp_method: str = "auto"):
        super().__init__(kind, lp_method)
        self.kind = kind

    def desired(self, env, post):
        hist = {"last_departures": env.last_departures}
        return baseline_action(self.kind, post, env.net, hist), {}


class GraphRLController(HierarchicalController):
    """Step 2 from a trained graph policy.

    With ``stochastic=False`` the Dirichlet mean is used instead of a sample.
    """

    def __init__(self, policy, k_horizon: int = 3, stochastic: bool = False, seed: int = 0,
                 lp_method: str = "auto", name: str = "graph_rl"):
        super().__init__(name, lp_method)
        self.policy = policy
        self.k_horizon = k_horizon
        self.stochastic = stochastic
        self.rng = np.random.default_rng(seed)
        self._adj = {}

    def adjacency(self, env) -> np.ndarray:
        key = id(env.net)
        if key not in self._adj:
            self._adj[key] = normalized_adjacency(env.net.edge_mask)
        return self._adj[key]

    def desired(self, env, post):
        feats = env.observe(post, self.k_horizon)
        alpha = self.policy.actor(feats, self.adjacency(env)).data
        m = int(post.idle.sum())
        if self.stochastic:
            d = sample_desired(alpha, m, self.rng)
        else:
            u = alpha / alpha.sum()
            d = DesiredDistribution(u, desired_to_counts(u, m), dirichlet_log_prob(alpha, u), alpha)
        return d, {"features": feats, "alpha": alpha}


class MPCController(Controller):
    """Receding-horizon MPC with perfect (oracle) or forecast demand."""

    def __init__(self, horizon: int = 6, oracle: bool = True, noise: bool = True, seed: int = 0,
                 lp_method: str = "auto"):
        self.horizon = horizon
        self.oracle = oracle
        self.noise = noise
        self.seed = seed
        self.lp_method = lp_method
        self.name = "mpc_oracle" if oracle else "mpc_forecast"
        self.rng = np.random.default_rng(seed)

    def reset(self, env) -> None:
        self.rng = np.random.default_rng([self.seed, env.seed & 0xFFFFFFFF])

    def window(self, env) -> int:
        # no planning past the last decision step of the episode
        return max(1, min(self.horizon, env.dm.horizon - env.state.t))

    def demand_view(self, env) -> np.ndarray:
        t = env.state.t
        h = self.window(env)
        if self.oracle:
            view = np.zeros((h, env.n, env.n), dtype=np.int64)
            for s in range(1, h):
                view[s] = env.peek_demand(t + s)
            return view
        return forecast_demand(env.dm, t, h, self.rng, noise=self.noise)

    def act(self, env):
        view = self.demand_view(env)
        act = mpc_plan(env.state, view, env.net, env.reward_cfg, len(view),
                       travel_time=env.travel_times(), method=self.lp_method,
                       max_wait=env.dm.max_wait)
        return act, {"demand_view": view}


def make_controller(name: str, policy=None, horizon: int = 6, seed: int = 0, lp_method: str = "auto",
                    k_horizon: int = 3) -> Controller:
    aliases = {"ed": "equally_distributed", "p1": "plus_one", "no_reb": "none"}
    name = aliases.get(name, name)
    if name in BASELINES:
        return BaselineController(name, lp_method)
    if name == "mpc_oracle":
        return MPCController(horizon, True, seed=seed, lp_method=lp_method)
    if name == "mpc_forecast":
        return MPCController(horizon, False, seed=seed, lp_method=lp_method)
    if name in ("graph_rl", "bc"):
        if policy is None:
            raise ValueError(f"controller {name!r} needs a policy checkpoint")
        return GraphRLController(policy, k_horizon, lp_method=lp_method, name=name)
    raise ValueError(f"unknown policy {name!r}")


def run_episode(env, controller: Controller, seed: int, init=None):
    """Roll ``controller`` through one episode; returns the env trajectory."""
    env.reset(seed=seed, init=init)
    controller.reset(env)
    while not env.done:
        action, _ = controller.act(env)
        env.step(action)
    return env.trajectory
