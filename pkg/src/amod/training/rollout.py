"""On-policy episode rollouts of the hierarchical Graph-RL controller."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..macro_env import FlowAction
from ..optim import dispatch, rebalance
from ..policy import DesiredDistribution, normalized_adjacency, sample_desired


@dataclass
class Transition:
    features: np.ndarray
    alpha: np.ndarray
    u_tilde: np.ndarray
    u_hat: np.ndarray
    log_prob: float
    reward: float
    next_features: np.ndarray
    done: bool


@dataclass
class EpisodeSummary:
    ret: float
    served: int
    expired: int
    reb_cost: float
    steps: int


def rollout_episode(env, policy, rng: np.random.Generator, k_horizon: int = 3, desired_fn=None,
                    lp_method: str = "auto") -> tuple[list[Transition], EpisodeSummary]:
    """Run the three-step policy from the env's current (reset) state to the end.

    ``desired_fn(alpha, post_state, rng)`` may replace Dirichlet sampling,
    e.g. to force a fixed desired distribution.  ``next_features`` of each
    transition is the observation the policy sees at the following step.
    """
    if env.state is None:
        raise RuntimeError("env must be reset before a rollout")
    adj = normalized_adjacency(env.net.edge_mask)
    cfg = env.reward_cfg
    out_t: list[Transition] = []
    ret = reb = 0.0
    served = expired = 0
    while not env.done:
        x = dispatch(env.state, env.net, cfg, lp_method)
        post = env.post_dispatch(x)
        feats = env.observe(post, k_horizon)
        alpha = policy.actor(feats, adj).data
        m = int(post.idle.sum())
        if desired_fn is None:
            d = sample_desired(alpha, m, rng)
        else:
            d = desired_fn(alpha, post, rng)
            if not isinstance(d, DesiredDistribution):
                raise TypeError("desired_fn must return a DesiredDistribution")
        y = rebalance(post, d, env.net, cfg, lp_method)
        res = env.step(FlowAction(x, y))
        if out_t:
            out_t[-1].next_features = feats
        out_t.append(Transition(feats, alpha, np.asarray(d.u_tilde), np.asarray(d.u_hat), float(d.log_prob),
                                res.reward, feats, res.done))
        ret += res.reward
        reb += res.reb_cost
        served += res.served
        expired += res.expired
    if out_t:
        # the terminal target is masked by done; keep a well-formed table anyway
        out_t[-1].next_features = env.observe(env.state, k_horizon)
    return out_t, EpisodeSummary(ret, served, expired, reb, len(out_t))
