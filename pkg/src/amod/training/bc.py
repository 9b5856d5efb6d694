"""Behavior cloning of the desired distribution from MPC-Oracle logs."""
from __future__ import annotations

import numpy as np

from ..policy import normalized_adjacency
from ..policy.dirichlet import clamp_simplex, dirichlet_log_prob
from .a2c import SGDMomentum, clip_grad_norm
from .controllers import MPCController


def expert_target(post_idle: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Share of available vehicles each station ends up with after rebalancing."""
    counts = np.asarray(post_idle, dtype=np.float64) - y.sum(1) + y.sum(0)
    total = counts.sum()
    if total <= 0:
        return np.full(len(counts), 1.0 / len(counts))
    return clamp_simplex(counts / total)


def expert_dataset(env, seeds, horizon: int = 6, k_horizon: int = 3, lp_method: str = "auto") -> list:
    """``(features, target)`` pairs from MPC-Oracle episodes on ``env``.

    Features are observed on the state after the expert's own dispatch,
    matching what the graph policy sees.
    """
    ctrl = MPCController(horizon, oracle=True, lp_method=lp_method)
    data = []
    for seed in seeds:
        env.reset(seed=int(seed))
        ctrl.reset(env)
        while not env.done:
            act, _ = ctrl.act(env)
            post = env.post_dispatch(act.x)
            data.append((env.observe(post, k_horizon), expert_target(post.idle, act.y)))
            env.step(act)
    return data


def bc_nll(policy, features: np.ndarray, targets: np.ndarray, adjacency) -> float:
    """Mean negative log-likelihood of ``targets`` under the policy's Dirichlet."""
    alpha = policy.actor(features, adjacency).data
    return float(-np.mean(dirichlet_log_prob(alpha, targets)))


def train_bc(policy, dataset: list, epochs: int, lr: float = 1e-3, batch_size: int = 64, momentum: float = 0.9,
             grad_clip: float = 10.0, adjacency=None, seed: int = 0) -> list[float]:
    """Minimize ``-sum log Dir(target | alpha(features))`` by minibatch SGD.

    Returns the mean training negative log-likelihood before each epoch's
    updates followed by the final value (``epochs + 1`` entries).
    """
    if not dataset:
        raise ValueError("train_bc needs a nonempty dataset")
    feats = np.stack([f for f, _ in dataset])
    targets = clamp_simplex(np.stack([u for _, u in dataset]))
    if adjacency is None:
        adjacency = normalized_adjacency(np.ones((feats.shape[1],) * 2, dtype=bool))
    rng = np.random.default_rng(seed)
    opt = SGDMomentum(policy.group("actor"), lr, momentum)
    curve = [bc_nll(policy, feats, targets, adjacency)]
    for _ in range(epochs):
        order = rng.permutation(len(feats))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            policy.zero_grad()
            alpha = policy.actor(feats[idx], adjacency)
            loss = -dirichlet_log_prob(alpha, targets[idx]).sum() * (1.0 / len(idx))
            loss.backward()
            clip_grad_norm(opt.params, grad_clip)
            opt.step()
        policy.zero_grad()
        curve.append(bc_nll(policy, feats, targets, adjacency))
    return curve
