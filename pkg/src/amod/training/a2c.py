"""Advantage actor-critic for the Step-2 graph policy."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..policy import normalized_adjacency
from ..policy.dirichlet import dirichlet_entropy, dirichlet_log_prob
from .rollout import rollout_episode

LOG_COLUMNS = ["episode", "return", "served", "expired", "reb_cost", "actor_loss", "critic_loss", "entropy",
               "wall_ms"]


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 300
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    gamma: float = 0.97
    entropy_coef: float = 0.0
    grad_clip: float = 10.0
    seed: int = 0
    reward_scale: float = 1e-3
    momentum: float = 0.9
    k_horizon: int = 3
    # episodes at the start that update only the critic
    critic_warmup: int = 0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        for k in ("lr_actor", "lr_critic", "grad_clip", "reward_scale"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be nonnegative")
        if self.critic_warmup < 0:
            raise ValueError("critic_warmup must be >= 0")


@dataclass
class LossReport:
    actor: float
    critic: float
    entropy: float
    grad_norm_actor: float = 0.0
    grad_norm_critic: float = 0.0


class SGDMomentum:
    """Heavy-ball SGD: ``v = mu v + g``, ``p -= lr v``."""

    def __init__(self, params: list, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v


def clip_grad_norm(params: list, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def _stack(transitions, attr):
    return np.stack([getattr(tr, attr) for tr in transitions])


def advantages(policy, transitions, cfg: TrainConfig, adjacency) -> tuple:
    """``(A, V)`` with ``A_t = r_t scale + gamma V(s_{t+1}) (1 - done) - V(s_t)`` (``V`` is a Tensor)."""
    v = policy.critic(_stack(transitions, "features"), adjacency)
    v_next = policy.critic(_stack(transitions, "next_features"), adjacency).data
    r = np.array([tr.reward for tr in transitions]) * cfg.reward_scale
    notdone = 1.0 - np.array([tr.done for tr in transitions], dtype=np.float64)
    target = r + cfg.gamma * v_next * notdone
    return target - v, v


def actor_loss(policy, transitions, adv: np.ndarray, entropy_coef: float, adjacency):
    """``-sum log pi(u_t | s_t) A_t - coef sum H(Dir(alpha_t))`` and the mean entropy."""
    alpha = policy.actor(_stack(transitions, "features"), adjacency)
    logp = dirichlet_log_prob(alpha, _stack(transitions, "u_tilde"))
    ent = dirichlet_entropy(alpha)
    loss = -(logp * np.asarray(adv, dtype=np.float64)).sum()
    if entropy_coef:
        loss = loss - entropy_coef * ent.sum()
    return loss, float(ent.data.mean())


def a2c_update(policy, transitions, cfg: TrainConfig, adjacency=None, optimizers=None,
               advantage_override=None, update_actor: bool = True) -> LossReport:
    """One actor step and one critic step on a full on-policy episode.

    ``optimizers`` is an ``(actor_opt, critic_opt)`` pair that carries
    momentum across calls; fresh ones are made when omitted.
    ``advantage_override`` replaces the critic's advantage for the actor loss.
    With ``update_actor=False`` only the critic moves.
    """
    if not transitions:
        raise ValueError("a2c_update needs at least one transition")
    if adjacency is None:
        adjacency = normalized_adjacency(np.ones((transitions[0].features.shape[0],) * 2, dtype=bool))
    if optimizers is None:
        optimizers = make_optimizers(policy, cfg)
    opt_a, opt_c = optimizers
    policy.zero_grad()
    adv, _ = advantages(policy, transitions, cfg, adjacency)
    critic_loss = adv.square().sum()
    critic_loss.backward()
    a_used = adv.data if advantage_override is None else np.broadcast_to(
        np.asarray(advantage_override, dtype=np.float64), adv.shape)
    loss, ent = actor_loss(policy, transitions, a_used, cfg.entropy_coef, adjacency)
    loss.backward()
    gn_a = clip_grad_norm(opt_a.params, cfg.grad_clip)
    gn_c = clip_grad_norm(opt_c.params, cfg.grad_clip)
    if update_actor:
        opt_a.step()
    opt_c.step()
    policy.zero_grad()
    return LossReport(float(loss.data), float(critic_loss.data), ent, gn_a, gn_c)


def make_optimizers(policy, cfg: TrainConfig):
    return (SGDMomentum(policy.group("actor"), cfg.lr_actor, cfg.momentum),
            SGDMomentum(policy.group("critic"), cfg.lr_critic, cfg.momentum))


def episode_seed(base: int, episode: int) -> int:
    """Demand seed of training episode ``episode``; disjoint from small evaluation seeds."""
    return int(np.random.SeedSequence([base, episode, 7919]).generate_state(1)[0])


@dataclass
class EpisodeLog:
    episode: int
    ret: float
    served: int
    expired: int
    reb_cost: float
    actor_loss: float
    critic_loss: float
    entropy: float
    wall_ms: float

    def row(self) -> list:
        return [self.episode, repr(self.ret), self.served, self.expired, repr(self.reb_cost),
                repr(self.actor_loss), repr(self.critic_loss), repr(self.entropy), f"{self.wall_ms:.1f}"]


def train_a2c(env, policy, cfg: TrainConfig, log_path=None, callback=None) -> list[EpisodeLog]:
    """Train ``policy`` on ``env`` for ``cfg.episodes`` episodes, one update each."""
    rng = np.random.default_rng(cfg.seed)
    adj = normalized_adjacency(env.net.edge_mask)
    opts = make_optimizers(policy, cfg)
    logs = []
    fh = writer = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        for ep in range(cfg.episodes):
            t0 = time.perf_counter()
            env.reset(seed=episode_seed(cfg.seed, ep))
            trans, summ = rollout_episode(env, policy, rng, cfg.k_horizon)
            rep = a2c_update(policy, trans, cfg, adj, opts, update_actor=ep >= cfg.critic_warmup)
            log = EpisodeLog(ep, summ.ret, summ.served, summ.expired, summ.reb_cost, rep.actor, rep.critic,
                             rep.entropy, 1000 * (time.perf_counter() - t0))
            logs.append(log)
            if writer is not None:
                writer.writerow(log.row())
            if callback is not None:
                callback(log)
    finally:
        if fh is not None:
            fh.close()
    return logs
