"""Latency scaling of Graph-RL vs MPC decisions, and finite-difference gradient checks."""
from __future__ import annotations

import time

import numpy as np
import pandas as pd

from .generators import generate_scenario
from .macro_env import MacroEnv
from .policy import GraphConvPolicy, PolicyConfig, normalized_adjacency
from .policy.autodiff import Tensor
from .policy.dirichlet import clamp_simplex, dirichlet_entropy, dirichlet_log_prob
from .training import BaselineController, GraphRLController, MPCController

SCALING_SIZES = (16, 36, 64, 100)


def _warm_states(env, n_states: int, seed: int) -> list:
    """Snapshots of the env along an equally-distributed run; both methods see the same states."""
    env.reset(seed=seed)
    ctrl = BaselineController("equally_distributed")
    states = []
    for _ in range(n_states + 1):
        if env.done:
            break
        action, _ = ctrl.act(env)
        env.step(action)
        states.append(env.state.copy())
    return states[1:] or states


def scaling_benchmark(sizes=SCALING_SIZES, n_states: int = 3, horizon: int = 6, seed: int = 0,
                      k_horizon: int = 3, lp_method: str = "auto") -> pd.DataFrame:
    """Median per-decision wall time on synthetic grids.

    Graph-RL time covers the dispatch LP, the policy forward pass and the
    rebalancing LP; MPC time covers building and solving its horizon LP.
    """
    rows = []
    for n in sizes:
        scn = generate_scenario("grid", int(n), {"seed": seed, "horizon": 12})
        env = MacroEnv(scn)
        states = _warm_states(env, n_states, seed)
        pol = GraphConvPolicy(PolicyConfig(env.feature_dim(k_horizon)), seed=seed)
        methods = {
            "graph_rl": GraphRLController(pol, k_horizon, lp_method=lp_method),
            "mpc_oracle": MPCController(horizon, oracle=True, seed=seed, lp_method=lp_method),
        }
        for name, ctrl in methods.items():
            ctrl.reset(env)
            times = []
            for st in states:
                env.state = st.copy()
                t0 = time.perf_counter()
                ctrl.act(env)
                times.append(time.perf_counter() - t0)
            rows.append({"method": name, "stations": int(n), "decisions": len(times),
                         "latency_ms": 1000 * float(np.median(times))})
    return pd.DataFrame(rows)


# -- finite-difference gradient checks ---------------------------------------------


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero entries from dominating."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _relu_pattern(out: Tensor) -> tuple:
    """Signs of every ReLU input reachable from ``out``; a change means a kink was crossed."""
    seen, stack, pats = set(), [out], []
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "relu":
            pats.append((node.data > 0).tobytes())
        stack.extend(node._parents)
    return tuple(sorted(pats))


def check_param_grads(loss_fn, params: dict, eps: float = 1e-5, max_entries: int | None = None,
                      rng: np.random.Generator | None = None) -> tuple[float, int, int]:
    """Compare ``loss_fn().backward()`` gradients with central differences.

    ``loss_fn`` builds a fresh scalar Tensor from the current parameter
    values.  Entries whose perturbation flips a ReLU are retried with a
    smaller step and skipped if the flip persists.  Returns
    ``(max relative error, entries checked, entries skipped)``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = {k: p.grad.copy() for k, p in params.items()}
    for p in params.values():
        p.grad = None
    worst, checked, skipped = 0.0, 0, 0
    for k, p in params.items():
        idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(len(idx), max_entries, replace=False)
            idx = [idx[i] for i in sorted(pick)]
        for ix in idx:
            base = p.data[ix]
            h = eps
            ok = False
            for _ in range(3):
                p.data[ix] = base + h
                up = loss_fn()
                p.data[ix] = base - h
                dn = loss_fn()
                p.data[ix] = base
                if _relu_pattern(up) == _relu_pattern(dn):
                    ok = True
                    break
                h /= 10
            if not ok:
                skipped += 1
                continue
            fd = (float(up.data) - float(dn.data)) / (2 * h)
            worst = max(worst, float(relative_error(np.array(grads[k][ix]), np.array(fd))))
            checked += 1
    return worst, checked, skipped


def _random_problem(rng: np.random.Generator, n_nodes: int, in_dim: int, batch: int):
    feats = rng.normal(0, 1, (batch, n_nodes, in_dim))
    mask = rng.random((n_nodes, n_nodes)) < 0.6
    mask = mask | mask.T
    adj = normalized_adjacency(mask)
    u = np.stack([rng.dirichlet(np.ones(n_nodes)) for _ in range(batch)])
    adv = rng.normal(0, 1, batch)
    target = rng.normal(0, 2, batch)
    return feats, adj, clamp_simplex(u), adv, target


def gradcheck_suites(n_param: int = 50, seed: int = 0, n_nodes: int = 5, in_dim: int = 6, hidden: int = 8,
                     batch: int = 2, entropy_coef: float = 0.05, eps: float = 1e-5) -> pd.DataFrame:
    """Central-difference checks over ``n_param`` random parameterizations.

    Suites: actor loss (log-probability times advantage plus entropy bonus)
    w.r.t. actor weights, squared critic error w.r.t. critic weights, and
    Dirichlet log-density and entropy w.r.t. the concentrations.
    """
    rng = np.random.default_rng(seed)
    acc = {k: [0.0, 0, 0] for k in ("actor", "critic", "dirichlet_log_prob", "dirichlet_entropy")}

    def add(name, res):
        a = acc[name]
        a[0] = max(a[0], res[0])
        a[1] += res[1]
        a[2] += res[2]

    for k in range(n_param):
        pol = GraphConvPolicy(PolicyConfig(in_dim, hidden=hidden, n_layers=2, alpha_bias=float(rng.normal())),
                              seed=int(rng.integers(2 ** 31)))
        for p in pol.params.values():
            p.data = p.data + rng.normal(0, 0.1, p.shape)
        feats, adj, u, adv, target = _random_problem(rng, n_nodes, in_dim, batch)

        def actor_fn():
            alpha = pol.actor(feats, adj)
            return -(dirichlet_log_prob(alpha, u) * adv).sum() - entropy_coef * dirichlet_entropy(alpha).sum()

        def critic_fn():
            return (pol.critic(feats, adj) - target).square().sum()

        add("actor", check_param_grads(actor_fn, dict((n, p) for n, p in pol.params.items()
                                                      if n.startswith("actor.")), eps))
        add("critic", check_param_grads(critic_fn, dict((n, p) for n, p in pol.params.items()
                                                        if n.startswith("critic.")), eps))
        a = Tensor(np.exp(rng.normal(0, 1, n_nodes)) + 1e-3, requires_grad=True)
        uu = clamp_simplex(rng.dirichlet(np.ones(n_nodes)))
        add("dirichlet_log_prob", check_param_grads(lambda: dirichlet_log_prob(a, uu), {"alpha": a}, eps))
        add("dirichlet_entropy", check_param_grads(lambda: dirichlet_entropy(a), {"alpha": a}, eps))
    return pd.DataFrame([{"suite": k, "max_rel_err": v[0], "checked": v[1], "skipped": v[2]}
                         for k, v in acc.items()])
