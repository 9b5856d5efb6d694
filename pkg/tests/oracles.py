"""Independent reference solvers used by the unit and acceptance tests."""
import itertools

import numpy as np

from amod.macro_env import FleetState
from amod.optim import LpProblem
from amod.optim.lp import EQ, GE, LE
from amod.policy import desired_to_counts
from amod.scenario import RewardConfig, make_scenario


def vertex_enumeration(p: LpProblem):
    """Best objective over all basic feasible points of a bounded LP (None if infeasible).

    Every constraint and finite bound becomes a row ``a x <= b``; each
    nonsingular choice of ``n`` rows is solved exactly and kept if feasible.
    """
    A, b, rel = p.dense()
    rows, rhs = [], []
    for a, v, r in zip(A, b, rel):
        if r in (LE, EQ):
            rows.append(a)
            rhs.append(v)
        if r in (GE, EQ):
            rows.append(-a)
            rhs.append(-v)
    n = p.n_vars
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(p.upper[j]):
            rows.append(e)
            rhs.append(p.upper[j])
        if np.isfinite(p.lower[j]):
            rows.append(-e)
            rhs.append(-p.lower[j])
    G, h = np.array(rows), np.array(rhs)
    best = None
    sign = 1.0 if p.sense == "max" else -1.0
    for idx in itertools.combinations(range(len(G)), n):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(idx)])
        if (G @ x <= h + 1e-8).all():
            val = float(p.objective @ x)
            if best is None or sign * val > sign * best:
                best = val
    return best


def random_bounded_lp(rng, n_vars, n_rows, sense=None):
    """Random LP with a box on every variable so that it is bounded; the origin is feasible for LE rows."""
    p = LpProblem(n_vars, rng.integers(-5, 6, n_vars).astype(float), sense or rng.choice(["min", "max"]),
                  upper=rng.integers(1, 6, n_vars).astype(float))
    for _ in range(n_rows):
        k = int(rng.integers(1, n_vars + 1))
        idx = rng.choice(n_vars, k, replace=False)
        val = rng.integers(-3, 4, k).astype(float)
        rel = rng.choice([LE, LE, GE, EQ])
        if rel == LE:
            rhs = float(rng.integers(0, 8))
        else:
            # a random box point makes GE/EQ rows satisfiable most of the time
            pt = rng.uniform(0, p.upper)
            rhs = float(np.floor(val @ pt[idx])) if rel == GE else float(val @ pt[idx])
        p.add_row((idx, val), rel, rhs)
    return p


# -- dispatch / rebalance ---------------------------------------------------------


def dispatch_instance(rng, max_n=4, max_idle=3, max_demand=3):
    n = int(rng.integers(2, max_n + 1))
    price = rng.integers(0, 8, (n, n)).astype(float)
    cost = rng.integers(0, 4, (n, n)).astype(float)
    np.fill_diagonal(price, 0)
    np.fill_diagonal(cost, 0)
    scn = make_scenario(np.ones((n, n), int), 0.0, price, cost, max(1, n * max_idle), 2)
    idle = rng.integers(0, max_idle + 1, n)
    waiting = {}
    for i in range(n):
        for j in range(n):
            d = int(rng.integers(0, max_demand + 1))
            if i != j and d:
                waiting[(i, j)] = [[0, d]]
    return scn, FleetState(0, idle, [], waiting)


def brute_dispatch(scn, state) -> float:
    """Exhaustive search; the problem separates by origin, so each origin is enumerated on its own."""
    net = scn.network
    n = net.n_stations
    margin = net.price_at(0) - net.cost_at(0)
    W = state.waiting_matrix()
    total = 0.0
    for i in range(n):
        dests = [j for j in range(n) if j != i]
        best = 0.0
        for xs in itertools.product(*[range(int(W[i, j]) + 1) for j in dests]):
            if sum(xs) <= state.idle[i]:
                best = max(best, float(sum(margin[i, j] * x for j, x in zip(dests, xs))))
        total += best
    return total


def rebalance_instance(rng, max_n=4, max_idle=3):
    n = int(rng.integers(2, max_n + 1))
    cost = rng.integers(1, 6, (n, n)).astype(float)
    np.fill_diagonal(cost, 0)
    scn = make_scenario(np.ones((n, n), int), 0.0, 10.0, cost, max(1, n * max_idle), 2)
    idle = rng.integers(0, max_idle + 1, n)
    if idle.sum() == 0:
        idle[0] = 1
    u = rng.dirichlet(np.ones(n))
    m = int(rng.integers(0, idle.sum() + 1)) if rng.random() < 0.3 else int(idle.sum())
    return scn, FleetState(0, idle, [], {}), desired_to_counts(u, m)


def brute_rebalance(scn, state, u_hat) -> float:
    """Cheapest integral y over every per-origin split of at most M_i vehicles."""
    cost = scn.network.cost_at(0)
    n = len(state.idle)
    per_origin = []
    for i in range(n):
        dests = [j for j in range(n) if j != i]
        opts = []
        for ys in itertools.product(range(int(state.idle[i]) + 1), repeat=len(dests)):
            if sum(ys) <= state.idle[i]:
                row = np.zeros(n, dtype=np.int64)
                row[dests] = ys
                opts.append(row)
        per_origin.append(np.array(opts))
    best = None
    for combo in itertools.product(*[range(len(o)) for o in per_origin]):
        Y = np.stack([per_origin[i][k] for i, k in enumerate(combo)])
        after = state.idle - Y.sum(1) + Y.sum(0)
        if (after >= u_hat).all():
            c = float((cost * Y).sum())
            if best is None or c < best:
                best = c
    return best


NO_BETA = RewardConfig(None)


def replay_vehicles(scn, seed, actions):
    """Independent vehicle bookkeeping from logged actions; yields ``(idle, in-transit count)`` per step."""
    from amod.macro_env import MacroEnv

    env = MacroEnv(scn)
    env.reset(seed=seed)
    n = scn.n_stations
    idle = env.state.idle.copy()
    pipeline = {}
    tt = scn.network.travel_time
    for t, a in enumerate(actions):
        idle -= a.x.sum(1) + a.y.sum(1)
        for f in (a.x, a.y):
            for i in range(n):
                for j in range(n):
                    if f[i, j]:
                        pipeline[t + tt[i, j]] = pipeline.get(t + tt[i, j], np.zeros(n, int))
                        pipeline[t + tt[i, j]][j] += f[i, j]
        if t + 1 in pipeline:
            idle += pipeline.pop(t + 1)
        yield idle.copy(), sum(v.sum() for v in pipeline.values())
