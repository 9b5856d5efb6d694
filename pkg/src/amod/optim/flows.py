"""Dispatch, minimum-cost rebalancing and receding-horizon MPC as linear programs."""
from __future__ import annotations

import math

import numpy as np

from ..scenario import DemandModel, Network, RewardConfig, cost_matrix
from .lp import GE, LE, LpProblem, solve_lp

INT_TOL = 1e-6


class RebalanceInfeasible(RuntimeError):
    pass


def _integral(values: np.ndarray, what: str) -> np.ndarray:
    r = np.rint(values)
    if np.abs(values - r).max(initial=0.0) > INT_TOL:
        raise ArithmeticError(f"{what} LP returned a fractional vertex: {values}")
    return r.astype(np.int64)


def dispatch_problem(idle, waiting, margin, mask) -> tuple[LpProblem, list]:
    """max sum x_ij (p_ij - c_ij) s.t. 0 <= x_ij <= d_ij, sum_j x_ij <= M_i.

    Edges with nonpositive margin or no waiting demand get no variable.
    """
    idle = np.asarray(idle)
    ii, jj = np.nonzero((np.asarray(waiting) > 0) & (margin > 0) & mask & (idle[:, None] > 0))
    edges = list(zip(ii.tolist(), jj.tolist()))
    p = LpProblem(len(edges), margin[ii, jj], "max", upper=np.asarray(waiting)[ii, jj].astype(float),
                  names=[f"x_{i}_{j}" for i, j in edges])
    for i in np.unique(ii):
        idx = np.nonzero(ii == i)[0]
        p.add_row((idx, np.ones(idx.size)), LE, float(idle[i]))
    return p, edges


def dispatch(state, net: Network, cfg: RewardConfig, method: str = "auto") -> np.ndarray:
    """Profit-maximizing passenger assignment for the current step (integral)."""
    n = net.n_stations
    t = state.t
    margin = net.price_at(t) - cost_matrix(net, cfg, t)
    p, edges = dispatch_problem(state.idle, state.waiting_matrix(), margin, net.move_mask)
    x = np.zeros((n, n), dtype=np.int64)
    if not edges:
        return x
    sol = solve_lp(p, method)
    if not sol.optimal:
        raise RuntimeError(f"dispatch LP {sol.status}")
    vals = _integral(sol.values, "dispatch")
    for (i, j), v in zip(edges, vals):
        x[i, j] = v
    return x


def rebalance_problem(idle, u_hat, cost, mask) -> tuple[LpProblem, list]:
    """min sum c_ij y_ij s.t. sum_j (y_ji - y_ij) + M_i >= u_i, sum_j y_ij <= M_i."""
    idle = np.asarray(idle)
    n = len(idle)
    ii, jj = np.nonzero(mask & (idle[:, None] > 0))
    edges = list(zip(ii.tolist(), jj.tolist()))
    p = LpProblem(len(edges), cost[ii, jj], "min", names=[f"y_{i}_{j}" for i, j in edges])
    for k in range(n):
        inn = np.nonzero(jj == k)[0]
        out = np.nonzero(ii == k)[0]
        idx = np.concatenate([inn, out])
        val = np.concatenate([np.ones(inn.size), -np.ones(out.size)])
        if idx.size or u_hat[k] > idle[k]:
            p.add_row((idx, val), GE, float(u_hat[k] - idle[k]))
        if out.size:
            p.add_row((out, np.ones(out.size)), LE, float(idle[k]))
    return p, edges


def rebalance(state, desired, net: Network, cfg: RewardConfig, method: str = "auto") -> np.ndarray:
    """Cheapest integral rebalancing that brings every station up to ``desired.u_hat``.

    ``state`` is the post-dispatch state.  ``desired`` may be a
    ``DesiredDistribution`` or a plain count vector.
    """
    n = net.n_stations
    u_hat = np.asarray(getattr(desired, "u_hat", desired), dtype=np.int64)
    idle = np.asarray(state.idle, dtype=np.int64)
    if u_hat.sum() > idle.sum():
        raise RebalanceInfeasible(f"desired total {u_hat.sum()} exceeds available vehicles {idle.sum()}")
    y = np.zeros((n, n), dtype=np.int64)
    if (u_hat <= idle).all():
        return y
    cost = cost_matrix(net, cfg, state.t)
    p, edges = rebalance_problem(idle, u_hat, cost, net.move_mask)
    sol = solve_lp(p, method)
    if not sol.optimal:
        short = np.nonzero(u_hat > idle)[0].tolist()
        raise RebalanceInfeasible(f"rebalance LP {sol.status}; cut: stations {short} cannot reach their targets")
    vals = _integral(sol.values, "rebalance")
    for (i, j), v in zip(edges, vals):
        y[i, j] = v
    return y


def forecast_demand(dm: DemandModel, t: int, horizon: int, rng: np.random.Generator,
                    noise: bool = True) -> np.ndarray:
    """Unbiased demand estimate for arrivals at ``t + 1 .. t + horizon - 1``.

    Returns an ``(horizon, n, n)`` array laid out like the MPC demand view
    (slice 0 is unused).  ``noise=False`` gives the noise-free ``round(rate)``.
    """
    n = dm.n_stations
    out = np.zeros((horizon, n, n), dtype=np.int64)
    for s in range(1, horizon):
        ts = t + s
        if ts > dm.horizon:
            break
        lam = dm.rate_at(ts)
        out[s] = rng.poisson(lam) if noise else np.rint(lam).astype(np.int64)
        np.fill_diagonal(out[s], 0)
    return out


def _cohorts(state, demand_view, horizon: int, max_wait: int, ii, jj) -> list:
    """Passenger cohorts ``(edge, count, first_step, last_step)`` the plan may serve.

    Steps are offsets from ``state.t``.  A cohort that appeared at step ``a``
    can be served at ``a .. a + max_wait - 1`` before it abandons.
    """
    t0 = state.t
    edge_of = {(int(i), int(j)): e for e, (i, j) in enumerate(zip(ii, jj))}
    out = []
    for (i, j), q in sorted(state.waiting.items()):
        e = edge_of.get((i, j))
        if e is None:
            continue
        for arrived, count in q:
            last = min(arrived - t0 + max_wait - 1, horizon - 1)
            if count > 0 and last >= 0:
                out.append((e, float(count), 0, last))
    for s in range(1, horizon):
        d = demand_view[s]
        for e in np.nonzero(d[ii, jj] > 0)[0]:
            out.append((int(e), float(d[ii[e], jj[e]]), s, min(s + max_wait - 1, horizon - 1)))
    return out


def mpc_problem(state, demand_view, net: Network, cfg: RewardConfig, horizon: int, travel_time=None,
                max_wait: int | None = None):
    """Time-expanded profit LP over ``horizon`` steps starting at ``state.t``.

    Passenger service is split by cohort: ``z[c, s]`` serves part of cohort
    ``c`` at step ``s`` inside its waiting window.  Vehicles that are not
    moved stay idle, so availability is written in cumulative form:
    departures from ``i`` up to step ``s`` cannot exceed the initial idle
    stock plus all arrivals at ``i`` by ``s`` (current cohorts and planned
    flows).  Returns the problem and ``(ii, jj, cohorts, z_index)``.
    """
    n = net.n_stations
    t0 = state.t
    tt = net.travel_time if travel_time is None else np.asarray(travel_time)
    if max_wait is None:
        max_wait = horizon
    ii, jj = np.nonzero(net.move_mask)
    E = len(ii)
    cohorts = _cohorts(state, demand_view, horizon, max_wait, ii, jj)
    # variable layout: y[s, e], then z for each cohort over its window
    yi = lambda s, e: s * E + e  # noqa: E731
    z_index = []
    nv = horizon * E
    for (_, _, first, last) in cohorts:
        z_index.append(nv)
        nv += last - first + 1
    obj = np.zeros(nv)
    margins = []
    for s in range(horizon):
        price = net.price_at(t0 + s)
        cost = cost_matrix(net, cfg, t0 + s)
        obj[s * E:(s + 1) * E] = -cost[ii, jj]
        margins.append(price[ii, jj] - cost[ii, jj])
    names = [f"y_{s}_{i}_{j}" for s in range(horizon) for i, j in zip(ii, jj)]
    # departures on edge e at step s: list of variable indices
    dep = [[[yi(s, e)] for e in range(E)] for s in range(horizon)]
    for c, (e, _, first, last) in enumerate(cohorts):
        for k, s in enumerate(range(first, last + 1)):
            v = z_index[c] + k
            obj[v] = margins[s][e]
            dep[s][e].append(v)
            names.append(f"z{c}_{s}_{ii[e]}_{jj[e]}")
    p = LpProblem(nv, obj, "max", names=names)
    arrivals = state.arrivals_matrix(t0, horizon)  # arrivals at t0 + 1 + s
    cum_arr = np.cumsum(arrivals, axis=0)
    e_tt = tt[ii, jj]
    for k in range(n):
        out_e = np.nonzero(ii == k)[0]
        in_e = np.nonzero(jj == k)[0]
        for s in range(horizon):
            idx, val = [], []
            for s2 in range(s + 1):
                for e in out_e:
                    idx += dep[s2][e]
                    val += [1.0] * len(dep[s2][e])
                for e in in_e[s2 + e_tt[in_e] <= s]:
                    idx += dep[s2][e]
                    val += [-1.0] * len(dep[s2][e])
            stock = state.idle[k] + (cum_arr[s - 1, k] if s > 0 else 0.0)
            p.add_row((idx, val), LE, float(stock))
    for c, (_, count, first, last) in enumerate(cohorts):
        m = last - first + 1
        p.add_row((np.arange(z_index[c], z_index[c] + m), np.ones(m)), LE, count)
    return p, (ii, jj, cohorts, z_index)


def mpc_plan(state, demand_view, net: Network, cfg: RewardConfig, horizon: int = 6,
             travel_time=None, method: str = "auto", return_solution: bool = False, max_wait: int | None = None):
    """First-step flows of the receding-horizon profit plan.

    ``demand_view[s]`` (``1 <= s < horizon``) is the demand arriving at step
    ``state.t + s``; slice 0 is ignored because the current queue is read from
    ``state``.  ``max_wait`` bounds how long planned passengers wait (no
    bound when omitted).  Passenger then rebalancing flows are rounded down,
    and origin capacity is repaired by trimming rebalancing flows.
    """
    from ..macro_env import FlowAction

    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    demand_view = np.asarray(demand_view)
    n = net.n_stations
    p, (ii, jj, cohorts, z_index) = mpc_problem(state, demand_view, net, cfg, horizon, travel_time, max_wait)
    sol = solve_lp(p, method)
    if not sol.optimal:
        raise RuntimeError(f"MPC LP {sol.status}: state is inconsistent")
    E = len(ii)
    x = np.zeros((n, n), dtype=np.int64)
    y = np.zeros((n, n), dtype=np.int64)
    xf = np.zeros(E)
    for c, (e, _, first, _) in enumerate(cohorts):
        if first == 0:
            xf[e] += sol.values[z_index[c]]
    x[ii, jj] = np.floor(xf + INT_TOL).astype(np.int64)
    y[ii, jj] = np.floor(sol.values[:E] + INT_TOL).astype(np.int64)
    x = np.minimum(x, state.waiting_matrix())
    for i in range(n):
        excess = x[i].sum() + y[i].sum() - state.idle[i]
        if excess > 0:
            for j in np.argsort(-y[i], kind="stable"):
                cut = min(excess, y[i, j])
                y[i, j] -= cut
                excess -= cut
                if excess == 0:
                    break
        if excess > 0:
            x[i] = _trim(x[i], excess)
    act = FlowAction(x, y)
    return (act, sol) if return_solution else act


def _trim(row: np.ndarray, excess: int) -> np.ndarray:
    row = row.copy()
    for j in np.argsort(-row, kind="stable"):
        cut = min(excess, row[j])
        row[j] -= cut
        excess -= cut
        if excess == 0:
            break
    return row


def horizon_for(net: Network, default: int = 6) -> int:
    return max(default, int(math.ceil(net.travel_time.max())) + 1)
