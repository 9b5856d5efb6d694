"""Operator and customer KPIs computed from episode trajectories."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

RECONCILE_TOL = 1e-6


class TruncatedTrajectoryError(ValueError):
    pass


@dataclass
class EpisodeMetrics:
    profit: float
    revenue: float
    dispatch_cost: float
    reb_cost: float
    served: int
    expired: int
    sampled: int
    still_waiting: int
    avg_wait: float
    regional_wait: list
    utilization: list
    mean_utilization: float
    no_served: bool
    reward_sum: float
    regional_served: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("regional_wait")
        d.pop("regional_served")
        d.pop("utilization")
        return d


def compute_metrics(traj) -> EpisodeMetrics:
    """KPIs of one finished episode.

    Waiting time is ``(service step - arrival step) * dt`` averaged over
    served passengers only; with nobody served it is reported as 0 and
    ``no_served`` is set.  ``UF_t`` is the fraction of the fleet carrying a
    passenger or rebalancing at step ``t``.
    """
    if not traj.done:
        raise TruncatedTrajectoryError(f"trajectory stops after {len(traj.records)} of {traj.horizon} steps")
    n = traj.n_stations
    recs = traj.records
    revenue = float(sum(r.revenue for r in recs))
    dcost = float(sum(r.dispatch_cost for r in recs))
    rcost = float(sum(r.reb_cost for r in recs))
    wait_sum = np.zeros(n)
    wait_cnt = np.zeros(n, dtype=np.int64)
    for r in recs:
        for origin, steps, count in r.waits:
            wait_sum[origin] += steps * traj.dt_seconds * count
            wait_cnt[origin] += count
    served = int(sum(r.served for r in recs))
    total_cnt = int(wait_cnt.sum())
    avg_wait = float(wait_sum.sum() / total_cnt) if total_cnt else 0.0
    regional = np.divide(wait_sum, wait_cnt, out=np.zeros(n), where=wait_cnt > 0)
    uf = [(r.n_match + r.n_reb) / traj.fleet_size for r in recs]
    return EpisodeMetrics(
        profit=revenue - dcost - rcost,
        revenue=revenue,
        dispatch_cost=dcost,
        reb_cost=rcost,
        served=served,
        expired=int(sum(r.expired for r in recs)),
        sampled=int(sum(r.sampled for r in recs)),
        still_waiting=int(recs[-1].waiting) if recs else 0,
        avg_wait=avg_wait,
        regional_wait=regional.tolist(),
        utilization=uf,
        mean_utilization=float(np.mean(uf)) if uf else 0.0,
        no_served=served == 0,
        reward_sum=float(sum(r.reward for r in recs)),
        regional_served=wait_cnt.tolist(),
    )


def metrics_frame(items: list[EpisodeMetrics], **labels) -> pd.DataFrame:
    """One row per episode, with constant label columns prepended."""
    rows = [dict(labels, episode=k, **m.row()) for k, m in enumerate(items)]
    return pd.DataFrame(rows)


def regional_frame(items: list[EpisodeMetrics], **labels) -> pd.DataFrame:
    rows = []
    for k, m in enumerate(items):
        for i, (w, c) in enumerate(zip(m.regional_wait, m.regional_served)):
            rows.append(dict(labels, episode=k, station=i, avg_wait=w, served=c))
    return pd.DataFrame(rows)


COMPARE_COLUMNS = ["policy", "episodes", "profit_mean", "profit_std", "dev_oracle_pct", "served_mean",
                   "reb_cost_mean", "avg_wait_s", "avg_uf", "no_served"]


def compare_policies(runs: dict, oracle: str = "mpc_oracle") -> pd.DataFrame:
    """Mean and spread per policy plus percent profit deviation from the oracle mean."""
    if oracle not in runs or not runs[oracle]:
        raise KeyError(f"comparison needs an '{oracle}' run")
    ref = float(np.mean([m.profit for m in runs[oracle]]))
    rows = []
    for name, items in runs.items():
        if not items:
            raise ValueError(f"policy {name!r} has no episodes")
        profit = np.array([m.profit for m in items])
        dev = 100.0 * (profit.mean() - ref) / abs(ref) if ref != 0 else 0.0
        rows.append({
            "policy": name,
            "episodes": len(items),
            "profit_mean": float(profit.mean()),
            "profit_std": float(profit.std(ddof=1)) if len(items) > 1 else 0.0,
            "dev_oracle_pct": float(dev),
            "served_mean": float(np.mean([m.served for m in items])),
            "reb_cost_mean": float(np.mean([m.reb_cost for m in items])),
            "avg_wait_s": float(np.mean([m.avg_wait for m in items])),
            "avg_uf": float(np.mean([m.mean_utilization for m in items])),
            "no_served": bool(all(m.no_served for m in items)),
        })
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path
