import json

import numpy as np
import pytest

from amod.generators import generate_scenario
from amod.scenario import (RewardConfig, ScenarioError, effective_cost, load_scenario, sample_demand,
                           save_scenario, scenario_to_dict)

from conftest import SCENARIOS, small_scenario


def _two_station_dict():
    return {"stations": 2, "dt_seconds": 60, "horizon": 4, "tau_max": 2, "travel_time": [[1, 2], [2, 1]],
            "rate": {"constant": [[0, 0.5], [0.5, 0]]}, "price": {"constant": [[0, 3], [3, 0]]},
            "cost": {"constant": [[0, 1], [1, 0]]}, "beta": None, "gamma": 0.97, "fleet_size": 4, "seed": 1}


def test_load_two_station(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(_two_station_dict()))
    net, dm, cfg = load_scenario(p)
    assert net.n_stations == 2
    assert net.edge_mask.all()
    assert dm.max_wait == 2 and cfg.beta is None


def test_negative_price_names_edge(tmp_path):
    d = _two_station_dict()
    d["price"] = {"constant": [[0, -1], [3, 0]]}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ScenarioError, match=r"price\(0,1\)"):
        load_scenario(p)


def test_malformed_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="malformed"):
        load_scenario(p)


def test_disconnected_graph_rejected(tmp_path):
    d = _two_station_dict()
    d["travel_time"] = [[1, None], [2, 1]]
    d["rate"] = {"constant": [[0, 0], [0.5, 0]]}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ScenarioError, match="connected"):
        load_scenario(p)


def test_fractional_travel_time_rejected(tmp_path):
    d = _two_station_dict()
    d["travel_time"] = [[1, 1.5], [2, 1]]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_grid16_edge_count():
    net = generate_scenario("grid", 16).network
    assert net.n_stations == 16
    assert len(net.edges) == 256


def test_round_trip(tmp_path):
    scn = generate_scenario("grid", 9, {"seed": 3, "beta": 0.7})
    back = load_scenario(save_scenario(scn, tmp_path / "g.json"))
    assert back == scn
    assert scenario_to_dict(back) == scenario_to_dict(scn)


def test_shipped_scenarios_load():
    for p in sorted(SCENARIOS.glob("*.json")):
        scn = load_scenario(p)
        assert scn.fleet_size > 0


def test_zero_rate_gives_zero_demand():
    dm = small_scenario(rate=0.0).demand
    assert not sample_demand(dm, 3).any()


def test_demand_deterministic_and_diagonal_zero():
    dm = small_scenario(n=4, rate=2.0, seed=7).demand
    a, b = sample_demand(dm, 5), sample_demand(dm, 5)
    assert np.array_equal(a, b)
    assert not np.diag(a).any()
    with pytest.raises(ValueError):
        sample_demand(dm, 0)
    with pytest.raises(ValueError):
        sample_demand(dm, dm.horizon + 1)


def test_poisson_moments(rng):
    dm = small_scenario(n=2, rate=3.0).demand
    draws = np.array([sample_demand(dm, 1, rng)[0, 1] for _ in range(100_000)])
    se = np.sqrt(3.0 / draws.size)
    assert abs(draws.mean() - 3.0) < 3 * se
    assert abs(draws.var() - 3.0) < 0.1


def test_total_demand_matches_rates():
    scn = generate_scenario("imbalanced", 4, {"horizon": 6})
    dm = scn.demand
    tot = []
    for seed in range(400):
        d = dm.__class__(dm.horizon, dm.rate, dm.max_wait, seed, False)
        tot.append(sum(sample_demand(d, t).sum() for t in range(1, dm.horizon + 1)))
    lam = dm.rate.sum()
    assert abs(np.mean(tot) - lam) < 3 * np.sqrt(lam / len(tot))


def test_effective_cost():
    scn = small_scenario(n=2, tau=[[1, 4], [4, 1]], cost=2.5)
    net = scn.network
    assert effective_cost(net, RewardConfig(1.5), 0, 1, 0) == 6.0
    assert effective_cost(net, RewardConfig(None), 0, 1, 0) == 2.5
    assert effective_cost(net, RewardConfig(0.0), 1, 0, 3) == 0.0
    with pytest.raises(KeyError):
        effective_cost(net, RewardConfig(None), 0, 5, 0)


def test_negative_beta_rejected():
    with pytest.raises(ScenarioError):
        RewardConfig(-1.0)
