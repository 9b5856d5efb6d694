import json
from pathlib import Path

import pandas as pd
import pytest

from amod.cli import ConfigError, ExperimentConfig, eval_seed, load_config, main, worker_count
from amod.scenario import load_scenario, save_scenario

from conftest import SCENARIOS, small_scenario


@pytest.fixture
def two_station(tmp_path):
    return save_scenario(small_scenario(n=2, horizon=6, fleet=4, rate=1.0), tmp_path / "two.json")


def _config(tmp_path, name="cfg.json", **kw):
    path = tmp_path / name
    path.write_text(json.dumps(kw))
    return str(path)


def test_eval_none_has_zero_reb_cost(tmp_path, two_station):
    out = tmp_path / "out"
    cfg = _config(tmp_path, mode="eval", policy="none", scenario_path=str(two_station), episodes=2,
                  output_dir=str(out))
    assert main(["run", "--config", cfg]) == 0
    m = pd.read_csv(out / "metrics.csv")
    assert len(m) == 2 and (m.reb_cost == 0).all()
    assert (out / "trajectory_none_001.csv").exists() and (out / "regional.csv").exists()


def test_compare_shares_demand_and_is_reproducible(tmp_path, two_station):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        cfg = _config(tmp_path, mode="compare", scenario_path=str(two_station), episodes=2,
                      policies=["none", "ed"], output_dir=str(out))
        assert main(["run", "--config", cfg]) == 0
    # only output_dir differs between the two configs
    for name in ("compare.csv", "episodes.csv", "compare.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    ep = pd.read_csv(outs[0] / "episodes.csv")
    assert set(ep.policy) == {"none", "ed", "mpc_oracle"}
    # common random numbers: the same requests arrive for every policy
    sampled = ep.pivot(index="episode", columns="policy", values="sampled")
    assert (sampled.nunique(axis=1) == 1).all()


def test_train_then_eval_graph_rl(tmp_path, two_station):
    out = tmp_path / "train"
    cfg = _config(tmp_path, mode="train", policy="graph_rl", scenario_path=str(two_station), episodes=3,
                  output_dir=str(out), network={"hidden": 8})
    assert main(["run", "--config", cfg]) == 0
    log = pd.read_csv(out / "train_log.csv")
    assert len(log) == 3 and (out / "training.svg").exists()
    ev = _config(tmp_path, "ev.json", mode="eval", policy="graph_rl", scenario_path=str(two_station), episodes=1,
                 checkpoint=str(out / "checkpoint.json"), output_dir=str(tmp_path / "ev"), network={"hidden": 8})
    assert main(["run", "--config", ev]) == 0
    # a checkpoint trained with another architecture is refused
    bad = _config(tmp_path, "bad.json", mode="eval", policy="graph_rl", scenario_path=str(two_station), episodes=1,
                  checkpoint=str(out / "checkpoint.json"), output_dir=str(tmp_path / "bad"), network={"hidden": 16})
    assert main(["run", "--config", bad]) == 4


def test_train_bc(tmp_path, two_station):
    out = tmp_path / "bc"
    cfg = _config(tmp_path, mode="train", policy="bc", scenario_path=str(two_station), episodes=2, bc_epochs=3,
                  output_dir=str(out), network={"hidden": 8})
    assert main(["run", "--config", cfg]) == 0
    assert len(pd.read_csv(out / "bc_log.csv")) == 4
    assert (out / "checkpoint.json").exists()


def test_exit_codes(tmp_path, two_station, capsys):
    assert main(["run", "--config", _config(tmp_path, mode="fly")]) == 2
    assert main(["run", "--config", _config(tmp_path, mode="eval", policy="graph_rl",
                                            scenario_path=str(two_station))]) == 2
    assert main(["run", "--config", _config(tmp_path, mode="eval", policy="none", bogus=1,
                                            scenario_path=str(two_station))]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["run", "--config", _config(tmp_path, mode="eval", policy="none",
                                            scenario_path=str(broken), output_dir=str(tmp_path / "x"))]) == 3
    missing = tmp_path / "nothing.json"
    assert main(["run", "--config", _config(tmp_path, mode="eval", policy="graph_rl",
                                            scenario_path=str(two_station), checkpoint=str(missing),
                                            output_dir=str(tmp_path / "y"))]) == 4
    assert "error" in capsys.readouterr().err


def test_generate(tmp_path):
    path = tmp_path / "s.json"
    assert main(["generate", "--kind", "star", "--n", "5", "--output", str(path)]) == 0
    assert load_scenario(path).network.n_stations == 5
    assert main(["generate", "--kind", "grid", "--n", "1", "--output", str(path)]) == 3
    assert main(["generate", "--kind", "grid", "--n", "4", "--params", "[1]", "--output", str(path)]) == 2


def test_dump_lp(tmp_path, two_station):
    out = tmp_path / "lp"
    cfg = _config(tmp_path, mode="eval", policy="mpc_oracle", scenario_path=str(two_station), episodes=1,
                  output_dir=str(out))
    assert main(["run", "--config", cfg, "--dump-lp"]) == 0
    files = sorted((out / "lp").glob("*.lp"))
    assert len(files) == 6
    assert "Maximize" in files[0].read_text() or "Minimize" in files[0].read_text()


def test_worker_count(monkeypatch):
    monkeypatch.setenv("AMOD_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("AMOD_THREADS", "zero")
    with pytest.raises(ConfigError):
        worker_count()


def test_threads_do_not_change_results(tmp_path, two_station, monkeypatch):
    frames = []
    for threads in ("1", "2"):
        monkeypatch.setenv("AMOD_THREADS", threads)
        out = tmp_path / threads
        cfg = _config(tmp_path, mode="eval", policy="ed", scenario_path=str(two_station),
                      episodes=3, output_dir=str(out))
        assert main(["run", "--config", cfg]) == 0
        frames.append((out / "metrics.csv").read_bytes())
    assert frames[0] == frames[1]


def test_shipped_configs_load():
    from conftest import ROOT
    for path in sorted((ROOT / "configs").glob("*")):
        cfg = load_config(path)
        if cfg.scenario_path:
            load_scenario(cfg.scenario_path)
    path = load_config(ROOT / "configs" / "eval_none.json").scenario_path
    assert Path(path).resolve() == SCENARIOS / "imbalanced4.json"


def test_config_defaults_and_seeds():
    cfg = ExperimentConfig(mode="bench-gradcheck")
    assert cfg.gradcheck_params == 50
    assert eval_seed(1, 2) == 10002
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="eval", policy="none")
