"""Command-line experiment runner.

``amod run --config exp.yaml`` trains, evaluates, compares policies or runs
the benchmarks, writing CSV tables and SVG figures under ``output_dir``.
``amod generate`` writes a synthetic scenario file.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import bench, plotting
from .generators import KINDS, generate_scenario
from .macro_env import MacroEnv
from .meso_env import MesoEnv
from .metrics import compare_policies, compute_metrics, metrics_frame, regional_frame, write_csv
from .optim import dump_lps
from .policy import CheckpointError, GraphConvPolicy, PolicyConfig, normalized_adjacency
from .scenario import ScenarioError, load_scenario, save_scenario
from .training import TrainConfig, expert_dataset, make_controller, run_episode, train_a2c, train_bc
from .training.a2c import episode_seed

EXIT_OK, EXIT_CONFIG, EXIT_SCENARIO, EXIT_RUNTIME = 0, 2, 3, 4
MODES = ("train", "eval", "compare", "bench-scaling", "bench-gradcheck")
POLICIES = ("graph_rl", "none", "ed", "plus_one", "mpc_oracle", "mpc_forecast", "bc")
LEARNED = ("graph_rl", "bc")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    scenario_path: str | None = None
    policy: str = "graph_rl"
    policies: list = field(default_factory=lambda: ["none", "ed", "plus_one", "mpc_forecast", "mpc_oracle"])
    checkpoint: str | None = None
    episodes: int = 10
    seed: int = 0
    output_dir: str = "runs/out"
    env: str = "macro"
    mpc_horizon: int = 6
    k_horizon: int = 3
    lp_method: str = "auto"
    # A2C settings; keys of TrainConfig except episodes, seed and k_horizon
    train: dict = field(default_factory=dict)
    # hidden, n_layers, alpha_bias
    network: dict = field(default_factory=dict)
    bc_epochs: int = 50
    bc_lr: float = 1e-3
    bench_sizes: list = field(default_factory=lambda: list(bench.SCALING_SIZES))
    bench_states: int = 3
    gradcheck_params: int = 50
    dump_lp: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.env not in ("macro", "meso"):
            raise ConfigError(f"env must be 'macro' or 'meso', got {self.env!r}")
        for name in [self.policy, *self.policies]:
            if name not in POLICIES:
                raise ConfigError(f"unknown policy {name!r}; expected one of {POLICIES}")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("episodes must be a positive integer")
        if self.mode in ("train", "eval", "compare") and not self.scenario_path:
            raise ConfigError(f"mode {self.mode} needs scenario_path")
        if self.mode == "train" and self.policy not in LEARNED:
            raise ConfigError(f"only {LEARNED} can be trained, got {self.policy!r}")
        learned = [self.policy] if self.mode == "eval" else self.policies if self.mode == "compare" else []
        if any(p in LEARNED for p in learned) and not self.checkpoint:
            raise ConfigError("evaluating graph_rl or bc requires a checkpoint")
        allowed = {f.name for f in fields(TrainConfig)} - {"episodes", "seed", "k_horizon"}
        unknown = set(self.train) - allowed
        if unknown:
            raise ConfigError(f"unknown or reserved train keys: {sorted(unknown)}")
        if set(self.network) - {"hidden", "n_layers", "alpha_bias"}:
            raise ConfigError(f"unknown network keys: {sorted(set(self.network))}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "mode" not in d:
            raise ConfigError("config needs a mode")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(episodes=self.episodes, seed=self.seed, k_horizon=self.k_horizon, **self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc


def load_config(path, base_dir: Path | None = None) -> ExperimentConfig:
    """Read a JSON or YAML config; a relative ``scenario_path`` resolves against the config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    d = dict(d or {})
    for key in ("scenario_path", "checkpoint"):
        if d.get(key) and not Path(d[key]).is_absolute():
            cand = (base_dir or path.parent) / d[key]
            if cand.exists() or key == "scenario_path":
                d[key] = str(cand)
    return ExperimentConfig.from_dict(d)


def worker_count() -> int:
    raw = os.environ.get("AMOD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AMOD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"AMOD_THREADS must be a positive integer, got {raw!r}")
    return n


def eval_seed(base: int, episode: int) -> int:
    """Demand seed of evaluation episode ``episode``, shared by every policy."""
    return base * 10_000 + episode


def make_env(cfg: ExperimentConfig, scenario):
    return MesoEnv(scenario) if cfg.env == "meso" else MacroEnv(scenario)


def _policy_config(cfg: ExperimentConfig, env) -> PolicyConfig:
    d = {"hidden": 32, "n_layers": 2, "alpha_bias": 3.0}
    d.update(cfg.network)
    return PolicyConfig(env.feature_dim(cfg.k_horizon), **d)


def load_policy(cfg: ExperimentConfig, env) -> GraphConvPolicy:
    return GraphConvPolicy.load(cfg.checkpoint, expect=_policy_config(cfg, env))


def _map(fn, items, workers: int) -> list:
    """Ordered map over a thread pool; results come back to the caller, which does all writing."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _evaluate(cfg: ExperimentConfig, scenario, name: str, policy, workers: int) -> list:
    def one(k):
        env = make_env(cfg, scenario)
        ctrl = make_controller(name, policy, cfg.mpc_horizon, seed=cfg.seed, lp_method=cfg.lp_method,
                               k_horizon=cfg.k_horizon)
        return run_episode(env, ctrl, eval_seed(cfg.seed, k))

    return _map(one, list(range(cfg.episodes)), workers)


# -- modes ---------------------------------------------------------------------------


def run_train(cfg: ExperimentConfig, scenario, out: Path) -> dict:
    env = make_env(cfg, scenario)
    pol = GraphConvPolicy(_policy_config(cfg, env), seed=cfg.seed)
    if cfg.policy == "graph_rl":
        tcfg = cfg.train_config()
        train_a2c(env, pol, tcfg, log_path=out / "train_log.csv")
        log = pd.read_csv(out / "train_log.csv")
        plotting.plot_training(log, out / "training.svg")
        extra = {"trainer": "a2c", "train": asdict(tcfg)}
        summary = {"final_return_mean_last50": float(log["return"].tail(50).mean())}
    else:
        seeds = [episode_seed(cfg.seed, k) for k in range(cfg.episodes)]
        data = expert_dataset(env, seeds, cfg.mpc_horizon, cfg.k_horizon, cfg.lp_method)
        curve = train_bc(pol, data, cfg.bc_epochs, lr=cfg.bc_lr, adjacency=normalized_adjacency(env.net.edge_mask),
                         seed=cfg.seed)
        write_csv(pd.DataFrame({"epoch": range(len(curve)), "nll": curve}), out / "bc_log.csv")
        extra = {"trainer": "bc", "samples": len(data), "epochs": cfg.bc_epochs}
        summary = {"final_nll": curve[-1]}
    pol.save(out / "checkpoint.json", extra=extra)
    return summary


def run_eval(cfg: ExperimentConfig, scenario, out: Path, workers: int) -> dict:
    policy = None
    if cfg.policy in LEARNED:
        policy = load_policy(cfg, make_env(cfg, scenario))
    trajs = _evaluate(cfg, scenario, cfg.policy, policy, workers)
    mets = [compute_metrics(tr) for tr in trajs]
    for k, tr in enumerate(trajs):
        tr.write_csv(out / f"trajectory_{cfg.policy}_{k:03d}.csv")
    write_csv(metrics_frame(mets, policy=cfg.policy), out / "metrics.csv")
    write_csv(regional_frame(mets, policy=cfg.policy), out / "regional.csv")
    return {"profit_mean": float(np.mean([m.profit for m in mets])),
            "reb_cost_mean": float(np.mean([m.reb_cost for m in mets]))}


def run_compare(cfg: ExperimentConfig, scenario, out: Path, workers: int) -> dict:
    names = list(dict.fromkeys(cfg.policies))
    if "mpc_oracle" not in names:
        # the comparison table is expressed relative to the oracle
        names.append("mpc_oracle")
    policy = None
    if any(n in LEARNED for n in names):
        policy = load_policy(cfg, make_env(cfg, scenario))
    runs = {}
    for name in names:
        runs[name] = [compute_metrics(tr) for tr in _evaluate(cfg, scenario, name, policy, workers)]
    table = compare_policies(runs)
    write_csv(table, out / "compare.csv")
    write_csv(pd.concat([metrics_frame(m, policy=n) for n, m in runs.items()], ignore_index=True),
              out / "episodes.csv")
    plotting.plot_comparison(table, out / "compare.svg")
    return {row.policy: round(row.profit_mean, 3) for row in table.itertuples()}


def run_bench_scaling(cfg: ExperimentConfig, out: Path) -> dict:
    table = bench.scaling_benchmark(cfg.bench_sizes, cfg.bench_states, cfg.mpc_horizon, cfg.seed, cfg.k_horizon,
                                    cfg.lp_method)
    write_csv(table, out / "scaling.csv")
    plotting.plot_scaling(table, out / "scaling.svg")
    return {f"{r.method}@{r.stations}": round(r.latency_ms, 2) for r in table.itertuples()}


def run_bench_gradcheck(cfg: ExperimentConfig, out: Path) -> dict:
    table = bench.gradcheck_suites(cfg.gradcheck_params, cfg.seed)
    write_csv(table, out / "gradcheck.csv")
    return {r.suite: float(r.max_rel_err) for r in table.itertuples()}


def run(cfg: ExperimentConfig) -> dict:
    """Execute one experiment; raises ConfigError, ScenarioError or CheckpointError on named failures."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count()
    scenario = None
    if cfg.mode in ("train", "eval", "compare"):
        scenario = load_scenario(cfg.scenario_path)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True))
    if cfg.dump_lp:
        # LP dumps are only meaningful serially
        workers = 1
    with dump_lps(out / "lp") if cfg.dump_lp else nullcontext():
        if cfg.mode == "train":
            return run_train(cfg, scenario, out)
        if cfg.mode == "eval":
            return run_eval(cfg, scenario, out, workers)
        if cfg.mode == "compare":
            return run_compare(cfg, scenario, out, workers)
        if cfg.mode == "bench-scaling":
            return run_bench_scaling(cfg, out)
        return run_bench_gradcheck(cfg, out)


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amod", description="AMoD rebalancing experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True, help="JSON or YAML experiment config")
    r.add_argument("--mode", choices=MODES, help="override the config mode")
    r.add_argument("--policy", choices=POLICIES, help="override the config policy")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--episodes", type=int, help="override the number of episodes")
    r.add_argument("--output", help="override output_dir")
    r.add_argument("--checkpoint", help="override the checkpoint path")
    r.add_argument("--dump-lp", action="store_true", help="write every LP solved as a CPLEX .lp file")
    g = sub.add_parser("generate", help="write a synthetic scenario file")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--n", type=int, required=True, help="number of stations")
    g.add_argument("--params", default="{}", help="generator parameters as a JSON object")
    g.add_argument("--output", required=True, help="scenario JSON path")
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    over = {k: v for k, v in (("mode", args.mode), ("policy", args.policy), ("seed", args.seed),
                              ("episodes", args.episodes), ("output_dir", args.output),
                              ("checkpoint", args.checkpoint)) if v is not None}
    if args.dump_lp:
        over["dump_lp"] = True
    if over:
        cfg = ExperimentConfig.from_dict(dict(asdict(cfg), **over))
    summary = run(cfg)
    for k, v in summary.items():
        print(f"{k}: {v}")
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}") from exc
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    path = save_scenario(generate_scenario(args.kind, args.n, params), args.output)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _cmd_run(args) if args.command == "run" else _cmd_generate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
