from .a2c import (LOG_COLUMNS, EpisodeLog, LossReport, SGDMomentum, TrainConfig, a2c_update, actor_loss,
                  advantages, clip_grad_norm, episode_seed, make_optimizers, train_a2c)
from .bc import bc_nll, expert_dataset, expert_target, train_bc
from .controllers import (BASELINES, BaselineController, Controller, GraphRLController, HierarchicalController,
                          MPCController, baseline_action, make_controller, run_episode)
from .rollout import EpisodeSummary, Transition, rollout_episode

__all__ = [
    "LOG_COLUMNS", "EpisodeLog", "LossReport", "SGDMomentum", "TrainConfig", "a2c_update", "actor_loss",
    "advantages", "clip_grad_norm", "episode_seed", "make_optimizers", "train_a2c",
    "bc_nll", "expert_dataset", "expert_target", "train_bc",
    "BASELINES", "BaselineController", "Controller", "GraphRLController", "HierarchicalController",
    "MPCController", "baseline_action", "make_controller", "run_episode",
    "EpisodeSummary", "Transition", "rollout_episode",
]
