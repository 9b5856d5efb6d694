"""Graph-convolution actor-critic over station graphs.

Every layer applies the same per-node weights at every station, so the
policy is permutation equivariant and can be run on graphs of any size.
A layer maps node embeddings ``H`` to ``relu(A H W + H U + b)`` where ``A``
is the row-normalized adjacency with self-loops; the root term ``H U``
keeps node identity when ``A`` averages over a dense graph.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, parameter

ALPHA_FLOOR = 1e-3
CHECKPOINT_FORMAT = "amod-graph-policy"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def normalized_adjacency(mask) -> np.ndarray:
    """Row-normalized adjacency with self-loops from a boolean edge mask."""
    a = np.asarray(mask, dtype=np.float64).copy()
    np.fill_diagonal(a, 1.0)
    return a / a.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PolicyConfig:
    in_dim: int
    hidden: int = 32
    n_layers: int = 2
    alpha_bias: float = 1.0


class GraphConvPolicy:
    """Dirichlet actor and scalar critic, each with its own graph-conv trunk.

    ``forward(features, adjacency)`` returns ``(alpha, value)``: a length-N
    vector of Dirichlet concentrations (softplus + floor) and the critic's
    sum-pooled state value.
    """

    def __init__(self, config: PolicyConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for trunk in ("actor", "critic"):
            d_in = config.in_dim
            for k in range(config.n_layers):
                scale = np.sqrt(2.0 / (2 * d_in))
                self.params[f"{trunk}.conv{k}.w_nbr"] = parameter(rng.normal(0, scale, (d_in, config.hidden)))
                self.params[f"{trunk}.conv{k}.w_self"] = parameter(rng.normal(0, scale, (d_in, config.hidden)))
                self.params[f"{trunk}.conv{k}.b"] = parameter(np.zeros(config.hidden))
                d_in = config.hidden
        h = config.hidden
        self.params["actor.head.w"] = parameter(rng.normal(0, 0.1 / np.sqrt(h), (h, 1)))
        self.params["actor.head.b"] = parameter(np.array([config.alpha_bias]))
        self.params["critic.head.w"] = parameter(rng.normal(0, 0.1 / np.sqrt(h), (h, 1)))
        self.params["critic.head.b"] = parameter(np.zeros(1))

    # -- parameter groups --------------------------------------------------------
    def group(self, trunk: str) -> list[Tensor]:
        return [p for k, p in self.params.items() if k.startswith(trunk + ".")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward -----------------------------------------------------------------
    def _trunk(self, trunk: str, features, adjacency) -> Tensor:
        f = np.asarray(features, dtype=np.float64)
        n_blocks = f.shape[0] if f.ndim == 3 else 1
        h = Tensor(f.reshape(-1, f.shape[-1]))
        for k in range(self.config.n_layers):
            p = f"{trunk}.conv{k}"
            h = (h.mix(adjacency, n_blocks) @ self.params[p + ".w_nbr"] + h @ self.params[p + ".w_self"]
                 + self.params[p + ".b"]).relu()
        return h

    def _check(self, features, adjacency):
        f = np.asarray(features)
        a = np.asarray(adjacency)
        if f.ndim not in (2, 3) or f.shape[-1] != self.config.in_dim:
            raise ValueError(f"features must be (N, {self.config.in_dim}) or (B, N, {self.config.in_dim}), got {f.shape}")
        if a.shape != (f.shape[-2], f.shape[-2]):
            raise ValueError(f"adjacency must be {f.shape[-2]}x{f.shape[-2]}, got {a.shape}")

    def actor(self, features, adjacency) -> Tensor:
        """Concentrations, shape ``(N,)`` or ``(B, N)`` for a batch of feature tables."""
        self._check(features, adjacency)
        shape = np.shape(features)[:-1]
        h = self._trunk("actor", features, adjacency)
        z = h @ self.params["actor.head.w"] + self.params["actor.head.b"]
        return z.reshape(*shape).softplus() + ALPHA_FLOOR

    def critic(self, features, adjacency) -> Tensor:
        """State value, a scalar or a ``(B,)`` vector for a batch."""
        self._check(features, adjacency)
        shape = np.shape(features)[:-1]
        h = self._trunk("critic", features, adjacency)
        per_node = (h @ self.params["critic.head.w"]).reshape(*shape)
        return per_node.sum(axis=-1) + self.params["critic.head.b"].sum()

    def forward(self, features, adjacency) -> tuple[Tensor, Tensor]:
        return self.actor(features, adjacency), self.critic(features, adjacency)

    __call__ = forward

    # -- persistence ---------------------------------------------------------------
    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self.params):
            raise CheckpointError("parameter names do not match the architecture")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = v.copy()

    def save(self, path, extra: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "params": {k: {"shape": list(p.shape), "data": p.data.ravel().tolist()} for k, p in self.params.items()},
            "extra": extra or {},
        }
        path.write_text(json.dumps(blob))
        return path

    @classmethod
    def load(cls, path, expect: PolicyConfig | None = None) -> "GraphConvPolicy":
        try:
            blob = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} policy checkpoint")
        config = PolicyConfig(**blob["config"])
        if expect is not None and (expect.in_dim, expect.hidden, expect.n_layers) != (
                config.in_dim, config.hidden, config.n_layers):
            raise CheckpointError(f"architecture mismatch: checkpoint {config}, expected {expect}")
        pol = cls(config)
        pol.load_state_dict({k: np.asarray(v["data"]).reshape(v["shape"]) for k, v in blob["params"].items()})
        return pol
