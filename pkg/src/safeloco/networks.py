"""Actor and critic networks.

Both share the same encoder structure: each step's raw scan is linearly
projected to a 64-dim embedding, a GRU consumes the 10-step embedding
history, and its final hidden state is concatenated with the flattened
proprioceptive/command history before the trunk MLP.  The critics hold
their own independently trained copy of the encoder and append the
privileged inputs to the trunk; one value head per channel (reward plus
one per active constraint).
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore
from .env import N_EXTRAS, ObsSpec
from .nn import (GaussianHead, NUMPY_OPS, gru_step, init_gru, init_linear,
                 init_mlp, linear, mlp_forward)

EMBED_DIM = 64
GRU_HIDDEN = 128
TRUNK = (256, 128)
ACTION_DIM = 4


def _encode(ops, store: ParamStore, spec: ObsSpec, obs):
    """Scan pathway (projection + GRU over history) -> (features, state_flat)."""
    state_flat = ops.slice_cols(obs, 0, spec.state_block)
    h = ops.constant(np.zeros((obs.shape[0], GRU_HIDDEN)))
    for t in range(spec.history_len):
        s0, s1 = spec.scan_slice(t)
        scan_t = ops.slice_cols(obs, s0, s1)
        emb = linear(ops, store, "scan_proj", scan_t)
        h = gru_step(ops, store, "gru", h, emb)
    return h, state_flat


class PolicyNet:
    """Gaussian policy over the 4 base-command dims."""

    def __init__(self, spec: ObsSpec, init_log_std=(-0.5, -0.5, -0.5, -1.6)):
        self.spec = spec
        self.store = ParamStore()
        self._init_log_std = np.asarray(init_log_std, dtype=np.float64)

    def init(self, rng: np.random.Generator) -> "PolicyNet":
        init_linear(self.store, "scan_proj", self.spec.scan_width, EMBED_DIM, rng)
        init_gru(self.store, "gru", EMBED_DIM, GRU_HIDDEN, rng)
        init_mlp(self.store, "trunk", GRU_HIDDEN + self.spec.state_block,
                 list(TRUNK), rng)
        init_linear(self.store, "mean", TRUNK[-1], ACTION_DIM, rng, gain=0.01)
        self.store.create("log_std", self._init_log_std.copy())
        return self

    def forward(self, ops, obs) -> GaussianHead:
        h, state_flat = _encode(ops, self.store, self.spec, obs)
        feat = ops.concat([h, state_flat], axis=-1)
        trunk = mlp_forward(ops, self.store, "trunk", feat, list(TRUNK), "tanh", "tanh")
        mean = linear(ops, self.store, "mean", trunk)
        log_std = ops.clip(ops.param(self.store, "log_std"), -5.0, 2.0)
        return GaussianHead(ops, mean, log_std)

    def act(self, obs_batch: np.ndarray, rng: np.random.Generator | None = None):
        """Numpy fast path: (actions, log_probs, mean).

        With no rng the deterministic mean action is returned.
        """
        head = self.forward(NUMPY_OPS, obs_batch)
        if rng is None:
            actions = np.asarray(head.mean)
            return actions, head.log_prob(actions), actions
        actions = head.sample(rng)
        return actions, head.log_prob(actions), np.asarray(head.mean)

    def n_params(self) -> int:
        return self.store.n_params()


class CriticNet:
    """Shared encoder + one MLP head per value channel."""

    def __init__(self, spec: ObsSpec, n_costs: int):
        self.spec = spec
        self.n_costs = n_costs
        self.store = ParamStore()

    @property
    def n_heads(self) -> int:
        return 1 + self.n_costs

    def init(self, rng: np.random.Generator) -> "CriticNet":
        init_linear(self.store, "scan_proj", self.spec.scan_width, EMBED_DIM, rng)
        init_gru(self.store, "gru", EMBED_DIM, GRU_HIDDEN, rng)
        feat_width = GRU_HIDDEN + self.spec.state_block + N_EXTRAS
        for head in self._head_names():
            init_mlp(self.store, head, feat_width, [TRUNK[0], TRUNK[1]], rng)
            init_linear(self.store, f"{head}/out", TRUNK[1], 1, rng)
        return self

    def _head_names(self) -> list[str]:
        return ["head_r"] + [f"head_c{j}" for j in range(self.n_costs)]

    def forward(self, ops, critic_obs) -> list:
        """Value nodes per channel, each (B, 1): [reward, cost_0, ...]."""
        h, state_flat = _encode(ops, self.store, self.spec, critic_obs)
        extras = ops.slice_cols(critic_obs, self.spec.actor_width,
                                self.spec.actor_width + N_EXTRAS)
        feat = ops.concat([h, state_flat, extras], axis=-1)
        values = []
        for head in self._head_names():
            hid = mlp_forward(ops, self.store, head, feat, list(TRUNK), "tanh", "tanh")
            values.append(linear(ops, self.store, f"{head}/out", hid))
        return values

    def values_numpy(self, critic_obs: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """(B, n_heads) values without building a graph."""
        outs = []
        for start in range(0, len(critic_obs), chunk):
            vs = self.forward(NUMPY_OPS, critic_obs[start:start + chunk])
            outs.append(np.concatenate(vs, axis=1))
        return np.concatenate(outs, axis=0)

    def n_params(self) -> int:
        return self.store.n_params()


def n_costs_for_mode(mode: str) -> int:
    """Active constraint channels: (C_safe, C_limit, C_D) for the full
    method, the first two for the plain-constraint ablation, none when
    costs are folded into the reward."""
    return {"p3o_cbf": 3, "p3o": 2, "ppo_reward_shaping": 0}[mode]
