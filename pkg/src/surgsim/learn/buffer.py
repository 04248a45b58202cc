"""Rollout storage and generalized advantage estimation."""

from __future__ import annotations

import numpy as np


class RolloutBuffer:
    """Fixed (n_steps, n_envs) store of transitions; capacity is n_steps * n_envs."""

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int, act_dim: int):
        self.n_steps, self.n_envs = n_steps, n_envs
        shape = (n_steps, n_envs)
        self.obs = np.zeros(shape + (obs_dim,), dtype=np.float32)
        self.actions = np.zeros(shape + (act_dim,), dtype=np.float32)
        self.log_probs = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.values = np.zeros(shape)
        self.terminated = np.zeros(shape, dtype=bool)
        self.timed_out = np.zeros(shape, dtype=bool)
        # V(s_{t+1}) of the pre-reset observation, meaningful where timed_out
        self.bootstrap_values = np.zeros(shape)
        # V(s_T) after the last stored step
        self.last_values = np.zeros(n_envs)
        self.advantages = np.zeros(shape)
        self.returns = np.zeros(shape)
        self.pos = 0

    @property
    def capacity(self) -> int:
        return self.n_steps * self.n_envs

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps

    def add(self, obs, actions, log_probs, rewards, values, terminated, timed_out, bootstrap_values=None):
        if self.full:
            raise IndexError("rollout buffer is full")
        t = self.pos
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.terminated[t] = terminated
        self.timed_out[t] = timed_out
        self.bootstrap_values[t] = 0.0 if bootstrap_values is None else bootstrap_values
        self.pos += 1

    def reset(self):
        self.pos = 0

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((self.capacity,) + a.shape[2:])


def normalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std copy over the whole batch."""
    return (x - x.mean()) / (x.std() + 1e-12)


def compute_gae(
    buffer: RolloutBuffer,
    gamma: float,
    lam: float,
    bootstrap_timeouts: bool = True,
    normalize_advantages: bool = True,
):
    """Backward GAE recursion over the buffer; fills and returns (advantages, returns).

    A timed-out slot is treated as terminal after its reward is augmented by
    gamma * V(s_{t+1}) of the pre-reset state. With ``bootstrap_timeouts``
    off, timeouts are plain terminals. Returns are the raw advantages plus
    values; only the advantages are then normalized.
    """
    r = buffer.rewards
    if bootstrap_timeouts:
        r = r + gamma * buffer.bootstrap_values * buffer.timed_out
    done = buffer.terminated | buffer.timed_out
    adv = np.zeros_like(buffer.values)
    last = np.zeros(buffer.n_envs)
    for t in range(buffer.n_steps - 1, -1, -1):
        next_v = buffer.last_values if t == buffer.n_steps - 1 else buffer.values[t + 1]
        not_done = 1.0 - done[t]
        delta = r[t] + gamma * next_v * not_done - buffer.values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
    buffer.returns = adv + buffer.values
    buffer.advantages = normalize(adv) if normalize_advantages else adv
    return buffer.advantages, buffer.returns
