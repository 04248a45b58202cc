"""Gaussian MLP actor-critic."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HIDDEN = (256, 128, 64)


class LearnError(RuntimeError):
    pass


def mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ELU())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Separate actor and critic trunks with a state-independent log-std.

    The actor outputs the action mean; the critic a scalar value. Parameter
    order (``state_dict`` order) is the on-disk order of checkpoints.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=HIDDEN, init_log_std: float = -1.0, dtype=torch.float32):
        super().__init__()
        self.obs_dim, self.act_dim, self.hidden = obs_dim, act_dim, tuple(hidden)
        self.actor = mlp([obs_dim, *hidden, act_dim])
        self.critic = mlp([obs_dim, *hidden, 1])
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std)))
        self.to(dtype)

    def init_weights(self, seed: int) -> "ActorCritic":
        """Seeded orthogonal init; small actor output so early actions stay centred."""
        gen = torch.Generator().manual_seed(int(seed))
        for net, out_gain in ((self.actor, 0.01), (self.critic, 1.0)):
            linears = [m for m in net if isinstance(m, nn.Linear)]
            for i, lin in enumerate(linears):
                gain = out_gain if i == len(linears) - 1 else math.sqrt(2.0)
                w = torch.empty(lin.weight.shape, dtype=torch.float64)
                _orthogonal(w, gain, gen)
                with torch.no_grad():
                    lin.weight.copy_(w)
                    lin.bias.zero_()
        return self

    def clamped_log_std(self) -> torch.Tensor:
        return torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, obs: torch.Tensor):
        mean = self.actor(obs)
        value = self.critic(obs).squeeze(-1)
        return mean, self.clamped_log_std(), value

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)


def _orthogonal(w: torch.Tensor, gain: float, gen: torch.Generator):
    rows, cols = w.shape
    flat = torch.randn(max(rows, cols), min(rows, cols), generator=gen, dtype=torch.float64)
    q, r = torch.linalg.qr(flat)
    q = q * torch.sign(torch.diagonal(r))
    if rows < cols:
        q = q.T
    w.copy_(gain * q[:rows, :cols])


def gaussian_log_prob(actions: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Log density of a diagonal Gaussian, summed over action dimensions."""
    z = (actions - mean) * torch.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)).sum(-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return (log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))).sum(-1)


class ObsNormalizer:
    """Running mean/variance (parallel Welford merge) used to whiten observations."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64).reshape(-1, len(self.mean))
        b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), len(x)
        delta = b_mean - self.mean
        total = self.count + b_n
        self.mean = self.mean + delta * b_n / total
        m2 = self.var * self.count + b_var * b_n + delta * delta * self.count * b_n / total
        self.var = m2 / total
        self.count = total

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)


def policy_forward(policy: ActorCritic, obs: np.ndarray):
    """Deterministic forward pass on a numpy batch: (mean, log_std, value) as numpy."""
    obs = np.asarray(obs)
    if obs.ndim != 2 or obs.shape[1] != policy.obs_dim:
        raise LearnError(f"observation batch shape {obs.shape} does not match obs_dim {policy.obs_dim}")
    if not np.all(np.isfinite(obs)):
        raise LearnError("non-finite observations")
    dtype = next(policy.parameters()).dtype
    with torch.no_grad():
        mean, log_std, value = policy(torch.as_tensor(obs, dtype=dtype))
    if not (torch.isfinite(mean).all() and torch.isfinite(value).all()):
        raise LearnError("non-finite network output")
    return mean.numpy(), log_std.numpy(), value.numpy()
