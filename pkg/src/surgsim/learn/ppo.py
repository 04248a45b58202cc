"""Clipped-surrogate policy optimization over large mini-batches."""

from __future__ import annotations

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from surgsim.learn.buffer import RolloutBuffer, normalize
from surgsim.learn.policy import HIDDEN, ActorCritic, LearnError, gaussian_entropy, gaussian_log_prob

# The shortest rollout per update that still gives usable advantage estimates.
MIN_STEPS_PER_UPDATE = 25


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 1.0
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    total_steps: int = 2_000_000
    n_steps: int = 32
    n_robots: int = 1024
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN
    init_log_std: float = -1.0
    normalize_obs: bool = True
    bootstrap_timeouts: bool = True
    checkpoint_every: int = 50

    @field_validator("gamma", "lam")
    @classmethod
    def _unit(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return v

    @field_validator("n_steps")
    @classmethod
    def _horizon(cls, v):
        if v < MIN_STEPS_PER_UPDATE:
            raise ValueError(f"must be >= {MIN_STEPS_PER_UPDATE}")
        return v

    @field_validator("epochs", "minibatches", "n_robots", "checkpoint_every")
    @classmethod
    def _positive_int(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("clip", "lr", "max_grad_norm")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @model_validator(mode="after")
    def _budget(self):
        if self.total_steps < self.batch_size:
            raise ValueError(f"total_steps {self.total_steps} is below one batch ({self.batch_size})")
        if self.minibatches > self.batch_size:
            raise ValueError("more minibatches than samples")
        return self

    @property
    def batch_size(self) -> int:
        return self.n_robots * self.n_steps

    @property
    def updates(self) -> int:
        return self.total_steps // self.batch_size


def ppo_loss(
    policy: ActorCritic,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    clip: float,
    value_coef: float,
    entropy_coef: float,
):
    """Scalar loss to minimize, plus detached diagnostics.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + c_v mean((V - R)^2) - c_e H
    """
    mean, log_std, value = policy(obs)
    log_prob = gaussian_log_prob(actions, mean, log_std)
    ratio = torch.exp(log_prob - old_log_probs)
    surrogate = torch.min(ratio * advantages, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages).mean()
    value_loss = ((value - returns) ** 2).mean()
    entropy = gaussian_entropy(log_std)
    loss = -surrogate + value_coef * value_loss - entropy_coef * entropy
    with torch.no_grad():
        log_ratio = log_prob - old_log_probs
        stats = {
            "surrogate": float(surrogate),
            "value_loss": float(value_loss),
            "entropy": float(entropy),
            "kl": float(((ratio - 1.0) - log_ratio).mean()),
            "clip_fraction": float(((ratio - 1.0).abs() > clip).float().mean()),
        }
    return loss, stats


def make_optimizer(policy: ActorCritic, lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(policy.parameters(), lr=lr, eps=1e-8)


def ppo_update(
    policy: ActorCritic,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict:
    """Several epochs of shuffled mini-batch steps on one full buffer."""
    dtype = next(policy.parameters()).dtype
    obs = torch.as_tensor(buffer.flat("obs"), dtype=dtype)
    actions = torch.as_tensor(buffer.flat("actions"), dtype=dtype)
    old_lp = torch.as_tensor(buffer.flat("log_probs"), dtype=dtype)
    adv_np = buffer.flat("advantages")
    adv = torch.as_tensor(adv_np, dtype=dtype)
    ret = torch.as_tensor(buffer.flat("returns"), dtype=dtype)
    n = len(adv)
    splits = np.array_split(np.arange(n), cfg.minibatches)
    sizes = [len(s) for s in splits]
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        start = 0
        for size in sizes:
            idx = torch.as_tensor(perm[start : start + size])
            start += size
            loss, stats = ppo_loss(
                policy, obs[idx], actions[idx], old_lp[idx], adv[idx], ret[idx], cfg.clip, cfg.value_coef, cfg.entropy_coef
            )
            if not torch.isfinite(loss):
                raise LearnError(
                    "non-finite PPO loss; batch stats: "
                    f"adv mean {adv_np.mean():.4g} std {adv_np.std():.4g}, "
                    f"returns [{float(ret.min()):.4g}, {float(ret.max()):.4g}], {stats}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            stats["grad_norm"] = float(torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm))
            optimizer.step()
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


__all__ = ["TrainConfig", "make_optimizer", "normalize", "ppo_loss", "ppo_update"]
