"""Rollout collection and the outer training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from surgsim.envs import VecEnv
from surgsim.learn.buffer import RolloutBuffer, compute_gae
from surgsim.learn.checkpoint import save_checkpoint
from surgsim.learn.policy import ActorCritic, LearnError, ObsNormalizer, gaussian_log_prob, policy_forward
from surgsim.learn.ppo import TrainConfig, make_optimizer, ppo_update
from surgsim.rng import RowStreams

log = logging.getLogger(__name__)

# action-noise stream id, kept apart from the env streams
NOISE_STREAM = 100
# metric fields that depend on the wall clock and are not reproducible
WALL_CLOCK_FIELDS = frozenset({"fps", "wall_time", "update_seconds"})
CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.jsonl"


@dataclass
class TrainResult:
    policy: ActorCritic
    normalizer: ObsNormalizer | None
    metrics: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    env_steps: int = 0
    interrupted: bool = False


class Trainer:
    """Owns the policy, optimizer and rollout state for one run.

    ``step_update`` performs one rollout plus one PPO update, so callers
    (the benchmark harness, for instance) can drive the loop themselves.
    """

    def __init__(self, env: VecEnv, cfg: TrainConfig):
        if env.n != cfg.n_robots:
            raise LearnError(f"environment has {env.n} rows but n_robots is {cfg.n_robots}")
        self.env, self.cfg = env, cfg
        torch.manual_seed(cfg.seed)
        self.policy = ActorCritic(env.obs_dim, env.act_dim, cfg.hidden, cfg.init_log_std).init_weights(cfg.seed)
        self.optimizer = make_optimizer(self.policy, cfg.lr)
        self.normalizer = ObsNormalizer(env.obs_dim) if cfg.normalize_obs else None
        self.buffer = RolloutBuffer(cfg.n_steps, env.n, env.obs_dim, env.act_dim)
        self.noise = RowStreams(cfg.seed, env.n, stream=NOISE_STREAM)
        self.shuffle = np.random.default_rng(cfg.seed)
        self.env_steps = 0
        self.updates = 0
        self.obs = env.reset()

    def _norm(self, obs: np.ndarray, update: bool) -> np.ndarray:
        if self.normalizer is None:
            return obs
        if update:
            self.normalizer.update(obs)
        return self.normalizer(obs)

    def collect(self) -> dict:
        """Fill the buffer with n_steps transitions per env."""
        buf, env = self.buffer, self.env
        buf.reset()
        dtype = next(self.policy.parameters()).dtype
        returns, finals = [], []
        for _ in range(self.cfg.n_steps):
            obs_n = self._norm(self.obs, update=True)
            obs_t = torch.as_tensor(obs_n, dtype=dtype)
            mean, log_std, value = policy_forward(self.policy, obs_t.numpy())
            eps = self.noise.normal(None, env.act_dim)
            actions = (mean + np.exp(log_std) * eps).astype(np.float32)
            with torch.no_grad():
                logp = gaussian_log_prob(torch.as_tensor(actions), torch.as_tensor(mean), torch.as_tensor(log_std))
            res = env.step(np.clip(actions.astype(np.float64), -1.0, 1.0))
            boot = None
            if res.timed_out.any():
                rows = np.flatnonzero(res.timed_out)
                # normalize without folding the pre-reset states into the running stats
                _, _, v = policy_forward(self.policy, self._norm(res.final_observations[rows], update=False).astype(np.float32))
                boot = np.zeros(env.n)
                boot[rows] = v
            buf.add(obs_n, actions, logp.numpy(), res.rewards, value, res.terminated, res.timed_out, boot)
            done = res.terminated | res.timed_out
            if done.any():
                returns.append(res.info["episode_return"][done])
                finals.append(res.info["final_error"][done])
            self.obs = res.observations
        _, _, last_v = policy_forward(self.policy, self._norm(self.obs, update=False).astype(np.float32))
        buf.last_values = last_v.astype(np.float64)
        self.env_steps += buf.capacity
        ret = np.concatenate(returns) if returns else np.empty(0)
        fin = np.concatenate(finals) if finals else np.empty(0)
        return {
            "episodes": int(ret.size),
            "mean_episode_reward": float(ret.mean()) if ret.size else None,
            "mean_final_distance": float(fin.mean()) if fin.size else None,
            "mean_step_reward": float(buf.rewards.mean()),
        }

    def step_update(self) -> dict:
        t0 = time.perf_counter()
        rollout = self.collect()
        compute_gae(self.buffer, self.cfg.gamma, self.cfg.lam, self.cfg.bootstrap_timeouts)
        stats = ppo_update(self.policy, self.optimizer, self.buffer, self.cfg, self.shuffle)
        self.updates += 1
        dt = time.perf_counter() - t0
        return {
            "update": self.updates,
            "env_steps": self.env_steps,
            **rollout,
            **stats,
            "log_std": float(self.policy.clamped_log_std().detach().mean()),
            "update_seconds": dt,
            "fps": self.buffer.capacity / dt if dt > 0 else math.inf,
        }

    def save(self, path: Path, meta: dict | None = None):
        save_checkpoint(
            path,
            self.policy,
            self.normalizer,
            {
                "env_steps": self.env_steps,
                "updates": self.updates,
                "task": self.env.cfg.task.value,
                "robots": [m.name for m in self.env.models],
                **(meta or {}),
            },
        )


def _clean(record: dict) -> dict:
    # JSON has no NaN/inf; emit null instead
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in record.items()}


def train(
    make_env: Callable[[], VecEnv] | VecEnv,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    on_update: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Alternate rollouts and PPO updates until ``cfg.total_steps`` env steps.

    With ``out_dir`` set, metrics go to ``metrics.jsonl`` (one object per
    update) and the checkpoint to ``checkpoint.bin`` every
    ``cfg.checkpoint_every`` updates and at the end. A KeyboardInterrupt
    still leaves a checkpoint of the last completed update.
    """
    env = make_env() if callable(make_env) else make_env
    trainer = Trainer(env, cfg)
    out = Path(out_dir) if out_dir is not None else None
    ckpt = out / CHECKPOINT_NAME if out else None
    metrics_fh = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / METRICS_NAME, "w")
    result = TrainResult(trainer.policy, trainer.normalizer, checkpoint=ckpt)
    start = time.perf_counter()
    try:
        for _ in range(cfg.updates):
            record = trainer.step_update()
            record["wall_time"] = time.perf_counter() - start
            record = _clean(record)
            result.metrics.append(record)
            if metrics_fh:
                metrics_fh.write(json.dumps(record) + "\n")
                metrics_fh.flush()
            if on_update:
                on_update(record)
            log.info(
                "update %d steps %d reward %s final %s",
                record["update"],
                record["env_steps"],
                record["mean_episode_reward"],
                record["mean_final_distance"],
            )
            if ckpt and trainer.updates % cfg.checkpoint_every == 0:
                trainer.save(ckpt)
    except KeyboardInterrupt:
        result.interrupted = True
        log.warning("interrupted after %d updates", trainer.updates)
    finally:
        if ckpt and trainer.updates > 0:
            trainer.save(ckpt, {"interrupted": result.interrupted})
        if metrics_fh:
            metrics_fh.close()
    result.env_steps = trainer.env_steps
    return result


def strip_wall_clock(records: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k not in WALL_CLOCK_FIELDS} for r in records]
