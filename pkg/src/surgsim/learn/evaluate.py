"""Deterministic evaluation of a trained policy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from surgsim.envs import Task, VecEnv
from surgsim.learn.policy import ActorCritic, LearnError, ObsNormalizer, policy_forward

ERROR_NAMES = {
    Task.REACH: "final_distance",
    Task.TRACK: "final_distance",
    Task.MULTI: "final_distance",
    Task.PATH: "path_deviation",
    Task.IMAGE: "image_error",
}


@dataclass
class EvalSummary:
    task: str
    metric: str
    episodes: int
    mean_final_error: float
    std_final_error: float
    mean_initial_error: float
    mean_return: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate(
    env: VecEnv,
    policy: ActorCritic,
    normalizer: ObsNormalizer | None = None,
    episodes: int = 1,
    csv_path: str | Path | None = None,
) -> EvalSummary:
    """Run ``episodes`` rounds of full-length episodes on every env row with mean actions.

    The env must not terminate early, so every episode lasts exactly
    ``episode_len`` steps and the CSV has ``n_envs * episodes * episode_len``
    rows (one per env per step).
    """
    if env.cfg.terminate_on_success:
        raise LearnError("evaluation needs terminate_on_success=False so episodes have fixed length")
    if policy.obs_dim != env.obs_dim or policy.act_dim != env.act_dim:
        raise LearnError(
            f"policy shape ({policy.obs_dim}, {policy.act_dim}) does not match env ({env.obs_dim}, {env.act_dim})"
        )
    T = env.cfg.episode_len
    obs = env.reset()
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        dofs = [f"q{i}" for i in range(sum(m.dof_count for m in env.models))]
        tips = [f"tip{t}_{a}" for t in range(len(env.models)) for a in "xyz"]
        goals = [f"goal{g}_{a}" for g in range(len(env.goal_tools)) for a in "xyz"]
        writer.writerow(["episode", "env", "step", *dofs, *tips, *goals, "reward"])
    finals, initials, returns = [], [], []
    try:
        for ep in range(episodes):
            initials.append(env.task_error())
            ret = np.zeros(env.n)
            for t in range(T):
                x = normalizer(obs) if normalizer is not None else obs
                mean, _, _ = policy_forward(policy, x.astype(np.float32))
                actions = np.clip(mean.astype(np.float64), -1.0, 1.0)
                res = env.step(actions)
                ret += res.rewards
                if writer is not None:
                    _write_rows(writer, env, ep, t, res)
                obs = res.observations
            if not res.timed_out.all():
                raise LearnError("episode did not time out after episode_len steps")
            finals.append(res.info["final_error"])
            returns.append(ret)
    finally:
        if fh:
            fh.close()
    fin = np.concatenate(finals)
    return EvalSummary(
        task=env.cfg.task.value,
        metric=ERROR_NAMES[env.cfg.task],
        episodes=episodes * env.n,
        mean_final_error=float(fin.mean()),
        std_final_error=float(fin.std()),
        mean_initial_error=float(np.concatenate(initials).mean()),
        mean_return=float(np.concatenate(returns).mean()),
    )


def _write_rows(writer, env: VecEnv, ep: int, t: int, res):
    # pre-reset state: on the last step rows reset, so rebuild it from final_observations
    dec = env.layout.decode(res.final_observations)
    multi = len(env.models) > 1
    qs = np.concatenate([dec[f"tool{i}.q" if multi else "q"] for i in range(len(env.models))], axis=1)
    tips = np.concatenate([dec[f"tool{i}.tip" if multi else "tip"] for i in range(len(env.models))], axis=1)
    if env.cfg.task in (Task.REACH, Task.TRACK):
        goals = dec["goal"]
    elif env.cfg.task is Task.MULTI:
        goals = np.concatenate([dec[f"goal{g}"] for g in env.goal_tools], axis=1)
    elif env.cfg.task is Task.PATH:
        goals = dec["waypoint"]
    else:
        goals = np.zeros((env.n, 0))
    for i in range(env.n):
        writer.writerow([ep, i, t, *qs[i].tolist(), *tips[i].tolist(), *goals[i].tolist(), float(res.rewards[i])])
