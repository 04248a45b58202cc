"""Throughput profiling: timed random-action stepping and timed training.

A "step" is one environment transition. With N parallel envs a call to
``VecEnv.step`` counts N steps, so totals are aggregate across envs.
"""

from __future__ import annotations

import json
import math
import os
import platform
import statistics
import sys
import time
from enum import Enum

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator

from surgsim.dynamics import DynamicsConfig
from surgsim.envs import EnvConfig, VecEnv
from surgsim.learn.ppo import TrainConfig
from surgsim.learn.train import Trainer, strip_wall_clock
from surgsim.render import RenderConfig
from surgsim.rng import RowStreams

ACTION_STREAM = 200


class BenchMode(str, Enum):
    SIM = "sim"
    LEARN = "learn"


class BenchProtocol(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: BenchMode = BenchMode.SIM
    total_steps: int = 1_000_000
    runs: int = 30
    n_envs: int = 4096
    seed: int = 0
    # timing always begins after the first step; kept as a field so reports show it
    warmup: bool = True

    @field_validator("total_steps", "runs", "n_envs")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("warmup")
    @classmethod
    def _always(cls, v):
        if not v:
            raise ValueError("timing always starts after the first step")
        return v


class BenchReport(BaseModel):
    mode: str
    task: str
    robots: list[str]
    n_envs: int
    runs: int
    # aggregate transitions timed per run
    steps_per_run: int
    elapsed: list[float]
    seconds_per_1m_mean: float
    seconds_per_1m_std: float
    fps_mean: float
    fps_std: float
    host: dict
    clock_anomalies: list[str] = Field(default_factory=list)
    run_metrics: list = Field(default_factory=list)

    @property
    def fps(self) -> list[float]:
        return [self.steps_per_run / e for e in self.elapsed]

    def table(self) -> str:
        label = f"{self.task}/{'+'.join(self.robots)} {self.mode} n_envs={self.n_envs} runs={self.runs}"
        rows = [
            ("Seconds per 1M Timesteps", f"{self.seconds_per_1m_mean:.3f} ± {self.seconds_per_1m_std:.3f}"),
            ("Frames per second", f"{self.fps_mean:,.0f} ± {self.fps_std:,.0f}"),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [label, "-" * len(label)]
        lines += [f"{name:<{width}}  {val}" for name, val in rows]
        lines.append(f"host: {self.host['cpu_count']} cores, clock {self.host['clock']}")
        for a in self.clock_anomalies:
            lines.append(f"warning: {a}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def host_metadata() -> dict:
    info = time.get_clock_info("perf_counter")
    try:
        usable = len(os.sched_getaffinity(0))
    except AttributeError:
        usable = os.cpu_count()
    return {
        "cpu_count": os.cpu_count(),
        "usable_cores": usable,
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "torch": torch.__version__,
        "workers_env": os.environ.get("SURGSIM_WORKERS"),
        "clock": f"perf_counter ({info.implementation}, monotonic={info.monotonic}, resolution={info.resolution:g})",
    }


def _summarize(mode, cfg: EnvConfig, robots, n_envs, steps, elapsed, metrics) -> BenchReport:
    anomalies = [f"run {i}: non-positive elapsed {e!r}" for i, e in enumerate(elapsed) if not e > 0]
    good = [e for e in elapsed if e > 0] or [math.nan]
    per_1m = [e * 1e6 / steps for e in good]
    fps = [steps / e for e in good]

    def sd(x):
        return statistics.stdev(x) if len(x) > 1 else 0.0

    return BenchReport(
        mode=mode,
        task=cfg.task.value,
        robots=robots,
        n_envs=n_envs,
        runs=len(elapsed),
        steps_per_run=steps,
        elapsed=elapsed,
        seconds_per_1m_mean=statistics.fmean(per_1m),
        seconds_per_1m_std=sd(per_1m),
        fps_mean=statistics.fmean(fps),
        fps_std=sd(fps),
        host=host_metadata(),
        clock_anomalies=anomalies,
        run_metrics=metrics,
    )


def _calls(total_steps: int, n_envs: int) -> int:
    return -(-total_steps // n_envs)


def bench_sim(
    cfg: EnvConfig,
    protocol: BenchProtocol,
    dynamics: DynamicsConfig | None = None,
    render: RenderConfig | None = None,
    workers: int | None = None,
) -> BenchReport:
    """Step with uniform random actions; observations and rewards are discarded.

    Each run rebuilds the env, takes one untimed step, then times
    ceil(total_steps / n_envs) batched steps.
    """
    cfg = cfg.model_copy(update={"n_envs": protocol.n_envs, "seed": protocol.seed})
    calls = _calls(protocol.total_steps, protocol.n_envs)
    elapsed, metrics = [], []
    robots = cfg.tool_names()
    for _ in range(protocol.runs):
        env = VecEnv(cfg, dynamics=dynamics, render=render, workers=workers)
        env.reset()
        acts = RowStreams(protocol.seed, env.n, stream=ACTION_STREAM)
        env.step(acts.uniform(None, env.act_dim, -1.0, 1.0))
        total_reward = 0.0
        t0 = time.perf_counter()
        for _ in range(calls):
            res = env.step(acts.uniform(None, env.act_dim, -1.0, 1.0))
            total_reward += float(res.rewards.sum())
        elapsed.append(time.perf_counter() - t0)
        metrics.append({"reward_sum": total_reward})
        robots = [m.name for m in env.models]
    return _summarize("SimOnly", cfg, robots, protocol.n_envs, calls * protocol.n_envs, elapsed, metrics)


def bench_sequential(
    cfg: EnvConfig,
    protocol: BenchProtocol,
    dynamics: DynamicsConfig | None = None,
    render: RenderConfig | None = None,
) -> BenchReport:
    """Baseline: ``n_envs`` independent single-env instances stepped one after another."""
    cfg1 = cfg.model_copy(update={"n_envs": 1})
    calls = _calls(protocol.total_steps, protocol.n_envs)
    elapsed, metrics = [], []
    robots = cfg.tool_names()
    for _ in range(protocol.runs):
        envs = [VecEnv(cfg1.model_copy(update={"seed": protocol.seed + i}), dynamics, render, workers=1)
                for i in range(protocol.n_envs)]
        streams = []
        for i, env in enumerate(envs):
            env.reset()
            streams.append(RowStreams(protocol.seed + i, 1, stream=ACTION_STREAM))
            env.step(streams[i].uniform(None, env.act_dim, -1.0, 1.0))
        total_reward = 0.0
        t0 = time.perf_counter()
        for _ in range(calls):
            for env, s in zip(envs, streams):
                total_reward += float(env.step(s.uniform(None, env.act_dim, -1.0, 1.0)).rewards[0])
        elapsed.append(time.perf_counter() - t0)
        metrics.append({"reward_sum": total_reward})
        robots = [m.name for m in envs[0].models]
    return _summarize("Sequential", cfg, robots, protocol.n_envs, calls * protocol.n_envs, elapsed, metrics)


def bench_learning(
    cfg: EnvConfig,
    train_cfg: TrainConfig,
    protocol: BenchProtocol,
    dynamics: DynamicsConfig | None = None,
    render: RenderConfig | None = None,
    workers: int | None = None,
) -> BenchReport:
    """Time full PPO iterations (rollout, GAE, updates) until total_steps transitions.

    The network is the fixed 256/128/64 ELU actor-critic. Steps are
    counted in whole rollouts, so a run covers at least total_steps.
    """
    cfg = cfg.model_copy(update={"n_envs": protocol.n_envs, "seed": protocol.seed})
    batch = protocol.n_envs * train_cfg.n_steps
    tc = train_cfg.model_copy(
        update={"n_robots": protocol.n_envs, "seed": protocol.seed, "total_steps": max(batch, protocol.total_steps)}
    )
    updates = _calls(protocol.total_steps, batch)
    elapsed, metrics = [], []
    robots = cfg.tool_names()
    for _ in range(protocol.runs):
        env = VecEnv(cfg, dynamics=dynamics, render=render, workers=workers)
        trainer = Trainer(env, tc)
        # warmup: one untimed transition through the policy
        trainer.obs = env.step(np.zeros((env.n, env.act_dim))).observations
        t0 = time.perf_counter()
        records = [trainer.step_update() for _ in range(updates)]
        elapsed.append(time.perf_counter() - t0)
        metrics.append(strip_wall_clock(records)[-1])
        robots = [m.name for m in env.models]
    return _summarize("WithLearning", cfg, robots, protocol.n_envs, updates * batch, elapsed, metrics)


def run_protocol(cfg: EnvConfig, protocol: BenchProtocol, train_cfg: TrainConfig | None = None, **kw) -> BenchReport:
    if protocol.mode is BenchMode.SIM:
        return bench_sim(cfg, protocol, **kw)
    return bench_learning(cfg, train_cfg or TrainConfig(), protocol, **kw)


def reports_json(reports: list[BenchReport]) -> str:
    return json.dumps([json.loads(r.to_json()) for r in reports], indent=2)
