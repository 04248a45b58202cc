"""Vectorized surgical tasks over batched joint-space robots.

Tasks
-----
reach   move the tool tip onto a sampled goal sphere
track   follow a goal that drifts with a random-walk velocity
image   move the endoscope until its view matches a target image
path    follow equal-arc-length waypoints of a random cubic path
multi   several tools, each reaching its own goal, with a tip-proximity penalty

Every row is an independent environment. All randomness comes from per-row
counter streams, so a row's trajectory depends only on the seed, its index
and the actions it receives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from surgsim import dynamics as dyn
from surgsim.envs.layout import ObsLayout
from surgsim.envs.spline import tabulate_batch, waypoints_batch
from surgsim.render import RenderConfig, render_batch
from surgsim.rng import RowStreams
from surgsim.robots.kinematics import tip_frames
from surgsim.robots.model import Pose, RobotModel, load_robot

# Per-axis goal spread about the workspace centre, metres.
DEFAULT_GOAL_SIGMA = {"psm": 0.05, "ecm": 0.05, "star": 0.15}
MAX_REJECTIONS = 1000
SCENE_SPHERES = 3
MIN_TARGET_COVERAGE = 0.02

_DEFAULT_MOUNTS = {
    ("psm", "psm"): [(-0.06, 0.0, 0.0), (0.06, 0.0, 0.0)],
    ("star", "star"): [(0.0, -0.3, 0.0), (0.0, 0.3, 0.0)],
    ("psm", "psm", "ecm"): [(-0.06, 0.0, 0.0), (0.06, 0.0, 0.0), (0.0, 0.06, 0.04)],
}


class EnvError(RuntimeError):
    pass


class Task(str, Enum):
    REACH = "reach"
    TRACK = "track"
    IMAGE = "image"
    PATH = "path"
    MULTI = "multi"


class EnvConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Task = Task.REACH
    robot: str = "psm"
    # multi-tool only: one entry per tool, and optional base offsets
    robots: list[str] | None = None
    mounts: list[tuple[float, float, float]] | None = None
    n_envs: int = 1024
    episode_len: int = 300
    goal_sigma: float | None = None
    goal_offset_clip: float = 0.2
    reward_scale: float = -1.0
    path_penalty: float = 1.0
    success_radius: float = 0.005
    success_hold: int = 10
    terminate_on_success: bool = True
    track_noise_std: float = 0.01
    track_vel_clip: float = 0.01
    path_spacing: float = 0.01
    path_scale: float | None = None
    path_max_waypoints: int = 128
    collision_enabled: bool = True
    collision_threshold: float = 0.01
    collision_penalty: float = 1.0
    image_success_error: float = 0.01
    seed: int = 0

    @field_validator("n_envs", "episode_len", "success_hold", "path_max_waypoints")
    @classmethod
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("goal_sigma", "path_scale")
    @classmethod
    def _positive_opt(cls, v):
        if v is not None and not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("success_radius", "path_spacing", "goal_offset_clip", "path_penalty", "track_vel_clip")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("reward_scale")
    @classmethod
    def _penalty(cls, v):
        if not v < 0:
            raise ValueError("must be < 0 (distance is a penalty)")
        return v

    @model_validator(mode="after")
    def _tools(self):
        if self.mounts is not None and self.robots is not None and len(self.mounts) != len(self.robots):
            raise ValueError("mounts needs one entry per robot")
        return self

    def tool_names(self) -> list[str]:
        if self.task is Task.MULTI:
            return list(self.robots or ["psm", "psm"])
        return [self.robot]

    def sigma_for(self, robot: str) -> float:
        if self.goal_sigma is not None:
            return self.goal_sigma
        return DEFAULT_GOAL_SIGMA.get(robot, 0.05)


@dataclass
class TaskState:
    """Per-row task variables. Fields a task does not use stay empty."""

    goals: np.ndarray  # (N, G, 3) world frame
    goal_vel: np.ndarray  # (N, 3) metres per control step
    spawn: np.ndarray  # (N, 3) tracking goal at episode start
    spline: np.ndarray  # (N, 4, 3) rows a, b, c, d
    knots: np.ndarray  # (2,)
    waypoints: np.ndarray  # (N, K, 3)
    waypoint_count: np.ndarray  # (N,)
    waypoint_index: np.ndarray  # (N,)
    target_images: np.ndarray  # (N, w*h)
    target_camera: np.ndarray  # (N, 3) camera position the target was rendered from
    scene_centers: np.ndarray  # (N, S, 3)
    scene_radii: np.ndarray  # (N, S)
    scene_albedo: np.ndarray  # (N, S)
    step: np.ndarray  # (N,) steps taken in the current episode
    episode: np.ndarray  # (N,) completed episodes
    hold: np.ndarray  # (N,) consecutive steps inside the success criterion
    episode_return: np.ndarray  # (N,)


@dataclass
class StepResult:
    observations: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    timed_out: np.ndarray
    # observation just before the automatic reset, equal to ``observations`` for live rows
    final_observations: np.ndarray
    info: dict = field(default_factory=dict)


def multi_tool_min_separation(poses) -> float:
    """Minimum pairwise distance between tool tips (Poses or an (T, 3) array)."""
    pts = np.array([p.position if isinstance(p, Pose) else p for p in poses], dtype=np.float64)
    if len(pts) < 2:
        raise ValueError("need at least two tools")
    return float(min_separation(pts[None])[0])


def min_separation(tips: np.ndarray) -> np.ndarray:
    """Batched minimum pairwise tip distance, tips (N, T, 3) -> (N,)."""
    t = tips.shape[1]
    best = np.full(tips.shape[0], np.inf)
    for i in range(t):
        for j in range(i + 1, t):
            best = np.minimum(best, np.linalg.norm(tips[:, i] - tips[:, j], axis=1))
    return best


def sample_goal_offsets(rng: RowStreams, rows: np.ndarray, sigma: float) -> np.ndarray:
    """Raw per-axis Gaussian goal offsets (before clipping and rejection)."""
    return rng.normal(rows, 3, scale=sigma)


def clip_about(center: np.ndarray, x: np.ndarray, clip: float) -> np.ndarray:
    """Clip ``x`` to the box ``center +- clip`` so that ``|x - center|`` computed in floats is ``<= clip``."""
    x = np.clip(x, center - clip, center + clip)
    for _ in range(4):
        over = np.abs(x - center) > clip
        if not over.any():
            break
        x = np.where(over, np.nextafter(x, center), x)
    return x


def _sample_in_ball(rng: RowStreams, rows, center: np.ndarray, radius: float, sigma: float, clip: float):
    """Goals ``center + clip(N(0, sigma))`` re-drawn until inside the workspace ball."""
    rows = np.asarray(rows)
    out = np.empty((len(rows), 3))
    pending = np.arange(len(rows))
    for _ in range(MAX_REJECTIONS):
        off = np.clip(sample_goal_offsets(rng, rows[pending], sigma), -clip, clip)
        ok = np.sum(off * off, axis=1) <= radius * radius
        out[pending[ok]] = clip_about(center, center + off[ok], clip)
        pending = pending[~ok]
        if pending.size == 0:
            return out
    raise EnvError(f"goal sampling exceeded {MAX_REJECTIONS} attempts for {pending.size} rows; check the workspace")


class VecEnv:
    """N copies of one task, stepped together."""

    def __init__(
        self,
        cfg: EnvConfig,
        dynamics: dyn.DynamicsConfig | None = None,
        render: RenderConfig | None = None,
        workers: int | None = None,
        models: dict[str, RobotModel] | None = None,
    ):
        self.cfg = cfg
        self.dyn_cfg = dynamics or dyn.DynamicsConfig()
        self.render_cfg = render or RenderConfig()
        self.workers = workers
        self.n = cfg.n_envs
        names = cfg.tool_names()
        cache = dict(models or {})
        self.models = []
        for name in names:
            if name not in cache:
                cache[name] = load_robot(name)
            self.models.append(cache[name])
        if cfg.task is Task.MULTI:
            if len(self.models) < 2:
                raise EnvError("multi-tool task needs at least two robots")
            mounts = cfg.mounts or _DEFAULT_MOUNTS.get(tuple(m.name for m in self.models))
            if mounts is None:
                mounts = [(0.15 * i, 0.0, 0.0) for i in range(len(self.models))]
        else:
            mounts = [(0.0, 0.0, 0.0)]
        self.mounts = np.asarray(mounts, dtype=np.float64)
        # tools that chase a sphere goal; in multi-tool runs an endoscope instead centres its view
        if cfg.task is Task.MULTI:
            self.goal_tools = [i for i, m in enumerate(self.models) if m.name != "ecm"]
            self.view_tools = [i for i, m in enumerate(self.models) if m.name == "ecm"]
            if not self.goal_tools:
                raise EnvError("multi-tool task needs at least one non-camera tool")
        else:
            self.goal_tools, self.view_tools = [0], []
        self.gains = [self.dyn_cfg.resolve(m.dof_count) for m in self.models]
        self.action_slices = []
        start = 0
        for m in self.models:
            self.action_slices.append(slice(start, start + m.dof_count))
            start += m.dof_count
        self.act_dim = start
        self.rng = RowStreams(cfg.seed, self.n, stream=1)
        self.sims = [dyn.make_batch(m, self.n, cfg.seed, stream=2 + i, reset=False) for i, m in enumerate(self.models)]
        self.layout = self._make_layout()
        self.obs_dim = self.layout.size
        self.state = self._empty_state()
        self._tips = [np.zeros((self.n, 3)) for _ in self.models]
        self._rots = [np.zeros((self.n, 3, 3)) for _ in self.models]
        self._images = None

    # -- layout ---------------------------------------------------------------

    def _make_layout(self) -> ObsLayout:
        fields = []
        multi = len(self.models) > 1
        for i, m in enumerate(self.models):
            p = f"tool{i}." if multi else ""
            fields += [(p + "q", m.dof_count), (p + "qdot", m.dof_count), (p + "tip", 3), (p + "q_target", m.dof_count)]
        task = self.cfg.task
        if task in (Task.REACH, Task.TRACK):
            fields.append(("goal", 3))
        elif task is Task.MULTI:
            fields += [(f"goal{i}", 3) for i in self.goal_tools]
        elif task is Task.PATH:
            fields.append(("waypoint", 3))
        elif task is Task.IMAGE:
            fields += [("target_image", self.render_cfg.pixels), ("image", self.render_cfg.pixels)]
        return ObsLayout(fields)

    def manifest(self) -> dict:
        return self.layout.manifest(
            task=self.cfg.task.value,
            robots=[m.name for m in self.models],
            act_dim=self.act_dim,
            action_slices=[[s.start, s.stop] for s in self.action_slices],
        )

    def _empty_state(self) -> TaskState:
        n = self.n
        k = self.cfg.path_max_waypoints if self.cfg.task is Task.PATH else 0
        p = self.render_cfg.pixels if self.cfg.task is Task.IMAGE else 0
        s = SCENE_SPHERES if self.cfg.task is Task.IMAGE else 0
        return TaskState(
            goals=np.zeros((n, len(self.goal_tools), 3)),
            goal_vel=np.zeros((n, 3)),
            spawn=np.zeros((n, 3)),
            spline=np.zeros((n, 4, 3)),
            knots=np.array([0.0, 1.0]),
            waypoints=np.zeros((n, k, 3)),
            waypoint_count=np.zeros(n, dtype=np.int64),
            waypoint_index=np.zeros(n, dtype=np.int64),
            target_images=np.zeros((n, p)),
            target_camera=np.zeros((n, 3)),
            scene_centers=np.zeros((n, s, 3)),
            scene_radii=np.ones((n, s)),
            scene_albedo=np.zeros((n, s)),
            step=np.zeros(n, dtype=np.int64),
            episode=np.zeros(n, dtype=np.int64),
            hold=np.zeros(n, dtype=np.int64),
            episode_return=np.zeros(n),
        )

    # -- geometry -------------------------------------------------------------

    def _workspace(self, tool: int) -> tuple[np.ndarray, float]:
        m = self.models[tool]
        return self.mounts[tool] + np.asarray(m.workspace_center), m.workspace_radius

    def _update_tips(self, rows=None):
        for i, (m, sim) in enumerate(zip(self.models, self.sims)):
            q = sim.q if rows is None else sim.q[rows]
            pos, rot = tip_frames(m, q, check_limits=False, workers=self.workers)
            pos = pos + self.mounts[i]
            if rows is None:
                self._tips[i], self._rots[i] = pos, rot
            else:
                self._tips[i][rows], self._rots[i][rows] = pos, rot

    def tips(self) -> np.ndarray:
        """Current world-frame tool tips, (N, T, 3)."""
        return np.stack(self._tips, axis=1)

    def _render(self, rows: np.ndarray) -> np.ndarray:
        st = self.state
        return render_batch(
            self._tips[0][rows],
            self._rots[0][rows],
            st.scene_centers[rows],
            st.scene_radii[rows],
            st.scene_albedo[rows],
            self.render_cfg,
        )

    # -- resets ---------------------------------------------------------------

    def reset(self) -> np.ndarray:
        """Reset every row and return the initial observations."""
        self.state = self._empty_state()
        rows = np.arange(self.n)
        self._reset_rows(rows)
        return self._observe()

    def _reset_rows(self, rows: np.ndarray):
        if rows.size == 0:
            return
        mask = np.zeros(self.n, dtype=bool)
        mask[rows] = True
        for m, sim in zip(self.models, self.sims):
            dyn.reset_rows(sim, mask, m)
        st, cfg = self.state, self.cfg
        st.step[rows] = 0
        st.hold[rows] = 0
        st.episode_return[rows] = 0.0
        task = cfg.task
        if task in (Task.REACH, Task.TRACK, Task.MULTI):
            for gi, tool in enumerate(self.goal_tools):
                center, radius = self._workspace(tool)
                sigma = cfg.sigma_for(self.models[tool].name)
                st.goals[rows, gi] = _sample_in_ball(self.rng, rows, center, radius, sigma, cfg.goal_offset_clip)
            if task is Task.TRACK:
                st.spawn[rows] = st.goals[rows, 0]
                st.goal_vel[rows] = 0.0
        elif task is Task.PATH:
            self._reset_paths(rows)
        elif task is Task.IMAGE:
            self._reset_scenes(rows)
        self._update_tips(rows)
        if task is Task.IMAGE:
            self._images_cache_rows(rows)

    def _reset_paths(self, rows: np.ndarray):
        cfg, st = self.cfg, self.state
        center, radius = self._workspace(0)
        sigma = cfg.sigma_for(self.models[0].name)
        scale = cfg.path_scale if cfg.path_scale is not None else self.models[0].workspace_radius
        span = float(st.knots[1] - st.knots[0])
        pending = np.asarray(rows)
        for _ in range(MAX_REJECTIONS):
            d = _sample_in_ball(self.rng, pending, center, radius, sigma, cfg.goal_offset_clip)
            u = self.rng.uniform(pending, 9, -1.0, 1.0)
            coeffs = np.empty((len(pending), 4, 3))
            coeffs[:, 0] = 0.5 * scale * u[:, 0:3]
            coeffs[:, 1] = 0.5 * scale * u[:, 3:6]
            coeffs[:, 2] = 0.3 * scale * u[:, 6:9]
            coeffs[:, 3] = d
            pts, _ = tabulate_batch(coeffs, span)
            inside = np.all(np.sum((pts - center) ** 2, axis=2) <= radius * radius, axis=1)
            if inside.any():
                ok = pending[inside]
                st.spline[ok] = coeffs[inside]
                wp, count = waypoints_batch(coeffs[inside], span, cfg.path_spacing, cfg.path_max_waypoints)
                st.waypoints[ok] = wp
                st.waypoint_count[ok] = count
                st.waypoint_index[ok] = 0
            pending = pending[~inside]
            if pending.size == 0:
                return
        raise EnvError(f"path sampling exceeded {MAX_REJECTIONS} attempts; check path_scale and the workspace")

    def _reset_scenes(self, rows: np.ndarray):
        st = self.state
        m = self.models[0]
        # spheres sit beyond the workspace, along the default viewing direction
        below = np.asarray(m.workspace_center) + np.array([0.0, 0.0, -0.1])
        lo, hi = m.lower, m.upper
        mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
        pending = np.asarray(rows)
        for _ in range(MAX_REJECTIONS):
            k = len(pending)
            u = self.rng.uniform(pending, 5 * SCENE_SPHERES).reshape(k, SCENE_SPHERES, 5)
            centers = below + np.stack(
                [0.06 * (2 * u[..., 0] - 1), 0.06 * (2 * u[..., 1] - 1), 0.03 * (2 * u[..., 2] - 1)], axis=-1
            )
            radii = 0.01 + 0.02 * u[..., 3]
            albedo = 0.4 + 0.6 * u[..., 4]
            # target view from a random in-range camera configuration
            q = np.clip(mid - quarter + 2.0 * quarter * self.rng.uniform(pending, m.dof_count), lo, hi)
            pos, rot = tip_frames(m, q, check_limits=False, workers=self.workers)
            img = render_batch(pos, rot, centers, radii, albedo, self.render_cfg)
            # an empty target view would make the task trivial
            ok = np.mean(img > 0.0, axis=1) >= MIN_TARGET_COVERAGE
            done = pending[ok]
            st.scene_centers[done] = centers[ok]
            st.scene_radii[done] = radii[ok]
            st.scene_albedo[done] = albedo[ok]
            st.target_camera[done] = pos[ok]
            st.target_images[done] = img[ok]
            pending = pending[~ok]
            if pending.size == 0:
                return
        raise EnvError(f"scene sampling exceeded {MAX_REJECTIONS} attempts; check the render settings")

    def _images_cache_rows(self, rows: np.ndarray):
        if self._images is None:
            self._images = np.zeros((self.n, self.render_cfg.pixels))
        self._images[rows] = self._render(rows)

    # -- observation ----------------------------------------------------------

    def _observe(self) -> np.ndarray:
        st = self.state
        parts = {}
        multi = len(self.models) > 1
        for i, sim in enumerate(self.sims):
            p = f"tool{i}." if multi else ""
            parts[p + "q"] = sim.q
            parts[p + "qdot"] = sim.qdot
            parts[p + "tip"] = self._tips[i]
            parts[p + "q_target"] = sim.q_target
        task = self.cfg.task
        if task in (Task.REACH, Task.TRACK):
            parts["goal"] = st.goals[:, 0]
        elif task is Task.MULTI:
            for gi, tool in enumerate(self.goal_tools):
                parts[f"goal{tool}"] = st.goals[:, gi]
        elif task is Task.PATH:
            idx = np.minimum(st.waypoint_index, np.maximum(st.waypoint_count - 1, 0))
            parts["waypoint"] = st.waypoints[np.arange(self.n), idx]
        elif task is Task.IMAGE:
            parts["target_image"] = st.target_images
            parts["image"] = self._images
        return self.layout.encode(parts, self.n)

    # -- rewards --------------------------------------------------------------

    def task_error(self) -> np.ndarray:
        """Per-row task error: distance, path deviation or mean image difference."""
        return self._reward_and_error()[1]

    def _reward_and_error(self):
        cfg, st = self.cfg, self.state
        task = cfg.task
        if task in (Task.REACH, Task.TRACK):
            err = np.linalg.norm(self._tips[0] - st.goals[:, 0], axis=1)
            return cfg.reward_scale * err, err, err <= cfg.success_radius
        if task is Task.PATH:
            idx = np.minimum(st.waypoint_index, st.waypoint_count - 1)
            err = np.linalg.norm(self._tips[0] - st.waypoints[np.arange(self.n), idx], axis=1)
            return -cfg.path_penalty * err, err, err < cfg.success_radius
        if task is Task.IMAGE:
            err = np.mean(np.abs(self._images - st.target_images), axis=1)
            return -err, err, err <= cfg.image_success_error
        # multi-tool
        per_tool = self.tool_rewards()
        reward = per_tool.sum(axis=1)
        dists = per_tool / cfg.reward_scale
        ok = np.all(dists <= cfg.success_radius, axis=1)
        penalty = self.collision_penalty()
        reward = reward + penalty
        err = dists.sum(axis=1) + (penalty != 0)
        return reward, err, ok & (penalty == 0)

    def tool_rewards(self) -> np.ndarray:
        """Per-tool reward terms of the multi-tool task, (N, T) without the collision term."""
        cfg, st = self.cfg, self.state
        out = np.zeros((self.n, len(self.models)))
        for gi, tool in enumerate(self.goal_tools):
            out[:, tool] = cfg.reward_scale * np.linalg.norm(self._tips[tool] - st.goals[:, gi], axis=1)
        if self.view_tools:
            mid = np.mean([self._tips[t] for t in self.goal_tools], axis=0)
            for tool in self.view_tools:
                rel = mid - self._tips[tool]
                axis = self._rots[tool][:, :, 2]
                along = np.sum(rel * axis, axis=1, keepdims=True)
                out[:, tool] = cfg.reward_scale * np.linalg.norm(rel - along * axis, axis=1)
        return out

    def collision_penalty(self) -> np.ndarray:
        cfg = self.cfg
        if not cfg.collision_enabled or len(self.models) < 2:
            return np.zeros(self.n)
        sep = min_separation(self.tips())
        return np.where(sep < cfg.collision_threshold, -cfg.collision_penalty, 0.0)

    # -- stepping -------------------------------------------------------------

    def step(self, actions: np.ndarray) -> StepResult:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n, self.act_dim):
            raise EnvError(f"actions shape {actions.shape} != ({self.n}, {self.act_dim})")
        for m, sim, g, sl in zip(self.models, self.sims, self.gains, self.action_slices):
            dyn.step(sim, actions[:, sl], self.dyn_cfg, m, gains=g, workers=self.workers)
        self._update_tips()
        cfg, st = self.cfg, self.state
        if cfg.task is Task.IMAGE:
            self._images_cache_rows(np.arange(self.n))

        reward, err, success = self._reward_and_error()
        if not np.all(np.isfinite(reward)):
            bad = np.flatnonzero(~np.isfinite(reward))
            raise EnvError(f"non-finite reward in rows {bad[:8].tolist()}")

        st.step += 1
        st.episode_return += reward
        if cfg.task is Task.PATH:
            st.waypoint_index = np.where(success, np.minimum(st.waypoint_index + 1, st.waypoint_count), st.waypoint_index)
            reached = st.waypoint_index >= st.waypoint_count
            if not cfg.terminate_on_success:
                st.waypoint_index = np.minimum(st.waypoint_index, st.waypoint_count - 1)
            terminated = reached & cfg.terminate_on_success
        else:
            st.hold = np.where(success, st.hold + 1, 0)
            terminated = (st.hold >= cfg.success_hold) & cfg.terminate_on_success
        timed_out = st.step >= cfg.episode_len

        if cfg.task is Task.TRACK:
            clip = cfg.goal_offset_clip
            st.goals[:, 0] = clip_about(st.spawn, st.goals[:, 0] + st.goal_vel, clip)
            noise = self.rng.normal(None, 3, scale=cfg.track_noise_std)
            st.goal_vel = np.clip(st.goal_vel + noise, -cfg.track_vel_clip, cfg.track_vel_clip)

        obs = self._observe()
        done = terminated | timed_out
        final_obs = obs
        info = {"error": err, "final_error": np.full(self.n, np.nan), "episode_return": np.full(self.n, np.nan)}
        if done.any():
            rows = np.flatnonzero(done)
            final_obs = obs.copy()
            info["final_error"][rows] = err[rows]
            info["episode_return"][rows] = st.episode_return[rows]
            st.episode[rows] += 1
            self._reset_rows(rows)
            obs = self._observe()
        return StepResult(obs, reward, terminated, timed_out, final_obs, info)


def env_reset(cfg: EnvConfig, **kwargs) -> tuple[VecEnv, np.ndarray]:
    """Build and reset a vectorized environment; returns (env, observations)."""
    env = VecEnv(cfg, **kwargs)
    return env, env.reset()


def env_step(env: VecEnv, actions: np.ndarray) -> StepResult:
    return env.step(actions)
