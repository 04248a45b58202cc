import numpy as np
import pytest
from pydantic import ValidationError

from surgsim.dynamics import DynamicsConfig
from surgsim.envs import (
    EnvConfig,
    EnvError,
    Task,
    VecEnv,
    env_reset,
    env_step,
    multi_tool_min_separation,
    sample_goal_offsets,
)
from surgsim.rng import RowStreams
from surgsim.robots import Pose

HOLD = DynamicsConfig(control_mode="torque")  # zero torque keeps a resting arm exactly still


def make(task="reach", n=64, dynamics=None, **kw):
    env, obs = env_reset(EnvConfig(task=task, n_envs=n, **kw), dynamics=dynamics)
    return env, obs


def zeros(env):
    return np.zeros((env.n, env.act_dim))


class TestGoals:
    def test_psm_goal_offsets_std(self):
        z = sample_goal_offsets(RowStreams(0, 10_000, 1), np.arange(10_000), 0.05)
        assert np.all((0.045 <= z.std(axis=0)) & (z.std(axis=0) <= 0.055))

    def test_star_goal_offsets_std(self):
        z = sample_goal_offsets(RowStreams(1, 10_000, 1), np.arange(10_000), 0.15)
        assert np.all(np.abs(z.std(axis=0) - 0.15) <= 0.01)

    def test_env_uses_robot_sigma(self):
        assert EnvConfig(robot="star").sigma_for("star") == 0.15
        assert EnvConfig().sigma_for("psm") == 0.05

    def test_goals_inside_workspace_and_clipped(self):
        env, _ = make(n=2000, robot="star")
        center = np.asarray(env.models[0].workspace_center)
        off = env.state.goals[:, 0] - center
        assert np.all(np.linalg.norm(off, axis=1) <= env.models[0].workspace_radius)
        assert np.all(np.abs(off) <= env.cfg.goal_offset_clip)

    def test_same_seed_same_goals(self):
        a, _ = make(seed=4)
        b, _ = make(seed=4)
        c, _ = make(seed=5)
        assert np.array_equal(a.state.goals, b.state.goals)
        assert not np.array_equal(a.state.goals, c.state.goals)

    def test_unreachable_workspace_errors(self):
        env = VecEnv(EnvConfig(n_envs=4, goal_sigma=50.0, goal_offset_clip=40.0))
        with pytest.raises(EnvError, match="1000 attempts"):
            env.reset()


class TestRewards:
    def test_zero_distance_zero_reward_then_terminates_after_hold(self):
        env, _ = make(n=8, dynamics=HOLD, success_hold=3)
        env.state.goals[:, 0] = env.tips()[:, 0]
        for k in range(3):
            res = env_step(env, zeros(env))
            assert (res.rewards == 0).all()
            assert res.terminated.all() == (k == 2)
        assert (res.info["final_error"] == 0).all()

    def test_reward_is_negative_scaled_distance(self):
        env, _ = make(n=128, reward_scale=-2.0)
        res = env.step(np.random.default_rng(0).uniform(-1, 1, (128, env.act_dim)))
        tips = env.layout.decode(res.final_observations)["tip"]
        d = np.linalg.norm(tips - env.layout.decode(res.final_observations)["goal"], axis=1)
        np.testing.assert_allclose(res.rewards, -2.0 * d, rtol=0, atol=1e-15)

    def test_reward_monotone_in_distance(self):
        env, _ = make(n=1, dynamics=HOLD)
        tip = env.tips()[0, 0]
        rewards = []
        for dist in (0.04, 0.02, 0.01, 0.0):
            env.state.goals[0, 0] = tip + np.array([dist, 0, 0])
            rewards.append(env._reward_and_error()[0][0])
        assert rewards == sorted(rewards) and len(set(rewards)) == 4 and rewards[-1] == 0

    def test_identical_images_zero_reward(self):
        env, _ = make("image", n=4, dynamics=HOLD, robot="ecm")
        env.state.target_images[:] = env._images
        res = env.step(zeros(env))
        assert (res.rewards == 0).all()

    def test_image_reward_is_mean_abs_difference(self):
        env, _ = make("image", n=6, robot="ecm")
        res = env.step(np.random.default_rng(2).uniform(-1, 1, (6, env.act_dim)))
        dec = env.layout.decode(res.final_observations)
        want = -np.mean(np.abs(dec["image"] - dec["target_image"]), axis=1)
        np.testing.assert_allclose(res.rewards, want, atol=1e-15)

    def test_image_targets_not_empty(self):
        env, _ = make("image", n=32, robot="ecm")
        assert np.all(np.mean(env.state.target_images > 0, axis=1) >= 0.02)

    def test_timeout_flag_and_final_observation(self):
        env, _ = make(n=16, episode_len=5, terminate_on_success=False)
        for _ in range(4):
            res = env.step(zeros(env))
            assert not res.timed_out.any()
        before = env.state.goals.copy()
        res = env.step(zeros(env))
        assert res.timed_out.all() and not res.terminated.any()
        # observations are post-reset, final_observations keep the old goal
        dec_final = env.layout.decode(res.final_observations)
        np.testing.assert_array_equal(dec_final["goal"], before[:, 0])
        assert not np.array_equal(env.layout.decode(res.observations)["goal"], before[:, 0])
        assert (env.state.step == 0).all() and (env.state.episode == 1).all()

    def test_both_flags_only_at_episode_end(self):
        env, _ = make(n=4, dynamics=HOLD, episode_len=3, success_hold=3)
        env.state.goals[:, 0] = env.tips()[:, 0]
        for _ in range(3):
            res = env.step(zeros(env))
        assert res.terminated.all() and res.timed_out.all()


class TestTracking:
    def test_goal_stays_within_clip_of_spawn(self):
        env, _ = make("track", n=256, episode_len=400, track_noise_std=0.01)
        rng = np.random.default_rng(0)
        for _ in range(300):
            spawn = env.state.spawn.copy()
            env.step(rng.uniform(-1, 1, (env.n, env.act_dim)))
            live = env.state.step > 0
            off = np.abs(env.state.goals[live, 0] - spawn[live])
            assert off.max() <= 0.2

    def test_goal_moves(self):
        env, _ = make("track", n=8)
        g0 = env.state.goals.copy()
        for _ in range(3):
            env.step(zeros(env))
        assert not np.array_equal(g0, env.state.goals)
        assert np.all(np.abs(env.state.goal_vel) <= env.cfg.track_vel_clip)


class TestPath:
    def test_waypoints_inside_workspace(self):
        env, _ = make("path", n=64)
        center = np.asarray(env.models[0].workspace_center)
        r = env.models[0].workspace_radius
        for i in range(64):
            wp = env.state.waypoints[i, : env.state.waypoint_count[i]]
            assert np.all(np.linalg.norm(wp - center, axis=1) <= r + 1e-12)

    def test_index_monotone_and_advances_on_proximity(self):
        env, _ = make("path", n=4, dynamics=HOLD, episode_len=500)
        prev = env.state.waypoint_index.copy()
        # put the current waypoint on the tip of row 0
        env.state.waypoints[0, 0] = env.tips()[0, 0]
        res = env.step(zeros(env))
        assert env.state.waypoint_index[0] == 1 and res.rewards[0] == 0
        rng = np.random.default_rng(1)
        for _ in range(50):
            prev = env.state.waypoint_index.copy()
            res = env.step(rng.uniform(-1, 1, (4, env.act_dim)))
            reset = res.terminated | res.timed_out
            assert np.all(env.state.waypoint_index[~reset] >= prev[~reset])
            assert np.all(res.rewards <= 0)


class TestMultiTool:
    def test_separation_examples(self):
        assert multi_tool_min_separation([np.zeros(3), np.zeros(3)]) == 0.0
        pts = [np.zeros(3), np.array([0.1, 0, 0]), np.array([0, 0.2, 0])]
        assert multi_tool_min_separation(pts) == pytest.approx(0.1)
        poses = [Pose(p, np.array([1.0, 0, 0, 0])) for p in pts]
        assert multi_tool_min_separation(poses) == pytest.approx(0.1)

    def test_on_goal_zero_and_sum_of_single_tool_rewards(self):
        env, _ = make("multi", n=8, dynamics=HOLD, robots=["psm", "psm"])
        env.state.goals[:, 0] = env.tips()[:, 0]
        env.state.goals[:, 1] = env.tips()[:, 1]
        res = env.step(zeros(env))
        assert (res.rewards == 0).all()

    def test_decomposition_exact(self):
        env, _ = make("multi", n=256, robots=["psm", "psm"], collision_threshold=0.05)
        rng = np.random.default_rng(5)
        for _ in range(20):
            res = env.step(rng.uniform(-1, 1, (env.n, env.act_dim)))
            dec = env.layout.decode(res.final_observations)
            singles = [
                -np.linalg.norm(dec[f"tool{i}.tip"] - dec[f"goal{i}"], axis=1) for i in range(2)
            ]
            sep = np.linalg.norm(dec["tool0.tip"] - dec["tool1.tip"], axis=1)
            penalty = np.where(sep < 0.05, -1.0, 0.0)
            assert np.array_equal(res.rewards, (singles[0] + singles[1]) + penalty)

    def test_penalty_iff_below_threshold(self):
        env, _ = make("multi", n=64, robots=["psm", "psm"], collision_threshold=0.1)
        sep = np.linalg.norm(env.tips()[:, 0] - env.tips()[:, 1], axis=1)
        assert np.array_equal(env.collision_penalty() < 0, sep < 0.1)
        off, _ = make("multi", n=64, robots=["psm", "psm"], collision_threshold=0.1, collision_enabled=False)
        assert (off.collision_penalty() == 0).all()

    def test_trimanual_camera_term(self):
        env, _ = make("multi", n=16, robots=["psm", "psm", "ecm"])
        per_tool = env.tool_rewards()
        assert per_tool.shape == (16, 3) and np.all(per_tool <= 0)
        assert env.view_tools == [2] and env.goal_tools == [0, 1]


class TestInvariants:
    @pytest.mark.parametrize("task", list(Task))
    def test_rewards_nonpositive_zero_iff_error_zero(self, task):
        kw = {"robot": "ecm"} if task is Task.IMAGE else {}
        kw.update({"robots": ["psm", "psm"]} if task is Task.MULTI else {})
        env, _ = make(task.value, n=32, **kw)
        rng = np.random.default_rng(7)
        for _ in range(10):
            res = env.step(rng.uniform(-1, 1, (32, env.act_dim)))
            err = res.info["error"]
            assert np.all(res.rewards <= 0)
            assert np.array_equal(res.rewards == 0, err == 0)

    @pytest.mark.parametrize("task", ["reach", "path", "multi"])
    def test_obs_layout_round_trip(self, task):
        env, obs = make(task, n=8)
        parts = env.layout.decode(obs)
        assert np.array_equal(env.layout.encode(parts, 8), obs)
        man = env.manifest()
        assert man["obs_dim"] == obs.shape[1] == sum(f["length"] for f in man["fields"])

    @pytest.mark.parametrize("task", ["reach", "track", "path", "multi"])
    def test_worker_count_bitwise(self, task):
        rng = np.random.default_rng(9)
        outs = []
        for w in (1, 4):
            env = VecEnv(EnvConfig(task=task, n_envs=1024, episode_len=7), workers=w)
            obs = [env.reset()]
            acts = np.random.default_rng(9).uniform(-1, 1, (12, 1024, env.act_dim))
            for a in acts:
                r = env.step(a)
                obs += [r.observations, r.rewards]
            outs.append(obs)
        assert all(np.array_equal(a, b) for a, b in zip(*outs))
        del rng

    def test_action_shape_checked(self):
        env, _ = make(n=4)
        with pytest.raises(EnvError, match="actions shape"):
            env.step(np.zeros((4, 3)))

    def test_config_rejects_positive_reward_scale(self):
        with pytest.raises(ValidationError, match="reward_scale"):
            EnvConfig(reward_scale=1.0)

    def test_config_rejects_unknown(self):
        with pytest.raises(ValidationError):
            EnvConfig(goal_sigmaa=0.1)
