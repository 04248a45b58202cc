from surgsim.envs.layout import ObsLayout
from surgsim.envs.spline import sample_spline_waypoints
from surgsim.envs.tasks import (
    DEFAULT_GOAL_SIGMA,
    EnvConfig,
    EnvError,
    StepResult,
    Task,
    TaskState,
    VecEnv,
    env_reset,
    env_step,
    multi_tool_min_separation,
    sample_goal_offsets,
)

__all__ = [
    "DEFAULT_GOAL_SIGMA",
    "EnvConfig",
    "EnvError",
    "ObsLayout",
    "StepResult",
    "Task",
    "TaskState",
    "VecEnv",
    "env_reset",
    "env_step",
    "multi_tool_min_separation",
    "sample_goal_offsets",
    "sample_spline_waypoints",
]
