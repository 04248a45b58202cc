from surgsim.learn.buffer import RolloutBuffer, compute_gae, normalize
from surgsim.learn.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from surgsim.learn.evaluate import EvalSummary, evaluate
from surgsim.learn.policy import ActorCritic, LearnError, ObsNormalizer, policy_forward
from surgsim.learn.ppo import TrainConfig, make_optimizer, ppo_loss, ppo_update
from surgsim.learn.train import Trainer, TrainResult, strip_wall_clock, train

__all__ = [
    "ActorCritic",
    "CheckpointError",
    "EvalSummary",
    "LearnError",
    "ObsNormalizer",
    "RolloutBuffer",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "compute_gae",
    "evaluate",
    "load_checkpoint",
    "make_optimizer",
    "normalize",
    "policy_forward",
    "ppo_loss",
    "ppo_update",
    "read_checkpoint",
    "save_checkpoint",
    "strip_wall_clock",
    "train",
]
