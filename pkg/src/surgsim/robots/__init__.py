from surgsim.robots.kinematics import (
    KinematicsError,
    PoseBatch,
    forward_kinematics,
    forward_kinematics_batch,
    tip_frames,
    tip_jacobian,
    tip_jacobian_batch,
    tip_positions,
)
from surgsim.robots.model import (
    BUNDLED,
    DescriptorError,
    JointKind,
    JointSpec,
    Pose,
    RobotModel,
    dump_robot,
    load_robot,
    parse_robot,
)

__all__ = [
    "BUNDLED",
    "DescriptorError",
    "JointKind",
    "JointSpec",
    "KinematicsError",
    "Pose",
    "PoseBatch",
    "RobotModel",
    "dump_robot",
    "forward_kinematics",
    "forward_kinematics_batch",
    "load_robot",
    "parse_robot",
    "tip_frames",
    "tip_jacobian",
    "tip_jacobian_batch",
    "tip_positions",
]
