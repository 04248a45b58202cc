"""Batched forward kinematics and positional tip Jacobians.

All products are written out as explicit elementwise sums so every row is
computed with the same floating-point operation order whatever the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from surgsim import parallel
from surgsim.robots.model import JointKind, Pose, RobotModel, quat_to_matrix


class KinematicsError(ValueError):
    pass


@dataclass(frozen=True)
class PoseBatch:
    positions: np.ndarray  # (N, 3)
    orientations: np.ndarray  # (N, 4), w x y z

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.positions[i].copy(), self.orientations[i].copy())


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(..., 3, 3) @ (..., 3, 3) with a fixed summation order."""
    return a[..., :, 0:1] * b[..., 0:1, :] + a[..., :, 1:2] * b[..., 1:2, :] + a[..., :, 2:3] * b[..., 2:3, :]


def _matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(..., 3, 3) @ (..., 3) with a fixed summation order."""
    return a[..., :, 0] * v[..., 0:1] + a[..., :, 1] * v[..., 1:2] + a[..., :, 2] * v[..., 2:3]


def _axis_rotation(axis: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a constant unit axis, one matrix per angle."""
    c = np.cos(theta)[:, None, None]
    s = np.sin(theta)[:, None, None]
    x, y, z = axis
    skew = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    outer = np.outer(axis, axis)
    return c * np.eye(3) + s * skew + (1.0 - c) * outer


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) to unit quaternions (N, 4), w >= 0."""
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    tr = m00 + m11 + m22
    q = np.empty((len(r), 4))
    # Four Shepperd branches evaluated everywhere, the numerically safe one kept.
    with np.errstate(invalid="ignore", divide="ignore"):
        s0 = np.sqrt(np.maximum(tr + 1.0, 0.0)) * 2.0
        b0 = np.stack([0.25 * s0, (r[:, 2, 1] - r[:, 1, 2]) / s0, (r[:, 0, 2] - r[:, 2, 0]) / s0, (r[:, 1, 0] - r[:, 0, 1]) / s0], 1)
        s1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2.0
        b1 = np.stack([(r[:, 2, 1] - r[:, 1, 2]) / s1, 0.25 * s1, (r[:, 0, 1] + r[:, 1, 0]) / s1, (r[:, 0, 2] + r[:, 2, 0]) / s1], 1)
        s2 = np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0)) * 2.0
        b2 = np.stack([(r[:, 0, 2] - r[:, 2, 0]) / s2, (r[:, 0, 1] + r[:, 1, 0]) / s2, 0.25 * s2, (r[:, 1, 2] + r[:, 2, 1]) / s2], 1)
        s3 = np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0)) * 2.0
        b3 = np.stack([(r[:, 1, 0] - r[:, 0, 1]) / s3, (r[:, 0, 2] + r[:, 2, 0]) / s3, (r[:, 1, 2] + r[:, 2, 1]) / s3, 0.25 * s3], 1)
    use0 = tr > 0
    use1 = ~use0 & (m00 > m11) & (m00 > m22)
    use2 = ~use0 & ~use1 & (m11 > m22)
    use3 = ~use0 & ~use1 & ~use2
    q[:] = np.where(use0[:, None], b0, 0.0) + np.where(use1[:, None], b1, 0.0)
    q += np.where(use2[:, None], b2, 0.0) + np.where(use3[:, None], b3, 0.0)
    q *= np.where(q[:, 0:1] < 0, -1.0, 1.0)
    q /= np.sqrt(q[:, 0:1] ** 2 + q[:, 1:2] ** 2 + q[:, 2:3] ** 2 + q[:, 3:4] ** 2)
    return q


class _Chain:
    """Per-joint constant arrays precomputed from a RobotModel."""

    def __init__(self, model: RobotModel):
        self.steps = []
        dof = 0
        for j in model.joints:
            r_o = quat_to_matrix(j.origin_rotation)
            t_o = np.asarray(j.origin_translation, dtype=np.float64)
            axis = np.asarray(j.axis, dtype=np.float64)
            idx = dof if j.actuated else None
            if j.actuated:
                dof += 1
            self.steps.append((j.kind, r_o, t_o, axis, idx))
        self.tip_r = quat_to_matrix(model.tool_tip_rotation)
        self.tip_t = np.asarray(model.tool_tip_translation, dtype=np.float64)
        self.dof = dof


def _chain(model: RobotModel) -> _Chain:
    # RobotModel is immutable, so the chain is cached on it.
    ch = model._arrays.get("chain")
    if ch is None:
        ch = model._arrays["chain"] = _Chain(model)
    return ch


def _frames(model: RobotModel, q: np.ndarray, want_joints: bool = False):
    """Walk the chain for a block of rows.

    Returns tip position (N,3), tip rotation (N,3,3) and, if requested, the
    world-frame origin (N,dof,3) and axis (N,dof,3) of every actuated joint.
    """
    ch = _chain(model)
    n = len(q)
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    pos = np.zeros((n, 3))
    if want_joints:
        origins = np.empty((n, ch.dof, 3))
        axes = np.empty((n, ch.dof, 3))
    for kind, r_o, t_o, axis, idx in ch.steps:
        pos = pos + _matvec(rot, np.broadcast_to(t_o, (n, 3)))
        rot = _matmul(rot, np.broadcast_to(r_o, (n, 3, 3)))
        if kind is JointKind.FIXED:
            continue
        if want_joints:
            origins[:, idx] = pos
            axes[:, idx] = _matvec(rot, np.broadcast_to(axis, (n, 3)))
        if kind is JointKind.REVOLUTE:
            rot = _matmul(rot, _axis_rotation(axis, q[:, idx]))
        else:
            pos = pos + _matvec(rot, axis[None, :] * q[:, idx : idx + 1])
    pos = pos + _matvec(rot, np.broadcast_to(ch.tip_t, (n, 3)))
    rot = _matmul(rot, np.broadcast_to(ch.tip_r, (n, 3, 3)))
    if want_joints:
        return pos, rot, origins, axes
    return pos, rot


def _check(model: RobotModel, q: np.ndarray, check_limits: bool) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dof_count:
        raise KinematicsError(f"{model.name}: expected configurations of length {model.dof_count}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise KinematicsError(f"{model.name}: non-finite joint values")
    if check_limits:
        bad = (q < model.lower) | (q > model.upper)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            name = model.actuated_joints[col].name
            raise KinematicsError(
                f"{model.name}: joint {name!r} value {q[row, col]!r} outside [{model.lower[col]}, {model.upper[col]}]"
            )
    return q


def tip_frames(model: RobotModel, q: np.ndarray, check_limits: bool = True, workers: int | None = None):
    """Tip positions (N,3) and rotation matrices (N,3,3)."""
    q = _check(model, q, check_limits)
    n = len(q)
    pos = np.empty((n, 3))
    rot = np.empty((n, 3, 3))

    def work(rows: slice):
        pos[rows], rot[rows] = _frames(model, q[rows])

    parallel.for_rows(work, n, workers)
    return pos, rot


def tip_positions(model: RobotModel, q: np.ndarray, check_limits: bool = True, workers: int | None = None) -> np.ndarray:
    return tip_frames(model, q, check_limits, workers)[0]


def forward_kinematics_batch(model: RobotModel, q: np.ndarray, workers: int | None = None) -> PoseBatch:
    """End-effector poses for each row of an (N, dof) configuration matrix."""
    pos, rot = tip_frames(model, q, workers=workers)
    return PoseBatch(pos, matrix_to_quat(rot))


def forward_kinematics(model: RobotModel, q) -> Pose:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise KinematicsError(f"{model.name}: expected a single configuration vector, got shape {q.shape}")
    return forward_kinematics_batch(model, q[None, :], workers=1)[0]


def tip_jacobian_batch(model: RobotModel, q: np.ndarray, check_limits: bool = True) -> np.ndarray:
    """Positional Jacobians (N, 3, dof) by the geometric method."""
    q = _check(model, q, check_limits)
    pos, _, origins, axes = _frames(model, q, want_joints=True)
    jac = np.empty((len(q), 3, model.dof_count))
    for i, j in enumerate(model.actuated_joints):
        a = axes[:, i]
        if j.kind is JointKind.REVOLUTE:
            d = pos - origins[:, i]
            jac[:, :, i] = np.stack(
                [a[:, 1] * d[:, 2] - a[:, 2] * d[:, 1], a[:, 2] * d[:, 0] - a[:, 0] * d[:, 2], a[:, 0] * d[:, 1] - a[:, 1] * d[:, 0]],
                axis=1,
            )
        else:
            jac[:, :, i] = a
    return jac


def tip_jacobian(model: RobotModel, q) -> np.ndarray:
    """Positional Jacobian d(p_tip)/dq, shape (3, dof)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise KinematicsError(f"{model.name}: expected a single configuration vector, got shape {q.shape}")
    return tip_jacobian_batch(model, q[None, :])[0]
