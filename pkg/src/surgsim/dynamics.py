"""Batched joint-space dynamics.

Each DoF is an independent unit-inertia-scaled plant

    inertia * qdd = tau - damping * qd

advanced with semi-implicit Euler over ``substeps`` sub-intervals of one
control period. After every sub-step velocities are clamped to the velocity
limits and positions are projected back onto the joint limits, with the
velocity zeroed on any axis that hit a limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from surgsim import parallel
from surgsim.rng import RowStreams
from surgsim.robots.model import RobotModel

# 90% rise of a critically damped second-order step response happens at w*t ~= 3.8897.
_RISE_90 = 3.889720169867429


class DynamicsError(ValueError):
    pass


class ControlMode(str, Enum):
    POSITION = "position"
    VELOCITY = "velocity"
    TORQUE = "torque"


PerDof = float | list[float]


class DynamicsConfig(BaseModel):
    """Integrator and controller settings.

    ``kp``/``kd`` left unset are derived from ``rise_time``: the stiffness gives
    a 90% step-response rise time of ``rise_time`` seconds with critical damping
    ``kd = 2 sqrt(kp * inertia)``.
    """

    model_config = ConfigDict(extra="forbid")

    control_dt: float = 0.01
    substeps: int = 4
    control_mode: ControlMode = ControlMode.POSITION
    inertia: PerDof = 0.05
    damping: PerDof = 0.0
    kp: PerDof | None = None
    kd: PerDof | None = None
    rise_time: float = 0.2

    @field_validator("control_dt", "rise_time")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("substeps")
    @classmethod
    def _substeps(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _gains(self):
        for name in ("inertia", "kp", "kd"):
            v = getattr(self, name)
            if v is not None and np.any(np.asarray(v, dtype=float) <= 0):
                raise ValueError(f"{name} must be > 0")
        if np.any(np.asarray(self.damping, dtype=float) < 0):
            raise ValueError("damping must be >= 0")
        return self

    def resolve(self, dof: int) -> "Gains":
        def per_dof(v, name):
            a = np.broadcast_to(np.asarray(v, dtype=np.float64), (dof,)) if np.ndim(v) == 0 else np.asarray(v, dtype=np.float64)
            if a.shape != (dof,):
                raise DynamicsError(f"dynamics.{name}: expected a scalar or {dof} values, got {len(a)}")
            return a.copy()

        inertia = per_dof(self.inertia, "inertia")
        omega = _RISE_90 / self.rise_time
        kp = per_dof(self.kp, "kp") if self.kp is not None else inertia * omega * omega
        kd = per_dof(self.kd, "kd") if self.kd is not None else 2.0 * np.sqrt(kp * inertia)
        return Gains(inertia, per_dof(self.damping, "damping"), kp, kd)


@dataclass(frozen=True)
class Gains:
    inertia: np.ndarray
    damping: np.ndarray
    kp: np.ndarray
    kd: np.ndarray


def discrete_poles(kp: float, kd: float, inertia: float, damping: float, dt_sub: float) -> np.ndarray:
    """Eigenvalues of the one-substep map of the unclamped 1-DoF PD loop.

    The state (error, velocity) evolves as v' = v + h*(-kp*e - (kd+c)*v)/m,
    e' = e + h*v'. Stable iff all |poles| < 1; overdamped iff they are real
    and positive.
    """
    h = dt_sub
    a = kp / inertia
    b = (kd + damping) / inertia
    m = np.array([[1.0 - h * h * a, h * (1.0 - h * b)], [-h * a, 1.0 - h * b]])
    return np.linalg.eigvals(m)


@dataclass
class SimBatch:
    """Structure-of-arrays joint state for N environments of one robot."""

    q: np.ndarray
    qdot: np.ndarray
    q_target: np.ndarray
    rng: RowStreams
    saturation_count: int = 0
    last_saturated: int = 0

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    def copy(self) -> "SimBatch":
        rng = RowStreams.__new__(RowStreams)
        rng.seed, rng.stream = self.rng.seed, self.rng.stream
        rng.keys, rng.counters = self.rng.keys, self.rng.counters.copy()
        return SimBatch(self.q.copy(), self.qdot.copy(), self.q_target.copy(), rng, self.saturation_count, self.last_saturated)


def make_batch(model: RobotModel, n: int, seed: int, stream: int = 0, reset: bool = True) -> SimBatch:
    """Allocate a batch; rows start at mid-range, or randomized when ``reset``."""
    q = np.broadcast_to(model.mid_configuration(), (n, model.dof_count)).copy()
    batch = SimBatch(q, np.zeros_like(q), q.copy(), RowStreams(seed, n, stream))
    if reset:
        reset_rows(batch, np.ones(n, dtype=bool), model)
    return batch


def reset_rows(batch: SimBatch, row_mask: np.ndarray, model: RobotModel) -> SimBatch:
    """Re-sample masked rows uniformly inside the middle half of each joint range."""
    rows = np.flatnonzero(np.asarray(row_mask, dtype=bool))
    if rows.size == 0:
        return batch
    lo, hi = model.lower, model.upper
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    u = batch.rng.uniform(rows, model.dof_count)
    q = np.clip((mid - quarter) + 2.0 * quarter * u, lo, hi)
    batch.q[rows] = q
    batch.qdot[rows] = 0.0
    batch.q_target[rows] = q
    return batch


def rescale_actions(actions: np.ndarray, model: RobotModel, mode: ControlMode) -> np.ndarray:
    """Map actions in [-1, 1] to the command for ``mode``.

    Position mode hits the limits exactly at +-1. The jaw DoF, when present,
    is binary in position mode: open (upper limit) for a > 0, else closed.
    """
    if mode is ControlMode.POSITION:
        s = 0.5 * (actions + 1.0)
        cmd = model.lower * (1.0 - s) + model.upper * s
        if model.jaw_index is not None:
            j = model.jaw_index
            cmd[:, j] = np.where(actions[:, j] > 0.0, model.upper[j], model.lower[j])
        return cmd
    if mode is ControlMode.VELOCITY:
        return actions * model.velocity_limits
    return actions * model.effort_limits


def _integrate(q, qdot, q_target, cmd, model: RobotModel, g: Gains, mode: ControlMode, dt: float, substeps: int):
    """Advance one block of rows in place."""
    h = dt / substeps
    lo, hi = model.lower, model.upper
    vmax, emax = model.velocity_limits, model.effort_limits
    for _ in range(substeps):
        if mode is ControlMode.POSITION:
            tau = g.kp * (q_target - q) - g.kd * qdot
        elif mode is ControlMode.VELOCITY:
            tau = g.kd * (cmd - qdot)
        else:
            tau = cmd
        tau = np.clip(tau, -emax, emax)
        qdot += (tau - g.damping * qdot) / g.inertia * h
        np.clip(qdot, -vmax, vmax, out=qdot)
        q += qdot * h
        low, high = q < lo, q > hi
        if low.any() or high.any():
            np.clip(q, lo, hi, out=q)
            qdot[low | high] = 0.0


def step(
    batch: SimBatch,
    actions: np.ndarray,
    cfg: DynamicsConfig,
    model: RobotModel,
    gains: Gains | None = None,
    workers: int | None = None,
) -> SimBatch:
    """Apply one control step of normalized actions to every row (in place)."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != batch.q.shape:
        raise DynamicsError(f"actions shape {actions.shape} does not match batch {batch.q.shape}")
    finite = np.isfinite(actions)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise DynamicsError(f"non-finite action at row {row}, dof {col}: {actions[row, col]!r}")
    out_of_range = int(np.count_nonzero(np.abs(actions) > 1.0))
    if out_of_range:
        actions = np.clip(actions, -1.0, 1.0)
    batch.last_saturated = out_of_range
    batch.saturation_count += out_of_range

    g = gains if gains is not None else cfg.resolve(model.dof_count)
    mode = ControlMode(cfg.control_mode)
    cmd = rescale_actions(actions, model, mode)
    if mode is ControlMode.POSITION:
        batch.q_target[:] = cmd

    def work(rows: slice):
        q, qd = batch.q[rows], batch.qdot[rows]
        _integrate(q, qd, batch.q_target[rows], cmd[rows], model, g, mode, cfg.control_dt, cfg.substeps)

    parallel.for_rows(work, batch.n, workers)
    if mode is not ControlMode.POSITION:
        batch.q_target[:] = batch.q
    return batch
