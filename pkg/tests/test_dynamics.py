import math

import numpy as np
import pytest
from pydantic import ValidationError

from oracles import pd_poles
from surgsim import dynamics as dyn
from surgsim.robots import BUNDLED, load_robot

PSM = load_robot("psm")


def stepped(model, cfg, actions, seed=0, n=None, workers=None):
    n = n or len(actions[0])
    b = dyn.make_batch(model, n, seed)
    for a in actions:
        dyn.step(b, a, cfg, model, workers=workers)
    return b


class TestConfig:
    def test_defaults(self):
        g = dyn.DynamicsConfig().resolve(3)
        np.testing.assert_allclose(g.kd, 2 * np.sqrt(g.kp * g.inertia))

    @pytest.mark.parametrize("field,value", [("control_dt", 0.0), ("substeps", 0), ("inertia", -1.0), ("kp", 0.0)])
    def test_invalid(self, field, value):
        with pytest.raises(ValidationError, match=field):
            dyn.DynamicsConfig(**{field: value})

    def test_per_dof_length_checked(self):
        with pytest.raises(dyn.DynamicsError, match="inertia"):
            dyn.DynamicsConfig(inertia=[1.0, 2.0]).resolve(3)

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            dyn.DynamicsConfig(stiffness=3)


class TestPoles:
    def test_match_closed_form(self):
        cfg = dyn.DynamicsConfig()
        g = cfg.resolve(1)
        h = cfg.control_dt / cfg.substeps
        got = sorted(dyn.discrete_poles(g.kp[0], g.kd[0], g.inertia[0], 0.0, h), key=lambda z: z.real)
        want = sorted(pd_poles(g.kp[0], g.kd[0], g.inertia[0], h), key=lambda z: z.real)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_default_loop_stable_and_overdamped(self):
        cfg = dyn.DynamicsConfig()
        g = cfg.resolve(1)
        poles = pd_poles(g.kp[0], g.kd[0], g.inertia[0], cfg.control_dt / cfg.substeps)
        assert all(isinstance(p, float) and 0 < p < 1 for p in poles)

    def test_rise_time(self):
        # 1-DoF unit step with default gains: 90% reached near 0.2 s
        cfg = dyn.DynamicsConfig()
        g = cfg.resolve(1)
        h = cfg.control_dt / cfg.substeps
        q = v = 0.0
        t = 0.0
        while q < 0.9:
            v += (g.kp[0] * (1.0 - q) - g.kd[0] * v) / g.inertia[0] * h
            q += v * h
            t += h
        assert abs(t - 0.2) < 0.02


class TestStep:
    def test_torque_zero_equilibrium(self):
        cfg = dyn.DynamicsConfig(control_mode="torque")
        b = dyn.make_batch(PSM, 64, 3)
        before = b.copy()
        dyn.step(b, np.zeros((64, 7)), cfg, PSM)
        assert np.array_equal(b.q, before.q) and np.array_equal(b.qdot, before.qdot)

    def test_position_converges_to_mid_range(self):
        cfg = dyn.DynamicsConfig()
        b = dyn.make_batch(PSM, 32, 1)
        mid = np.zeros((32, 7))
        mid[:, PSM.jaw_index] = 1.0  # jaw is binary; hold it open
        for _ in range(500):
            dyn.step(b, mid, cfg, PSM)
        assert np.max(np.abs(b.q - b.q_target)) < 1e-3
        np.testing.assert_allclose(b.q_target[:, :6], np.broadcast_to(PSM.mid_configuration()[:6], (32, 6)))

    def test_prismatic_plus_one_hits_upper_limit_exactly(self):
        b = dyn.make_batch(PSM, 4, 0)
        a = np.zeros((4, 7))
        a[:, 2] = 1.0
        dyn.step(b, a, dyn.DynamicsConfig(), PSM)
        assert (b.q_target[:, 2] == PSM.upper[2]).all()

    def test_minus_one_hits_lower(self):
        b = dyn.make_batch(PSM, 4, 0)
        dyn.step(b, -np.ones((4, 7)), dyn.DynamicsConfig(), PSM)
        assert (b.q_target == PSM.lower).all()

    def test_jaw_binary(self):
        b = dyn.make_batch(PSM, 3, 0)
        a = np.zeros((3, 7))
        a[:, 6] = [-0.2, 0.0, 0.3]
        dyn.step(b, a, dyn.DynamicsConfig(), PSM)
        assert b.q_target[:, 6].tolist() == [PSM.lower[6], PSM.lower[6], PSM.upper[6]]

    def test_out_of_range_clamped_and_counted(self):
        b = dyn.make_batch(PSM, 2, 0)
        a = np.zeros((2, 7))
        a[0, 0] = 5.0
        a[1, 3] = -2.0
        dyn.step(b, a, dyn.DynamicsConfig(), PSM)
        assert b.last_saturated == 2 and b.saturation_count == 2
        assert b.q_target[0, 0] == PSM.upper[0]

    def test_non_finite_rejected(self):
        b = dyn.make_batch(PSM, 2, 0)
        a = np.zeros((2, 7))
        a[1, 4] = np.nan
        with pytest.raises(dyn.DynamicsError, match="row 1, dof 4"):
            dyn.step(b, a, dyn.DynamicsConfig(), PSM)

    def test_shape_mismatch(self):
        with pytest.raises(dyn.DynamicsError, match="shape"):
            dyn.step(dyn.make_batch(PSM, 2, 0), np.zeros((2, 6)), dyn.DynamicsConfig(), PSM)

    @pytest.mark.parametrize("mode", ["position", "velocity", "torque"])
    def test_thread_count_bitwise(self, mode, rng):
        cfg = dyn.DynamicsConfig(control_mode=mode)
        acts = [rng.uniform(-1, 1, (2000, 7)) for _ in range(20)]
        a = stepped(PSM, cfg, acts, workers=1)
        b = stepped(PSM, cfg, acts, workers=6)
        assert np.array_equal(a.q, b.q) and np.array_equal(a.qdot, b.qdot)

    def test_energy_dissipation(self):
        cfg = dyn.DynamicsConfig(control_mode="torque", damping=0.2)
        model = load_robot("star")
        b = dyn.make_batch(model, 256, 4)
        b.qdot[:] = np.random.default_rng(0).uniform(-1.5, 1.5, b.qdot.shape)
        prev = np.sum(b.qdot**2, axis=1)
        for _ in range(200):
            dyn.step(b, np.zeros_like(b.q), cfg, model)
            cur = np.sum(b.qdot**2, axis=1)
            assert np.all(cur <= prev)
            prev = cur

    def test_substep_refinement_ratio(self, rng):
        # one control step from random interior states; errors vs a fine reference
        model = load_robot("star")
        n = 200
        q0 = model.mid_configuration() + rng.uniform(-0.2, 0.2, (n, 8))
        qd0 = rng.uniform(-0.05, 0.05, (n, 8))
        a = 2 * (q0 - model.lower) / (model.upper - model.lower) - 1 + rng.uniform(-0.005, 0.005, (n, 8))

        def one(substeps):
            b = dyn.make_batch(model, n, 0, reset=False)
            b.q[:], b.qdot[:] = q0, qd0
            dyn.step(b, a, dyn.DynamicsConfig(substeps=substeps), model)
            return b.q.copy()

        ref = one(8192)
        ratios = []
        for s in (8, 16, 32):
            e1 = np.abs(one(s) - ref).max(axis=1)
            e2 = np.abs(one(2 * s) - ref).max(axis=1)
            ratios.append(np.median(e1 / e2))
        assert all(1.5 <= r <= 2.5 for r in ratios), ratios


class TestReset:
    def test_empty_mask_is_noop(self):
        b = dyn.make_batch(PSM, 16, 2)
        before = b.copy()
        dyn.reset_rows(b, np.zeros(16, dtype=bool), PSM)
        assert np.array_equal(b.q, before.q) and np.array_equal(b.rng.counters, before.rng.counters)

    def test_unmasked_rows_untouched(self):
        b = dyn.make_batch(PSM, 16, 2)
        b.qdot[:] = 0.5
        before = b.copy()
        mask = np.arange(16) % 3 == 0
        dyn.reset_rows(b, mask, PSM)
        assert np.array_equal(b.q[~mask], before.q[~mask]) and (b.qdot[~mask] == 0.5).all()
        assert (b.qdot[mask] == 0).all() and np.array_equal(b.q_target[mask], b.q[mask])

    def test_reproducible(self):
        a = dyn.make_batch(PSM, 100, 9)
        b = dyn.make_batch(PSM, 100, 9)
        assert np.array_equal(a.q, b.q)

    @pytest.mark.parametrize("name", BUNDLED)
    def test_inside_middle_half(self, name):
        m = load_robot(name)
        b = dyn.make_batch(m, 10_000, 5)
        quarter = 0.25 * (m.upper - m.lower)
        mid = 0.5 * (m.upper + m.lower)
        assert np.all(b.q >= mid - quarter) and np.all(b.q <= mid + quarter)
