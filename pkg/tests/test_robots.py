import math
import time
from importlib import resources

import numpy as np
import pytest

from oracles import central_difference, fk_oracle
from surgsim.robots import (
    BUNDLED,
    DescriptorError,
    JointKind,
    KinematicsError,
    dump_robot,
    forward_kinematics,
    forward_kinematics_batch,
    load_robot,
    parse_robot,
    tip_jacobian,
    tip_jacobian_batch,
    tip_positions,
)


def bundled_text(name):
    return resources.files("surgsim.robots").joinpath("data", f"{name}.yaml").read_text()


def sample_q(model, n, rng):
    return model.lower + (model.upper - model.lower) * rng.random((n, model.dof_count))


ONE_LINK = """
format: surgsim-robot
version: 1
name: link
workspace: {center: [0, 0, 0], radius: 1}
joints:
  - name: j
    kind: revolute
    axis: [0, 0, 1]
    limits: {lower: -3.2, upper: 3.2, velocity: 1, effort: 1}
tool_tip: {xyz: [0.7, 0, 0]}
"""

SLIDER = """
format: surgsim-robot
version: 1
name: slider
workspace: {center: [0, 0, 0], radius: 1}
joints:
  - name: base
    kind: fixed
    origin: {xyz: [0.1, 0.2, 0.3], quat: [0.7071067811865476, 0.7071067811865476, 0, 0]}
  - name: s
    kind: prismatic
    axis: [0, 1, 0]
    limits: {lower: 0, upper: 1, velocity: 1, effort: 1}
"""

PLANAR_2R = """
format: surgsim-robot
version: 1
name: planar
workspace: {center: [0, 0, 0], radius: 1}
joints:
  - name: a
    kind: revolute
    axis: [0, 0, 1]
    limits: {lower: -3, upper: 3, velocity: 1, effort: 1}
  - name: b
    kind: revolute
    axis: [0, 0, 1]
    origin: {xyz: [0.5, 0, 0]}
    limits: {lower: -3, upper: 3, velocity: 1, effort: 1}
tool_tip: {xyz: [0.4, 0, 0]}
"""


class TestDescriptors:
    def test_psm_layout(self):
        m = load_robot("psm")
        assert m.dof_count == 7
        assert m.sequence == "RRPRRRR"
        assert m.jaw_index == 6

    def test_ecm_layout(self):
        m = load_robot("ecm")
        assert (m.dof_count, m.sequence, m.jaw_index) == (6, "RRPRRR", None)

    def test_star_all_revolute(self):
        m = load_robot("star")
        assert m.dof_count == 8
        assert all(j.kind is JointKind.REVOLUTE for j in m.actuated_joints)

    @pytest.mark.parametrize("name", BUNDLED)
    def test_round_trip(self, name):
        m = load_robot(name)
        again = parse_robot(dump_robot(m))
        assert dump_robot(again) == dump_robot(m)
        assert again.joints == m.joints

    def test_fixed_joint_adds_no_dof(self):
        assert parse_robot(SLIDER).dof_count == 1

    def test_inverted_limits_name_the_joint(self):
        bad = ONE_LINK.replace("lower: -3.2, upper: 3.2", "lower: 1.0, upper: 0.5")
        with pytest.raises(DescriptorError, match=r"joint 'j'.*lower limit"):
            parse_robot(bad, "link.yaml")

    def test_error_reports_line(self):
        bad = ONE_LINK.replace("axis: [0, 0, 1]", "axis: [0, 0, 2]")
        with pytest.raises(DescriptorError) as exc:
            parse_robot(bad, "link.yaml")
        assert exc.value.args[0].startswith("link.yaml:9:")
        assert "joints[0].axis" in str(exc.value)

    def test_unknown_field_rejected(self):
        with pytest.raises(DescriptorError, match="colour"):
            parse_robot(ONE_LINK + "colour: red\n")

    def test_syntax_error(self):
        with pytest.raises(DescriptorError, match="syntax"):
            parse_robot("joints: [\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.yaml"):
            load_robot(str(tmp_path / "nope.yaml"))


class TestForwardKinematics:
    def test_planar_quarter_turn(self):
        p = forward_kinematics(parse_robot(ONE_LINK), [math.pi / 2]).position
        np.testing.assert_allclose(p, [0.0, 0.7, 0.0], atol=1e-15)

    def test_star_zero_is_origin_composition(self):
        m = load_robot("star")
        # q = 0 lies outside some STAR limits, so skip the limit check
        p = tip_positions(m, np.zeros((1, 8)), check_limits=False)[0]
        # all joint origins and the tip are pure z offsets
        z = sum(j.origin_translation[2] for j in m.joints) + m.tool_tip_translation[2]
        np.testing.assert_allclose(p, [0.0, 0.0, z], atol=1e-15)

    @pytest.mark.parametrize("name", BUNDLED)
    def test_matches_homogeneous_oracle(self, name, rng):
        m = load_robot(name)
        text = bundled_text(name)
        q = sample_q(m, 1000, rng)
        t0 = time.perf_counter()
        got = forward_kinematics_batch(m, q)
        elapsed = time.perf_counter() - t0
        want = np.array([[row[3] for row in fk_oracle(text, qi)[:3]] for qi in q])
        assert np.max(np.abs(got.positions - want)) < 1e-9
        assert elapsed < 5.0

    @pytest.mark.parametrize("name", BUNDLED)
    def test_orientation_matches_oracle(self, name, rng):
        m = load_robot(name)
        text = bundled_text(name)
        for qi in sample_q(m, 20, rng):
            R = np.array([r[:3] for r in fk_oracle(text, qi)[:3]])
            np.testing.assert_allclose(forward_kinematics(m, qi).rotation_matrix(), R, atol=1e-12)

    def test_unit_quaternions(self, rng):
        m = load_robot("psm")
        quats = forward_kinematics_batch(m, sample_q(m, 500, rng)).orientations
        assert np.max(np.abs(np.linalg.norm(quats, axis=1) - 1.0)) < 1e-9

    @pytest.mark.parametrize("name", BUNDLED)
    def test_batch_equals_scalar_bitwise(self, name, rng):
        m = load_robot(name)
        q = sample_q(m, 300, rng)
        batch = forward_kinematics_batch(m, q, workers=3)
        for i in range(0, 300, 17):
            single = forward_kinematics(m, q[i])
            assert np.array_equal(single.position, batch.positions[i])
            assert np.array_equal(single.orientation, batch.orientations[i])

    def test_duplicated_rows_bitwise_equal(self, rng):
        m = load_robot("star")
        q = np.repeat(sample_q(m, 1, rng), 1024, axis=0)
        pos = forward_kinematics_batch(m, q, workers=4).positions
        assert (pos == pos[0]).all()

    def test_worker_count_independent(self, rng):
        m = load_robot("psm")
        q = sample_q(m, 2000, rng)
        a = tip_positions(m, q, workers=1)
        b = tip_positions(m, q, workers=5)
        assert np.array_equal(a, b)

    def test_wrong_length_rejected(self):
        with pytest.raises(KinematicsError, match="length 7"):
            forward_kinematics(load_robot("psm"), np.zeros(6))

    def test_out_of_limit_names_joint(self):
        m = load_robot("psm")
        q = m.mid_configuration()
        q[2] = -0.1
        with pytest.raises(KinematicsError, match="insertion"):
            forward_kinematics(m, q)


class TestJacobian:
    def test_prismatic_column_is_world_axis(self):
        m = parse_robot(SLIDER)
        J = tip_jacobian(m, [0.3])
        # base frame rotated +90 deg about x takes y to z
        np.testing.assert_allclose(J[:, 0], [0.0, 0.0, 1.0], atol=1e-15)

    def test_stretched_planar_is_singular(self):
        J = tip_jacobian(parse_robot(PLANAR_2R), [0.4, 0.0])
        assert np.linalg.matrix_rank(J, tol=1e-12) == 1

    @pytest.mark.parametrize("name", BUNDLED)
    def test_matches_central_differences(self, name, rng):
        m = load_robot(name)
        # keep probes off the limits so q +- h stays valid
        span = m.upper - m.lower
        q = m.lower + 0.01 * span + 0.98 * span * rng.random((100, m.dof_count))
        J = tip_jacobian_batch(m, q)

        def f(x):
            return tip_positions(m, np.array([x]))[0].tolist()

        for i in range(100):
            fd = np.array(central_difference(f, q[i].tolist(), 1e-6))
            assert np.max(np.abs(J[i] - fd)) < 1e-5

    def test_position_continuity_bound(self, rng):
        m = load_robot("star")
        mid = m.mid_configuration()
        for q in mid + 0.9 * (sample_q(m, 50, rng) - mid):
            dq = rng.normal(size=m.dof_count)
            dq *= 1e-6 / np.linalg.norm(dq)
            dp = np.linalg.norm(tip_positions(m, [q + dq])[0] - tip_positions(m, [q])[0])
            bound = np.linalg.norm(tip_jacobian(m, q), 2) * 1.01 * 1e-6
            assert dp <= bound
