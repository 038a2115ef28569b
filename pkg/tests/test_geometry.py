import numpy as np
import pytest

from dafslam.geometry import (
    Pose,
    Tangent,
    compose,
    inverse,
    local_coords,
    orthonormalize,
    pose_dof,
    predict_measurement,
    project_to_world,
    quat_to_rotmat,
    retract,
    rot2,
    rotmat_to_quat,
    so_exp,
    so_log,
)


def random_pose(rng, d):
    if d == 2:
        R = rot2(rng.uniform(-np.pi, np.pi))
    else:
        R = so_exp(rng.normal(size=3), 3)
    return Pose(R, rng.normal(size=d))


class TestCompose:
    def test_identity_left(self):
        rng = np.random.default_rng(0)
        for d in (2, 3):
            p = random_pose(rng, d)
            q = compose(Pose.identity(d), p)
            np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-12)

    def test_with_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for d in (2, 3):
            p = random_pose(rng, d)
            q = compose(p, inverse(p))
            np.testing.assert_allclose(q.rotation, np.eye(d), atol=1e-9)
            np.testing.assert_allclose(q.translation, np.zeros(d), atol=1e-9)

    def test_hand_2d(self):
        # (rot 90, t=(1,0)) * (rot 0, t=(1,0)):
        #   R = rot90, t = rot90 @ (1,0) + (1,0) = (0,1) + (1,0) = (1,1)
        a = Pose(rot2(np.pi / 2), np.array([1.0, 0.0]))
        b = Pose(rot2(0.0), np.array([1.0, 0.0]))
        c = compose(a, b)
        np.testing.assert_allclose(c.rotation, rot2(np.pi / 2), atol=1e-12)
        np.testing.assert_allclose(c.translation, [1.0, 1.0], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            compose(Pose.identity(2), Pose.identity(3))

    def test_associative(self):
        rng = np.random.default_rng(2)
        for d in (2, 3):
            for _ in range(20):
                a, b, c = (random_pose(rng, d) for _ in range(3))
                lhs = compose(compose(a, b), c)
                rhs = compose(a, compose(b, c))
                np.testing.assert_allclose(lhs.rotation, rhs.rotation, atol=1e-9)
                np.testing.assert_allclose(lhs.translation, rhs.translation, atol=1e-9)

    def test_long_chain_stays_orthonormal(self):
        rng = np.random.default_rng(3)
        p = Pose.identity(3)
        for _ in range(5000):
            p = compose(p, random_pose(rng, 3))
        err = np.abs(p.rotation @ p.rotation.T - np.eye(3)).max()
        assert err < 1e-6
        assert abs(np.linalg.det(p.rotation) - 1.0) < 1e-6


class TestInverse:
    def test_identity(self):
        for d in (2, 3):
            q = inverse(Pose.identity(d))
            np.testing.assert_allclose(q.rotation, np.eye(d), atol=1e-15)
            np.testing.assert_allclose(q.translation, np.zeros(d), atol=1e-15)

    def test_involution(self):
        rng = np.random.default_rng(4)
        for d in (2, 3):
            p = random_pose(rng, d)
            q = inverse(inverse(p))
            np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-12)

    def test_hand_2d(self):
        # inverse((rot90, (1,0))) = (rot(-90), -rot(-90) @ (1,0)) = (rot(-90), (0,1))
        p = Pose(rot2(np.pi / 2), np.array([1.0, 0.0]))
        q = inverse(p)
        np.testing.assert_allclose(q.rotation, rot2(-np.pi / 2), atol=1e-12)
        np.testing.assert_allclose(q.translation, [0.0, 1.0], atol=1e-12)


class TestProjection:
    def test_identity_pose(self):
        z = np.array([3.0, 4.0])
        np.testing.assert_allclose(project_to_world(Pose.identity(2), z), z)

    def test_zero_point_gives_translation(self):
        p = Pose(np.eye(2), np.array([5.0, -2.0]))
        np.testing.assert_allclose(project_to_world(p, np.zeros(2)), p.translation)

    def test_hand_rotation(self):
        # rot90 @ (1,0) + (1,1) = (0,1) + (1,1) = (1,2)
        p = Pose(rot2(np.pi / 2), np.array([1.0, 1.0]))
        np.testing.assert_allclose(project_to_world(p, np.array([1.0, 0.0])),
                                   [1.0, 2.0], atol=1e-12)

    def test_predict_inverts_project(self):
        p = Pose(rot2(np.pi / 2), np.array([1.0, 1.0]))
        np.testing.assert_allclose(predict_measurement(p, np.array([1.0, 2.0])),
                                   [1.0, 0.0], atol=1e-12)

    def test_predict_identity(self):
        y = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(predict_measurement(Pose.identity(3), y), y)

    def test_round_trip_random(self):
        rng = np.random.default_rng(5)
        for d in (2, 3):
            for _ in range(50):
                p = random_pose(rng, d)
                y = rng.normal(size=d)
                back = project_to_world(p, predict_measurement(p, y))
                np.testing.assert_allclose(back, y, atol=1e-9)

    def test_norm_invariance(self):
        # || R^T (y1 - t) - R^T (y2 - t) || == || y1 - y2 ||
        rng = np.random.default_rng(6)
        for d in (2, 3):
            for _ in range(50):
                p = random_pose(rng, d)
                y1, y2 = rng.normal(size=d), rng.normal(size=d)
                lhs = np.linalg.norm(predict_measurement(p, y1) - predict_measurement(p, y2))
                np.testing.assert_allclose(lhs, np.linalg.norm(y1 - y2), atol=1e-12)


class TestRetract:
    def test_zero_is_noop(self):
        rng = np.random.default_rng(7)
        for d in (2, 3):
            p = random_pose(rng, d)
            q = retract(p, Tangent.zero(d))
            np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-15)
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-15)

    def test_pure_rotation_2d(self):
        q = retract(Pose.identity(2), np.array([0.0, 0.0, np.pi / 2]))
        np.testing.assert_allclose(q.rotation, rot2(np.pi / 2), atol=1e-12)
        np.testing.assert_allclose(q.translation, np.zeros(2), atol=1e-15)

    def test_log_round_trip_3d(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            p = random_pose(rng, 3)
            delta = rng.uniform(-0.05, 0.05, size=6)
            q = retract(p, delta)
            np.testing.assert_allclose(local_coords(p, q), delta, atol=1e-8)

    def test_tangent_vector_round_trip(self):
        v = np.array([1.0, 2.0, 3.0, 0.1, 0.2, 0.3])
        t = Tangent.from_vector(v, 3)
        np.testing.assert_array_equal(t.as_vector(), v)
        with pytest.raises(ValueError):
            Tangent.from_vector(v, 2)


class TestRotationHelpers:
    def test_so_log_exp_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(0, np.pi - 1e-3)
            np.testing.assert_allclose(so_log(so_exp(w, 3)), w, atol=1e-8)

    def test_so_log_near_pi(self):
        w = np.array([0.0, 0.0, np.pi - 1e-9])
        R = so_exp(w, 3)
        np.testing.assert_allclose(so_exp(so_log(R), 3), R, atol=1e-6)

    def test_orthonormalize(self):
        rng = np.random.default_rng(10)
        R = so_exp(rng.normal(size=3), 3) + rng.normal(size=(3, 3)) * 1e-5
        Q = orthonormalize(R)
        np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(Q) - 1.0) < 1e-12

    def test_quaternion_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            R = so_exp(rng.normal(size=3) * 2, 3)
            q = rotmat_to_quat(R)
            assert q[3] >= 0
            np.testing.assert_allclose(quat_to_rotmat(*q), R, atol=1e-12)

    def test_pose_dof(self):
        assert pose_dof(2) == 3
        assert pose_dof(3) == 6
        with pytest.raises(ValueError):
            pose_dof(4)

    def test_rotation_invariants(self):
        rng = np.random.default_rng(12)
        for d in (2, 3):
            p = random_pose(rng, d)
            np.testing.assert_allclose(p.rotation @ p.rotation.T, np.eye(d), atol=1e-9)
            assert abs(np.linalg.det(p.rotation) - 1.0) < 1e-9
