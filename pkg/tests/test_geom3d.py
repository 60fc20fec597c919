import numpy as np
import pytest
from scipy import stats

from gmmalign.geom3d import (
    RigidTransform,
    apply_transform,
    axis_angle_rotation,
    compose,
    invert,
    load_cloud,
    load_transform,
    orthonormalized,
    random_rotation,
    rotation_angle,
    save_cloud,
    save_transform,
)
from conftest import make_rng, random_rigid


class TestApplyTransform:
    def test_identity(self, rng):
        pts = rng.normal(size=(20, 3))
        assert np.array_equal(apply_transform(RigidTransform.identity(), pts), pts)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        out = apply_transform(t, np.zeros((1, 3)))
        assert np.allclose(out, [[1.0, 0.0, 0.0]], atol=0)

    def test_matches_homogeneous_multiply(self, rng):
        # independent oracle: 4x4 homogeneous matrix product
        for _ in range(20):
            t = random_rigid(rng)
            pts = rng.normal(size=(37, 3))
            hom = np.concatenate([pts, np.ones((37, 1))], axis=1)
            expected = (hom @ t.matrix().T)[:, :3]
            assert np.abs(apply_transform(t, pts) - expected).max() < 1e-12

    def test_preserves_pairwise_distances(self, rng):
        for _ in range(20):
            t = random_rigid(rng)
            p, q = rng.normal(size=3), rng.normal(size=3)
            d0 = np.linalg.norm(p - q)
            tp = apply_transform(t, np.vstack([p, q]))
            assert abs(np.linalg.norm(tp[0] - tp[1]) - d0) < 1e-9

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            apply_transform(RigidTransform.identity(), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            apply_transform(RigidTransform.identity(), np.array([[np.nan, 0, 0]]))


class TestCompose:
    def test_with_identity(self, rng):
        t = random_rigid(rng)
        out = compose(t, RigidTransform.identity())
        assert np.abs(out.R - t.R).max() < 1e-15
        assert np.abs(out.t - t.t).max() < 1e-15

    def test_with_inverse_gives_identity(self, rng):
        for _ in range(10):
            t = random_rigid(rng)
            out = compose(t, invert(t))
            assert np.abs(out.R - np.eye(3)).max() < 1e-10
            assert np.abs(out.t).max() < 1e-10

    def test_pointwise_oracle(self, rng):
        for _ in range(10):
            t1, t2 = random_rigid(rng), random_rigid(rng)
            pts = rng.normal(size=(100, 3))
            sequential = apply_transform(t1, apply_transform(t2, pts))
            composed = apply_transform(compose(t1, t2), pts)
            assert np.abs(sequential - composed).max() < 1e-12

    def test_associative(self, rng):
        for _ in range(10):
            a, b, c = (random_rigid(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.abs(left.matrix() - right.matrix()).max() < 1e-10


class TestInvert:
    def test_identity(self):
        out = invert(RigidTransform.identity())
        assert np.abs(out.matrix() - np.eye(4)).max() == 0

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), [0.3, -0.2, 5.0])
        assert np.allclose(invert(t).t, [-0.3, 0.2, -5.0], atol=0)

    def test_round_trip_on_points(self, rng):
        for _ in range(10):
            t = random_rigid(rng)
            pts = rng.normal(size=(50, 3))
            back = apply_transform(invert(t), apply_transform(t, pts))
            assert np.abs(back - pts).max() < 1e-12


class TestRandomRotation:
    def test_group_membership(self, rng):
        for _ in range(100):
            r = random_rotation(rng)
            assert np.linalg.norm(r.T @ r - np.eye(3)) < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_deterministic_for_seed(self):
        a = random_rotation(make_rng(77))
        b = random_rotation(make_rng(77))
        assert np.array_equal(a, b)

    def test_angle_density_matches_haar(self):
        # analytic density (1 - cos t)/pi on [0, pi], chi-square p > 0.01
        rng = make_rng(5)
        angles = np.array([rotation_angle(random_rotation(rng)) for _ in range(100000)])
        edges = np.linspace(0.0, np.pi, 21)
        observed, _ = np.histogram(angles, bins=edges)
        cdf = (edges - np.sin(edges)) / np.pi
        expected = np.diff(cdf) * angles.size
        _, pvalue = stats.chisquare(observed, expected)
        assert pvalue > 0.01

        # corroborate with an independent rejection sampler from the density
        ref = []
        while len(ref) < 20000:
            cand = rng.uniform(0.0, np.pi, 4096)
            acc = rng.uniform(0.0, 2.0 / np.pi, 4096) < (1.0 - np.cos(cand)) / np.pi
            ref.extend(cand[acc].tolist())
        _, p2 = stats.ks_2samp(angles[:20000], np.array(ref[:20000]))
        assert p2 > 0.01


class TestRotationAngle:
    def test_identity_is_zero(self):
        assert rotation_angle(np.eye(3)) == 0.0

    def test_pi_about_z(self):
        r = axis_angle_rotation([0, 0, 1], np.pi)
        assert abs(rotation_angle(r) - np.pi) < 1e-12

    def test_axis_angle_oracle(self, rng):
        for _ in range(20):
            axis = rng.normal(size=3)
            r = axis_angle_rotation(axis, 1.234)
            assert abs(rotation_angle(r) - 1.234) < 1e-9

    def test_angles_add_about_common_axis(self, rng):
        axis = rng.normal(size=3)
        a, b = 0.4, 0.9
        r = axis_angle_rotation(axis, a) @ axis_angle_rotation(axis, b)
        assert abs(rotation_angle(r) - (a + b)) < 1e-8


class TestRigidTransformValidation:
    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_repairs_small_drift(self, rng):
        r = random_rotation(rng) + 1e-8 * rng.normal(size=(3, 3))
        t = RigidTransform(r, np.zeros(3))
        assert np.linalg.norm(t.R.T @ t.R - np.eye(3)) < 1e-12

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            RigidTransform(np.full((3, 3), 0.5), np.zeros(3))

    def test_orthonormalized_projects(self, rng):
        r = random_rotation(rng)
        noisy = r + 1e-6 * rng.normal(size=(3, 3))
        fixed = orthonormalized(noisy)
        assert np.linalg.norm(fixed.T @ fixed - np.eye(3)) < 1e-12
        assert np.abs(fixed - r).max() < 1e-5


class TestTextFormats:
    def test_cloud_round_trip(self, tmp_path, rng):
        pts = rng.normal(size=(17, 3))
        path = tmp_path / "cloud.txt"
        save_cloud(path, pts)
        assert np.array_equal(load_cloud(path), pts)

    def test_cloud_comments_ignored(self, tmp_path):
        path = tmp_path / "cloud.txt"
        path.write_text("# header\n1 2 3\n 4 5 6 # trailing\n\n")
        assert np.array_equal(load_cloud(path), [[1, 2, 3], [4, 5, 6]])

    def test_cloud_bad_line(self, tmp_path):
        path = tmp_path / "cloud.txt"
        path.write_text("1 2\n")
        with pytest.raises(ValueError):
            load_cloud(path)

    def test_transform_round_trip(self, tmp_path, rng):
        t = random_rigid(rng)
        path = tmp_path / "t.txt"
        save_transform(path, t)
        back = load_transform(path)
        assert np.abs(back.matrix() - t.matrix()).max() < 1e-15

    def test_transform_requires_homogeneous_last_row(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 2\n")
        with pytest.raises(ValueError):
            load_transform(path)
