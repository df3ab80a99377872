import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wildpose import gradcore as gc
from wildpose.errors import DegenerateFit, NonUnitDirection, ValidationError
from wildpose.skeleton import (
    CameraParams,
    Intrinsics,
    SkeletonModel,
    bone_lengths,
    bone_vectors,
    default_skeleton,
    fit_weak_perspective,
    forward_kinematics,
    perspective_correction,
    project_tensor,
    project_weak_perspective,
    root_center,
)
from wildpose.synthdata import sample_pose

CHAIN = SkeletonModel((0, 0, 1), (0.0, 100.0, 50.0), ("a", "b", "c"))


def random_pose(seed, K=14):
    return root_center(np.random.default_rng(seed).normal(scale=300.0, size=(K, 3)))


def random_tree(rng, K):
    parents = [0] + [int(rng.integers(0, j)) for j in range(1, K)]
    lengths = [0.0] + list(rng.uniform(10, 500, size=K - 1))
    return SkeletonModel(tuple(parents), tuple(lengths), tuple(f"j{j}" for j in range(K)))


def test_default_skeleton_shape():
    sk = default_skeleton()
    assert sk.joint_count == 14
    assert sk.joint_names[0] == "pelvis"
    assert all(length > 0 for length in sk.bone_lengths_mm[1:])


def test_skeleton_rejects_cycles():
    with pytest.raises(ValidationError):
        SkeletonModel((0, 2, 1), (0.0, 1.0, 1.0), ("a", "b", "c"))


def test_fk_single_bone():
    sk = SkeletonModel((0, 0), (0.0, 100.0), ("root", "tip"))
    out = forward_kinematics(sk, [[0, 0, 1], [0, 0, 1]])
    assert np.array_equal(out[1], [0.0, 0.0, 100.0])


def test_fk_collinear_chain():
    out = forward_kinematics(CHAIN, np.tile([1.0, 0.0, 0.0], (3, 1)))
    np.testing.assert_array_equal(out, [[0, 0, 0], [100, 0, 0], [150, 0, 0]])


def test_fk_rejects_non_unit_direction():
    with pytest.raises(NonUnitDirection):
        forward_kinematics(CHAIN, [[1, 0, 0], [2, 0, 0], [1, 0, 0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(2, 20))
def test_fk_round_trip_random_tree(seed, K):
    rng = np.random.default_rng(seed)
    sk = random_tree(rng, K)
    dirs = rng.standard_normal((K, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    out = forward_kinematics(sk, dirs)
    np.testing.assert_allclose(bone_lengths(out, sk), sk.reference_lengths(), rtol=0, atol=1e-9)


def test_root_center_idempotent_and_translation_invariant():
    p = random_pose(0)
    assert np.array_equal(root_center(p), p)
    shifted = root_center(p + np.array([5.0, -7.0, 3.0]))
    np.testing.assert_allclose(shifted, p, atol=1e-12)
    assert np.array_equal(root_center(p + 123.4)[0], [0.0, 0.0, 0.0])


def test_bone_vectors_chain():
    pose = forward_kinematics(CHAIN, np.tile([1.0, 0.0, 0.0], (3, 1)))
    np.testing.assert_array_equal(bone_vectors(pose, CHAIN), [[100, 0, 0], [50, 0, 0]])
    np.testing.assert_array_equal(bone_lengths(pose, CHAIN), [100, 50])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.tuples(*[st.floats(-1e3, 1e3)] * 3))
def test_bone_quantities_translation_invariant(seed, shift):
    sk = default_skeleton()
    p = random_pose(seed)
    q = p + np.array(shift)
    np.testing.assert_allclose(bone_vectors(q, sk), bone_vectors(p, sk), atol=1e-9)
    np.testing.assert_allclose(bone_lengths(q, sk), bone_lengths(p, sk), atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(bone_vectors(p, sk), axis=-1), bone_lengths(p, sk))


def test_bone_lengths_degenerate_and_homogeneous():
    sk = default_skeleton()
    assert np.array_equal(bone_lengths(np.zeros((14, 3)), sk), np.zeros(13))
    p = random_pose(3)
    np.testing.assert_allclose(bone_lengths(2 * p, sk), 2 * bone_lengths(p, sk), rtol=1e-14)
    assert bone_lengths(p[:, :2], sk).shape == (13,)


def test_projection_identity_camera():
    p = random_pose(4)
    np.testing.assert_array_equal(project_weak_perspective(p, CameraParams(1, 1, 0, 0)), p[:, :2])


def test_projection_direct_evaluation():
    out = project_weak_perspective(np.array([[1.0, -1.0, 5.0]]), CameraParams(2, 3, 10, 20))
    np.testing.assert_array_equal(out, [[12.0, 17.0]])


def test_projection_tensor_matches_numpy():
    rng = np.random.default_rng(5)
    p = rng.standard_normal((3, 14, 3))
    cam = rng.standard_normal((3, 4))
    out = project_tensor(gc.constant(p), gc.constant(cam))
    np.testing.assert_array_equal(out.data, project_weak_perspective(p, cam))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fit_recovers_camera(seed):
    rng = np.random.default_rng(seed)
    p = random_pose(seed)
    cam = CameraParams(*rng.uniform(0.001, 2.0, 2), *rng.uniform(-50, 50, 2))
    fit = fit_weak_perspective(p, project_weak_perspective(p, cam))
    np.testing.assert_allclose(fit.as_array(), cam.as_array(), rtol=0, atol=1e-9)


def test_fit_degenerate_axis():
    p = random_pose(6)
    p[:, 0] = 12.0
    with pytest.raises(DegenerateFit):
        fit_weak_perspective(p, p[:, :2])


def test_fit_noisy_matches_normal_equations():
    rng = np.random.default_rng(7)
    p = random_pose(7)
    p2 = project_weak_perspective(p, CameraParams(0.01, 0.012, 8, 7)) + rng.normal(0, 0.1, (14, 2))
    fit = fit_weak_perspective(p, p2)
    for axis, (a, c) in enumerate([(fit.alpha_x, fit.c_x), (fit.alpha_y, fit.c_y)]):
        A = np.stack([p[:, axis], np.ones(14)], axis=1)
        coef = np.linalg.solve(A.T @ A, A.T @ p2[:, axis])
        resid_fit = np.sum((a * p[:, axis] + c - p2[:, axis]) ** 2)
        resid_oracle = np.sum((A @ coef - p2[:, axis]) ** 2)
        assert resid_fit == pytest.approx(resid_oracle, rel=1e-9)
        np.testing.assert_allclose([a, c], coef, rtol=1e-9)


INTR = Intrinsics(1000.0, 1000.0, 512.0, 384.0)


def test_perspective_correction_identity_at_principal_point():
    p = random_pose(8)
    np.testing.assert_allclose(perspective_correction(p, (512.0, 384.0), INTR), p, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), u=st.floats(0, 1024), v=st.floats(0, 768))
def test_perspective_correction_is_rigid(seed, u, v):
    p = random_pose(seed)
    q = perspective_correction(p, (u, v), INTR)
    d = lambda x: np.linalg.norm(x[:, None] - x[None], axis=-1)
    np.testing.assert_allclose(d(q), d(p), atol=1e-9)
    assert np.array_equal(q[0], [0.0, 0.0, 0.0])


def test_perspective_correction_known_angle():
    # crop centre 1000 * tan(10 deg) px right of the principal point
    u = 512.0 + 1000.0 * math.tan(math.radians(10.0))
    p = np.zeros((2, 3))
    p[1] = [0.0, 0.0, 100.0]  # a bone along the optical axis
    q = perspective_correction(p, (u, 384.0), INTR)
    angle = math.degrees(math.atan2(np.linalg.norm(np.cross(p[1], q[1])), np.dot(p[1], q[1])))
    assert angle == pytest.approx(10.0, abs=1e-9)
    assert q[1, 0] > 0  # rotated toward the crop


def test_sample_pose_keeps_bone_lengths():
    sk = default_skeleton()
    p = sample_pose(sk, np.random.default_rng(0), 1.0)
    np.testing.assert_allclose(bone_lengths(p, sk), sk.reference_lengths(), atol=1e-9)
