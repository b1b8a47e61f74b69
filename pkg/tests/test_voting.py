import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from depthpose.errors import DegenerateFitError, MissingVotesError, ObjectNotFoundError
from depthpose.geometry import PointCloud, RigidPose, random_pose, transform_points
from depthpose.keypoints import KeypointSet
from depthpose.voting import (
    OffsetPrediction,
    arun_fit,
    cast_votes,
    estimate_pose,
    fit_residual,
    mean_shift,
    mean_shift_modes,
)


def exact_predictions(points, keypoints_cam, labels=None):
    offsets = keypoints_cam[None, :, :] - points[:, None, :]
    labels = np.ones(len(points), dtype=np.int64) if labels is None else labels
    return OffsetPrediction(points, offsets, labels)


def test_exact_offsets_collapse_to_keypoints(rng):
    pts = rng.uniform(-0.05, 0.05, size=(200, 3)) + [0, 0, 0.5]
    kps = rng.uniform(-0.05, 0.05, size=(4, 3)) + [0, 0, 0.5]
    votes = cast_votes(PointCloud(pts), exact_predictions(pts, kps))
    assert votes.votes.shape == (4, 200, 3)
    for k in range(4):
        np.testing.assert_allclose(votes.votes[k], np.tile(kps[k], (200, 1)), atol=1e-12)


def test_votes_only_from_target_label(rng):
    pts = rng.normal(size=(50, 3))
    labels = np.array([1] * 30 + [0] * 20)
    votes = cast_votes(PointCloud(pts), exact_predictions(pts, np.zeros((2, 3)), labels), target_label=1)
    assert votes.votes.shape[1] == 30


def test_vote_spread_follows_offset_noise(rng):
    sigma = 0.002
    pts = rng.normal(size=(10000, 3))
    preds = exact_predictions(pts, np.zeros((1, 3)))
    noisy = OffsetPrediction(pts, preds.offsets + rng.normal(0, sigma, preds.offsets.shape), preds.labels)
    spread = cast_votes(PointCloud(pts), noisy).votes[0].std(axis=0)
    np.testing.assert_allclose(spread, sigma, rtol=0.1)


def test_missing_object_label(rng):
    pts = rng.normal(size=(10, 3))
    with pytest.raises(ObjectNotFoundError):
        cast_votes(PointCloud(pts), exact_predictions(pts, np.zeros((2, 3)), np.zeros(10, dtype=np.int64)))


def test_identical_votes():
    mode, support = mean_shift(np.tile([0.1, -0.2, 0.5], (40, 1)), bandwidth=0.01)
    np.testing.assert_allclose(mode, [0.1, -0.2, 0.5])
    assert support == 40


def test_majority_blob_wins(rng):
    bw = 0.01
    for trial in range(20):
        major = rng.normal(0.0, bw / 5, size=(70, 3))
        minor = rng.normal(0.0, bw / 5, size=(30, 3)) + [10 * bw, 0.0, 0.0]
        votes = np.vstack([minor, major])
        mode, support = mean_shift(votes, bw, seed=trial)
        assert np.linalg.norm(mode) < bw / 10
        assert support >= 65


def test_single_blob_mode_near_sample_mean(rng):
    bw = 0.01
    sigma = bw / 3
    votes = rng.normal(0.0, sigma, size=(1000, 3)) + [0.2, 0.1, 0.6]
    mode, _ = mean_shift(votes, bw)
    assert np.linalg.norm(mode - votes.mean(axis=0)) < 4 * sigma / np.sqrt(1000)


def test_mode_ignores_vote_order(rng):
    votes = np.vstack([rng.normal(0, 0.002, size=(700, 3)), rng.normal(0.05, 0.002, size=(300, 3))])
    a = mean_shift_modes(votes, 0.005, seed=4)
    b = mean_shift_modes(votes[rng.permutation(len(votes))], 0.005, seed=4)
    np.testing.assert_array_equal(a.mode, b.mode)
    assert a.support == b.support
    assert a.n_modes >= 2


def test_mean_shift_rejects_empty():
    with pytest.raises(ValueError):
        mean_shift(np.zeros((0, 3)), 0.01)


def test_arun_identity(rng):
    pts = rng.normal(size=(6, 3))
    pose = arun_fit(pts, pts)
    np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-12)


def test_arun_recovers_known_pose():
    r0 = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    t0 = np.array([1.0, 2.0, 3.0])
    model = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    pose = arun_fit(model, model @ r0.T + t0)
    np.testing.assert_allclose(pose.rotation, r0, atol=1e-9)
    np.testing.assert_allclose(pose.translation, t0, atol=1e-9)


def test_arun_coplanar_points_stay_proper(rng):
    model = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.2, 0]], dtype=np.float64)
    for _ in range(50):
        truth = random_pose(rng)
        pose = arun_fit(model, transform_points(model, truth))
        assert np.linalg.det(pose.rotation) == pytest.approx(1.0)
        assert fit_residual(model, transform_points(model, truth), pose) < 1e-9


def test_arun_random_poses_exact(rng):
    for _ in range(1000):
        model = rng.uniform(-0.1, 0.1, size=(8, 3))
        truth = random_pose(rng)
        pose = arun_fit(model, transform_points(model, truth))
        assert pose.rotation_error(truth) < 1e-9
        assert pose.translation_error(truth) < 1e-9


def test_arun_degenerate_inputs():
    with pytest.raises(DegenerateFitError):
        arun_fit(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    with pytest.raises(DegenerateFitError):
        arun_fit(line, line + 1.0)


def test_estimate_pose_noiseless(rng):
    truth = random_pose(rng)
    kps = KeypointSet(rng.uniform(-0.05, 0.05, size=(9, 3)))
    pts = transform_points(rng.uniform(-0.05, 0.05, size=(500, 3)), truth)
    preds = exact_predictions(pts, transform_points(kps.points, truth))
    pose, voted = estimate_pose(PointCloud(pts), preds, kps, bandwidth=0.005)
    assert pose.rotation_error(truth) < 1e-6
    assert pose.translation_error(truth) < 1e-9
    assert voted.support_counts.tolist() == [500] * 9
    np.testing.assert_allclose(voted.inlier_fraction, 1.0)


def test_estimate_pose_reports_keypoints_without_votes(rng):
    kps = KeypointSet(rng.normal(size=(4, 3)))
    pts = rng.normal(size=(30, 3))
    preds = exact_predictions(pts, kps.points)
    offsets = preds.offsets.copy()
    offsets[:, 2, :] = np.nan
    with pytest.raises(MissingVotesError) as err:
        estimate_pose(PointCloud(pts), OffsetPrediction(pts, offsets, preds.labels), kps)
    assert err.value.missing == [2]


def dense_gaussian_mode(votes, bw, start):
    x = start
    for _ in range(1000):
        w = np.exp(-np.sum((votes - x) ** 2, axis=1) / (2 * bw * bw))
        nxt = w @ votes / w.sum()
        if np.linalg.norm(nxt - x) < 1e-12:
            return nxt
        x = nxt
    return x


def test_mode_matches_untruncated_kernel(rng):
    bw = 0.01
    for _ in range(10):
        votes = rng.normal(0.0, bw / 2, size=(300, 3)) + rng.uniform(-1, 1, size=3)
        mode, _ = mean_shift(votes, bw)
        np.testing.assert_allclose(mode, dense_gaussian_mode(votes, bw, votes.mean(axis=0)), atol=1e-5)


def test_many_unique_votes_keep_few_seeds(rng):
    bw = 0.005
    votes = rng.normal(0.0, bw / 10, size=(12000, 3)) + [0.0, 0.0, 0.5]
    result = mean_shift_modes(votes, bw)
    assert result.n_modes == 1
    assert result.support == 12000
    assert np.linalg.norm(result.mode - [0.0, 0.0, 0.5]) < bw / 10


def densest_ball_center(votes, bw):
    counts = [(np.linalg.norm(votes - v, axis=1) <= bw).sum() for v in votes]
    best = votes[int(np.argmax(counts))]
    return votes[np.linalg.norm(votes - best, axis=1) <= bw].mean(axis=0)


def test_two_blob_sets_find_majority(rng):
    bw = 0.01
    for trial in range(200):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center = rng.uniform(-0.2, 0.2, size=3)
        major = rng.normal(0.0, bw / 5, size=(70, 3)) + center
        minor = rng.normal(0.0, bw / 5, size=(30, 3)) + center + direction * rng.uniform(10, 15) * bw
        votes = np.vstack([minor, major])
        mode, _ = mean_shift(votes, bw, seed=trial)
        assert np.linalg.norm(mode - densest_ball_center(votes, bw)) < bw / 10


def test_arun_is_global_least_squares_minimum(rng):
    model = rng.uniform(-0.1, 0.1, size=(8, 3))
    camera = transform_points(model, random_pose(rng)) + rng.normal(0.0, 0.005, size=(8, 3))
    pose = arun_fit(model, camera)
    best = fit_residual(model, camera, pose)
    for _ in range(100):
        delta_r = Rotation.from_rotvec(rng.normal(0.0, 0.05, size=3)).as_matrix()
        perturbed = RigidPose(delta_r @ pose.rotation, pose.translation + rng.normal(0.0, 0.005, size=3))
        assert fit_residual(model, camera, perturbed) >= best - 1e-15


def test_arun_commutes_with_camera_motion(rng):
    for _ in range(50):
        model = rng.uniform(-0.1, 0.1, size=(8, 3))
        camera = transform_points(model, random_pose(rng)) + rng.normal(0.0, 0.002, size=(8, 3))
        motion = random_pose(rng)
        moved = arun_fit(model, transform_points(camera, motion))
        expected = motion.compose(arun_fit(model, camera))
        np.testing.assert_allclose(moved.rotation, expected.rotation, atol=1e-9)
        np.testing.assert_allclose(moved.translation, expected.translation, atol=1e-9)
