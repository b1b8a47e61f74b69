import math

import numpy as np
import pytest

from depthpose.errors import EmptyDataError, InputError
from depthpose.geometry import RigidPose, TriangleMesh, random_pose
from depthpose.meshes import make_icosphere
from depthpose.metrics import (
    PoseErrorReport,
    accuracy_at_threshold,
    add_metric,
    adds_metric,
    evaluate_pose,
    focal_loss,
    joint_loss,
    l1_offset_loss,
    segmentation_focal_loss,
    summarize_reports,
)


def cloud_mesh(points):
    return TriangleMesh(points, np.zeros((0, 3), dtype=np.int64))


def naive_add(pts, pred, gt):
    total = 0.0
    for p in pts:
        a = pred.rotation @ p + pred.translation
        b = gt.rotation @ p + gt.translation
        total += np.linalg.norm(a - b)
    return total / len(pts)


def naive_adds(pts, pred, gt):
    moved_gt = [gt.rotation @ q + gt.translation for q in pts]
    total = 0.0
    for p in pts:
        a = pred.rotation @ p + pred.translation
        total += min(np.linalg.norm(a - b) for b in moved_gt)
    return total / len(pts)


def report(error, threshold=1.0, symmetric=False, adds=None):
    adds = error if adds is None else adds
    return PoseErrorReport(error, adds, threshold, error < threshold, adds < threshold, symmetric)


def test_identical_poses_score_zero(lbracket, rng):
    pose = random_pose(rng)
    assert add_metric(lbracket, pose, pose) == 0.0
    assert adds_metric(lbracket, pose, pose) == 0.0


def test_pure_translation_gives_offset_length(lbracket):
    t = np.array([0.003, -0.004, 0.0])
    gt = RigidPose(np.eye(3), [0, 0, 0.5])
    pred = RigidPose(np.eye(3), gt.translation + t)
    assert add_metric(lbracket, pred, gt) == pytest.approx(0.005, rel=1e-12)


def test_metrics_match_double_loop_reference(rng):
    for _ in range(100):
        pts = rng.uniform(-0.05, 0.05, size=(int(rng.integers(5, 60)), 3))
        mesh = cloud_mesh(pts)
        pred, gt = random_pose(rng), random_pose(rng)
        add = add_metric(mesh, pred, gt)
        adds = adds_metric(mesh, pred, gt)
        assert add == pytest.approx(naive_add(pts, pred, gt), abs=1e-12)
        assert adds == pytest.approx(naive_adds(pts, pred, gt), abs=1e-12)
        assert adds <= add + 1e-15
        assert add == pytest.approx(add_metric(mesh, gt, pred), abs=1e-12)


def test_kd_tree_matches_brute_force(rng):
    mesh = make_icosphere(0.05, subdivisions=2)
    pred, gt = random_pose(rng), random_pose(rng)
    assert adds_metric(mesh, pred, gt, accelerate=True) == pytest.approx(adds_metric(mesh, pred, gt), abs=1e-12)


def test_ring_symmetry():
    angles = np.arange(12) * (2 * np.pi / 12)
    ring = np.stack([np.cos(angles), np.sin(angles), np.zeros(12)], axis=1) * 0.05
    c, s = np.cos(np.pi / 6), np.sin(np.pi / 6)
    rot = RigidPose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3))
    mesh = cloud_mesh(ring)
    assert adds_metric(mesh, rot, RigidPose.identity()) == pytest.approx(0.0, abs=1e-12)
    assert add_metric(mesh, rot, RigidPose.identity()) > 0.01


def test_add_is_symmetric_in_its_poses(lbracket, rng):
    for _ in range(20):
        pred, gt = random_pose(rng), random_pose(rng)
        assert add_metric(lbracket, pred, gt) == pytest.approx(add_metric(lbracket, gt, pred), rel=1e-12)


def test_errors_ignore_a_shared_camera_motion(lbracket, rng):
    for _ in range(20):
        pred, gt, camera = random_pose(rng), random_pose(rng), random_pose(rng)
        moved_pred, moved_gt = camera.compose(pred), camera.compose(gt)
        assert add_metric(lbracket, moved_pred, moved_gt) == pytest.approx(add_metric(lbracket, pred, gt), rel=1e-9)
        assert adds_metric(lbracket, moved_pred, moved_gt) == pytest.approx(adds_metric(lbracket, pred, gt), rel=1e-9)


def test_evaluate_pose_threshold(lbracket, rng):
    gt = random_pose(rng)
    result = evaluate_pose(lbracket, gt, gt)
    assert result.threshold == pytest.approx(0.1 * lbracket.diameter)
    assert result.correct_add and result.correct_adds
    assert result.rotation_error == pytest.approx(0.0, abs=1e-7)


def test_empty_mesh_is_an_error():
    with pytest.raises(EmptyDataError):
        cloud_mesh(np.zeros((0, 3)))


def test_accuracy_at_threshold():
    d = 1.0
    assert accuracy_at_threshold([report(0.05 * d, 0.1 * d), report(0.2 * d, 0.1 * d)]) == 0.5
    assert accuracy_at_threshold([report(0.0, 0.1), report(0.0, 0.1)]) == 1.0
    with pytest.raises(EmptyDataError):
        accuracy_at_threshold([])


def test_accuracy_uses_adds_only_for_symmetric_objects():
    batch = [
        report(0.5, 0.1, symmetric=True, adds=0.05),   # counted through ADD-S
        report(0.5, 0.1, symmetric=False, adds=0.05),  # asymmetric: ADD decides
        report(0.05, 0.1, symmetric=False),
        report(0.05, 0.1, symmetric=True, adds=0.2),
    ]
    assert accuracy_at_threshold(batch) == 0.5
    assert accuracy_at_threshold(batch, use_adds_for_symmetric=False) == 0.5
    assert accuracy_at_threshold(batch[:2]) == 0.5
    assert accuracy_at_threshold(batch[:2], use_adds_for_symmetric=False) == 0.0


def test_summary_row():
    row = summarize_reports("ape", [report(0.05, 0.1), report(0.2, 0.1)])
    assert row["object"] == "ape" and row["n_frames"] == 2
    assert row["add_mean"] == pytest.approx(0.125)
    assert row["acc@0.1d"] == 0.5


def test_focal_loss_values():
    assert focal_loss([1.0, 1.0]) == 0.0
    assert focal_loss([0.5], alpha=0.25, gamma=2.0) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert focal_loss([0.5]) == pytest.approx(0.043322, abs=1e-6)
    with pytest.raises(InputError):
        focal_loss([0.0, 0.5])


def test_focal_loss_against_formula(rng):
    for _ in range(1000):
        p = float(rng.uniform(1e-6, 1.0))
        alpha, gamma = float(rng.uniform(0, 1)), float(rng.uniform(0, 5))
        expected = -alpha * (1 - p) ** gamma * math.log(p)
        assert focal_loss([p], alpha, gamma) == pytest.approx(expected, abs=1e-12)
    p = rng.uniform(0.01, 1.0, size=50)
    assert focal_loss(p, alpha=1.0, gamma=0.0) == pytest.approx(float(np.mean(-np.log(p))), abs=1e-12)


def test_focal_loss_is_nonnegative_and_falls_with_confidence():
    p = np.linspace(0.01, 1.0, 100)
    values = [focal_loss([x]) for x in p]
    assert min(values) >= 0.0
    assert all(a > b for a, b in zip(values[:-1], values[1:]))
    assert values[-1] == 0.0


def test_segmentation_focal_loss_picks_true_class():
    probs = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert segmentation_focal_loss(probs, [0, 1]) == pytest.approx(focal_loss([0.9, 0.8]))


def test_l1_offset_loss(rng):
    gt = rng.normal(size=(6, 4, 3))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
    assert l1_offset_loss(gt, gt, mask) == 0.0
    assert l1_offset_loss(gt + [0.3, 0.0, 0.0], gt, mask) == pytest.approx(0.1)

    pred = rng.normal(size=(6, 4, 3))
    total, count = 0.0, 0
    for i in range(6):
        if mask[i]:
            for k in range(4):
                for c in range(3):
                    total += abs(pred[i, k, c] - gt[i, k, c])
                    count += 1
    assert l1_offset_loss(pred, gt, mask) == pytest.approx(total / count, abs=1e-12)

    with pytest.raises(EmptyDataError):
        l1_offset_loss(pred, gt, np.zeros(6, dtype=bool))


def test_joint_loss():
    assert joint_loss(0.5, 0.25, 1.0, 0.0) == 0.5
    assert joint_loss(0.5, 0.25, 0.0, 1.0) == 0.25
    assert joint_loss(0.5, 0.25, 2.0, 1.0) == pytest.approx(1.25)
    with pytest.raises(InputError):
        joint_loss(0.5, 0.25, -1.0, 1.0)
