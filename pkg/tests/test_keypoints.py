import itertools

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from depthpose.errors import EmptyDataError, InputError
from depthpose.geometry import TriangleMesh
from depthpose.keypoints import KeypointSet, farthest_point_indices, farthest_point_sampling, select_keypoints
from depthpose.meshes import make_cube, make_icosphere


def greedy_fps(points, n):
    """Reference: recompute every candidate's distance to the whole chosen set each round."""
    first = int(np.argmax(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    chosen = [first]
    while len(chosen) < n:
        d = np.min([np.linalg.norm(points - points[j], axis=1) for j in chosen], axis=0)
        chosen.append(int(np.argmax(d)))
    return chosen


CORNERS = np.array(list(itertools.product([0.0, 1.0], repeat=3)))


def test_cube_corners_pair_is_opposite():
    kps = farthest_point_sampling(CORNERS, 2)
    assert np.linalg.norm(kps.points[0] - kps.points[1]) == pytest.approx(np.sqrt(3))


def test_single_keypoint_is_farthest_from_centroid():
    pts = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.2, 0.0]])
    assert farthest_point_indices(pts, 1).tolist() == [2]


def test_matches_greedy_reference(rng):
    pts = rng.normal(size=(20, 3))
    assert farthest_point_indices(pts, 5).tolist() == greedy_fps(pts, 5)


def test_matches_greedy_reference_on_many_sets(rng):
    for _ in range(100):
        m = int(rng.integers(16, 120))
        n = int(rng.integers(1, 17))
        pts = rng.uniform(-1, 1, size=(m, 3))
        assert farthest_point_indices(pts, n).tolist() == greedy_fps(pts, n)


def test_tetrahedron_takes_all_vertices():
    verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    mesh = TriangleMesh(verts, [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    kps = select_keypoints(mesh, 4, add_center=False)
    assert sorted(map(tuple, kps.points)) == sorted(map(tuple, verts))


def test_center_appended_last():
    kps = select_keypoints(make_cube(1.0), 8, add_center=True)
    assert len(kps) == 9 and kps.includes_center
    np.testing.assert_allclose(kps.points[-1], [0.5, 0.5, 0.5])


def test_sphere_mesh_matches_reference():
    mesh = make_icosphere(0.05, subdivisions=3)
    kps = select_keypoints(mesh, 8, add_center=False)
    np.testing.assert_array_equal(kps.points, mesh.vertices[greedy_fps(mesh.vertices, 8)])


def test_errors():
    with pytest.raises(InputError):
        farthest_point_sampling(CORNERS, 9)
    with pytest.raises(InputError):
        farthest_point_sampling(CORNERS, 0)
    with pytest.raises(EmptyDataError):
        farthest_point_sampling(np.zeros((0, 3)), 1)


def test_keypoint_record_count_is_checked():
    payload = KeypointSet(CORNERS[:3], object_id="cube").to_dict()
    assert KeypointSet.from_dict(payload).object_id == "cube"
    payload["n"] = 4
    with pytest.raises(InputError):
        KeypointSet.from_dict(payload)


def test_shuffled_candidates_give_same_keypoints(rng):
    for _ in range(20):
        pts = rng.uniform(-1, 1, size=(80, 3))
        shuffled = pts[rng.permutation(len(pts))]
        np.testing.assert_array_equal(farthest_point_sampling(shuffled, 10).points,
                                      farthest_point_sampling(pts, 10).points)


def test_insertion_radius_never_grows(rng):
    pts = rng.uniform(-1, 1, size=(300, 3))
    chosen = farthest_point_sampling(pts, 16).points
    radii = [np.linalg.norm(chosen[:k] - chosen[k], axis=1).min() for k in range(1, 16)]
    assert all(a >= b for a, b in zip(radii, radii[1:]))
    for n in range(2, 16):
        assert pdist(chosen[:n]).min() >= radii[n - 1]


def test_keypoints_must_be_distinct():
    with pytest.raises(InputError):
        KeypointSet(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    doubled = np.vstack([CORNERS[:2], CORNERS[:2]])
    with pytest.raises(InputError):
        farthest_point_sampling(doubled, 3)
