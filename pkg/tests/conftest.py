import numpy as np
import pytest

from depthpose.geometry import CameraIntrinsics, DepthImage, RigidPose
from depthpose.keypoints import select_keypoints
from depthpose.meshes import builtin_mesh


@pytest.fixture
def small_k():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=80.0, cy=60.0, width=200, height=120)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def flat_depth(small_k):
    return DepthImage(np.full((small_k.height, small_k.width), 1000, dtype=np.uint16), small_k)


@pytest.fixture
def lbracket():
    return builtin_mesh("lbracket", 0.1)


@pytest.fixture
def lbracket_keypoints(lbracket):
    return select_keypoints(lbracket, 8, add_center=True)


@pytest.fixture
def front_pose():
    return RigidPose(np.eye(3), np.array([0.0, 0.0, 0.5]))
