"""Depth-only 6DoF pose estimation toolkit.

Lifts depth images to point clouds, builds normal-vector-angle images,
votes keypoints from per-point offsets and recovers rigid poses by
least-squares fitting. A ray-cast renderer and an oracle predictor stand in
for trained networks so the whole pipeline can be checked end to end.
"""

__version__ = "0.1.0"
