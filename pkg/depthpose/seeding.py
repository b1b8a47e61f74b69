import numpy as np

# Fixed stream ids keep consumers independent of each other for one seed.
STREAM_POSE = 1
STREAM_OCCLUSION = 2
STREAM_NOISE = 3
STREAM_FLIP = 4
STREAM_SUBSAMPLE = 5
STREAM_MEANSHIFT = 6
STREAM_SCENES = 7


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for (seed, stream); identical on every platform."""
    return np.random.default_rng([int(seed), int(stream)])
