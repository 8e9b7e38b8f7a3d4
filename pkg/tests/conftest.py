import math

import numpy as np
import pytest

from dpgo.geometry import Pose2
from dpgo.graph import EdgeMeasurement, EdgeOrigin, PoseGraph


def rand_pose(rng, scale=5.0):
    return Pose2(
        rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-math.pi, math.pi)
    )


def rand_info(rng):
    a = rng.normal(size=(3, 3))
    return a @ a.T + 0.5 * np.eye(3)


def rand_graph(rng, n_poses=20, n_loops=8, with_truth=True):
    """Random connected graph: an odometry chain plus random loop closures."""
    g = PoseGraph()
    for i in range(n_poses):
        g.add_vertex(
            i,
            robot=0,
            timestep=i,
            estimate=rand_pose(rng),
            truth=rand_pose(rng) if with_truth else None,
        )
    for i in range(n_poses - 1):
        g.add_edge(
            EdgeMeasurement(i, i + 1, rand_pose(rng, 1.0), rand_info(rng), EdgeOrigin.ODOMETRY)
        )
    for _ in range(n_loops):
        i = int(rng.integers(0, n_poses - 2))
        j = int(rng.integers(i + 2, n_poses))
        g.add_edge(
            EdgeMeasurement(i, j, rand_pose(rng, 1.0), rand_info(rng), EdgeOrigin.INTRA_LOOP)
        )
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
