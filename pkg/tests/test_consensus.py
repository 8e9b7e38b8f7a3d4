import math

import numpy as np

from dpgo.consensus import AdmmConfig, admm_consensus, information_weighted_mean
from dpgo.geometry import Pose2
from dpgo.graph import EdgeMeasurement, EdgeOrigin, PoseGraph
from dpgo.partition import Partition, merge, partition
from dpgo.synth import GenSpec, NOISE_PROFILES, generate


def test_weighted_mean_closed_form():
    poses = [Pose2(0.0, 0.0, 0.0), Pose2(0.2, 0.0, 0.0)]
    infos = [np.diag([1.0, 4.0, 1.0]), np.diag([1.0, 1.0, 1.0])]
    got = information_weighted_mean(poses, infos)
    assert abs(got.x - x_closed_form((4.0, 0.0), (1.0, 0.2))) < 1e-6
    assert abs(got.y) < 1e-12


def x_closed_form(a, b):
    (wa, xa), (wb, xb) = a, b
    return (wa * xa + wb * xb) / (wa + wb)


def test_weighted_mean_equal_weights_is_midpoint():
    got = information_weighted_mean(
        [Pose2(0.0, 1.0, 0.1), Pose2(0.2, 3.0, 0.1)], [np.eye(3), np.eye(3)]
    )
    assert abs(got.x - 0.1) < 1e-9
    assert abs(got.y - 2.0) < 1e-9


def test_angle_averaging_on_the_circle():
    # +-(pi - 0.1) must average near +-pi, never near zero
    got = information_weighted_mean(
        [Pose2(0, 0, math.pi - 0.1), Pose2(0, 0, -(math.pi - 0.1))], [np.eye(3), np.eye(3)]
    )
    assert abs(got.theta) > 3.0


def two_robot_toy(p0=0.8, p1=1.2, n0=4, n1=1):
    """Two anchored chains observing one shared vertex with different stiffness."""
    g0 = PoseGraph()
    g0.add_vertex(0, robot=0, estimate=Pose2(0, 0, 0))
    g0.add_vertex(10, robot=0, timestep=2, estimate=Pose2(p0, 0, 0))
    for _ in range(n0):
        g0.add_edge(EdgeMeasurement(0, 10, Pose2(p0, 0, 0), np.eye(3), EdgeOrigin.INTRA_LOOP))
    g1 = PoseGraph()
    g1.add_vertex(1, robot=1, estimate=Pose2(0, 0, 0))
    g1.add_vertex(10, robot=1, timestep=2, estimate=Pose2(p1, 0, 0))
    for _ in range(n1):
        g1.add_edge(EdgeMeasurement(1, 10, Pose2(p1, 0, 0), np.eye(3), EdgeOrigin.INTRA_LOOP))
    part = Partition(
        subgraphs=[g0, g1],
        owner={0: 0, 1: 1, 10: 0},
        separators={10: [(0, 10), (1, 10)]},
        edge_gids=[list(range(n0)), list(range(n0, n0 + n1))],
    )
    return part


def test_identical_duplicates_converge_immediately():
    part = two_robot_toy(p0=1.0, p1=1.0)
    res = admm_consensus(part)
    assert res.converged
    assert res.iterations == 1
    assert abs(res.resolved[10].x - 1.0) < 1e-9


def test_information_weighted_consensus_matches_closed_form():
    # stiffness 4 vs 1 -> fixed point at the 4:1 weighted average
    part = two_robot_toy(p0=0.8, p1=1.2, n0=4, n1=1)
    res = admm_consensus(part, cfg=AdmmConfig(max_iters=200, tol=1e-8))
    assert res.converged
    want = (4 * 0.8 + 1 * 1.2) / 5.0
    assert abs(res.resolved[10].x - want) < 1e-6
    assert abs(res.resolved[10].y) < 1e-9
    assert abs(res.resolved[10].theta) < 1e-9


def test_no_separator_partition_just_solves_locally():
    g = generate(GenSpec(n_robots=1, poses_per_robot=15, seed=0, profile=NOISE_PROFILES["v2"]))
    part = partition(g, 1)
    from dpgo.graph import objective

    res = admm_consensus(part)
    assert res.converged
    assert res.resolved == {}
    assert objective(res.partition.subgraphs[0]) <= objective(g)


def test_random_partitions_reach_tolerance_and_merge_agrees():
    for seed in range(3):
        g = generate(GenSpec(n_robots=2, poses_per_robot=15, seed=seed))
        part = partition(g, 2)
        res = admm_consensus(part, cfg=AdmmConfig(max_iters=150))
        assert res.disagreement[-1] < 1e-6 or res.converged
        assert res.converged, f"seed {seed}: disagreement {res.disagreement[-1]:.2e}"
        merged = merge(res.partition, res.resolved)
        assert merged.num_vertices == g.num_vertices
        assert merged.num_edges == g.num_edges
        for vid in res.resolved:
            assert merged.vertices[vid].estimate == res.resolved[vid]


def test_disagreement_tail_is_monotone():
    g = generate(GenSpec(n_robots=3, poses_per_robot=12, seed=5))
    part = partition(g, 3)
    res = admm_consensus(part, cfg=AdmmConfig(max_iters=150))
    tail = res.disagreement[-10:]
    assert all(b <= a * 1.5 for a, b in zip(tail, tail[1:])), tail
    assert res.disagreement[-1] <= res.disagreement[0]
