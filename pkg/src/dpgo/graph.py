"""Pose-graph data model, global objective, and localization error.

Information matrices are stored in ``(theta, x, y)`` ordering, matching the
residual layout ``(dtheta, dx, dy)``. The g2o file format orders them
``(x, y, theta)``; :mod:`dpgo.g2o_io` permutes at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import Pose2, wrap_angle


class GraphError(Exception):
    pass


class MissingGroundTruth(GraphError):
    pass


class NonPSDInformation(GraphError):
    pass


class EdgeOrigin(IntEnum):
    ODOMETRY = 0
    INTRA_LOOP = 1
    INTER_ESTIMATE = 2
    INTER_LOOP = 3


@dataclass(frozen=True, eq=False)
class EdgeMeasurement:
    """Directed relative-pose measurement with a 3x3 information matrix."""

    from_id: int
    to_id: int
    rel: Pose2
    info: np.ndarray
    origin: EdgeOrigin = EdgeOrigin.INTRA_LOOP

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise GraphError(f"self edge on vertex {self.from_id}")
        info = np.asarray(self.info, dtype=float)
        if info.shape != (3, 3):
            raise GraphError(f"information matrix must be 3x3, got {info.shape}")
        if not np.allclose(info, info.T, atol=1e-9 * max(1.0, float(np.abs(info).max()))):
            raise NonPSDInformation("information matrix is not symmetric")
        if np.linalg.eigvalsh(info).min() <= 0:
            raise NonPSDInformation("information matrix has a non-positive eigenvalue")
        info = 0.5 * (info + info.T)
        info.setflags(write=False)
        object.__setattr__(self, "info", info)
        object.__setattr__(self, "origin", EdgeOrigin(self.origin))


@dataclass
class Vertex:
    robot: int
    timestep: int
    estimate: Pose2
    truth: Pose2 | None = None


@dataclass
class PoseGraph:
    """Directed pose graph; a plain value type (copy freely, mutate locally)."""

    vertices: dict[int, Vertex] = field(default_factory=dict)
    edges: list[EdgeMeasurement] = field(default_factory=list)

    def add_vertex(self, vid, robot=0, timestep=0, estimate=None, truth=None):
        if vid in self.vertices:
            raise GraphError(f"duplicate vertex id {vid}")
        if timestep < 0:
            raise GraphError(f"negative timestep on vertex {vid}")
        self.vertices[vid] = Vertex(robot, timestep, estimate or Pose2(0, 0, 0), truth)

    def add_edge(self, edge: EdgeMeasurement):
        for vid in (edge.from_id, edge.to_id):
            if vid not in self.vertices:
                raise GraphError(f"edge references unknown vertex {vid}")
        if edge.origin == EdgeOrigin.ODOMETRY:
            u, v = self.vertices[edge.from_id], self.vertices[edge.to_id]
            if u.robot != v.robot or abs(u.timestep - v.timestep) != 1:
                raise GraphError(
                    f"odometry edge {edge.from_id}->{edge.to_id} does not connect "
                    "consecutive timesteps of one robot"
                )
        self.edges.append(edge)

    def copy(self) -> "PoseGraph":
        g = PoseGraph()
        g.vertices = {
            vid: Vertex(v.robot, v.timestep, v.estimate, v.truth)
            for vid, v in self.vertices.items()
        }
        g.edges = list(self.edges)
        return g

    def has_full_ground_truth(self) -> bool:
        return all(v.truth is not None for v in self.vertices.values())

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class ResidualWeights:
    """Relative weighting of rotational vs translational residual terms."""

    w_rot: float = 1.0
    w_trans: float = 1.0

    def __post_init__(self):
        if self.w_rot <= 0 or self.w_trans <= 0:
            raise GraphError("residual weights must be positive")


def edge_residual(edge: EdgeMeasurement, xp: Pose2, xq: Pose2) -> np.ndarray:
    """Residual (dtheta, dx, dy) of one edge given endpoint estimates xp, xq.

    Rotational part is the wrapped angle of meas_rot^-1 * (rot_q - rot_p);
    translational part is R_p^T (t_q - t_p) - meas_t.
    """
    dtheta = wrap_angle(xq.theta - xp.theta - edge.rel.theta)
    c, s = math.cos(xp.theta), math.sin(xp.theta)
    dx = xq.x - xp.x
    dy = xq.y - xp.y
    tx = c * dx + s * dy - edge.rel.x
    ty = -s * dx + c * dy - edge.rel.y
    return np.array([dtheta, tx, ty])


def objective(g: PoseGraph, weights: ResidualWeights | None = None) -> float:
    """Global least-squares objective over all edges (non-negative)."""
    w = weights or ResidualWeights()
    wr2, wt2 = w.w_rot**2, w.w_trans**2
    total = 0.0
    for e in g.edges:
        r = edge_residual(e, g.vertices[e.from_id].estimate, g.vertices[e.to_id].estimate)
        total += wr2 * r[0] * r[0] + wt2 * (r[1] * r[1] + r[2] * r[2])
    return total


def truth_relative(g: PoseGraph, edge: EdgeMeasurement) -> Pose2:
    """Ground-truth relative transform of an edge."""
    tp = g.vertices[edge.from_id].truth
    tq = g.vertices[edge.to_id].truth
    if tp is None or tq is None:
        raise MissingGroundTruth(
            f"edge {edge.from_id}->{edge.to_id} has an endpoint without ground truth"
        )
    from .geometry import relative

    return relative(tp, tq)


def measurement_discrepancy(meas: Pose2, truth_rel: Pose2) -> np.ndarray:
    """(dtheta, dx, dy) between a measured and a ground-truth relative transform."""
    return np.array(
        [wrap_angle(meas.theta - truth_rel.theta), meas.x - truth_rel.x, meas.y - truth_rel.y]
    )


def localization_error(g: PoseGraph) -> float:
    """Information-weighted chi^2 between edge measurements and ground truth."""
    total = 0.0
    for e in g.edges:
        r = measurement_discrepancy(e.rel, truth_relative(g, e))
        total += float(r @ e.info @ r)
    return total
