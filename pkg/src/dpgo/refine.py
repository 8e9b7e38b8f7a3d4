"""Levenberg-Marquardt refinement of pose-graph estimates.

Minimizes the global objective (rotation/translation-weighted squared
residuals) by damped Gauss-Newton steps with analytic Jacobians, assembling
sparse normal equations and solving them with a fill-reducing sparse LU.
Variables are ordered (theta, x, y) per vertex; one vertex is anchored to
remove the gauge freedom. Optional prior factors (used by the consensus
layer) pull selected vertices toward target poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Pose2, wrap_angle
from .graph import GraphError, PoseGraph, ResidualWeights


class SingularNormalEquations(GraphError):
    pass


@dataclass(frozen=True)
class LMConfig:
    max_iters: int = 75
    mu0: float = 1e-4
    mu_up: float = 10.0
    mu_down: float = 1.0 / 3.0
    gtol: float = 1e-10
    ftol: float = 1e-14
    mu_max: float = 1e32

    def __post_init__(self):
        if self.mu0 <= 0 or self.mu_up <= 1 or not 0 < self.mu_down < 1:
            raise ValueError("invalid damping configuration")


@dataclass
class LMIterate:
    iteration: int
    objective: float
    damping: float
    step_norm: float
    accepted: bool


@dataclass(frozen=True)
class PriorFactor:
    """Quadratic pull ||sqrt_weight @ (x (-) target)||^2 on one vertex."""

    vertex: int
    target: np.ndarray  # (theta, x, y)
    sqrt_weight: np.ndarray  # (3, 3)


@dataclass
class LMResult:
    graph: PoseGraph
    iterates: list[LMIterate]
    hessian: sp.csr_matrix  # data-term Gauss-Newton Hessian at the final estimate
    var_index: dict[int, int]  # vertex id -> variable block (anchor excluded)
    anchor: int


def _state(g: PoseGraph, vids) -> np.ndarray:
    x = np.empty((len(vids), 3))
    for i, vid in enumerate(vids):
        est = g.vertices[vid].estimate
        x[i] = (est.theta, est.x, est.y)
    return x


def _edge_arrays(g: PoseGraph, index):
    e_from = np.array([index[e.from_id] for e in g.edges], dtype=np.intp)
    e_to = np.array([index[e.to_id] for e in g.edges], dtype=np.intp)
    meas = np.array([(e.rel.theta, e.rel.x, e.rel.y) for e in g.edges]).reshape(-1, 3)
    return e_from, e_to, meas


def _residuals_jacobians(x, e_from, e_to, meas, w: ResidualWeights):
    """Weighted residuals (E, 3) and Jacobian blocks A, B (E, 3, 3)."""
    xp, xq = x[e_from], x[e_to]
    th = xp[:, 0]
    c, s = np.cos(th), np.sin(th)
    dx = xq[:, 1] - xp[:, 1]
    dy = xq[:, 2] - xp[:, 2]
    dth = xq[:, 0] - xp[:, 0] - meas[:, 0]
    dth = np.mod(dth, 2 * math.pi)
    dth = np.where(dth > math.pi, dth - 2 * math.pi, dth)
    wr, wt = w.w_rot, w.w_trans
    r = np.stack(
        [wr * dth, wt * (c * dx + s * dy - meas[:, 1]), wt * (-s * dx + c * dy - meas[:, 2])],
        axis=1,
    )
    n = len(e_from)
    a = np.zeros((n, 3, 3))
    b = np.zeros((n, 3, 3))
    a[:, 0, 0] = -wr
    a[:, 1, 0] = wt * (-s * dx + c * dy)
    a[:, 2, 0] = wt * (-c * dx - s * dy)
    a[:, 1, 1] = -wt * c
    a[:, 1, 2] = -wt * s
    a[:, 2, 1] = wt * s
    a[:, 2, 2] = -wt * c
    b[:, 0, 0] = wr
    b[:, 1, 1] = wt * c
    b[:, 1, 2] = wt * s
    b[:, 2, 1] = -wt * s
    b[:, 2, 2] = wt * c
    return r, a, b


def _objective_value(x, e_from, e_to, meas, w, priors, index):
    r, _, _ = _residuals_jacobians(x, e_from, e_to, meas, w)
    total = float((r * r).sum())
    for p in priors:
        i = index[p.vertex]
        d = x[i] - p.target
        d[0] = wrap_angle(d[0])
        rp = p.sqrt_weight @ d
        total += float(rp @ rp)
    return total


def _block_indices(free_of, blocks):
    cols = np.empty(len(blocks) * 3, dtype=np.intp)
    for k, blk in enumerate(blocks):
        cols[3 * k : 3 * k + 3] = free_of[blk] * 3 + np.arange(3)
    return cols


def _assemble(x, e_from, e_to, meas, w, priors, index, free_of, n_free):
    r, a, b = _residuals_jacobians(x, e_from, e_to, meas, w)
    at_a = np.einsum("eji,ejk->eik", a, a)
    at_b = np.einsum("eji,ejk->eik", a, b)
    bt_b = np.einsum("eji,ejk->eik", b, b)
    at_r = np.einsum("eji,ej->ei", a, r)
    bt_r = np.einsum("eji,ej->ei", b, r)

    rows, cols, vals = [], [], []
    grad = np.zeros(n_free * 3)
    fp = free_of[e_from]
    fq = free_of[e_to]

    def add_block(fi, fj, block):
        sel = (fi >= 0) & (fj >= 0)
        if not sel.any():
            return
        i3 = (fi[sel, None] * 3 + np.arange(3)[None, :]).repeat(3, axis=1).reshape(-1)
        j3 = np.tile(fj[sel, None] * 3 + np.arange(3)[None, :], (1, 3)).reshape(-1)
        rows.append(i3)
        cols.append(j3)
        vals.append(block[sel].reshape(-1))

    add_block(fp, fp, at_a)
    add_block(fp, fq, at_b)
    add_block(fq, fp, np.transpose(at_b, (0, 2, 1)))
    add_block(fq, fq, bt_b)
    for sel_idx, contrib in ((fp, at_r), (fq, bt_r)):
        ok = sel_idx >= 0
        np.add.at(grad, (sel_idx[ok, None] * 3 + np.arange(3)[None, :]).reshape(-1), contrib[ok].reshape(-1))

    for p in priors:
        fi = free_of[index[p.vertex]]
        if fi < 0:
            continue
        d = x[index[p.vertex]] - p.target
        d[0] = wrap_angle(d[0])
        rp = p.sqrt_weight @ d
        h = p.sqrt_weight.T @ p.sqrt_weight
        i3 = fi * 3 + np.arange(3)
        rows.append(np.repeat(i3, 3))
        cols.append(np.tile(i3, 3))
        vals.append(h.reshape(-1))
        grad[i3] += p.sqrt_weight.T @ rp

    n = n_free * 3
    if rows:
        h_mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsc()
    else:
        h_mat = sp.csc_matrix((n, n))
    return h_mat, grad


def _data_hessian(x, e_from, e_to, meas, w, n_vars):
    """Gauss-Newton Hessian of the measurement terms over ALL vertices."""
    _, a, b = _residuals_jacobians(x, e_from, e_to, meas, w)
    at_a = np.einsum("eji,ejk->eik", a, a)
    at_b = np.einsum("eji,ejk->eik", a, b)
    bt_b = np.einsum("eji,ejk->eik", b, b)
    rows, cols, vals = [], [], []

    def add(fi, fj, block):
        i3 = (fi[:, None] * 3 + np.arange(3)[None, :]).repeat(3, axis=1).reshape(-1)
        j3 = np.tile(fj[:, None] * 3 + np.arange(3)[None, :], (1, 3)).reshape(-1)
        rows.append(i3)
        cols.append(j3)
        vals.append(block.reshape(-1))

    if len(e_from):
        add(e_from, e_from, at_a)
        add(e_from, e_to, at_b)
        add(e_to, e_from, np.transpose(at_b, (0, 2, 1)))
        add(e_to, e_to, bt_b)
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_vars * 3, n_vars * 3),
        ).tocsr()
    return sp.csr_matrix((n_vars * 3, n_vars * 3))


def lm_refine_full(
    g: PoseGraph,
    weights: ResidualWeights | None = None,
    cfg: LMConfig | None = None,
    *,
    anchor: int | None = None,
    priors: tuple = (),
) -> LMResult:
    w = weights or ResidualWeights()
    cfg = cfg or LMConfig()
    vids = sorted(g.vertices)
    index = {vid: i for i, vid in enumerate(vids)}
    if anchor is None:
        anchor = vids[0]
    free_vids = [v for v in vids if v != anchor]
    free_of = np.full(len(vids), -1, dtype=np.intp)
    for k, vid in enumerate(free_vids):
        free_of[index[vid]] = k
    n_free = len(free_vids)

    e_from, e_to, meas = _edge_arrays(g, index)
    x = _state(g, vids)
    iterates: list[LMIterate] = []
    f_cur = _objective_value(x, e_from, e_to, meas, w, priors, index)
    mu = cfg.mu0
    it = 0
    while it < cfg.max_iters and n_free > 0 and (len(e_from) or priors):
        h_mat, grad = _assemble(x, e_from, e_to, meas, w, priors, index, free_of, n_free)
        if np.abs(grad).max() < cfg.gtol:
            break
        stop = False
        while it < cfg.max_iters:
            it += 1
            damped = (h_mat + mu * sp.identity(n_free * 3, format="csc")).tocsc()
            try:
                solve = spla.splu(damped)
                delta = solve.solve(-grad)
                ok = np.isfinite(delta).all()
            except RuntimeError:
                ok = False
                delta = np.zeros(n_free * 3)
            if ok:
                x_try = x.copy()
                d3 = delta.reshape(-1, 3)
                for k, vid in enumerate(free_vids):
                    i = index[vid]
                    x_try[i, 0] = wrap_angle(x_try[i, 0] + d3[k, 0])
                    x_try[i, 1:] += d3[k, 1:]
                f_try = _objective_value(x_try, e_from, e_to, meas, w, priors, index)
            else:
                f_try = math.inf
            step_norm = float(np.linalg.norm(delta))
            if f_try < f_cur:
                rel_dec = (f_cur - f_try) / max(f_cur, 1e-300)
                x, f_cur = x_try, f_try
                iterates.append(LMIterate(it, f_cur, mu, step_norm, True))
                mu = max(mu * cfg.mu_down, 1e-15)
                if rel_dec < cfg.ftol:
                    stop = True
                break
            iterates.append(LMIterate(it, f_cur, mu, step_norm, False))
            mu *= cfg.mu_up
            if mu > cfg.mu_max:
                raise SingularNormalEquations("damping overflow; normal equations unsolvable")
        if stop:
            break

    out = g.copy()
    for vid in vids:
        i = index[vid]
        out.vertices[vid].estimate = Pose2(x[i, 1], x[i, 2], x[i, 0])
    hess = _data_hessian(x, e_from, e_to, meas, w, len(vids))
    return LMResult(out, iterates, hess, index, anchor)


def lm_refine(
    g: PoseGraph,
    weights: ResidualWeights | None = None,
    cfg: LMConfig | None = None,
    *,
    anchor: int | None = None,
) -> tuple[PoseGraph, list[LMIterate]]:
    """Refine vertex estimates; returns the new graph and the iteration log."""
    res = lm_refine_full(g, weights, cfg, anchor=anchor)
    return res.graph, res.iterates


def iteration_log_csv(iterates, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,objective,damping,step_norm,accepted\n")
        for it in iterates:
            fh.write(
                f"{it.iteration},{it.objective!r},{it.damping!r},{it.step_norm!r},{int(it.accepted)}\n"
            )
