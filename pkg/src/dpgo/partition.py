"""Balanced k-way pose-graph partitioning with separator duplication.

Multilevel scheme: coarsen by heavy-edge matching, greedily split the
coarsest graph, then uncoarsen with boundary Kernighan-Lin refinement that
minimizes the number of cut edges under a vertex-count balance cap. A repair
pass keeps every block internally connected.

Edge ownership: a cut edge is assigned to the block owning its ``from``
endpoint. Both endpoints of a cut edge are duplicated into the other
endpoint's block and recorded as separators.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, wrap_angle
from .graph import GraphError, PoseGraph, Vertex


class DisconnectedInput(GraphError):
    pass


class UnresolvedSeparator(GraphError):
    pass


@dataclass
class Partition:
    subgraphs: list[PoseGraph]
    owner: dict[int, int]
    # global vertex id -> [(robot index, local vertex id)]; local ids equal
    # global ids because subgraphs reuse the global numbering.
    separators: dict[int, list[tuple[int, int]]]
    # per subgraph, the global edge index of each local edge (same order)
    edge_gids: list[list[int]] = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return len(self.subgraphs)


def _adjacency(g: PoseGraph) -> dict[int, dict[int, float]]:
    adj: dict[int, dict[int, float]] = {vid: {} for vid in g.vertices}
    for e in g.edges:
        adj[e.from_id][e.to_id] = adj[e.from_id].get(e.to_id, 0.0) + 1.0
        adj[e.to_id][e.from_id] = adj[e.to_id].get(e.from_id, 0.0) + 1.0
    return adj


def _is_connected(adj: dict[int, dict[int, float]], nodes=None) -> bool:
    nodes = set(adj.keys()) if nodes is None else set(nodes)
    if not nodes:
        return True
    seen = set()
    queue = deque([next(iter(sorted(nodes)))])
    while queue:
        u = queue.popleft()
        if u in seen:
            continue
        seen.add(u)
        for v in adj[u]:
            if v in nodes and v not in seen:
                queue.append(v)
    return seen == nodes


def _heavy_edge_matching(nodes, adj, weights):
    matched = {}
    for u in sorted(nodes):
        if u in matched:
            continue
        best, best_w = None, -1.0
        for v, w in sorted(adj[u].items()):
            if v in matched or v == u:
                continue
            if w > best_w:
                best, best_w = v, w
        if best is not None:
            matched[u] = best
            matched[best] = u
    return matched


def _coarsen(nodes, adj, weights):
    matched = _heavy_edge_matching(nodes, adj, weights)
    mapping = {}
    coarse_weights = {}
    for u in sorted(nodes):
        if u in mapping:
            continue
        partner = matched.get(u)
        cid = len(coarse_weights)
        mapping[u] = cid
        coarse_weights[cid] = weights[u]
        if partner is not None and partner not in mapping:
            mapping[partner] = cid
            coarse_weights[cid] += weights[partner]
    coarse_adj: dict[int, dict[int, float]] = {c: {} for c in coarse_weights}
    for u in nodes:
        cu = mapping[u]
        for v, w in adj[u].items():
            cv = mapping[v]
            if cu != cv:
                coarse_adj[cu][cv] = coarse_adj[cu].get(cv, 0.0) + w
    return mapping, list(coarse_weights), coarse_adj, coarse_weights


def _bfs_order(nodes, adj):
    order, seen = [], set()
    for root in sorted(nodes):
        if root in seen:
            continue
        queue = deque([root])
        while queue:
            u = queue.popleft()
            if u in seen:
                continue
            seen.add(u)
            order.append(u)
            for v in sorted(adj[u]):
                if v not in seen:
                    queue.append(v)
    return order


def _initial_split(nodes, adj, weights, n, cap):
    order = _bfs_order(nodes, adj)
    total = sum(weights[u] for u in nodes)
    target = total / n
    assign = {}
    block, acc = 0, 0.0
    for u in order:
        if block < n - 1 and acc + weights[u] > target and acc > 0:
            block += 1
            acc = 0.0
        assign[u] = block
        acc += weights[u]
    return assign


def _block_sizes(assign, weights, n):
    sizes = [0.0] * n
    for u, b in assign.items():
        sizes[b] += weights[u]
    return sizes


def _refine(assign, adj, weights, n, cap, passes=6):
    """Boundary moves that reduce cut weight subject to the balance cap."""
    sizes = _block_sizes(assign, weights, n)
    for _ in range(passes):
        moved = 0
        for u in sorted(assign):
            bu = assign[u]
            if sizes[bu] - weights[u] <= 0:
                continue  # never empty a block
            conn = defaultdict(float)
            for v, w in adj[u].items():
                conn[assign[v]] += w
            best_b, best_gain = bu, 0.0
            for b, w in sorted(conn.items()):
                if b == bu or sizes[b] + weights[u] > cap:
                    continue
                gain = w - conn.get(bu, 0.0)
                if gain > best_gain:
                    best_b, best_gain = b, gain
            if best_b != bu:
                sizes[bu] -= weights[u]
                sizes[best_b] += weights[u]
                assign[u] = best_b
                moved += 1
        if moved == 0:
            break
    return assign


def _repair_connectivity(assign, adj, n):
    """Merge orphan components into the neighboring block with most cut edges."""
    for _ in range(n * 4):
        changed = False
        for b in range(n):
            members = sorted(u for u, blk in assign.items() if blk == b)
            if not members:
                continue
            comps = _components(members, adj)
            if len(comps) <= 1:
                continue
            comps.sort(key=len, reverse=True)
            for comp in comps[1:]:
                counts = defaultdict(float)
                for u in comp:
                    for v, w in adj[u].items():
                        if assign[v] != b:
                            counts[assign[v]] += w
                target = max(sorted(counts), key=lambda k: counts[k]) if counts else b
                if target != b:
                    for u in comp:
                        assign[u] = target
                    changed = True
        if not changed:
            return assign
    return assign


def _components(members, adj):
    members = set(members)
    comps, seen = [], set()
    for root in sorted(members):
        if root in seen:
            continue
        comp, queue = [], deque([root])
        while queue:
            u = queue.popleft()
            if u in seen:
                continue
            seen.add(u)
            comp.append(u)
            for v in adj[u]:
                if v in members and v not in seen:
                    queue.append(v)
        comps.append(comp)
    return comps


def _rebalance_connected(assign, adj, weights, n, cap):
    """Shrink oversized blocks by moving boundary vertices whose removal keeps
    the source block connected."""
    sizes = _block_sizes(assign, weights, n)
    for _ in range(len(assign)):
        over = [b for b in range(n) if sizes[b] > cap]
        if not over:
            return assign
        b = max(over, key=lambda k: sizes[k])
        members = sorted(u for u, blk in assign.items() if blk == b)
        moved = False
        candidates = []
        for u in members:
            conn = defaultdict(float)
            for v, w in adj[u].items():
                if assign[v] != b:
                    conn[assign[v]] += w
            if conn:
                tb = max(sorted(conn), key=lambda k: conn[k])
                candidates.append((-(conn[tb]), u, tb))
        for _, u, tb in sorted(candidates):
            if sizes[tb] + weights[u] > cap:
                continue
            rest = [v for v in members if v != u]
            if rest and not _is_connected(adj, rest):
                continue
            assign[u] = tb
            sizes[b] -= weights[u]
            sizes[tb] += weights[u]
            moved = True
            break
        if not moved:
            return assign
    return assign


def balance_cap(num_vertices: int, n: int, balance_tol: float) -> int:
    return max(int(math.floor((1.0 + balance_tol) * math.ceil(num_vertices / n))), math.ceil(num_vertices / n))


def partition(g: PoseGraph, n: int, balance_tol: float = 0.15) -> Partition:
    """Split g into n blocks; duplicates separator vertices across blocks."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > g.num_vertices:
        raise ValueError("more blocks than vertices")
    adj = _adjacency(g)
    if not _is_connected(adj):
        raise DisconnectedInput("input pose graph is not connected")

    if n == 1:
        assign = {vid: 0 for vid in g.vertices}
    else:
        weights = {vid: 1.0 for vid in g.vertices}
        levels = [(sorted(g.vertices), adj, weights, None)]
        nodes, cur_adj, cur_w = levels[0][0], adj, weights
        while len(nodes) > max(20, 4 * n):
            mapping, cnodes, cadj, cw = _coarsen(nodes, cur_adj, cur_w)
            if len(cnodes) >= len(nodes):
                break
            levels.append((cnodes, cadj, cw, mapping))
            nodes, cur_adj, cur_w = cnodes, cadj, cw
        cap = balance_cap(g.num_vertices, n, balance_tol)
        assign = _initial_split(nodes, cur_adj, cur_w, n, cap)
        assign = _refine(assign, cur_adj, cur_w, n, cap)
        for lvl in range(len(levels) - 1, 0, -1):
            mapping = levels[lvl][3]
            fine_nodes, fine_adj, fine_w, _ = levels[lvl - 1]
            assign = {u: assign[mapping[u]] for u in fine_nodes}
            assign = _refine(assign, fine_adj, fine_w, n, cap)
        assign = _repair_connectivity(assign, adj, n)
        assign = _rebalance_connected(assign, adj, {vid: 1.0 for vid in g.vertices}, n, cap)

    return _build_partition(g, assign, n)


def _build_partition(g: PoseGraph, assign: dict[int, int], n: int) -> Partition:
    dup_blocks: dict[int, set[int]] = defaultdict(set)
    for e in g.edges:
        bu, bv = assign[e.from_id], assign[e.to_id]
        if bu != bv:
            dup_blocks[e.from_id].update((bu, bv))
            dup_blocks[e.to_id].update((bu, bv))

    subgraphs = [PoseGraph() for _ in range(n)]
    for vid in g.vertices:
        v = g.vertices[vid]
        holders = {assign[vid]} | dup_blocks.get(vid, set())
        for b in sorted(holders):
            subgraphs[b].add_vertex(vid, v.robot, v.timestep, v.estimate, v.truth)

    edge_gids: list[list[int]] = [[] for _ in range(n)]
    for gid, e in enumerate(g.edges):
        b = assign[e.from_id]
        subgraphs[b].add_edge(e)
        edge_gids[b].append(gid)

    separators = {
        vid: [(b, vid) for b in sorted(blocks)] for vid, blocks in sorted(dup_blocks.items())
    }
    return Partition(subgraphs, dict(assign), separators, edge_gids)


def merge(p: Partition, resolved: dict[int, Pose2]) -> PoseGraph:
    """Collapse duplicated vertices and reassemble the global graph.

    Separator vertices take the resolved pose; owned vertices keep their
    owner's estimate. Edges are restored in global index order.
    """
    for vid in p.separators:
        if vid not in resolved:
            raise UnresolvedSeparator(f"separator vertex {vid} has no resolved pose")

    merged = PoseGraph()
    entries = []
    for b, sub in enumerate(p.subgraphs):
        for vid, v in sub.vertices.items():
            if p.owner[vid] == b:
                est = resolved[vid] if vid in p.separators else v.estimate
                entries.append((vid, v.robot, v.timestep, est, v.truth))
    for vid, robot, ts, est, truth in sorted(entries):
        merged.add_vertex(vid, robot, ts, est, truth)

    order = []
    for b, sub in enumerate(p.subgraphs):
        for gid, e in zip(p.edge_gids[b], sub.edges):
            order.append((gid, e))
    for _, e in sorted(order, key=lambda t: t[0]):
        merged.add_edge(e)
    return merged


def average_separator_estimates(p: Partition) -> dict[int, Pose2]:
    """Plain average of each separator's duplicate estimates (chordal angles)."""
    out = {}
    for vid, holders in p.separators.items():
        xs, ys, ss, cs = [], [], [], []
        for b, lid in holders:
            est = p.subgraphs[b].vertices[lid].estimate
            xs.append(est.x)
            ys.append(est.y)
            ss.append(math.sin(est.theta))
            cs.append(math.cos(est.theta))
        out[vid] = Pose2(
            float(np.mean(xs)), float(np.mean(ys)), math.atan2(float(np.mean(ss)), float(np.mean(cs)))
        )
    return out


def partition_manifest(p: Partition) -> dict:
    """JSON-serializable description (block membership + separator list)."""
    return {
        "n_blocks": p.n_blocks,
        "owner": {str(vid): b for vid, b in sorted(p.owner.items())},
        "separators": {str(vid): [b for b, _ in holders] for vid, holders in sorted(p.separators.items())},
        "edges_per_block": [len(gids) for gids in p.edge_gids],
    }
