"""Support-tree inference and breadth-first candidate selection.

Topology first: each object is attached to the body whose upward-facing
surface sits directly beneath it. Then a single BFS pass over the tree picks,
per node, the completion candidate with the lowest physics energy after a
three-step adjustment (SDF pruning against finalized neighbors, vertex
de-penetration, drop-to-contact).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .complete import Candidate
from .config import RunConfig
from .energy import e_pene_mesh, e_pene_sdf
from .grids import SdfGrid, gradient, sample
from .meshes import (
    TriMesh,
    face_normals,
    marching_cubes,
    mesh_intersects,
    mesh_volume,
    min_separation,
    surface_samples,
    transform_mesh,
)
from .physics import e_stable, e_touch
from .physics_params import DEFAULT_DENSITY, PhysicsParams
from .scene import Edge, RelationKind, SceneGraph, SceneNode, validate
from .transforms import RigidTransform

UP_COS = np.cos(np.deg2rad(40.0))  # how steep a face can be and still support
SUPPORT_GAP = 0.03  # m, max vertical gap between child and its support
BESIDE_GAP = 0.01  # m, sibling separation that counts as "beside"
CONTACT_TOL = 1e-3  # m, drop-to-contact target gap


class UnresolvedPenetrationError(RuntimeError):
    def __init__(self, node_id: int, other_id: int):
        super().__init__(
            f"vertex de-penetration failed to converge for nodes {node_id} and {other_id}"
        )
        self.pair = (node_id, other_id)


@dataclass(frozen=True)
class SupportHypothesis:
    child: int
    parent: int
    contact_area: float
    normal: tuple
    height: float


# ---------------------------------------------------------------------------
# Topology


def _upward_height_map(mesh: TriMesh, cell: float):
    """Max height of upward-facing surface per xy cell."""
    if mesh.is_empty:
        return None
    pts, normals = surface_samples(mesh, 4096, seed=7, with_normals=True)
    up = normals[:, 2] >= UP_COS
    if not up.any():
        return None
    pts = pts[up]
    lo = pts[:, :2].min(axis=0)
    idx = np.floor((pts[:, :2] - lo) / cell).astype(int)
    shape = idx.max(axis=0) + 1
    height = np.full(shape, -np.inf)
    np.maximum.at(height, (idx[:, 0], idx[:, 1]), pts[:, 2])
    return lo, height


def infer_support_tree(
    meshes: dict, root: int, cell: float = 0.02
) -> tuple[list[Edge], list[SupportHypothesis], list[str]]:
    """Assign each non-root body its support parent from contact geometry.

    `meshes` maps node id to its posed world-space mesh, root included.
    Returns support + beside edges, the per-child evidence, and warnings for
    mutual-support conflicts that were broken by attaching the lower body to
    the root.
    """
    ids = sorted(meshes)
    if root not in meshes:
        raise ValueError(f"root {root} missing from meshes")
    hmap = {i: _upward_height_map(meshes[i], cell) for i in ids}
    bottoms = {}
    for i in ids:
        if i == root or meshes[i].is_empty:
            continue
        pts, normals = surface_samples(meshes[i], 2048, seed=7, with_normals=True)
        down = normals[:, 2] <= -UP_COS
        bottoms[i] = pts[down] if down.any() else pts[pts[:, 2].argsort()[:64]]

    parent_of = {}
    hypotheses = []
    warnings = []
    area_per_pt = {}
    for i in bottoms:
        from .meshes import mesh_area

        area_per_pt[i] = mesh_area(meshes[i]) / 2048.0

    for i in sorted(bottoms):
        best = None  # (area, -gap, -parent_id) maximized
        best_h = None
        for j in ids:
            if j == i or hmap[j] is None:
                continue
            lo, height = hmap[j]
            pts = bottoms[i]
            idx = np.floor((pts[:, :2] - lo) / cell).astype(int)
            ok = np.all((idx >= 0) & (idx < height.shape), axis=1)
            if not ok.any():
                continue
            h = height[idx[ok, 0], idx[ok, 1]]
            gap = pts[ok, 2] - h
            near = np.isfinite(gap) & (gap >= -SUPPORT_GAP) & (gap <= SUPPORT_GAP)
            if not near.any():
                continue
            area = float(near.sum() * area_per_pt[i])
            mean_gap = float(np.abs(gap[near]).mean())
            key = (area, -mean_gap, -j)
            if best is None or key > best:
                best = key
                best_h = SupportHypothesis(
                    i, j, area, (0.0, 0.0, 1.0), float(pts[ok, 2][near].mean())
                )
        if best_h is None:
            best_h = SupportHypothesis(i, root, 0.0, (0.0, 0.0, 1.0), 0.0)
        parent_of[i] = best_h.parent
        hypotheses.append(best_h)

    # break mutual or cyclic support by dropping the lower body to the root
    def com_z(i):
        m = meshes[i]
        return float(m.vertices[:, 2].mean()) if not m.is_empty else 0.0

    for i in sorted(parent_of):
        seen = {i}
        cur = parent_of.get(i)
        while cur is not None and cur != root:
            if cur in seen:
                lower = min(seen | {cur}, key=com_z)
                warnings.append(
                    f"support cycle through node {cur}; node {lower} attached to root"
                )
                parent_of[lower] = root
                break
            seen.add(cur)
            cur = parent_of.get(cur)

    edges = [Edge(i, parent_of[i], RelationKind.SUPPORT) for i in sorted(parent_of)]
    for a_i in sorted(parent_of):
        for b_i in sorted(parent_of):
            if b_i <= a_i or parent_of[a_i] != parent_of[b_i]:
                continue
            if meshes[a_i].is_empty or meshes[b_i].is_empty:
                continue
            if min_separation(meshes[a_i], meshes[b_i]) <= BESIDE_GAP:
                edges.append(Edge(a_i, b_i, RelationKind.BESIDE))
    return edges, hypotheses, warnings


# ---------------------------------------------------------------------------
# Adjustment


def _others_sdf(pts: np.ndarray, others: list) -> tuple[np.ndarray, int]:
    """Min signed distance over other bodies at world points, plus the arg-min
    body id at the deepest point."""
    best = np.full(len(pts), np.inf)
    owner = np.full(len(pts), -1)
    for oid, grid, state in others:
        d = sample(grid, state.inverse().apply(pts))
        closer = d < best
        best[closer] = d[closer]
        owner[closer] = oid
    worst = int(np.argmin(best)) if len(best) else 0
    return best, int(owner[worst]) if len(best) else -1


def adjust(
    node: SceneNode, partial: SceneGraph, parent_id: int, cfg: RunConfig | None = None
) -> tuple[SceneNode, dict]:
    """Three sub-steps: SDF pruning, vertex de-penetration, drop-to-contact."""
    cfg = cfg or RunConfig()
    others = [
        (i, partial.nodes[i].sdf, partial.nodes[i].state)
        for i in sorted(partial.nodes)
        if i != node.id
    ]
    log = {"prune_voxels": 0, "vertex_moves": 0, "drop_dz": 0.0}

    # (1) raise the node's SDF wherever it claims space inside a neighbor
    grid = node.sdf
    if others:
        centers = node.state.apply(grid.voxel_centers().reshape(-1, 3))
        g_other, _ = _others_sdf(centers, others)
        inside_other = g_other < 0.0
        values = grid.values.reshape(-1).astype(np.float64)
        bound = -g_other[inside_other]
        needs = values[inside_other] < bound
        if needs.any():
            upd = values[inside_other]
            upd[needs] = bound[needs]
            values[inside_other] = upd
            log["prune_voxels"] = int(needs.sum())
            grid = SdfGrid(
                grid.origin,
                grid.spacing,
                np.clip(values, -grid.truncation, grid.truncation)
                .reshape(grid.dims)
                .astype(np.float32),
                grid.truncation,
            )
            node = replace(node, sdf=grid, mesh=marching_cubes(grid))

    # (2) push any still-penetrating mesh vertex out along the offender's
    # gradient
    if others and not node.mesh.is_empty:
        verts_obj = node.mesh.vertices.copy()
        offender = -1
        # thin-walled offenders (shelf slots) can bounce stragglers across a
        # wall for several rounds before they escape; the cap only guards
        # against genuine non-convergence
        for _ in range(24):
            world = node.state.apply(verts_obj)
            g_other, offender = _others_sdf(world, others)
            pen = g_other < 0.0
            if not pen.any():
                offender = -1
                break
            log["vertex_moves"] += int(pen.sum())
            move = np.zeros((int(pen.sum()), 3))
            depth = -g_other[pen]
            for oid, ogrid, ostate in others:
                d = sample(ogrid, ostate.inverse().apply(world[pen]))
                sel = np.isclose(d, g_other[pen])
                if sel.any():
                    local = ostate.inverse().apply(world[pen][sel])
                    gr, _ = gradient(ogrid, local)
                    lens = np.linalg.norm(gr, axis=1, keepdims=True)
                    # deep inside the offender the truncated field plateaus and
                    # the finite-difference gradient vanishes; push those points
                    # radially away from the offender grid's center instead
                    flat = lens[:, 0] < 1e-9
                    if flat.any():
                        away = local[flat] - 0.5 * (ogrid.origin + ogrid.max_corner)
                        away[:, 2] += 1e-6
                        gr[flat] = away
                        lens[flat] = np.linalg.norm(away, axis=1, keepdims=True)
                    move[sel] = ostate.rotate(gr / lens) * (depth[sel] + 1e-3)[:, None]
            world_pen = world[pen] + move
            verts_obj[pen] = node.state.inverse().apply(world_pen)
        else:
            raise UnresolvedPenetrationError(node.id, offender)
        if log["vertex_moves"]:
            node = replace(node, mesh=TriMesh(verts_obj, node.mesh.faces))

    # (3) translate along gravity until the gap to the parent is in [0, 1 mm]
    if parent_id in partial.nodes and not node.mesh.is_empty:
        parent = partial.nodes[parent_id]
        pmesh = parent.posed_mesh()
        if not pmesh.is_empty:
            dz = _drop_distance(node, pmesh)
            if abs(dz) > 0:
                state = RigidTransform(
                    node.state.rotation, node.state.translation + np.array([0.0, 0.0, dz])
                )
                node = replace(node, state=state)
                log["drop_dz"] = float(dz)
    return node, log


def _column_clearance(child: TriMesh, parent: TriMesh, cell: float = 4e-3) -> float | None:
    """Vertical clearance between the child's underside and the parent's top,
    from per-cell vertex extremes; negative means embedded, None means the
    footprints do not overlap."""
    # vertices plus triangle centroids: coarse meshes can have cells covered
    # by a face but holding no vertex
    cv = np.concatenate([child.vertices, child.triangles().mean(axis=1)])
    pv = np.concatenate([parent.vertices, parent.triangles().mean(axis=1)])
    lo = np.maximum(cv[:, :2].min(axis=0), pv[:, :2].min(axis=0)) - cell
    hi = np.minimum(cv[:, :2].max(axis=0), pv[:, :2].max(axis=0)) + cell
    if np.any(hi <= lo):
        return None
    shape = np.ceil((hi - lo) / cell).astype(int) + 1

    def grid(verts, reduce_max):
        sel = np.all((verts[:, :2] >= lo) & (verts[:, :2] <= hi), axis=1)
        v = verts[sel]
        if len(v) == 0:
            return None
        idx = np.floor((v[:, :2] - lo) / cell).astype(int)
        out = np.full(shape, -np.inf if reduce_max else np.inf)
        if reduce_max:
            np.maximum.at(out, (idx[:, 0], idx[:, 1]), v[:, 2])
        else:
            np.minimum.at(out, (idx[:, 0], idx[:, 1]), v[:, 2])
        return out

    p_top = grid(pv, True)
    c_bot = grid(cv, False)
    if p_top is None or c_bot is None:
        return None
    shared = np.isfinite(p_top) & np.isfinite(c_bot)
    if not shared.any():
        return None
    return float((c_bot[shared] - p_top[shared]).min())


def _drop_distance(node: SceneNode, parent_mesh: TriMesh) -> float:
    """Signed z-translation bringing the node's mesh to [0, 1 mm] above the
    parent: a column-clearance estimate refined by exact intersection checks."""
    child = node.posed_mesh()
    clearance = _column_clearance(child, parent_mesh)
    if clearance is None:
        return 0.0
    dz = -(clearance - 0.5 * CONTACT_TOL)
    if abs(dz) < 0.5 * CONTACT_TOL:
        dz = 0.0

    def moved(d):
        return transform_mesh(child, RigidTransform.from_translation([0.0, 0.0, d]))

    # exact refinement: rise out of any residual intersection, then close an
    # excessive gap once
    for _ in range(50):
        if not mesh_intersects(moved(dz), parent_mesh):
            break
        dz += 0.5 * CONTACT_TOL
    else:
        # the clearance estimate was unreliable (sparse height-map overlap);
        # climb out by doubling, then bisect back to contact
        lo_dz, hi_dz, step = dz, dz, 0.05
        while mesh_intersects(moved(hi_dz), parent_mesh):
            if hi_dz > lo_dz + 2.0:
                raise UnresolvedPenetrationError(node.id, -1)
            hi_dz += step
            step *= 2.0
        while hi_dz - lo_dz > 0.5 * CONTACT_TOL:
            mid = 0.5 * (lo_dz + hi_dz)
            if mesh_intersects(moved(mid), parent_mesh):
                lo_dz = mid
            else:
                hi_dz = mid
        dz = hi_dz
    sep = min_separation(moved(dz), parent_mesh)
    if sep > CONTACT_TOL:
        probe = dz - (sep - 0.5 * CONTACT_TOL)
        if not mesh_intersects(moved(probe), parent_mesh):
            dz = probe
    return dz


# ---------------------------------------------------------------------------
# BFS candidate selection


def _bfs_order(edges: list[Edge], root: int) -> list[int]:
    children: dict[int, list[int]] = {}
    for e in edges:
        if e.kind == RelationKind.SUPPORT:
            children.setdefault(e.b, []).append(e.a)
    order = []
    frontier = [root]
    while frontier:
        nxt = []
        for i in frontier:
            for c in sorted(children.get(i, [])):
                order.append(c)
                nxt.append(c)
        frontier = nxt
    return order


def _node_from_candidate(c: Candidate, defaults: PhysicsParams | None = None) -> SceneNode:
    vol = max(mesh_volume(c.mesh), 1e-6)
    phys = defaults or PhysicsParams(vol * DEFAULT_DENSITY, 0.6, 0.05, 0.0)
    return SceneNode(c.instance_id, c.sdf, c.mesh, RigidTransform.identity(), phys)


def tree_search(
    root_node: SceneNode,
    edges: list[Edge],
    candidates: dict,
    cfg: RunConfig | None = None,
    log_path=None,
) -> tuple[SceneGraph, list[dict]]:
    """Greedy BFS: finalize, per node, the adjusted candidate minimizing
    e_stable + e_touch + lambda_pene * (SDF hinge + intersecting pairs) on the
    installed subtree. Ties go to the lower candidate index.
    """
    cfg = cfg or RunConfig()
    order = _bfs_order(edges, root_node.id)
    for i in order:
        if i not in candidates or not candidates[i]:
            from .complete import NoCandidatesError

            raise NoCandidatesError(i, "empty candidate list at search time")

    graph = SceneGraph({root_node.id: root_node}, (), root_node.id)
    parent_of = {
        e.a: e.b for e in edges if e.kind == RelationKind.SUPPORT
    }
    log = []
    for i in order:
        installed_edges = [
            e
            for e in edges
            if e.kind == RelationKind.SUPPORT
            and (e.a in graph.nodes or e.a == i)
            and (e.b in graph.nodes or e.b == i)
        ]
        best = None
        blocked: UnresolvedPenetrationError | None = None
        for k, cand in enumerate(candidates[i]):
            node = _node_from_candidate(cand)
            partial = SceneGraph(
                {**graph.nodes, i: node}, tuple(installed_edges), root_node.id
            )
            try:
                adjusted, adj_log = adjust(
                    node, graph, parent_of.get(i, root_node.id), cfg
                )
            except UnresolvedPenetrationError as err:
                # candidate cannot be made penetration-free against the
                # installed subtree: infeasible, not fatal, unless every
                # candidate of the node is
                blocked = err
                continue
            partial = partial.with_node(adjusted)
            es = e_stable(
                partial,
                duration=cfg.search_sim_duration,
                dt=cfg.sim_dt,
                contact_points=cfg.contact_points,
                stiffness=cfg.contact_stiffness,
            )
            et = e_touch(partial)
            ep = e_pene_sdf(partial) + e_pene_mesh(partial)
            total = es + et + cfg.lambda_pene * ep
            rec = {
                "node": i,
                "candidate": k,
                "provenance": cand.provenance,
                "e_stable": es,
                "e_touch": et,
                "e_pene": ep,
                "e_total": total,
                "chosen": False,
                "adjust": adj_log,
            }
            log.append(rec)
            if best is None or total < best[0]:
                best = (total, k, adjusted, rec)
        if best is None:
            raise blocked
        _, _, chosen_node, chosen_rec = best
        chosen_rec["chosen"] = True
        graph = SceneGraph(
            {**graph.nodes, i: chosen_node},
            tuple(
                e
                for e in edges
                if e.a in {*graph.nodes, i} and e.b in {*graph.nodes, i}
            ),
            root_node.id,
        )
    problems = validate(graph)
    if problems:
        raise RuntimeError("search produced an invalid graph: " + "; ".join(problems))
    if log_path is not None:
        save_search_log(log, log_path)
    return graph, log


def save_search_log(log: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_search_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
