"""Synthetic rendering: sphere tracing of analytic scenes and of SDF-grid graphs,
plus the observation-space energies computed from the rendered buffers."""

from __future__ import annotations

import numpy as np

from .grids import AnalyticSdf, SdfGrid, gradient, sample
from .scene import SceneGraph
from .sensors import EMPTY_MASK, Camera, Observation
from .transforms import RigidTransform

MAX_STEPS = 200
HIT_TOL = 1e-4
T_MAX = 50.0


def render_observation(
    gt: list[tuple[int, AnalyticSdf, RigidTransform]], cam: Camera
) -> Observation:
    """Sphere-trace the union of posed analytic SDFs; see Observation for buffers."""
    if not gt:
        raise ValueError("empty scene")
    origin, dirs = cam.pixel_rays()
    n = len(dirs)
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    inv = [(i, a, state.inverse()) for i, a, state in gt]

    def union_sdf(pts):
        vals = np.stack([a.evaluate(ti.apply(pts)) for _, a, ti in inv], axis=0)
        return vals

    for _ in range(MAX_STEPS):
        if not alive.any():
            break
        pts = origin + t[alive, None] * dirs[alive]
        d = union_sdf(pts).min(axis=0)
        t_alive = t[alive]
        hit = d < HIT_TOL
        t_alive += np.where(hit, 0.0, d)
        t[alive] = t_alive
        still = ~hit & (t_alive < T_MAX)
        alive[np.nonzero(alive)[0][~still]] = False

    pts = origin + t[:, None] * dirs
    vals = union_sdf(pts)
    best = vals.min(axis=0)
    hit = best < HIT_TOL * 10
    ids = np.array([i for i, _, _ in gt])
    labels = np.where(hit, ids[np.argmin(vals, axis=0)], EMPTY_MASK)
    depth = np.where(hit, t, 0.0)

    normals = np.zeros((n, 3), dtype=np.float32)
    if hit.any():
        winner = np.argmin(vals, axis=0)
        for k, (_, a, ti) in enumerate(inv):
            m = hit & (winner == k)
            if m.any():
                g_obj = a.gradient(ti.apply(pts[m]))
                # rotate object-frame gradient back to world
                normals[m] = ti.inverse().rotate(g_obj)
    h, w = cam.height, cam.width
    return Observation(
        cam,
        depth.reshape(h, w).astype(np.float32),
        labels.reshape(h, w).astype(np.uint16),
        normals.reshape(h, w, 3),
    )


# ---------------------------------------------------------------------------
# Graph rendering (posed SDF grids)


def _ray_box(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit ray parameters against an AABB; entry > exit means miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origin) / dirs
        t1 = (hi - origin) / dirs
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    return np.maximum(tmin, 0.0), tmax


def render_graph(
    entries: list[tuple[int, SdfGrid, RigidTransform]], cam: Camera
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Depth (ray length), id map, and world normals of posed SDF grids.

    Each grid is traced independently inside its world-space AABB; the
    nearest hit wins, matching a depth-tested per-instance render.
    """
    origin, dirs = cam.pixel_rays()
    n = len(dirs)
    depth = np.full(n, np.inf)
    labels = np.full(n, EMPTY_MASK, dtype=np.int64)
    normals = np.zeros((n, 3))

    for node_id, grid, state in entries:
        inv = state.inverse()
        corners_local = np.array(
            [
                [x, y, z]
                for x in (grid.origin[0], grid.max_corner[0])
                for y in (grid.origin[1], grid.max_corner[1])
                for z in (grid.origin[2], grid.max_corner[2])
            ]
        )
        corners = state.apply(corners_local)
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        t_in, t_out = _ray_box(origin, dirs, lo, hi)
        active = t_out > t_in
        if not active.any():
            continue
        idx = np.nonzero(active)[0]
        t = t_in[idx]
        t_stop = t_out[idx]
        alive = np.ones(len(idx), dtype=bool)
        hit_t = np.full(len(idx), np.inf)
        for _ in range(MAX_STEPS):
            if not alive.any():
                break
            sub = np.nonzero(alive)[0]
            pts = origin + t[sub, None] * dirs[idx[sub]]
            d = sample(grid, inv.apply(pts))
            hit = d < max(HIT_TOL, 0.25 * grid.spacing)
            hit_t[sub[hit]] = t[sub[hit]]
            step = np.maximum(d, 0.25 * grid.spacing)
            t[sub] += np.where(hit, 0.0, step)
            done = hit | (t[sub] > t_stop[sub])
            alive[sub[done]] = False
        got = np.isfinite(hit_t)
        better = got & (hit_t < depth[idx])
        if better.any():
            sel = idx[better]
            depth[sel] = hit_t[better]
            labels[sel] = node_id
            pts = origin + depth[sel, None] * dirs[sel]
            g, _ = gradient(grid, inv.apply(pts))
            norms = state.rotate(g)
            lens = np.linalg.norm(norms, axis=1, keepdims=True)
            lens[lens == 0] = 1.0
            normals[sel] = norms / lens

    h, w = cam.height, cam.width
    depth = np.where(np.isfinite(depth), depth, 0.0)
    return depth.reshape(h, w), labels.reshape(h, w), normals.reshape(h, w, 3)


def render_scene_graph(g: SceneGraph, cam: Camera, skip_ids=()):
    entries = [
        (i, n.sdf, n.state) for i, n in sorted(g.nodes.items()) if i not in skip_ids
    ]
    return render_graph(entries, cam)


# ---------------------------------------------------------------------------
# Observation energies

MASK_EPSILON = 1e-3


def mask_cross_entropy(rendered_labels: np.ndarray, observed_labels: np.ndarray) -> float:
    """Mean per-pixel cross-entropy of a hard one-hot softened by MASK_EPSILON."""
    match = rendered_labels == observed_labels
    ce = np.where(match, -np.log1p(-MASK_EPSILON), -np.log(MASK_EPSILON))
    return float(ce.mean())


def mask_energy(g: SceneGraph, obs: Observation) -> float:
    _, labels, _ = render_scene_graph(g, obs.camera)
    return mask_cross_entropy(labels, obs.mask.astype(np.int64))


def depth_energy(g: SceneGraph, obs: Observation) -> float:
    depth, _, _ = render_scene_graph(g, obs.camera)
    valid = (depth > 0) & (obs.depth > 0)
    if not valid.any():
        raise ValueError("no jointly valid depth pixels")
    err = depth[valid] - obs.depth[valid]
    return float(np.mean(err * err))


def normal_energy(g: SceneGraph, obs: Observation) -> float:
    if obs.normal is None:
        return 0.0
    depth, _, normals = render_scene_graph(g, obs.camera)
    valid = (depth > 0) & (obs.depth > 0)
    if not valid.any():
        return 0.0
    # sign-agnostic: 1 - |cos| per pixel
    dot = np.abs(np.einsum("ij,ij->i", normals[valid], obs.normal[valid]))
    return float(np.mean(1.0 - np.clip(dot, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# Camera trajectories


def ring_trajectory(
    center,
    radius: float,
    height: float,
    count: int,
    cam_template: dict | None = None,
    top_arc: bool = True,
) -> list[Camera]:
    """Inward-facing ring plus an overhead arc, deterministic spacing."""
    if count < 1:
        raise ValueError("view count must be >= 1")
    center = np.asarray(center, dtype=float)
    spec = {"fx": 140.0, "fy": 140.0, "cx": 80.0, "cy": 60.0, "width": 160, "height": 120}
    if cam_template:
        spec.update(cam_template)
    cams = []
    n_ring = count if not top_arc else max(1, count - count // 4)
    n_top = count - n_ring
    for k in range(n_ring):
        ang = 2 * np.pi * k / n_ring
        eye = center + np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(_look_at(eye, center, spec))
    for k in range(n_top):
        ang = 2 * np.pi * (k + 0.5) / max(n_top, 1)
        eye = center + np.array(
            [0.45 * radius * np.cos(ang), 0.45 * radius * np.sin(ang), height + 0.9 * radius]
        )
        cams.append(_look_at(eye, center, spec))
    return cams


def _look_at(eye, target, spec: dict) -> Camera:
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(fwd, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    # camera frame: x right, y down, z forward
    r_wc = np.stack([right, down, fwd], axis=1)
    m = np.eye(4)
    m[:3, :3] = r_wc
    m[:3, 3] = eye
    wfc = RigidTransform.from_matrix(m)
    return Camera(
        spec["fx"], spec["fy"], spec["cx"], spec["cy"], spec["width"], spec["height"], wfc.inverse()
    )
