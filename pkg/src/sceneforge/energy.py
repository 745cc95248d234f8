"""Geometry-compatibility energies and the aggregate per-scene energy report."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .meshes import mesh_intersects
from .physics import e_stable, e_touch
from .render import render_scene_graph
from .scene import SceneGraph
from .sensors import Observation


@dataclass(frozen=True)
class EnergyReport:
    mask: float
    depth: float
    normal: float
    pene_sdf: float
    pene_mesh: float
    touch: float
    stable: float
    weights: dict
    weighted_total: float

    def to_dict(self) -> dict:
        return {
            "mask": self.mask,
            "depth": self.depth,
            "normal": self.normal,
            "pene_sdf": self.pene_sdf,
            "pene_mesh": self.pene_mesh,
            "touch": self.touch,
            "stable": self.stable,
            "weights": dict(self.weights),
            "total": self.weighted_total,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _world_samples(g: SceneGraph, band_voxels: float = 2.0):
    """Near-surface voxel centers of every node, posed into world space.

    Concentrating the penetration hinge near surfaces is where overlaps can
    actually occur; deep interiors of the same body never fire against others
    before their surfaces do.
    """
    chunks = []
    for i in sorted(g.nodes):
        n = g.nodes[i]
        grid = n.sdf
        band = band_voxels * grid.spacing
        sel = np.abs(grid.values) <= band
        if not sel.any():
            continue
        centers = grid.voxel_centers().reshape(-1, 3)[sel.reshape(-1)]
        chunks.append(n.state.apply(centers))
    if not chunks:
        return np.zeros((0, 3))
    return np.concatenate(chunks)


def _node_sdf_at(g: SceneGraph, pts: np.ndarray) -> np.ndarray:
    """(num_nodes, num_pts) signed distances of every node at world points."""
    from .grids import sample

    vals = []
    for i in sorted(g.nodes):
        n = g.nodes[i]
        vals.append(sample(n.sdf, n.state.inverse().apply(pts)))
    return np.stack(vals, axis=0)


def e_pene_sdf(g: SceneGraph, band_voxels: float = 2.0) -> float:
    """Hinge on mutually negative signed distances over near-surface samples.

    Each sample belongs to the region of its arg-min node i; every other node
    k contributes max(0, -g_k - g_i). Zero iff no two bodies overlap at the
    sampled resolution. Normalized by sample count.
    """
    pts = _world_samples(g, band_voxels)
    if len(pts) == 0 or len(g.nodes) < 2:
        return 0.0
    vals = _node_sdf_at(g, pts)
    owner = np.argmin(vals, axis=0)
    g_own = vals[owner, np.arange(vals.shape[1])]
    hinge = np.maximum(0.0, -vals - g_own[None, :])
    hinge[owner, np.arange(vals.shape[1])] = 0.0
    return float(hinge.sum() / len(pts))


def e_pene_mesh(g: SceneGraph) -> float:
    """Number of node pairs whose posed meshes intersect."""
    ids = sorted(g.nodes)
    posed = {}
    count = 0
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            for k in (i, j):
                if k not in posed:
                    posed[k] = g.nodes[k].posed_mesh()
            if posed[i].is_empty or posed[j].is_empty:
                continue
            if mesh_intersects(posed[i], posed[j]):
                count += 1
    return float(count)


def evaluate(
    g: SceneGraph,
    observations: list[Observation],
    cfg: RunConfig | None = None,
    sim_duration: float | None = None,
) -> EnergyReport:
    if not observations:
        raise ValueError("need at least one observation")
    cfg = cfg or RunConfig()

    from .render import mask_cross_entropy, MASK_EPSILON  # noqa: F401

    mask_terms, depth_terms, normal_terms = [], [], []
    for obs in observations:
        depth, labels, normals = render_scene_graph(g, obs.camera)
        mask_terms.append(mask_cross_entropy(labels, obs.mask.astype(np.int64)))
        valid = (depth > 0) & (obs.depth > 0)
        if valid.any():
            err = depth[valid] - obs.depth[valid]
            depth_terms.append(float(np.mean(err * err)))
            if obs.normal is not None:
                dot = np.abs(
                    np.einsum("ij,ij->i", normals[valid], obs.normal[valid])
                )
                normal_terms.append(float(np.mean(1.0 - np.clip(dot, 0.0, 1.0))))

    mask = float(np.mean(mask_terms))
    depth = float(np.mean(depth_terms)) if depth_terms else 0.0
    normal = float(np.mean(normal_terms)) if normal_terms else 0.0
    pene_sdf = e_pene_sdf(g)
    pene_mesh = e_pene_mesh(g)
    touch = e_touch(g)
    stable = e_stable(g, duration=sim_duration if sim_duration is not None else cfg.sim_duration,
                      dt=cfg.sim_dt, contact_points=cfg.contact_points,
                      stiffness=cfg.contact_stiffness)

    weights = {
        "mask": cfg.lambda_mask,
        "depth": cfg.lambda_depth,
        "normal": cfg.lambda_normal,
        "pene_sdf": cfg.lambda_pene,
        "pene_mesh": cfg.lambda_pene,
        "touch": cfg.lambda_touch,
        "stable": cfg.lambda_stable,
    }
    terms = {
        "mask": mask,
        "depth": depth,
        "normal": normal,
        "pene_sdf": pene_sdf,
        "pene_mesh": pene_mesh,
        "touch": touch,
        "stable": stable,
    }
    total = sum(weights[k] * terms[k] for k in terms)
    return EnergyReport(
        mask, depth, normal, pene_sdf, pene_mesh, touch, stable, weights, total
    )
