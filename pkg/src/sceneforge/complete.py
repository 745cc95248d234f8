"""Complete-shape candidate generation for partially observed instances.

Fusion leaves the unobserved side of each object open; the samplers here fill
it in by different rules (morphological closure, mirror symmetry, convex hull,
downward extrusion, seeded perturbation) while leaving observed voxels
untouched. Candidates are scored against the real observations plus a ring of
virtual views checked against the carved free space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .fusion import FusedInstance
from .grids import SdfGrid, sample, save_grid
from .meshes import TriMesh, boundary_edge_count, marching_cubes, save_obj
from .render import MASK_EPSILON, render_graph, ring_trajectory
from .sensors import Observation
from .transforms import RigidTransform

KINDS = ("closure", "mirror", "hull", "extrude", "perturb")


class NoCandidatesError(ValueError):
    def __init__(self, instance_id: int, reason: str):
        super().__init__(f"no candidates for instance {instance_id}: {reason}")
        self.instance_id = instance_id


@dataclass(frozen=True)
class SamplerSpec:
    kinds: tuple = KINDS
    samples_per_instance: int = 3
    support_z: float | None = None  # world height extrusion fills down to
    noise_voxels: float = 2.0  # perturb amplitude, in voxel units

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("at least one sampler kind must be enabled")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown sampler kinds: {sorted(unknown)}")


@dataclass(frozen=True)
class Candidate:
    instance_id: int
    sdf: SdfGrid
    mesh: TriMesh
    provenance: str
    seed: int
    score: dict | None = None

    def save(self, directory, index: int) -> None:
        base = Path(directory)
        base.mkdir(parents=True, exist_ok=True)
        save_obj(self.mesh, base / f"{index}.obj")
        save_grid(self.sdf, base / f"{index}.sdfgrid")
        doc = {"instance": self.instance_id, "provenance": self.provenance, "seed": self.seed}
        if self.score is not None:
            doc["score"] = self.score
        (base / f"{index}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Inside-region estimation and mask -> SDF conversion


def _region_masks(fused: FusedInstance):
    grid = fused.sdf
    observed = grid.weights > 0
    free = fused.known_free if fused.known_free is not None else np.zeros(grid.dims, bool)
    # potentially inside: observed-negative crust plus occluded voxels nothing
    # ever saw through
    inside = (observed & (grid.values < 0)) | (~observed & ~free)
    return observed, free, inside


def _mask_to_sdf(inside: np.ndarray, spacing: float, truncation: float) -> np.ndarray:
    if not inside.any():
        return np.full(inside.shape, truncation, dtype=np.float64)
    d_out = ndimage.distance_transform_edt(~inside)
    d_in = ndimage.distance_transform_edt(inside)
    sdf = spacing * (d_out - d_in + np.where(inside, 0.5, -0.5))
    return np.clip(sdf, -truncation, truncation)


def _seal_boundary(values: np.ndarray, truncation: float) -> np.ndarray:
    """Positive boundary shell so the extracted surface is closed."""
    out = values.copy()
    eps = 0.5 * truncation
    out[0, :, :] = np.maximum(out[0, :, :], eps)
    out[-1, :, :] = np.maximum(out[-1, :, :], eps)
    out[:, 0, :] = np.maximum(out[:, 0, :], eps)
    out[:, -1, :] = np.maximum(out[:, -1, :], eps)
    out[:, :, 0] = np.maximum(out[:, :, 0], eps)
    out[:, :, -1] = np.maximum(out[:, :, -1], eps)
    return out


def _surface_voxels(fused: FusedInstance) -> np.ndarray:
    grid = fused.sdf
    sel = (grid.weights > 0) & (np.abs(grid.values) <= grid.spacing)
    return grid.voxel_centers()[sel]


# ---------------------------------------------------------------------------
# Per-kind fills (operate on unobserved voxels only)


def _fill_closure(fused: FusedInstance, inside: np.ndarray) -> np.ndarray:
    closed = ndimage.binary_closing(inside, structure=np.ones((3, 3, 3)), iterations=2)
    return closed | inside


def _mirror_plane(fused: FusedInstance, inside: np.ndarray):
    """Vertical symmetry plane: horizontal normal of least surface spread,
    offset through the inside-region centroid."""
    pts = _surface_voxels(fused)
    if len(pts) < 8:
        return None
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    cov = xy.T @ xy / len(xy)
    evals, evecs = np.linalg.eigh(cov)
    normal = np.array([evecs[0, 0], evecs[1, 0], 0.0])
    normal /= np.linalg.norm(normal)
    centers = fused.sdf.voxel_centers()[inside]
    offset = float(np.mean(centers @ normal))
    return normal, offset


def _fill_mirror(fused: FusedInstance, inside: np.ndarray, base_sdf: np.ndarray) -> np.ndarray:
    """Reflect observed signed distances into unobserved voxels."""
    grid = fused.sdf
    plane = _mirror_plane(fused, inside)
    values = base_sdf.copy()
    if plane is None:
        return values
    normal, offset = plane
    observed = grid.weights > 0
    unobs = ~observed
    centers = grid.voxel_centers()
    pts = centers[unobs]
    mirrored = pts - 2.0 * ((pts @ normal) - offset)[:, None] * normal[None, :]
    # only voxels whose mirror image carries real evidence are replaced
    idx = np.round((mirrored - grid.origin) / grid.spacing).astype(int)
    ok = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=1)
    src = tuple(idx[ok].T)
    has_evidence = observed[src]
    vals_unobs = values[unobs]
    mirrored_vals = sample(grid, mirrored[ok][has_evidence])
    sel = np.zeros(len(pts), dtype=bool)
    sel[np.nonzero(ok)[0][has_evidence]] = True
    vals_unobs[sel] = mirrored_vals
    values[unobs] = vals_unobs
    return values


def _fill_hull(fused: FusedInstance, inside: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull, Delaunay, cKDTree

    grid = fused.sdf
    pts = _surface_voxels(fused)
    if len(pts) < 8:
        return inside
    hull = ConvexHull(pts)
    tri = Delaunay(pts[hull.vertices])
    centers = grid.voxel_centers().reshape(-1, 3)
    inside_hull = tri.find_simplex(centers) >= 0
    return inside | inside_hull.reshape(grid.dims)


def _fill_extrude(fused: FusedInstance, inside: np.ndarray, support_z: float | None) -> np.ndarray:
    grid = fused.sdf
    nz = grid.dims[2]
    z_centers = grid.origin[2] + grid.spacing * np.arange(nz)
    if support_z is None:
        support_z = float(z_centers[0])
    out = inside.copy()
    any_col = inside.any(axis=2)
    lowest = np.where(any_col, inside.argmax(axis=2), nz)
    fill_to = np.searchsorted(z_centers, support_z)
    for ix, iy in zip(*np.nonzero(any_col)):
        lo = min(int(lowest[ix, iy]), max(int(fill_to), 0))
        out[ix, iy, lo : int(lowest[ix, iy])] = True
    return out


def _perturb_noise(shape, spacing: float, amplitude_voxels: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape)
    noise = ndimage.gaussian_filter(noise, sigma=2.0)
    peak = np.abs(noise).max()
    if peak < 1e-12:
        return np.zeros(shape)
    return noise / peak * amplitude_voxels * spacing


# ---------------------------------------------------------------------------


def _finalize(fused: FusedInstance, values: np.ndarray, provenance: str, seed: int) -> Candidate:
    grid = fused.sdf
    observed = grid.weights > 0
    out = values.copy()
    out[observed] = grid.values[observed]  # observed space is authoritative
    out = _seal_boundary(out, grid.truncation)
    out = np.clip(out, -grid.truncation, grid.truncation).astype(np.float32)
    cand_grid = SdfGrid(grid.origin, grid.spacing, out, grid.truncation)
    mesh = marching_cubes(cand_grid)
    return Candidate(fused.id, cand_grid, mesh, provenance, seed)


def propose(
    fused: FusedInstance,
    spec: SamplerSpec | None = None,
    context=None,
) -> list[Candidate]:
    """Exactly samples_per_instance candidates, kinds assigned round-robin.

    `context` may carry the support surface height (a float) used by the
    extrude rule; a full partial graph is reduced to that height upstream.
    """
    spec = spec or SamplerSpec()
    grid = fused.sdf
    observed, free, inside = _region_masks(fused)
    if not inside.any():
        raise NoCandidatesError(fused.id, "fused volume has no interior voxels")
    if fused.observed_fraction <= 0:
        raise NoCandidatesError(fused.id, "no observed surface")

    support_z = spec.support_z
    if support_z is None and isinstance(context, (int, float)):
        support_z = float(context)

    closure_mask = _fill_closure(fused, inside)
    closure_sdf = _mask_to_sdf(closure_mask, grid.spacing, grid.truncation)

    out = []
    for k in range(spec.samples_per_instance):
        kind = spec.kinds[k % len(spec.kinds)]
        seed = 1000 * fused.id + k
        if kind == "closure":
            values = closure_sdf
        elif kind == "mirror":
            values = _fill_mirror(fused, inside, closure_sdf)
        elif kind == "hull":
            mask = _fill_hull(fused, closure_mask)
            values = _mask_to_sdf(mask, grid.spacing, grid.truncation)
        elif kind == "extrude":
            mask = _fill_extrude(fused, closure_mask, support_z)
            values = _mask_to_sdf(mask, grid.spacing, grid.truncation)
        else:  # perturb
            noise = _perturb_noise(grid.dims, grid.spacing, spec.noise_voxels, seed)
            values = closure_sdf + np.where(grid.weights > 0, 0.0, noise)
        out.append(_finalize(fused, values, kind, seed))
    return out


def _nearest_weight(grid: SdfGrid, points: np.ndarray) -> np.ndarray:
    """Fusion weight at the voxel nearest each point; 0 outside the grid."""
    if grid.weights is None:
        return np.zeros(len(points))
    idx = np.rint((points - grid.origin) / grid.spacing).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=1)
    out = np.zeros(len(points))
    out[ok] = grid.weights[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
    return out


def carve_observed(
    c: Candidate, fused: FusedInstance, siblings: list[FusedInstance]
) -> Candidate:
    """Forbid the candidate's completion from claiming space another instance
    was observed to occupy.

    A sampler only sees its own instance's fusion, so a completion can balloon
    into a neighbor's interior: a mirrored box swallows the object stacked on
    it, an occluded top domes and the object above rocks off. Wherever a
    sibling holds weighted negative evidence inside the candidate's
    *unobserved* region, the candidate's SDF is raised to the sibling's
    boundary distance and the mesh re-extracted. The candidate's own observed
    voxels are never touched: near contacts the sibling's projective band
    leaks past its true surface (grazing rays integrate behind the occluding
    edge), and honoring that leaked evidence inside observed space gouges
    moats into contact faces that objects then rock on.
    """
    grid = c.sdf
    unobserved = (fused.sdf.weights is None) or (
        fused.sdf.weights.reshape(-1) <= 0.0
    )
    pts = grid.voxel_centers().reshape(-1, 3)
    values = grid.values.reshape(-1).astype(np.float64)
    changed = False
    for other in siblings:
        if other.id == c.instance_id:
            continue
        v = sample(other.sdf, pts)
        occupied = (v < 0.0) & (_nearest_weight(other.sdf, pts) > 0.0) & unobserved
        if not occupied.any():
            continue
        bound = -v[occupied]
        needs = values[occupied] < bound
        if needs.any():
            upd = values[occupied]
            upd[needs] = bound[needs]
            values[occupied] = upd
            changed = True
    if not changed:
        return c
    pruned = SdfGrid(
        grid.origin,
        grid.spacing,
        np.clip(values, -grid.truncation, grid.truncation)
        .reshape(grid.dims)
        .astype(np.float32),
        grid.truncation,
    )
    return replace(c, sdf=pruned, mesh=marching_cubes(pruned))


def _rebuild(c: Candidate, values: np.ndarray) -> Candidate:
    grid = c.sdf
    pruned = SdfGrid(
        grid.origin,
        grid.spacing,
        np.clip(values, -grid.truncation, grid.truncation).astype(np.float32),
        grid.truncation,
        grid.weights,
    )
    return replace(c, sdf=pruned, mesh=marching_cubes(pruned))


def clip_below(c: Candidate, z: float) -> Candidate:
    """Remove candidate volume below the horizontal plane at height z, leaving
    a flat resting face on the plane.

    A supported object cannot extend below the surface it rests on, but its
    resting face is occluded and both its own grazing-ray leak and the
    samplers' downward fill routinely dip past the support plane. The dip
    turns into a spike contact once the drop step lifts the object clear.
    """
    grid = c.sdf
    vz = grid.origin[2] + grid.spacing * np.arange(grid.dims[2])
    plane = np.broadcast_to((z - vz)[None, None, :], grid.values.shape)
    below = np.broadcast_to((vz < z)[None, None, :], grid.values.shape)
    values = np.where(below, np.maximum(grid.values, plane), grid.values)
    # interior voxels just above the new face cannot be farther from a surface
    # than the face itself; without this the old completion values under the
    # object leave tilted gradients, and contact normals derived from them
    # push the object sideways
    shell = (~below) & (plane > -3.0 * grid.spacing) & (values < 0.0)
    values = np.where(shell, np.maximum(values, plane), values)
    # where the object's column holds material just above the face, the face
    # itself must be solid down to the plane, or the object rests on the
    # ragged edges of a hollow and tips
    band_above = (vz >= z) & (vz < z + 3.0 * grid.spacing)
    if band_above.any():
        k_above = min(
            int(len(vz) - np.argmax(band_above[::-1])), grid.dims[2] - 1
        )
        col = np.broadcast_to(
            (values[:, :, k_above] < 0.0)[:, :, None], grid.values.shape
        )
        fill = (
            col
            & np.broadcast_to(band_above[None, None, :], grid.values.shape)
            & (values >= 0.0)
        )
        values = np.where(fill, plane, values)
        # positive voxels just below the face are +truncation when unobserved,
        # which drags the interpolated crossing off the plane; pin them to the
        # exact plane distance (lowering a positive value removes nothing)
        exact = (
            col
            & np.broadcast_to(
                ((vz < z) & (vz > z - 3.0 * grid.spacing))[None, None, :],
                grid.values.shape,
            )
            & (values > plane)
        )
        values = np.where(exact, plane, values)
    if np.array_equal(values, grid.values):
        return c
    return _rebuild(c, values)


def plane_top(
    c: Candidate, z: float, lo_xy, hi_xy, band: float = 0.015
) -> Candidate:
    """Plane off completion material that pokes above the contact plane z
    inside a supported child's xy footprint.

    The region under a resting object is occluded, so completions dome there
    and the object above rocks on the dome's apex. Only a thin band above the
    plane is touched: structure legitimately towering over the footprint (a
    shelf's upper board) is farther away than any plausible dome.
    """
    grid = c.sdf
    vx = grid.origin[0] + grid.spacing * np.arange(grid.dims[0])
    vy = grid.origin[1] + grid.spacing * np.arange(grid.dims[1])
    vz = grid.origin[2] + grid.spacing * np.arange(grid.dims[2])
    foot = (
        ((vx >= lo_xy[0]) & (vx <= hi_xy[0]))[:, None, None]
        & ((vy >= lo_xy[1]) & (vy <= hi_xy[1]))[None, :, None]
    )
    height = np.broadcast_to((vz - z)[None, None, :], grid.values.shape)
    above = np.broadcast_to(((vz > z) & (vz < z + band))[None, None, :], grid.values.shape)
    values = np.where(foot & above, np.maximum(grid.values, height), grid.values)
    # the support face must also reach the plane from below: grazing-ray leak
    # gouges shallow pits into it, the child bridges the pit on one edge and
    # tips. Fill only columns that hold material beneath the band, so an edge
    # the child overhangs never grows a ledge
    band_below = (vz <= z) & (vz > z - 3.0 * grid.spacing)
    if band_below.any():
        col = np.broadcast_to(
            (values[:, :, vz <= z] < 0.0).any(axis=2)[:, :, None],
            grid.values.shape,
        )
        below = foot & col & np.broadcast_to(
            band_below[None, None, :], grid.values.shape
        )
        # exact planar field on both sides of the face keeps the gradient,
        # and with it the contact normal, vertical
        values = np.where(below, np.where(values < 0.0, np.maximum(values, height), height), values)
        # unobserved voxels just above the face hold +truncation, which drags
        # the interpolated crossing below the plane; pin them to the exact
        # plane distance (lowering a positive value removes nothing)
        near = (
            foot
            & col
            & np.broadcast_to(
                ((vz > z) & (vz < z + 3.0 * grid.spacing))[None, None, :],
                grid.values.shape,
            )
        )
        values = np.where(near & (values > height), height, values)
    if np.array_equal(values, grid.values):
        return c
    return _rebuild(c, values)


def largest_component(c: Candidate) -> Candidate:
    """Keep only the candidate's largest connected occupancy component.

    An instance is one rigid body; disconnected blobs are completion debris
    (the top of a hallucinated pillar outliving a planing pass, a mirror copy
    landing clear of the object) and would float in mid-air.
    """
    occ = c.sdf.values < 0.0
    labels, n = ndimage.label(occ)
    if n <= 1:
        return c
    sizes = np.bincount(labels.reshape(-1))[1:]
    drop = occ & (labels != (1 + int(np.argmax(sizes))))
    values = np.where(drop, np.maximum(c.sdf.values, c.sdf.spacing), c.sdf.values)
    return _rebuild(c, values)


def observed_agreement(c: Candidate, fused: FusedInstance) -> float:
    """Max |candidate - fused| over observed voxels; the invariant bound is
    2 * spacing."""
    observed = fused.sdf.weights > 0
    if not observed.any():
        return 0.0
    return float(np.abs(c.sdf.values[observed] - fused.sdf.values[observed]).max())


def is_watertight(c: Candidate) -> bool:
    return not c.mesh.is_empty and boundary_edge_count(c.mesh) == 0


# ---------------------------------------------------------------------------
# Scoring


def virtual_ring(fused: FusedInstance, count: int = 8, image: int = 96):
    """Inward ring at 30 degrees elevation around the fused instance."""
    grid = fused.sdf
    center = 0.5 * (grid.origin + grid.max_corner)
    extent = float(np.linalg.norm(grid.max_corner - grid.origin))
    radius = 1.6 * extent
    cams = ring_trajectory(
        center,
        radius * np.cos(np.deg2rad(30.0)),
        radius * np.sin(np.deg2rad(30.0)),
        count,
        cam_template={
            "fx": 1.2 * image,
            "fy": 1.2 * image,
            "cx": image / 2,
            "cy": image / 2,
            "width": image,
            "height": image,
        },
        top_arc=False,
    )
    return cams


def score(
    c: Candidate,
    observations: list[Observation],
    virtual=None,
    cfg: RunConfig | None = None,
    fused: FusedInstance | None = None,
    state: RigidTransform | None = None,
) -> Candidate:
    """Attach observation-consistency terms; lower total is better.

    Real views contribute mask agreement plus depth/normal error inside the
    instance's mask; virtual views penalize surface protruding into space the
    observations carved empty.
    """
    if c.mesh.is_empty:
        raise ValueError("cannot score an empty candidate mesh")
    cfg = cfg or RunConfig()
    state = state or RigidTransform.identity()
    entry = [(c.instance_id, c.sdf, state)]

    mask_terms, depth_terms, normal_terms = [], [], []
    for obs in observations:
        depth, labels, normals = render_graph(entry, obs.camera)
        own = obs.mask == c.instance_id
        region = own | (labels == c.instance_id)
        if not region.any():
            continue
        match = (labels == c.instance_id) == own
        ce = np.where(match[region], -np.log1p(-MASK_EPSILON), -np.log(MASK_EPSILON))
        mask_terms.append(float(ce.mean()))
        both = own & (depth > 0) & (obs.depth > 0)
        if both.any():
            err = depth[both] - obs.depth[both]
            depth_terms.append(float(np.mean(err * err)))
            if obs.normal is not None:
                dot = np.abs(np.einsum("ij,ij->i", normals[both], obs.normal[both]))
                normal_terms.append(float(np.mean(1.0 - np.clip(dot, 0.0, 1.0))))

    silhouette = 0.0
    if fused is not None and fused.known_free is not None and fused.known_free.any():
        free_grid = SdfGrid(
            fused.sdf.origin,
            fused.sdf.spacing,
            fused.known_free.astype(np.float32),
            1.0,
        )
        cams = virtual if virtual is not None else virtual_ring(fused)
        viol, total = 0, 0
        inv = state.inverse()
        for cam in cams:
            depth, labels, _ = render_graph(entry, cam)
            hit = depth > 0
            if not hit.any():
                continue
            origin, dirs = cam.pixel_rays()
            pts = origin + depth.reshape(-1)[hit.reshape(-1), None] * dirs[hit.reshape(-1)]
            freeness = sample(free_grid, inv.apply(pts))
            viol += int((freeness > 0.5).sum())
            total += int(hit.sum())
        silhouette = viol / total if total else 0.0

    mask = float(np.mean(mask_terms)) if mask_terms else 0.0
    depth_e = float(np.mean(depth_terms)) if depth_terms else 0.0
    normal_e = float(np.mean(normal_terms)) if normal_terms else 0.0
    total = (
        cfg.lambda_mask * (mask + silhouette)
        + cfg.lambda_depth * depth_e
        + cfg.lambda_normal * normal_e
    )
    return replace(
        c,
        score={
            "mask": mask,
            "depth": depth_e,
            "normal": normal_e,
            "silhouette": silhouette,
            "total": total,
        },
    )
