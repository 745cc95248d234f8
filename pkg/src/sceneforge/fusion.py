"""Per-instance truncated signed-distance fusion from masked depth maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grids import SdfGrid
from .sensors import Observation


@dataclass(frozen=True)
class FusedInstance:
    id: int
    sdf: SdfGrid  # carries fusion weights; weight-0 voxels hold +truncation
    observed_fraction: float  # in [0, 1]
    known_free: np.ndarray | None = None  # voxels observed to be empty (carving)


class EmptyInstanceError(ValueError):
    def __init__(self, instance_id: int):
        super().__init__(f"instance {instance_id} absent from every observation mask")
        self.instance_id = instance_id


def instance_bounds(observations: list[Observation], instance_id: int, pad: float = 0.10):
    """10%-padded AABB of the instance's back-projected depth points."""
    points = []
    for obs in observations:
        sel = (obs.mask == instance_id) & (obs.depth > 0)
        if not sel.any():
            continue
        origin, dirs = obs.camera.pixel_rays()
        flat = sel.reshape(-1)
        points.append(origin + obs.depth.reshape(-1)[flat, None] * dirs[flat])
    if not points:
        raise EmptyInstanceError(instance_id)
    pts = np.concatenate(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = np.maximum(hi - lo, 1e-3)
    return lo - pad * extent, hi + pad * extent


def fuse_instance(
    observations: list[Observation],
    instance_id: int,
    resolution: int = 64,
    truncation_voxels: float = 4.0,
) -> FusedInstance:
    """Projective TSDF integration restricted to the instance's mask pixels.

    Surface updates are weighted by incidence angle so grazing rays (whose
    along-ray distance overestimates the true distance) contribute little.
    Pixels of other instances or of free space carve known-empty voxels in
    front of their observed depth; carving is recorded separately and never
    pollutes the signed-distance average. Voxels without surface evidence
    stay at +truncation with weight 0. Order-invariant (weighted average).
    """
    lo, hi = instance_bounds(observations, instance_id)
    extent = hi - lo
    spacing = float(extent.max() / (resolution - 1))
    dims = np.minimum(np.ceil(extent / spacing).astype(int) + 1, resolution)
    dims = np.maximum(dims, 2)
    trunc = truncation_voxels * spacing

    nx, ny, nz = dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    centers = lo + spacing * np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)

    acc = np.zeros(len(centers), dtype=np.float64)
    wsum = np.zeros(len(centers), dtype=np.float64)
    free = np.zeros(len(centers), dtype=bool)

    for obs in observations:
        uv, dist = obs.camera.project(centers)
        u = np.floor(uv[:, 0]).astype(np.int64)
        v = np.floor(uv[:, 1]).astype(np.int64)
        in_img = (dist > 0) & (u >= 0) & (u < obs.camera.width) & (v >= 0) & (v < obs.camera.height)
        if not in_img.any():
            continue
        ui, vi = u[in_img], v[in_img]
        d_obs = obs.depth[vi, ui].astype(np.float64)
        m_obs = obs.mask[vi, ui]
        d_vox = dist[in_img]
        sel = np.nonzero(in_img)[0]

        sdf = d_obs - d_vox  # positive in front of the surface, along the ray
        own = (m_obs == instance_id) & (d_obs > 0)
        if obs.normal is not None:
            _, dirs = obs.camera.pixel_rays()
            ray = dirs.reshape(obs.camera.height, obs.camera.width, 3)[vi, ui]
            cos = np.abs(np.einsum("ij,ij->i", ray, obs.normal[vi, ui].astype(np.float64)))
            cos = np.maximum(cos, 1e-3)
        else:
            cos = np.ones(len(d_vox))
        # first-order projective correction: along-ray distance overestimates
        # the true distance by 1/cos(incidence)
        sdf_corr = sdf * cos
        surface = own & (sdf > -trunc) & (sdf_corr > -trunc)
        if surface.any():
            upd = np.minimum(sdf_corr, trunc)
            acc[sel[surface]] += (cos * upd)[surface]
            wsum[sel[surface]] += cos[surface]

        carve = ~own & ((d_obs <= 0) | (d_vox < d_obs - trunc))
        free[sel[carve]] = True

    # voxels backed only by a handful of grazing rays carry no reliable
    # distance; demote them to unobserved
    wsum[wsum < 0.25] = 0.0
    values = np.full(len(centers), trunc, dtype=np.float64)
    observed = wsum > 0
    values[observed] = acc[observed] / wsum[observed]
    values = np.clip(values, -trunc, trunc)
    free &= ~observed  # surface evidence wins over carving

    # magnitude refinement: the averaged projective field is biased near
    # grazing incidence; snap magnitudes to the distance to the merged
    # back-projected surface points, keeping the averaged sign
    cloud = []
    for obs in observations:
        selpix = (obs.mask == instance_id) & (obs.depth > 0)
        if selpix.any():
            origin, dirs = obs.camera.pixel_rays()
            flat = selpix.reshape(-1)
            cloud.append(origin + obs.depth.reshape(-1)[flat, None] * dirs[flat])
    pts_cloud = np.concatenate(cloud)
    from scipy.spatial import cKDTree

    tree = cKDTree(pts_cloud)
    d_surf, _ = tree.query(centers[observed])
    avg = values[observed]
    sign = np.where(avg < 0, -1.0, 1.0)
    # d_surf bounds the true magnitude from above (visible surface is a
    # subset of the full surface); on the inside the projective average is
    # an upper bound too, so take the tighter of the two
    mag = np.where(avg < 0, np.minimum(d_surf, np.abs(avg)), d_surf)
    values[observed] = sign * np.minimum(mag, trunc)

    grid = SdfGrid(
        lo,
        spacing,
        values.reshape(nx, ny, nz).astype(np.float32),
        trunc,
        wsum.reshape(nx, ny, nz).astype(np.float32),
    )
    return FusedInstance(instance_id, grid, _observed_fraction(grid, free), free.reshape(nx, ny, nz))


def _observed_fraction(grid: SdfGrid, free: np.ndarray) -> float:
    """Fraction of the potentially-inside region's boundary shell with weight > 0.

    The potentially-inside region is everything not observed to be empty.
    An instance seen from all sides has a fully observed shell; occluded
    undersides lower the ratio.
    """
    free3 = free.reshape(grid.dims)
    inside = (grid.values < 0) | ((grid.weights == 0) & ~free3)
    if not inside.any():
        return 0.0
    shell = inside & ~ndimage.binary_erosion(inside)
    if not shell.any():
        return 0.0
    return float((grid.weights[shell] > 0).mean())
