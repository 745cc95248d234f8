"""Dense truncated signed-distance grids and analytic SDF primitives."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"SDFGRID1\x00\x00\x00\x00\x00\x00\x00\x00"  # 16-byte container magic


@dataclass(frozen=True)
class SdfGrid:
    """Uniform voxel grid of truncated signed distances, negative inside.

    Values are in meters and clamped to +-truncation. Unobserved voxels
    (weight 0, when weights are tracked) hold +truncation: unknown space
    is treated as empty.
    """

    origin: np.ndarray  # world position of voxel (0,0,0) center
    spacing: float
    values: np.ndarray  # shape (nx, ny, nz), x-fastest on disk
    truncation: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError(f"grid dims must be 3D with each >= 2, got {v.shape}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "values", v)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float32)
            if w.shape != v.shape:
                raise ValueError("weights shape mismatch")
            object.__setattr__(self, "weights", w)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel center, shape dims + (3,)."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1)
        return self.origin + self.spacing * idx


def sample(grid: SdfGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear SDF lookup; points outside the grid return +truncation.

    Accepts a single 3-vector or an (N, 3) array.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    u = (pts - grid.origin) / grid.spacing
    nx, ny, nz = grid.dims
    inside = np.all((u >= 0) & (u <= np.array([nx - 1, ny - 1, nz - 1])), axis=1)
    out = np.full(len(pts), grid.truncation, dtype=np.float64)
    if np.any(inside):
        ui = u[inside]
        i0 = np.minimum(ui.astype(np.int64), np.array([nx - 2, ny - 2, nz - 2]))
        f = ui - i0
        v = grid.values
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c = (
            v[x0, y0, z0] * (1 - fx) * (1 - fy) * (1 - fz)
            + v[x0 + 1, y0, z0] * fx * (1 - fy) * (1 - fz)
            + v[x0, y0 + 1, z0] * (1 - fx) * fy * (1 - fz)
            + v[x0, y0, z0 + 1] * (1 - fx) * (1 - fy) * fz
            + v[x0 + 1, y0 + 1, z0] * fx * fy * (1 - fz)
            + v[x0 + 1, y0, z0 + 1] * fx * (1 - fy) * fz
            + v[x0, y0 + 1, z0 + 1] * (1 - fx) * fy * fz
            + v[x0 + 1, y0 + 1, z0 + 1] * fx * fy * fz
        )
        out[inside] = c
    if np.asarray(points).ndim == 1:
        return out[0]
    return out


def gradient(grid: SdfGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central finite-difference gradient with step = spacing.

    Points within one voxel of the boundary fall back to a one-sided
    difference; the second return value flags those points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    h = grid.spacing
    lo = grid.origin + h
    hi = grid.max_corner - h
    clamped = np.any((pts < lo) | (pts > hi), axis=1)
    pc = np.clip(pts, lo, hi)
    g = np.empty_like(pc)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        g[:, axis] = (sample(grid, pc + step) - sample(grid, pc - step)) / (2 * h)
    if np.asarray(points).ndim == 1:
        return g[0], clamped[0]
    return g, clamped


# ---------------------------------------------------------------------------
# Analytic primitives


@dataclass(frozen=True)
class AnalyticSdf:
    """Exact signed distance to a primitive, or the union of children."""

    kind: str  # sphere | box | cylinder | plane | union
    params: dict = field(default_factory=dict)
    children: tuple = ()

    _KINDS = ("sphere", "box", "cylinder", "plane", "union")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown analytic kind {self.kind!r}")
        for key in ("radius", "half_extents", "height"):
            val = self.params.get(key)
            if val is not None and np.any(np.asarray(val, dtype=float) <= 0):
                raise ValueError(f"{key} must be strictly positive")

    @staticmethod
    def sphere(center, radius: float) -> "AnalyticSdf":
        return AnalyticSdf("sphere", {"center": np.asarray(center, dtype=float), "radius": float(radius)})

    @staticmethod
    def box(center, half_extents) -> "AnalyticSdf":
        return AnalyticSdf(
            "box",
            {"center": np.asarray(center, dtype=float), "half_extents": np.asarray(half_extents, dtype=float)},
        )

    @staticmethod
    def cylinder(center, radius: float, height: float) -> "AnalyticSdf":
        """Vertical (z-axis) cylinder; center is the mid-height point."""
        return AnalyticSdf(
            "cylinder",
            {"center": np.asarray(center, dtype=float), "radius": float(radius), "height": float(height)},
        )

    @staticmethod
    def plane(normal, offset: float) -> "AnalyticSdf":
        """Half-space: sdf = dot(normal, p) - offset, negative below."""
        n = np.asarray(normal, dtype=float)
        return AnalyticSdf("plane", {"normal": n / np.linalg.norm(n), "offset": float(offset)})

    @staticmethod
    def union(*children: "AnalyticSdf") -> "AnalyticSdf":
        return AnalyticSdf("union", {}, tuple(children))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = self._evaluate(pts)
        if np.asarray(points).ndim == 1:
            return out[0]
        return out

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "sphere":
            return np.linalg.norm(pts - self.params["center"], axis=1) - self.params["radius"]
        if self.kind == "box":
            q = np.abs(pts - self.params["center"]) - self.params["half_extents"]
            outer = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inner = np.minimum(np.max(q, axis=1), 0.0)
            return outer + inner
        if self.kind == "cylinder":
            d = pts - self.params["center"]
            dr = np.linalg.norm(d[:, :2], axis=1) - self.params["radius"]
            dz = np.abs(d[:, 2]) - 0.5 * self.params["height"]
            q = np.stack([dr, dz], axis=1)
            outer = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inner = np.minimum(np.max(q, axis=1), 0.0)
            return outer + inner
        if self.kind == "plane":
            return pts @ self.params["normal"] - self.params["offset"]
        # union: pointwise min over children
        vals = np.stack([c._evaluate(pts) for c in self.children], axis=0)
        return np.min(vals, axis=0)

    def gradient(self, points: np.ndarray, h: float = 1e-5) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        g = np.empty_like(pts)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            g[:, axis] = (self._evaluate(pts + step) - self._evaluate(pts - step)) / (2 * h)
        n = np.linalg.norm(g, axis=1, keepdims=True)
        n[n == 0] = 1.0
        g = g / n
        if np.asarray(points).ndim == 1:
            return g[0]
        return g


def rasterize(a: AnalyticSdf, origin, spacing: float, dims, truncation: float) -> SdfGrid:
    """Sample exact analytic distances at voxel centers, clamped to +-truncation."""
    origin = np.asarray(origin, dtype=float)
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 2 or spacing <= 0:
        raise ValueError("dims must be >= 2 and spacing positive")
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    pts = origin + spacing * np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
    vals = a.evaluate(pts).reshape(nx, ny, nz)
    vals = np.clip(vals, -truncation, truncation)
    return SdfGrid(origin, spacing, vals.astype(np.float32), truncation)


# ---------------------------------------------------------------------------
# Binary container


def save_grid(grid: SdfGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC[:8] + b"\x00" * 8)
        nx, ny, nz = grid.dims
        fh.write(struct.pack("<3I", nx, ny, nz))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.spacing))
        fh.write(struct.pack("<d", grid.truncation))
        # x-fastest: transpose so x varies quickest in C order
        fh.write(np.ascontiguousarray(grid.values.transpose(2, 1, 0), dtype="<f4").tobytes())
        if grid.weights is not None:
            fh.write(b"\x01")
            fh.write(np.ascontiguousarray(grid.weights.transpose(2, 1, 0), dtype="<f4").tobytes())
        else:
            fh.write(b"\x00")


def load_grid(path) -> SdfGrid:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic[:8] != _MAGIC[:8]:
            raise ValueError(f"not an SDF grid file: {path}")
        nx, ny, nz = struct.unpack("<3I", fh.read(12))
        origin = np.array(struct.unpack("<3d", fh.read(24)), dtype=float)
        spacing = struct.unpack("<d", fh.read(8))[0]
        truncation = struct.unpack("<d", fh.read(8))[0]
        count = nx * ny * nz
        vals = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(nz, ny, nx).transpose(2, 1, 0)
        flag = fh.read(1)
        weights = None
        if flag == b"\x01":
            weights = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(nz, ny, nx).transpose(2, 1, 0)
        return SdfGrid(origin, spacing, vals.copy(), truncation, None if weights is None else weights.copy())
