"""Cameras, observations, and their on-disk formats (PFM depth, PGM masks)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .transforms import RigidTransform

EMPTY_MASK = 65535  # mask value for pixels that hit nothing


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform  # world -> camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def world_from_camera(self) -> RigidTransform:
        return self.extrinsic.inverse()

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """(origin, directions): unit world-frame ray per pixel, row-major (h*w, 3)."""
        u, v = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        ).reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        wfc = self.world_from_camera
        return wfc.translation.copy(), wfc.rotate(d)

    def project(self, world_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(pixel uv, ray length) for world points; points behind camera get length -1."""
        pc = self.extrinsic.apply(world_points)
        z = pc[:, 2]
        dist = np.linalg.norm(pc, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        uv = np.stack([u, v], axis=1)
        dist = np.where(z > 1e-9, dist, -1.0)
        return uv, dist


@dataclass(frozen=True)
class Observation:
    camera: Camera
    depth: np.ndarray  # (h, w) ray length in meters, 0 = no hit
    mask: np.ndarray  # (h, w) uint16 instance ids, EMPTY_MASK = no hit
    normal: np.ndarray | None = None  # (h, w, 3)

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float32)
        m = np.asarray(self.mask, dtype=np.uint16)
        if d.shape != (self.camera.height, self.camera.width) or m.shape != d.shape:
            raise ValueError("depth/mask shape must match camera")
        if (d < 0).any():
            raise ValueError("negative depth")
        if (m[d == 0] != EMPTY_MASK).any():
            raise ValueError("zero-depth pixels must carry the empty mask value")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "mask", m)
        if self.normal is not None:
            object.__setattr__(self, "normal", np.asarray(self.normal, dtype=np.float32))


# ---------------------------------------------------------------------------
# File formats


def save_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode())
        fh.write(data[::-1].tobytes())  # PFM stores rows bottom-up


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"not a grayscale PFM: {path}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h), dtype=dtype).reshape(h, w)
        return data[::-1].astype(np.float32)


def save_pgm16(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.uint16)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(data.astype(">u2").tobytes())


def load_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"not a binary PGM: {path}")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ValueError("expected 16-bit PGM")
        return np.frombuffer(fh.read(2 * w * h), dtype=">u2").reshape(h, w).astype(np.uint16)


def save_camera(path, cam: Camera) -> None:
    doc = {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "world_from_camera": [float(x) for x in cam.world_from_camera.matrix.reshape(-1)],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_camera(path) -> Camera:
    doc = json.loads(Path(path).read_text())
    wfc = RigidTransform.from_matrix(np.array(doc["world_from_camera"]).reshape(4, 4))
    return Camera(
        doc["fx"], doc["fy"], doc["cx"], doc["cy"], doc["width"], doc["height"], wfc.inverse()
    )


def save_observation(out_dir, index: int, obs: Observation) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_pfm(out / f"{index:04d}_depth.pfm", obs.depth)
    save_pgm16(out / f"{index:04d}_mask.pgm", obs.mask)
    save_camera(out / f"{index:04d}_camera.json", obs.camera)
    if obs.normal is not None:
        for axis, tag in enumerate("xyz"):
            save_pfm(out / f"{index:04d}_normal_{tag}.pfm", obs.normal[:, :, axis])


def load_observations(obs_dir) -> list[Observation]:
    base = Path(obs_dir)
    result = []
    for cam_path in sorted(base.glob("*_camera.json")):
        stem = cam_path.name.replace("_camera.json", "")
        cam = load_camera(cam_path)
        depth = load_pfm(base / f"{stem}_depth.pfm")
        mask = load_pgm16(base / f"{stem}_mask.pgm")
        normal = None
        nx = base / f"{stem}_normal_x.pfm"
        if nx.exists():
            normal = np.stack(
                [load_pfm(base / f"{stem}_normal_{t}.pfm") for t in "xyz"], axis=-1
            )
        result.append(Observation(cam, depth, mask, normal))
    if not result:
        raise FileNotFoundError(f"no observations found in {obs_dir}")
    return result
