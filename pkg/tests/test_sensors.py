import numpy as np
import pytest

from sceneforge.sensors import (
    EMPTY_MASK,
    Camera,
    Observation,
    load_camera,
    load_observations,
    load_pfm,
    load_pgm16,
    save_camera,
    save_observation,
    save_pfm,
    save_pgm16,
)
from sceneforge.transforms import RigidTransform


def make_camera(w=16, h=12):
    return Camera(20.0, 20.0, w / 2, h / 2, w, h, RigidTransform.identity())


def make_observation(cam=None):
    cam = cam or make_camera()
    rng = np.random.default_rng(5)
    depth = rng.uniform(0.5, 2.0, size=(cam.height, cam.width)).astype(np.float32)
    mask = np.full(depth.shape, 3, dtype=np.uint16)
    depth[0, 0] = 0.0
    mask[0, 0] = EMPTY_MASK
    return Observation(cam, depth, mask)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(-1.0, 20.0, 8, 6, 16, 12, RigidTransform.identity())
    with pytest.raises(ValueError):
        Camera(20.0, 20.0, 99.0, 6, 16, 12, RigidTransform.identity())


def test_pixel_rays_unit_and_centered():
    cam = make_camera()
    origin, dirs = cam.pixel_rays()
    assert dirs.shape == (cam.width * cam.height, 3)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(origin, 0.0, atol=1e-12)


def test_project_roundtrip():
    cam = make_camera()
    origin, dirs = cam.pixel_rays()
    pts = origin + 1.7 * dirs
    uv, dist = cam.project(pts)
    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    np.testing.assert_allclose(uv[:, 0], us.reshape(-1) + 0.5, atol=1e-6)
    np.testing.assert_allclose(uv[:, 1], vs.reshape(-1) + 0.5, atol=1e-6)
    assert (dist > 0).all()


def test_observation_rejects_bad_mask():
    cam = make_camera()
    depth = np.zeros((cam.height, cam.width), dtype=np.float32)
    mask = np.zeros(depth.shape, dtype=np.uint16)  # zero depth must be EMPTY_MASK
    with pytest.raises(ValueError):
        Observation(cam, depth, mask)


def test_observation_rejects_negative_depth():
    cam = make_camera()
    depth = np.full((cam.height, cam.width), -1.0, dtype=np.float32)
    mask = np.full(depth.shape, 1, dtype=np.uint16)
    with pytest.raises(ValueError):
        Observation(cam, depth, mask)


def test_pfm_roundtrip_exact(tmp_path):
    data = np.random.default_rng(1).uniform(-5, 5, size=(12, 16)).astype(np.float32)
    save_pfm(tmp_path / "d.pfm", data)
    np.testing.assert_array_equal(load_pfm(tmp_path / "d.pfm"), data)


def test_pgm16_roundtrip_exact(tmp_path):
    data = np.array([[0, 1, 65535], [7, 300, 12]], dtype=np.uint16)
    save_pgm16(tmp_path / "m.pgm", data)
    np.testing.assert_array_equal(load_pgm16(tmp_path / "m.pgm"), data)


def test_camera_roundtrip(tmp_path):
    cam = Camera(
        140.0, 141.0, 80.0, 60.0, 160, 120,
        RigidTransform.from_axis_angle([0, 1, 0], 0.4, (1.0, 2.0, 3.0)),
    )
    save_camera(tmp_path / "c.json", cam)
    back = load_camera(tmp_path / "c.json")
    assert (back.fx, back.fy, back.cx, back.cy) == (cam.fx, cam.fy, cam.cx, cam.cy)
    np.testing.assert_allclose(back.extrinsic.matrix, cam.extrinsic.matrix, atol=1e-12)


def test_observation_roundtrip(tmp_path):
    obs = make_observation()
    save_observation(tmp_path, 0, obs)
    back = load_observations(tmp_path)
    assert len(back) == 1
    np.testing.assert_array_equal(back[0].depth, obs.depth)
    np.testing.assert_array_equal(back[0].mask, obs.mask)


def test_load_observations_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_observations(tmp_path)
