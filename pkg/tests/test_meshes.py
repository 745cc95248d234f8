import numpy as np
import pytest

from sceneforge.grids import AnalyticSdf, rasterize
from sceneforge.meshes import (
    TriMesh,
    boundary_edge_count,
    load_obj,
    marching_cubes,
    mass_properties,
    mesh_area,
    mesh_intersects,
    mesh_volume,
    min_separation,
    save_obj,
    surface_samples,
    transform_mesh,
)
from sceneforge.transforms import RigidTransform


def shape_mesh(shape, lo, hi, res=48):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    spacing = float((hi - lo).max() / (res - 1))
    dims = np.ceil((hi - lo) / spacing).astype(int) + 1
    return marching_cubes(rasterize(shape, lo, spacing, dims, 4 * spacing))


@pytest.fixture(scope="module")
def sphere_mesh():
    return shape_mesh(AnalyticSdf.sphere([0, 0, 0], 0.3), [-0.4] * 3, [0.4] * 3, res=64)


def test_sphere_volume_and_area(sphere_mesh):
    r = 0.3
    assert mesh_volume(sphere_mesh) == pytest.approx(4 / 3 * np.pi * r**3, rel=0.02)
    assert mesh_area(sphere_mesh) == pytest.approx(4 * np.pi * r**2, rel=0.02)


def test_extraction_watertight(sphere_mesh):
    assert boundary_edge_count(sphere_mesh) == 0


def test_empty_extraction():
    grid = rasterize(AnalyticSdf.sphere([5, 5, 5], 0.1), [-1, -1, -1], 0.1, (8, 8, 8), 0.4)
    assert marching_cubes(grid).is_empty


def test_surface_samples_deterministic(sphere_mesh):
    a = surface_samples(sphere_mesh, 512, seed=7)
    b = surface_samples(sphere_mesh, 512, seed=7)
    np.testing.assert_array_equal(a, b)
    c = surface_samples(sphere_mesh, 512, seed=8)
    assert not np.array_equal(a, c)


def test_surface_samples_on_surface(sphere_mesh):
    pts = surface_samples(sphere_mesh, 1024, seed=0)
    radii = np.linalg.norm(pts, axis=1)
    assert np.abs(radii - 0.3).max() < 0.02


def test_box_mass_properties():
    # analytic oracle: box inertia m/12 * (b^2 + c^2) per axis
    h = np.array([0.05, 0.04, 0.03])
    mesh = shape_mesh(AnalyticSdf.box([0, 0, 0], h), -h - 0.03, h + 0.03, res=56)
    density = 300.0
    mass, com, inertia = mass_properties(mesh, density)
    vol = 8 * h.prod()
    assert mass == pytest.approx(vol * density, rel=0.03)
    np.testing.assert_allclose(com, 0.0, atol=2e-3)
    full = 2 * h
    expected = mass / 12 * (full[[1, 2, 0]] ** 2 + full[[2, 0, 1]] ** 2)
    np.testing.assert_allclose(np.diag(inertia), expected, rtol=0.08)


def test_mesh_intersects_cases():
    a = shape_mesh(AnalyticSdf.box([0, 0, 0], [0.05] * 3), [-0.08] * 3, [0.08] * 3)
    sep = transform_mesh(a, RigidTransform.from_translation([0.2, 0, 0]))
    overlap = transform_mesh(a, RigidTransform.from_translation([0.06, 0, 0]))
    assert not mesh_intersects(a, sep)
    assert mesh_intersects(a, overlap)
    assert mesh_intersects(a, a)


def test_min_separation_oracle():
    a = shape_mesh(AnalyticSdf.box([0, 0, 0], [0.05] * 3), [-0.08] * 3, [0.08] * 3)
    b = transform_mesh(a, RigidTransform.from_translation([0.15, 0, 0]))
    gap = min_separation(a, b)
    assert gap == pytest.approx(0.05, abs=5e-3)


def test_transform_mesh_rigid_invariants(sphere_mesh):
    t = RigidTransform.from_axis_angle([1, 1, 0], 0.9, (0.3, -0.1, 0.2))
    moved = transform_mesh(sphere_mesh, t)
    assert mesh_volume(moved) == pytest.approx(mesh_volume(sphere_mesh), rel=1e-9)
    assert mesh_area(moved) == pytest.approx(mesh_area(sphere_mesh), rel=1e-9)


def test_obj_roundtrip_exact(tmp_path, sphere_mesh):
    save_obj(sphere_mesh, tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, sphere_mesh.vertices)
    np.testing.assert_array_equal(back.faces, sphere_mesh.faces)


def test_trimesh_validation():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))  # face index out of range
