import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.grids import (
    AnalyticSdf,
    SdfGrid,
    gradient,
    load_grid,
    rasterize,
    sample,
    save_grid,
)


def sphere_grid(radius=0.3, res=48, truncation=0.1):
    shape = AnalyticSdf.sphere([0.0, 0.0, 0.0], radius)
    lo = -np.full(3, radius + 0.1)
    spacing = 2 * (radius + 0.1) / (res - 1)
    return rasterize(shape, lo, spacing, (res, res, res), truncation)


def test_analytic_sphere_values():
    s = AnalyticSdf.sphere([0, 0, 0], 1.0)
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(s.evaluate(pts), [-1.0, 1.0, 0.0], atol=1e-12)


def test_analytic_box_corner_distance():
    b = AnalyticSdf.box([0, 0, 0], [1.0, 1.0, 1.0])
    d = b.evaluate(np.array([[2.0, 2.0, 2.0]]))[0]
    assert d == pytest.approx(np.sqrt(3.0), abs=1e-12)


def test_union_is_min():
    a = AnalyticSdf.sphere([0, 0, 0], 1.0)
    b = AnalyticSdf.sphere([3, 0, 0], 1.0)
    u = AnalyticSdf.union(a, b)
    pts = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [1.5, 0.0, 0.0]])
    np.testing.assert_allclose(
        u.evaluate(pts), np.minimum(a.evaluate(pts), b.evaluate(pts)), atol=1e-12
    )


def test_analytic_gradient_unit_norm():
    s = AnalyticSdf.sphere([0, 0, 0], 0.5)
    pts = np.array([[0.3, 0.1, -0.2], [1.0, 1.0, 1.0]])
    g = s.gradient(pts)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-4)


def test_trilinear_exact_on_linear_field():
    # trilinear interpolation reproduces any per-axis linear field exactly
    dims = (6, 5, 7)
    xs = [np.arange(d) for d in dims]
    vals = (
        0.3 * xs[0][:, None, None] - 0.2 * xs[1][None, :, None] + 0.1 * xs[2][None, None, :]
    ) * 0.01
    grid = SdfGrid(np.zeros(3), 0.01, vals.astype(float), 10.0, np.ones(dims))
    rng = np.random.default_rng(3)
    pts = rng.uniform([0, 0, 0], [0.05, 0.04, 0.06], size=(64, 3))
    expected = 0.3 * pts[:, 0] - 0.2 * pts[:, 1] + 0.1 * pts[:, 2]
    np.testing.assert_allclose(sample(grid, pts), expected, atol=1e-12)


def test_sample_outside_returns_truncation():
    grid = sphere_grid()
    far = np.array([[10.0, 10.0, 10.0]])
    assert sample(grid, far)[0] == pytest.approx(grid.truncation)


def test_rasterized_sphere_accuracy():
    grid = sphere_grid()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.25, 0.25, size=(200, 3))
    true = np.clip(np.linalg.norm(pts, axis=1) - 0.3, -grid.truncation, grid.truncation)
    err = np.abs(sample(grid, pts) - true)
    assert err.max() < 0.5 * grid.spacing


def test_gradient_points_outward():
    grid = sphere_grid()
    pts = np.array([[0.2, 0.0, 0.0], [0.0, -0.25, 0.1]])
    g, _ = gradient(grid, pts)
    radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    cos = np.einsum("ij,ij->i", g / np.linalg.norm(g, axis=1, keepdims=True), radial)
    assert (cos > 0.99).all()


def test_voxel_centers_shape_and_corners():
    grid = sphere_grid(res=20)
    centers = grid.voxel_centers()
    assert centers.shape == (20, 20, 20, 3)
    np.testing.assert_allclose(centers[0, 0, 0], grid.origin)
    np.testing.assert_allclose(centers[-1, -1, -1], grid.max_corner)


def test_save_load_roundtrip(tmp_path):
    grid = sphere_grid(res=24)
    save_grid(grid, tmp_path / "g.sdfgrid")
    back = load_grid(tmp_path / "g.sdfgrid")
    np.testing.assert_array_equal(back.values, grid.values)
    np.testing.assert_array_equal(back.weights, grid.weights)
    np.testing.assert_array_equal(back.origin, grid.origin)
    assert back.spacing == grid.spacing
    assert back.truncation == grid.truncation


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.sdfgrid"
    p.write_bytes(b"not a grid at all")
    with pytest.raises(ValueError):
        load_grid(p)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.1, 0.6),
    st.tuples(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2)),
)
def test_rasterize_clips_to_truncation(radius, center):
    shape = AnalyticSdf.sphere(np.array(center), radius)
    grid = rasterize(shape, [-1, -1, -1], 0.1, (21, 21, 21), 0.15)
    assert grid.values.max() <= 0.15 + 1e-12
    assert grid.values.min() >= -0.15 - 1e-12
