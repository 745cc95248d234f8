import numpy as np
import pytest

from sceneforge.grids import AnalyticSdf
from sceneforge.meshes import surface_samples, transform_mesh
from sceneforge.metrics import (
    MetricReport,
    UndefinedMetricError,
    chamfer_f1_nc,
    object_recovery,
    save_csv,
    scene_report,
)
from sceneforge.scene import SceneGraph
from sceneforge.transforms import RigidTransform
from tests.conftest import analytic_node, box_on_floor


@pytest.fixture(scope="module")
def sphere_mesh():
    return analytic_node(
        1, AnalyticSdf.sphere([0, 0, 0], 0.3), [-0.4] * 3, [0.4] * 3, resolution=48
    ).mesh


@pytest.fixture(scope="module")
def shifted_sphere(sphere_mesh):
    return transform_mesh(sphere_mesh, RigidTransform.from_translation([0.02, 0, 0]))


def brute_force(pred, gt, tau, samples, seed):
    """O(n^2) oracle mirroring the metric definitions exactly."""
    p, pn = surface_samples(pred, samples, seed=seed, with_normals=True)
    g, gn = surface_samples(gt, samples, seed=seed, with_normals=True)
    d2 = np.linalg.norm(p[:, None, :] - g[None, :, :], axis=2)
    d_pg = d2.min(axis=1)
    d_gp = d2.min(axis=0)
    i_pg = d2.argmin(axis=1)
    i_gp = d2.argmin(axis=0)
    cd = 0.5 * (d_pg.mean() + d_gp.mean())
    prec = (d_pg <= tau).mean()
    rec = (d_gp <= tau).mean()
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    nc = 0.5 * (
        np.abs(np.einsum("ij,ij->i", pn, gn[i_pg])).mean()
        + np.abs(np.einsum("ij,ij->i", gn, pn[i_gp])).mean()
    )
    return cd, f1, nc


def test_matches_brute_force(sphere_mesh, shifted_sphere):
    fast = chamfer_f1_nc(shifted_sphere, sphere_mesh, tau=0.05, samples=500, seed=3)
    slow = brute_force(shifted_sphere, sphere_mesh, 0.05, 500, 3)
    for a, b in zip(fast, slow):
        assert abs(a - b) <= 1e-9


def test_identical_meshes_zero_cd(sphere_mesh):
    cd, f1, nc = chamfer_f1_nc(sphere_mesh, sphere_mesh, samples=1000)
    assert cd == 0.0
    assert f1 == 1.0
    assert nc == pytest.approx(1.0, abs=1e-9)


def test_cd_symmetric(sphere_mesh, shifted_sphere):
    a = chamfer_f1_nc(shifted_sphere, sphere_mesh, samples=1000)
    b = chamfer_f1_nc(sphere_mesh, shifted_sphere, samples=1000)
    assert a[0] == pytest.approx(b[0], abs=1e-12)


def test_f1_precision_recall_swap(sphere_mesh):
    # a pred covering only part of gt: swapping arguments swaps precision/recall
    # leaving the harmonic mean unchanged
    partial = transform_mesh(sphere_mesh, RigidTransform.from_translation([0.04, 0, 0]))
    a = chamfer_f1_nc(partial, sphere_mesh, tau=0.03, samples=1000)
    b = chamfer_f1_nc(sphere_mesh, partial, tau=0.03, samples=1000)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


def test_nc_invariant_under_global_flip(sphere_mesh, shifted_sphere):
    # absolute cosine: negating every normal of both meshes changes nothing
    p, pn = surface_samples(shifted_sphere, 500, seed=3, with_normals=True)
    g, gn = surface_samples(sphere_mesh, 500, seed=3, with_normals=True)
    d2 = np.linalg.norm(p[:, None, :] - g[None, :, :], axis=2)
    i_pg = d2.argmin(axis=1)
    nc = np.abs(np.einsum("ij,ij->i", pn, gn[i_pg])).mean()
    nc_flip = np.abs(np.einsum("ij,ij->i", -pn, -gn[i_pg])).mean()
    assert nc == pytest.approx(nc_flip, abs=1e-15)
    fast = chamfer_f1_nc(shifted_sphere, sphere_mesh, samples=500, seed=3)
    assert 0.0 <= fast[2] <= 1.0


def test_empty_mesh_undefined(sphere_mesh):
    from sceneforge.meshes import TriMesh

    with pytest.raises(UndefinedMetricError):
        chamfer_f1_nc(TriMesh.empty(), sphere_mesh)
    with pytest.raises(ValueError):
        chamfer_f1_nc(sphere_mesh, sphere_mesh, tau=0.0)


def test_object_recovery(floor_node, unit_box_node):
    g = box_on_floor(floor_node, unit_box_node)
    assert object_recovery(g, [1]) == 100.0
    assert object_recovery(g, [1, 7]) == 50.0
    with pytest.raises(ValueError):
        object_recovery(g, [])


def test_perfect_scene_report(floor_node, unit_box_node):
    g = box_on_floor(floor_node, unit_box_node)
    rep = scene_report(g, g, simulate_pred=False)
    assert rep.cd == pytest.approx(0.0, abs=1e-12)
    assert rep.f1 == pytest.approx(100.0)
    assert rep.or_ratio == 100.0
    assert 1 in rep.per_object


def test_csv_export(tmp_path, floor_node, unit_box_node):
    g = box_on_floor(floor_node, unit_box_node)
    rep = scene_report(g, g, simulate_pred=False)
    save_csv([("scene-a", rep), ("scene-b", rep)], tmp_path / "suite.csv")
    lines = (tmp_path / "suite.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("scene,cd,f1")
