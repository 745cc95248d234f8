import numpy as np
import pytest

from sceneforge.complete import (
    Candidate,
    NoCandidatesError,
    SamplerSpec,
    is_watertight,
    observed_agreement,
    propose,
    score,
    virtual_ring,
)
from sceneforge.fusion import fuse_instance
from sceneforge.grids import AnalyticSdf
from sceneforge.meshes import mesh_volume
from sceneforge.render import _look_at, render_observation
from sceneforge.transforms import RigidTransform
from sceneforge.config import RunConfig

SPEC = {"fx": 120.0, "fy": 120.0, "cx": 64.0, "cy": 48.0, "width": 128, "height": 96}
SPHERE = AnalyticSdf.sphere([0.0, 0.0, 0.3], 0.3)


@pytest.fixture(scope="module")
def half_observations():
    # cameras on one side only: the far hemisphere is never seen
    entries = [(1, SPHERE, RigidTransform.identity())]
    cams = [
        _look_at(
            np.array([1.2 * np.cos(a), 1.2 * np.sin(a), 0.5]), [0, 0, 0.3], SPEC
        )
        for a in np.linspace(-1.0, 1.0, 8)
    ]
    return [render_observation(entries, c) for c in cams]


@pytest.fixture(scope="module")
def fused_half(half_observations):
    return fuse_instance(half_observations, 1, resolution=56)


def test_candidate_count_and_kinds(fused_half):
    cands = propose(fused_half, SamplerSpec(samples_per_instance=3))
    assert len(cands) == 3
    assert [c.provenance for c in cands] == ["closure", "mirror", "hull"]
    cands5 = propose(fused_half, SamplerSpec(samples_per_instance=5))
    assert len(cands5) == 5


def test_candidates_watertight(fused_half):
    for c in propose(fused_half, SamplerSpec(samples_per_instance=5)):
        assert is_watertight(c), c.provenance


def test_candidates_respect_observations(fused_half):
    for c in propose(fused_half, SamplerSpec(samples_per_instance=5)):
        assert observed_agreement(c, fused_half) == 0.0


def test_completed_volume_plausible(fused_half):
    true_vol = 4 / 3 * np.pi * 0.3**3
    for c in propose(fused_half, SamplerSpec(samples_per_instance=3)):
        vol = mesh_volume(c.mesh)
        assert 0.8 * true_vol < vol < 1.5 * true_vol, c.provenance


def test_propose_deterministic(fused_half):
    a = propose(fused_half, SamplerSpec(samples_per_instance=5))
    b = propose(fused_half, SamplerSpec(samples_per_instance=5))
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.sdf.values, cb.sdf.values)


def test_perturb_differs_from_closure(fused_half):
    cands = propose(fused_half, SamplerSpec(samples_per_instance=5))
    closure = next(c for c in cands if c.provenance == "closure")
    perturb = next(c for c in cands if c.provenance == "perturb")
    assert not np.array_equal(closure.sdf.values, perturb.sdf.values)


def test_empty_interior_raises():
    from sceneforge.fusion import FusedInstance
    from sceneforge.grids import SdfGrid

    grid = SdfGrid(
        np.zeros(3), 0.01, np.full((8, 8, 8), 0.04), 0.04, np.zeros((8, 8, 8))
    )
    with pytest.raises(NoCandidatesError):
        propose(FusedInstance(1, grid, 0.0))


def test_scoring_attaches_terms(fused_half, half_observations):
    cfg = RunConfig()
    cands = propose(fused_half, SamplerSpec(samples_per_instance=3))
    ring = virtual_ring(fused_half)
    scored = score(cands[0], half_observations, virtual=ring, cfg=cfg, fused=fused_half)
    assert set(scored.score) == {"mask", "depth", "normal", "silhouette", "total"}
    assert scored.score["total"] >= 0.0


def test_scoring_prefers_true_shape(fused_half, half_observations):
    # the plausible completion must beat a grossly inflated one
    cfg = RunConfig()
    cands = propose(fused_half, SamplerSpec(samples_per_instance=1))
    good = score(
        cands[0], half_observations, virtual=virtual_ring(fused_half), cfg=cfg,
        fused=fused_half,
    )
    grid = cands[0].sdf
    from sceneforge.grids import SdfGrid
    from sceneforge.meshes import marching_cubes

    grown = SdfGrid(
        grid.origin, grid.spacing,
        np.clip(grid.values - 2 * grid.spacing, -grid.truncation, grid.truncation),
        grid.truncation, grid.weights,
    )
    inflated = Candidate(1, grown, marching_cubes(grown), "inflated", 0)
    bad = score(
        inflated, half_observations, virtual=virtual_ring(fused_half), cfg=cfg,
        fused=fused_half,
    )
    assert good.score["total"] < bad.score["total"]


def test_candidate_save(tmp_path, fused_half):
    c = propose(fused_half, SamplerSpec(samples_per_instance=1))[0]
    c.save(tmp_path, 0)
    assert (tmp_path / "0.obj").exists()
    assert (tmp_path / "0.sdfgrid").exists()
    assert (tmp_path / "0.json").exists()


def test_carve_observed_removes_sibling_interior(fused_half):
    from sceneforge.complete import carve_observed
    from sceneforge.fusion import FusedInstance
    from sceneforge.grids import SdfGrid, rasterize, sample

    cand = propose(fused_half, SamplerSpec(samples_per_instance=1))[0]
    # sibling box sits in the sphere's unobserved hemisphere, fully "observed"
    box = rasterize(
        AnalyticSdf.box([-0.25, 0.0, 0.3], [0.12, 0.12, 0.12]),
        [-0.45, -0.2, 0.1], 0.01, (41, 41, 41), 0.04,
    )
    sibling_grid = SdfGrid(
        box.origin, box.spacing, box.values, box.truncation,
        np.ones(box.dims, dtype=np.float32),
    )
    sibling = FusedInstance(2, sibling_grid, 1.0)
    carved = carve_observed(cand, fused_half, [sibling])
    centers = carved.sdf.voxel_centers().reshape(-1, 3)
    unobserved = fused_half.sdf.weights.reshape(-1) <= 0
    inside_sib = (sample(sibling_grid, centers) < 0.0) & unobserved
    assert (carved.sdf.values.reshape(-1)[inside_sib] >= 0.0).all()
    assert observed_agreement(carved, fused_half) == 0.0
    assert not carved.mesh.is_empty
    # a disjoint sibling leaves the candidate untouched
    assert (
        carve_observed(cand, fused_half, [FusedInstance(1, sibling_grid, 1.0)])
        is cand
    )
