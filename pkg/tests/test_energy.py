import numpy as np
import pytest

from sceneforge.energy import EnergyReport, e_pene_mesh, e_pene_sdf, evaluate
from sceneforge.grids import AnalyticSdf
from sceneforge.render import _look_at, render_observation
from sceneforge.scene import Edge, RelationKind, SceneGraph
from sceneforge.transforms import RigidTransform
from tests.conftest import analytic_node

SPEC = {"fx": 60.0, "fy": 60.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48}


def box_pair(dx):
    """Two 10 cm boxes whose centers are dx apart along x."""
    a = analytic_node(
        0, AnalyticSdf.box([0, 0, 0], [0.05] * 3), [-0.09] * 3, [0.09] * 3, resolution=40
    )
    b = analytic_node(
        1, AnalyticSdf.box([0, 0, 0], [0.05] * 3), [-0.09] * 3, [0.09] * 3, resolution=40
    ).with_state(RigidTransform.from_translation([dx, 0.0, 0.0]))
    return SceneGraph({0: a, 1: b}, (Edge(1, 0, RelationKind.SUPPORT),), 0)


def test_disjoint_boxes_zero_penetration():
    g = box_pair(0.25)
    assert e_pene_sdf(g) == 0.0
    assert e_pene_mesh(g) == 0.0


def test_overlapping_boxes_flagged():
    g = box_pair(0.08)  # 2 cm overlap
    assert e_pene_sdf(g) > 0.0
    assert e_pene_mesh(g) == 1.0


def test_penetration_monotone_in_overlap():
    shallow = e_pene_sdf(box_pair(0.095))
    deep = e_pene_sdf(box_pair(0.06))
    assert deep > shallow > 0.0


def test_pene_mesh_counts_pairs():
    g = box_pair(0.08)
    c = analytic_node(
        2, AnalyticSdf.box([0, 0, 0], [0.05] * 3), [-0.09] * 3, [0.09] * 3, resolution=40
    ).with_state(RigidTransform.from_translation([0.04, 0.0, 0.0]))
    g3 = SceneGraph(
        {**g.nodes, 2: c},
        g.edges + (Edge(2, 0, RelationKind.SUPPORT),),
        0,
    )
    # overlaps: (0,1), (0,2), (1,2)
    assert e_pene_mesh(g3) == 3.0


def test_evaluate_report_totals():
    g = box_pair(0.25)
    cam = _look_at([1.0, 0.2, 0.4], [0.1, 0.0, 0.0], SPEC)
    gt = [
        (0, AnalyticSdf.box([0, 0, 0], [0.05] * 3), RigidTransform.identity()),
        (1, AnalyticSdf.box([0.25, 0, 0], [0.05] * 3), RigidTransform.identity()),
    ]
    obs = render_observation(gt, cam)
    rep = evaluate(g, [obs], sim_duration=0.2)
    assert isinstance(rep, EnergyReport)
    d = rep.to_dict()
    expected = sum(rep.weights[k] * d[k] for k in rep.weights)
    assert d["total"] == pytest.approx(expected, rel=1e-12)
    assert rep.pene_mesh == 0.0
    assert rep.mask >= 0.0 and rep.depth >= 0.0


def test_evaluate_requires_observations():
    g = box_pair(0.25)
    with pytest.raises(ValueError):
        evaluate(g, [])


def test_report_roundtrip(tmp_path):
    g = box_pair(0.25)
    cam = _look_at([1.0, 0.0, 0.4], [0.0, 0.0, 0.0], SPEC)
    gt = [(0, AnalyticSdf.box([0, 0, 0], [0.05] * 3), RigidTransform.identity())]
    rep = evaluate(g, [render_observation(gt, cam)], sim_duration=0.2)
    rep.save(tmp_path / "energy.json")
    import json

    doc = json.loads((tmp_path / "energy.json").read_text())
    assert doc["total"] == pytest.approx(rep.weighted_total)
