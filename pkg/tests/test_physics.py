import json

import numpy as np
import pytest

from sceneforge.grids import AnalyticSdf
from sceneforge.physics import (
    SimAction,
    classify_stability,
    diff,
    e_stable,
    e_touch,
    simulate,
)
from sceneforge.scene import Edge, RelationKind, SceneGraph
from sceneforge.transforms import RigidTransform
from tests.conftest import analytic_node, box_on_floor


@pytest.fixture(scope="module")
def floor():
    return analytic_node(
        0,
        AnalyticSdf.box([0.0, 0.0, -0.05], [0.5, 0.5, 0.05]),
        [-0.56, -0.56, -0.12],
        [0.56, 0.56, 0.02],
        resolution=48,
        mass=500.0,
    )


@pytest.fixture(scope="module")
def box():
    return analytic_node(
        1,
        AnalyticSdf.box([0.0, 0.0, 0.0], [0.05, 0.05, 0.05]),
        [-0.08] * 3,
        [0.08] * 3,
        resolution=40,
    )


def test_resting_box_drift(floor, box):
    g = box_on_floor(floor, box)
    trace = simulate(g, SimAction.gravity_only(), 2.0, record_states=False)
    per, _ = diff(trace.states[0], trace.final_states)
    trans, rot = per[1]
    assert trans <= 1e-4
    assert rot <= 1e-3


def test_overhanging_box_topples(floor, box):
    # center of mass past the floor edge: must fall over the side
    g = box_on_floor(floor, box, x=0.53)
    trace = simulate(g, SimAction.gravity_only(), 2.0, record_states=False)
    per, _ = diff(trace.states[0], trace.final_states)
    assert per[1][0] > 0.1


def test_hovering_box_falls_to_contact(floor, box):
    g = box_on_floor(floor, box)
    g = g.with_node(g.nodes[1].with_state(RigidTransform.from_translation([0, 0, 0.2])))
    trace = simulate(g, SimAction.gravity_only(), 2.0, record_states=False)
    z = trace.final_states[1].translation[2]
    assert z == pytest.approx(0.05, abs=0.01)


def test_traces_bit_identical(floor, box):
    g = box_on_floor(floor, box)
    runs = [simulate(g, SimAction.gravity_only(), 0.5) for _ in range(3)]
    for other in runs[1:]:
        for s0, s1 in zip(runs[0].states, other.states):
            for i in s0:
                np.testing.assert_array_equal(s0[i].rotation, s1[i].rotation)
                np.testing.assert_array_equal(s0[i].translation, s1[i].translation)


def test_free_body_without_gravity_stays(floor, box):
    g = box_on_floor(floor, box)
    trace = simulate(g, SimAction.none(), 0.5, record_states=False)
    _, total = diff(trace.states[0], trace.final_states)
    assert total <= 1e-12


def test_push_action_moves_box(floor, box):
    g = box_on_floor(floor, box)
    action = SimAction(forces={1: np.array([8.0, 0.0, 0.0])}, gravity=True)
    trace = simulate(g, action, 1.0, record_states=False)
    dx = trace.final_states[1].translation[0] - trace.states[0][1].translation[0]
    assert dx > 0.02


def test_parameter_validation(floor, box):
    g = box_on_floor(floor, box)
    with pytest.raises(ValueError):
        simulate(g, SimAction.gravity_only(), 0.0)
    with pytest.raises(ValueError):
        simulate(g, SimAction.gravity_only(), 1.0, dt=0.0)
    with pytest.raises(ValueError):
        simulate(g, SimAction.gravity_only(), 1.0, dt=6e-3)


def test_diff_identities(floor, box):
    g = box_on_floor(floor, box)
    states = {i: g.nodes[i].state for i in g.nodes}
    per, total = diff(states, states)
    assert total == 0.0
    assert all(v == (0.0, 0.0) for v in per.values())
    rotated = {
        i: RigidTransform.from_axis_angle([0, 0, 1], 0.25, s.translation)
        for i, s in states.items()
    }
    per, _ = diff(states, rotated)
    for trans, rot in per.values():
        assert trans == pytest.approx(0.0, abs=1e-12)
        assert rot == pytest.approx(0.25, abs=1e-9)


def test_classify_stability_flags(floor, box):
    g = box_on_floor(floor, box)
    flags, pct = classify_stability(g)
    assert flags == {1: True}
    assert pct == 100.0
    g2 = box_on_floor(floor, box, x=0.53)
    flags2, pct2 = classify_stability(g2)
    assert flags2 == {1: False}
    assert pct2 == 0.0


def test_e_stable_ordering(floor, box):
    stable = box_on_floor(floor, box)
    hover = stable.with_node(
        stable.nodes[1].with_state(RigidTransform.from_translation([0, 0, 0.3]))
    )
    assert e_stable(stable, duration=0.5) < e_stable(hover, duration=0.5)


def test_e_touch_zero_in_contact(floor, box):
    touching = box_on_floor(floor, box)
    assert e_touch(touching) == pytest.approx(0.0, abs=5e-3)
    gap = touching.with_node(
        touching.nodes[1].with_state(RigidTransform.from_translation([0, 0, 0.15]))
    )
    assert e_touch(gap) > 0.05


def test_trace_serialization(tmp_path, floor, box):
    g = box_on_floor(floor, box)
    trace = simulate(g, SimAction.gravity_only(), 0.1)
    trace.save(tmp_path / "trace.jsonl")
    lines = (tmp_path / "trace.jsonl").read_text().strip().splitlines()
    assert len(lines) == len(trace.states)
    rec = json.loads(lines[0])
    assert "t" in rec and "states" in rec
