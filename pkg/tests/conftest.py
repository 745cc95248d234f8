import numpy as np
import pytest

from sceneforge.grids import AnalyticSdf, rasterize
from sceneforge.meshes import marching_cubes, mesh_volume
from sceneforge.physics_params import DEFAULT_DENSITY, PhysicsParams
from sceneforge.scene import Edge, RelationKind, SceneGraph, SceneNode
from sceneforge.transforms import RigidTransform


def analytic_node(
    node_id,
    shape,
    lo,
    hi,
    resolution=40,
    mass=None,
    state=None,
    label="",
):
    """Rasterize an analytic shape into a SceneNode at the given state."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    spacing = float((hi - lo).max() / (resolution - 1))
    dims = np.ceil((hi - lo) / spacing).astype(int) + 1
    grid = rasterize(shape, lo, spacing, dims, 4.0 * spacing)
    mesh = marching_cubes(grid)
    if mass is None:
        mass = max(mesh_volume(mesh), 1e-6) * DEFAULT_DENSITY
    return SceneNode(
        node_id,
        grid,
        mesh,
        state or RigidTransform.identity(),
        PhysicsParams(mass, 0.6, 0.05, 0.0),
        label=label,
    )


@pytest.fixture(scope="session")
def floor_node():
    return analytic_node(
        0,
        AnalyticSdf.box([0.0, 0.0, -0.05], [0.5, 0.5, 0.05]),
        [-0.56, -0.56, -0.12],
        [0.56, 0.56, 0.02],
        resolution=48,
        mass=500.0,
        label="floor",
    )


@pytest.fixture(scope="session")
def unit_box_node():
    return analytic_node(
        1,
        AnalyticSdf.box([0.0, 0.0, 0.0], [0.05, 0.05, 0.05]),
        [-0.08, -0.08, -0.08],
        [0.08, 0.08, 0.08],
        resolution=40,
        label="box",
    )


def box_on_floor(floor, box, x=0.0, y=0.0):
    """Graph with the box resting on the floor top at (x, y)."""
    state = RigidTransform.from_translation([x, y, 0.05])
    return SceneGraph(
        {0: floor, 1: box.with_state(state)},
        (Edge(1, 0, RelationKind.SUPPORT),),
        0,
    )
