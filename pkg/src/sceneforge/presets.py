"""Synthetic ground-truth scenes built from analytic primitives.

Every preset is emitted ground-truth stable: objects are placed at exact
contact heights and then drop-resolved against their support parent, so the
emitted graph simulates to rest and contains no interpenetration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grids import AnalyticSdf, rasterize
from .meshes import marching_cubes, mesh_volume
from .physics_params import DEFAULT_DENSITY, PhysicsParams
from .scene import Edge, RelationKind, SceneGraph, SceneNode
from .transforms import RigidTransform


@dataclass(frozen=True)
class PresetObject:
    id: int
    label: str
    shape: AnalyticSdf  # world frame at identity state
    parent: int | None  # None = root itself
    mass: float | None = None  # default: volume * density


def shape_bounds(a: AnalyticSdf) -> tuple[np.ndarray, np.ndarray]:
    if a.kind == "sphere":
        c, r = a.params["center"], a.params["radius"]
        return c - r, c + r
    if a.kind == "box":
        c, h = a.params["center"], a.params["half_extents"]
        return c - h, c + h
    if a.kind == "cylinder":
        c = a.params["center"]
        r, h = a.params["radius"], a.params["height"]
        off = np.array([r, r, 0.5 * h])
        return c - off, c + off
    if a.kind == "union":
        bounds = [shape_bounds(ch) for ch in a.children]
        lo = np.min([b[0] for b in bounds], axis=0)
        hi = np.max([b[1] for b in bounds], axis=0)
        return lo, hi
    raise ValueError(f"unbounded analytic kind {a.kind}")


FLOOR = PresetObject(
    0, "floor", AnalyticSdf.box([0.0, 0.0, -0.05], [0.6, 0.6, 0.05]), None, mass=500.0
)


def _table(x=0.0, y=0.0, top=0.40, half=0.25):
    legs = [
        AnalyticSdf.box([x + sx * (half - 0.03), y + sy * (half - 0.03), (top - 0.04) / 2],
                        [0.02, 0.02, (top - 0.04) / 2])
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    slab = AnalyticSdf.box([x, y, top - 0.02], [half, half, 0.02])
    return AnalyticSdf.union(slab, *legs)


def _shelf(x=0.0, y=0.0, level=0.30, half=0.22, depth=0.15):
    walls = [
        AnalyticSdf.box([x + s * half, y, level / 2 + 0.02], [0.015, depth, level / 2 + 0.02])
        for s in (-1, 1)
    ]
    board = AnalyticSdf.box([x, y, level], [half, depth, 0.015])
    return AnalyticSdf.union(board, *walls)


def _preset_table_3items():
    table = _table()
    return [
        FLOOR,
        PresetObject(1, "table", table, 0),
        PresetObject(
            2, "book", AnalyticSdf.box([-0.10, 0.06, 0.415], [0.07, 0.05, 0.015]), 1
        ),
        PresetObject(
            3, "cup", AnalyticSdf.cylinder([0.09, 0.09, 0.44], 0.035, 0.08), 1
        ),
        PresetObject(
            4, "block", AnalyticSdf.box([0.06, -0.10, 0.43], [0.03, 0.03, 0.03]), 1
        ),
    ]


def _preset_stack_3():
    return [
        FLOOR,
        PresetObject(1, "base", AnalyticSdf.box([0, 0, 0.035], [0.07, 0.07, 0.035]), 0),
        PresetObject(2, "middle", AnalyticSdf.box([0.005, -0.005, 0.098], [0.05, 0.05, 0.028]), 1),
        PresetObject(3, "top", AnalyticSdf.box([-0.005, 0.005, 0.148], [0.032, 0.032, 0.022]), 2),
    ]


def _preset_shelf_2():
    return [
        FLOOR,
        PresetObject(1, "shelf", _shelf(), 0),
        PresetObject(2, "box-on-shelf", AnalyticSdf.box([-0.08, 0.0, 0.355], [0.04, 0.04, 0.04]), 1),
        PresetObject(3, "roll", AnalyticSdf.cylinder([0.08, 0.02, 0.365], 0.03, 0.10), 1),
    ]


def _preset_edge_balance():
    table = _table(half=0.2)
    return [
        FLOOR,
        PresetObject(1, "table", table, 0),
        # sits at the edge: most of the footprint on the slab, COM well inside
        PresetObject(2, "edge-box", AnalyticSdf.box([0.16, 0.0, 0.425], [0.05, 0.04, 0.025]), 1),
    ]


def _preset_cup_on_book_on_table():
    table = _table(half=0.22)
    return [
        FLOOR,
        PresetObject(1, "table", table, 0),
        PresetObject(2, "book", AnalyticSdf.box([0.0, 0.0, 0.418], [0.08, 0.06, 0.018]), 1),
        PresetObject(3, "cup", AnalyticSdf.cylinder([0.01, 0.0, 0.476], 0.032, 0.08), 2),
    ]


def _preset_dense_cluster():
    return [
        FLOOR,
        PresetObject(1, "crate", AnalyticSdf.box([-0.06, 0.0, 0.045], [0.055, 0.055, 0.045]), 0),
        PresetObject(2, "tin", AnalyticSdf.cylinder([0.055, 0.02, 0.05], 0.04, 0.10), 0),
        PresetObject(3, "bar", AnalyticSdf.box([0.0, -0.12, 0.025], [0.09, 0.025, 0.025]), 0),
        PresetObject(4, "cap", AnalyticSdf.box([-0.06, 0.0, 0.112], [0.035, 0.035, 0.02]), 1),
    ]


PRESETS = {
    "table-3items": _preset_table_3items,
    "stack-3": _preset_stack_3,
    "shelf-2": _preset_shelf_2,
    "edge-balance": _preset_edge_balance,
    "cup-on-book-on-table": _preset_cup_on_book_on_table,
    "dense-cluster": _preset_dense_cluster,
}


class UnknownPresetError(ValueError):
    def __init__(self, name: str):
        super().__init__(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )


def _node_from_shape(obj: PresetObject, resolution: int = 56) -> SceneNode:
    lo, hi = shape_bounds(obj.shape)
    extent = hi - lo
    pad = 0.06 * float(extent.max())
    lo = lo - pad
    hi = hi + pad
    spacing = float((hi - lo).max() / (resolution - 1))
    dims = np.maximum(np.ceil((hi - lo) / spacing).astype(int) + 1, 2)
    grid = rasterize(obj.shape, lo, spacing, dims, truncation=4.0 * spacing)
    mesh = marching_cubes(grid)
    mass = obj.mass if obj.mass is not None else max(mesh_volume(mesh), 1e-6) * DEFAULT_DENSITY
    return SceneNode(
        obj.id,
        grid,
        mesh,
        RigidTransform.identity(),
        PhysicsParams(mass, 0.6, 0.05, 0.0),
        label=obj.label,
    )


def build_preset(name: str, resolution: int = 56) -> tuple[SceneGraph, list[PresetObject]]:
    """Instantiate a preset: rasterize, mesh, and drop-resolve every object."""
    if name not in PRESETS:
        raise UnknownPresetError(name)
    objects = PRESETS[name]()
    nodes = {o.id: _node_from_shape(o, resolution) for o in objects}
    edges = tuple(
        Edge(o.id, o.parent, RelationKind.SUPPORT) for o in objects if o.parent is not None
    )
    graph = SceneGraph(nodes, edges, objects[0].id)

    # settle each object onto its parent in dependency order
    from .search import _drop_distance

    order = []
    frontier = [graph.root]
    while frontier:
        nxt = []
        for i in frontier:
            for c in sorted(graph.support_children(i)):
                order.append(c)
                nxt.append(c)
        frontier = nxt
    for i in order:
        parent = graph.support_parent(i)
        node = graph.nodes[i]
        dz = _drop_distance(node, graph.nodes[parent].posed_mesh())
        if dz != 0.0:
            state = RigidTransform(
                node.state.rotation, node.state.translation + np.array([0.0, 0.0, dz])
            )
            graph = graph.with_node(node.with_state(state))
    return graph, objects


def analytic_entries(graph: SceneGraph, objects: list[PresetObject]):
    """(id, shape, state) triples for exact rendering of the ground truth."""
    return [(o.id, o.shape, graph.nodes[o.id].state) for o in objects]


def save_analytic(objects: list[PresetObject], graph: SceneGraph, path) -> None:
    def shape_doc(a: AnalyticSdf):
        doc = {"kind": a.kind}
        for k, v in a.params.items():
            doc[k] = v.tolist() if isinstance(v, np.ndarray) else v
        if a.children:
            doc["children"] = [shape_doc(c) for c in a.children]
        return doc

    doc = [
        {
            "id": o.id,
            "label": o.label,
            "shape": shape_doc(o.shape),
            "state": {
                "rotation": [float(x) for x in graph.nodes[o.id].state.rotation],
                "translation": [float(x) for x in graph.nodes[o.id].state.translation],
            },
        }
        for o in objects
    ]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_analytic(path):
    def shape_from(doc: dict) -> AnalyticSdf:
        kind = doc["kind"]
        if kind == "union":
            return AnalyticSdf.union(*(shape_from(c) for c in doc["children"]))
        params = {
            k: (np.asarray(v, dtype=float) if isinstance(v, list) else v)
            for k, v in doc.items()
            if k not in ("kind", "children")
        }
        return AnalyticSdf(kind, params)

    entries = []
    for rec in json.loads(Path(path).read_text()):
        state = RigidTransform(
            np.array(rec["state"]["rotation"]), np.array(rec["state"]["translation"])
        )
        entries.append((rec["id"], shape_from(rec["shape"]), state))
    return entries
