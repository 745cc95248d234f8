"""Scene graph: nodes with geometry/physics/state and typed relation edges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .grids import SdfGrid, load_grid, sample, save_grid
from .meshes import TriMesh, load_obj, save_obj
from .physics_params import PhysicsParams
from .transforms import RigidTransform


class RelationKind(str, Enum):
    SUPPORT = "support"
    BESIDE = "beside"
    COLLIDE = "collide"


@dataclass(frozen=True)
class SceneNode:
    id: int
    sdf: SdfGrid
    mesh: TriMesh
    state: RigidTransform
    physics: PhysicsParams
    label: str = ""
    color: tuple = (0.7, 0.7, 0.7)  # visualization only

    def with_state(self, state: RigidTransform) -> "SceneNode":
        return replace(self, state=state)

    def posed_mesh(self) -> TriMesh:
        from .meshes import transform_mesh

        return transform_mesh(self.mesh, self.state)


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    kind: RelationKind


@dataclass(frozen=True)
class SceneGraph:
    nodes: dict = field(default_factory=dict)  # id -> SceneNode
    edges: tuple = ()
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))

    def node(self, node_id: int) -> SceneNode:
        return self.nodes[node_id]

    def support_parent(self, node_id: int) -> int | None:
        for e in self.edges:
            if e.kind == RelationKind.SUPPORT and e.a == node_id:
                return e.b
        return None

    def support_children(self, node_id: int) -> list[int]:
        return [e.a for e in self.edges if e.kind == RelationKind.SUPPORT and e.b == node_id]

    def support_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == RelationKind.SUPPORT]

    def object_ids(self) -> list[int]:
        return sorted(i for i in self.nodes if i != self.root)

    def with_node(self, node: SceneNode) -> "SceneGraph":
        nodes = dict(self.nodes)
        nodes[node.id] = node
        return SceneGraph(nodes, self.edges, self.root)

    def with_states(self, states: dict) -> "SceneGraph":
        nodes = {i: (n.with_state(states[i]) if i in states else n) for i, n in self.nodes.items()}
        return SceneGraph(nodes, self.edges, self.root)


def validate(g: SceneGraph) -> list[str]:
    """Every invariant violation as a human-readable record; empty iff well-formed."""
    problems = []
    if g.root not in g.nodes:
        problems.append(f"root node {g.root} missing")
        return problems
    for e in g.edges:
        for end in (e.a, e.b):
            if end not in g.nodes:
                problems.append(f"edge ({e.a},{e.b},{e.kind.value}) references unknown node {end}")
    parents: dict[int, list[int]] = {}
    for e in g.edges:
        if e.kind == RelationKind.SUPPORT and e.a in g.nodes and e.b in g.nodes:
            parents.setdefault(e.a, []).append(e.b)
        if e.kind == RelationKind.COLLIDE:
            problems.append(f"collide edge ({e.a},{e.b}) not allowed in a static graph")
    for i in g.nodes:
        if i == g.root:
            if i in parents:
                problems.append(f"root {i} has a support parent")
            continue
        n = len(parents.get(i, []))
        if n == 0:
            problems.append(f"node {i} has no support parent")
        elif n > 1:
            problems.append(f"node {i} has {n} support parents")
    # cycle check by walking up
    for i in g.nodes:
        seen = set()
        cur = i
        while cur in parents and parents[cur]:
            if cur in seen:
                problems.append(f"support cycle through node {cur}")
                break
            seen.add(cur)
            cur = parents[cur][0]
    for e in g.edges:
        if e.kind == RelationKind.BESIDE and e.a in g.nodes and e.b in g.nodes:
            pa = parents.get(e.a, [None])[0] if parents.get(e.a) else None
            pb = parents.get(e.b, [None])[0] if parents.get(e.b) else None
            if pa != pb:
                problems.append(f"beside edge ({e.a},{e.b}) connects non-siblings")
    return problems


def support_chain(g: SceneGraph, node_id: int) -> list[int]:
    """Path from node_id up to the root via support parents, root last."""
    if node_id not in g.nodes:
        raise KeyError(f"unknown node {node_id}")
    chain = [node_id]
    cur = node_id
    while cur != g.root:
        parent = g.support_parent(cur)
        if parent is None:
            break
        if parent in chain:
            raise ValueError(f"support cycle at node {parent}")
        chain.append(parent)
        cur = parent
    return chain


def check_mesh_sdf_consistency(node: SceneNode, factor: float = 2.0) -> bool:
    if node.mesh.is_empty:
        return True
    vals = sample(node.sdf, node.mesh.vertices)
    return bool(np.all(np.abs(vals) <= factor * node.sdf.spacing))


# ---------------------------------------------------------------------------
# Serialization: JSON graph + sidecar OBJ/SDF files


def save(g: SceneGraph, path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    assets = out / "nodes"
    assets.mkdir(exist_ok=True)
    nodes_json = []
    for i in sorted(g.nodes):
        n = g.nodes[i]
        mesh_rel = f"nodes/{i}.obj"
        sdf_rel = f"nodes/{i}.sdfgrid"
        save_obj(n.mesh, out / mesh_rel)
        save_grid(n.sdf, out / sdf_rel)
        nodes_json.append(
            {
                "id": i,
                "label": n.label,
                "mesh": mesh_rel,
                "sdf": sdf_rel,
                "state": {
                    "rotation": [float(x) for x in n.state.rotation],
                    "translation": [float(x) for x in n.state.translation],
                },
                "physics": {
                    "mass": n.physics.mass,
                    "friction": n.physics.friction,
                    "damping": n.physics.damping,
                    "restitution": n.physics.restitution,
                },
                "color": [float(c) for c in n.color],
            }
        )
    doc = {
        "root": g.root,
        "nodes": nodes_json,
        "edges": [
            {"a": e.a, "b": e.b, "kind": e.kind.value}
            for e in sorted(g.edges, key=lambda e: (e.a, e.b, e.kind.value))
        ],
    }
    (out / "graph.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load(path) -> SceneGraph:
    base = Path(path)
    doc_path = base / "graph.json" if base.is_dir() else base
    base = doc_path.parent
    try:
        doc = json.loads(doc_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"cannot parse {doc_path}: {e}") from e
    nodes = {}
    for nd in doc["nodes"]:
        mesh_path = base / nd["mesh"]
        sdf_path = base / nd["sdf"]
        if not mesh_path.exists():
            raise FileNotFoundError(f"missing mesh asset {mesh_path}")
        if not sdf_path.exists():
            raise FileNotFoundError(f"missing SDF asset {sdf_path}")
        state = RigidTransform(np.array(nd["state"]["rotation"]), np.array(nd["state"]["translation"]))
        phys = PhysicsParams(**nd["physics"])
        nodes[nd["id"]] = SceneNode(
            id=nd["id"],
            sdf=load_grid(sdf_path),
            mesh=load_obj(mesh_path),
            state=state,
            physics=phys,
            label=nd.get("label", ""),
            color=tuple(nd.get("color", (0.7, 0.7, 0.7))),
        )
    edges = []
    for ed in doc["edges"]:
        try:
            kind = RelationKind(ed["kind"])
        except ValueError as e:
            raise ValueError(f"unknown relation kind {ed['kind']!r} in edge {ed}") from e
        edges.append(Edge(ed["a"], ed["b"], kind))
    g = SceneGraph(nodes, tuple(edges), doc["root"])
    problems = validate(g)
    if problems:
        raise ValueError("invalid scene graph: " + "; ".join(problems))
    return g
