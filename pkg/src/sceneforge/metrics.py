"""Reconstruction quality metrics: chamfer distance, F-score, normal
consistency, stability rates, and object recovery."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .config import RunConfig
from .meshes import TriMesh, surface_samples
from .scene import SceneGraph


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    cd: float  # meters x 100
    f1: float  # percent
    nc: float  # percent
    stable_ground: float  # percent
    stable_all: float  # percent
    or_ratio: float  # percent
    per_object: dict  # id -> {"cd", "f1", "nc"}

    def to_dict(self) -> dict:
        return {
            "cd": self.cd,
            "f1": self.f1,
            "nc": self.nc,
            "stable_ground": self.stable_ground,
            "stable_all": self.stable_all,
            "or_ratio": self.or_ratio,
            "per_object": {str(k): v for k, v in sorted(self.per_object.items())},
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


CSV_FIELDS = ["scene", "cd", "f1", "nc", "stable_ground", "stable_all", "or_ratio"]


def save_csv(rows: list[tuple[str, "MetricReport"]], path) -> None:
    """One scene per row for suite-level aggregation."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for name, rep in rows:
            d = rep.to_dict()
            d.pop("per_object")
            w.writerow({"scene": name, **{k: f"{d[k]:.4f}" for k in CSV_FIELDS[1:]}})


def chamfer_f1_nc(
    pred: TriMesh,
    gt: TriMesh,
    tau: float = 0.05,
    samples: int = 10000,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Bidirectional nearest-neighbor metrics on seeded surface samples.

    cd is the mean of both directions' mean distances (meters), f1 the
    harmonic mean of precision/recall at tau, nc the mean absolute cosine of
    matched normals. Returned in natural units; scene_report scales for the
    report.
    """
    if pred.is_empty or gt.is_empty:
        raise UndefinedMetricError("metrics undefined for an empty mesh")
    if tau <= 0:
        raise ValueError("tau must be positive")
    p_pts, p_nrm = surface_samples(pred, samples, seed=seed, with_normals=True)
    g_pts, g_nrm = surface_samples(gt, samples, seed=seed, with_normals=True)
    tree_g = cKDTree(g_pts)
    tree_p = cKDTree(p_pts)
    d_pg, idx_pg = tree_g.query(p_pts)
    d_gp, idx_gp = tree_p.query(g_pts)
    cd = 0.5 * (float(d_pg.mean()) + float(d_gp.mean()))
    precision = float((d_pg <= tau).mean())
    recall = float((d_gp <= tau).mean())
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    nc_pg = np.abs(np.einsum("ij,ij->i", p_nrm, g_nrm[idx_pg])).mean()
    nc_gp = np.abs(np.einsum("ij,ij->i", g_nrm, p_nrm[idx_gp])).mean()
    nc = 0.5 * (float(nc_pg) + float(nc_gp))
    return cd, f1, nc


def object_recovery(pred: SceneGraph, gt_ids) -> float:
    """Percentage of ground-truth object ids with a nonempty predicted mesh."""
    gt_ids = list(gt_ids)
    if not gt_ids:
        raise ValueError("ground-truth id set is empty")
    have = sum(
        1
        for i in gt_ids
        if i in pred.nodes and not pred.nodes[i].mesh.is_empty
    )
    return 100.0 * have / len(gt_ids)


def scene_report(
    pred: SceneGraph,
    gt: SceneGraph,
    cfg: RunConfig | None = None,
    simulate_pred: bool = True,
) -> MetricReport:
    """Per-object and aggregate metrics of a reconstruction against its
    synthetic ground truth."""
    from .physics import classify_stability

    cfg = cfg or RunConfig()
    gt_ids = gt.object_ids()
    or_ratio = object_recovery(pred, gt_ids)

    per_object = {}
    cds, f1s, ncs = [], [], []
    for i in gt_ids:
        if i not in pred.nodes or pred.nodes[i].mesh.is_empty:
            continue
        pm = pred.nodes[i].posed_mesh()
        gm = gt.nodes[i].posed_mesh()
        cd, f1, nc = chamfer_f1_nc(
            pm, gm, tau=cfg.f1_threshold, samples=cfg.metric_samples, seed=cfg.seed
        )
        per_object[i] = {"cd": cd * 100.0, "f1": f1 * 100.0, "nc": nc * 100.0}
        cds.append(cd)
        f1s.append(f1)
        ncs.append(nc)
    if not cds:
        raise UndefinedMetricError("no recovered objects to evaluate")

    if simulate_pred:
        flags, stable_all = classify_stability(
            pred,
            duration=cfg.sim_duration,
            trans_tol=cfg.stable_trans_tol,
            rot_tol=cfg.stable_rot_tol,
            dt=cfg.sim_dt,
            contact_points=cfg.contact_points,
            stiffness=cfg.contact_stiffness,
        )
        ground = [i for i in pred.object_ids() if pred.support_parent(i) == pred.root]
        stable_ground = (
            100.0 * sum(flags[i] for i in ground) / len(ground) if ground else 100.0
        )
    else:
        stable_all = stable_ground = 0.0

    return MetricReport(
        cd=float(np.mean(cds)) * 100.0,
        f1=float(np.mean(f1s)) * 100.0,
        nc=float(np.mean(ncs)) * 100.0,
        stable_ground=stable_ground,
        stable_all=stable_all,
        or_ratio=or_ratio,
        per_object=per_object,
    )
