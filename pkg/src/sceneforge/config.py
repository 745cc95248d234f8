"""Run configuration: energy weights, sampling counts, simulator knobs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class RunConfig:
    # energy weights
    lambda_mask: float = 0.5
    lambda_depth: float = 10.0
    lambda_normal: float = 10.0
    lambda_pene: float = 5.0
    lambda_touch: float = 1.0
    lambda_stable: float = 1.0

    # shape-completion sampling
    samples_per_instance: int = 3

    # stability classification thresholds
    stable_trans_tol: float = 0.02  # meters
    stable_rot_tol: float = 0.0873  # radians (~5 degrees)

    # simulator
    sim_dt: float = 2e-3
    sim_duration: float = 2.0
    # shorter settling window used while ranking candidates; final
    # classification always runs the full sim_duration
    search_sim_duration: float = 1.0
    contact_points: int = 512
    contact_stiffness: float = 5e4  # N/m total per contacting pair

    # geometry
    grid_resolution: int = 64
    truncation_voxels: float = 4.0

    # observations
    views: int = 24
    image_width: int = 160
    image_height: int = 120

    # metrics
    f1_threshold: float = 0.05
    metric_samples: int = 10000

    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_mask", "lambda_depth", "lambda_normal", "lambda_pene"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.samples_per_instance < 1:
            raise ValueError("samples_per_instance must be >= 1")

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        fields = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return RunConfig(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)
