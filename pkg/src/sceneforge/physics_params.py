"""Per-object rigid-body parameters."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_DENSITY = 300.0  # kg/m^3, used when mass is derived from mesh volume


@dataclass(frozen=True)
class PhysicsParams:
    mass: float = 1.0  # kg
    friction: float = 0.6
    damping: float = 0.05
    restitution: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.friction < 0 or self.damping < 0:
            raise ValueError("friction and damping must be >= 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
