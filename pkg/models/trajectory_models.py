import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from models.point_models import Point


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Sampled path on a uniform time grid. Chain paths also carry their state indices;
    `seed` records (master seed, trial index) when the path came from seed_stream.
    """
    times: np.ndarray
    positions: Tuple[Point, ...]
    dt: float
    seed: Optional[Tuple[int, int]] = None
    states: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions differ in length")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def start(self) -> Point:
        return self.positions[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    """Paired path with coupling time T (inf if the pair never merged within the horizon)"""
    times: np.ndarray
    first: Tuple[Point, ...]
    second: Tuple[Point, ...]
    coupling_time: float = math.inf
    mirror_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    states: Optional[Tuple[np.ndarray, np.ndarray]] = None
    mirror_deviation: float = 0.0
    label: str = ""

    def __len__(self) -> int:
        return len(self.first)

    @property
    def coupled(self) -> bool:
        return math.isfinite(self.coupling_time)

    def survives(self, t: float) -> bool:
        return self.coupling_time > t

    def merge_index(self) -> Optional[int]:
        if not self.coupled:
            return None
        return int(np.searchsorted(self.times, self.coupling_time, side="left"))


@dataclass(frozen=True, eq=False)
class MirrorMapFrame:
    """Orthonormal frame phi1 at x and its mirror image phi2 = m_xy phi1 at y (columns)"""
    x: Point
    y: Point
    phi1: np.ndarray
    phi2: np.ndarray
