"""Per-tet occupancy: ground-truth labeling, face probabilities, soft fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import SurfaceMesh, winding_number
from .lattice import BOUNDARY, TetGrid

log = logging.getLogger("tetopt")

# Verdicts exactly on the surface (w == 0.5) count as occupied.
INSIDE_WINDING = 0.5

_LOGIT_CLAMP = 1e-7


@dataclass
class OccupancyField:
    """Per-tet scalar occupancy, either hard {0,1} labels or soft (0,1)."""

    values: np.ndarray
    mode: str = "hard"  # "hard" | "soft"
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown occupancy mode {self.mode!r}")
        if self.mode == "hard" and not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("hard occupancy values must be 0 or 1")

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_logits(cls, logits):
        logits = np.asarray(logits, dtype=np.float64).reshape(-1)
        return cls(values=_sigmoid(logits), mode="soft", logits=logits)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), _LOGIT_CLAMP, 1.0 - _LOGIT_CLAMP)
    return np.log(p / (1.0 - p))


def label_occupancy(grid: TetGrid, target: SurfaceMesh) -> OccupancyField:
    """Hard occupancy of every tet from winding numbers of deformed centroids.

    A tet is occupied iff the generalized winding number of its centroid
    w.r.t. the target surface is >= 0.5. Recomputable after any
    deformation. Emits a diagnostic (and proceeds) when the target looks
    non-watertight: more than 1% of winding values far from both 0 and 1.
    """
    if len(target.triangles) == 0:
        raise ValueError("cannot label occupancy against an empty target surface")
    centroids = grid.tet_corners().mean(axis=1)
    w = winding_number(centroids, target)
    ambiguous = np.count_nonzero((w > 0.25) & (w < 0.75))
    if ambiguous > 0.01 * len(w):
        log.warning(
            "target surface looks non-watertight: %d/%d centroid winding "
            "numbers fall in (0.25, 0.75)",
            ambiguous,
            len(w),
        )
    return OccupancyField(values=(w >= INSIDE_WINDING).astype(np.float64), mode="hard")


def face_probability(grid: TetGrid, occ: OccupancyField, face_index: int) -> float:
    """Probability that a face separates occupied from unoccupied.

    P = O1 (1 - O2) + (1 - O1) O2; boundary faces see exterior occupancy 0,
    so P reduces to the single owner's occupancy.
    """
    t1, t2 = grid.face_adjacency[face_index]
    o1 = occ.values[t1]
    o2 = 0.0 if t2 == BOUNDARY else occ.values[t2]
    return float(o1 * (1.0 - o2) + (1.0 - o1) * o2)


def face_probabilities(grid: TetGrid, occ: OccupancyField) -> np.ndarray:
    """Vectorized face_probability over all faces."""
    adj = grid.face_adjacency
    o1 = occ.values[adj[:, 0]]
    o2 = np.where(adj[:, 1] == BOUNDARY, 0.0, occ.values[np.maximum(adj[:, 1], 0)])
    return o1 * (1.0 - o2) + (1.0 - o1) * o2


def occupancy_from_vertex_visibility(grid: TetGrid, visibility) -> OccupancyField:
    """Soft occupancy as the max of per-vertex visibility over each tet."""
    d = np.asarray(visibility, dtype=np.float64).reshape(-1)
    if len(d) != grid.num_vertices:
        raise ValueError(
            f"visibility length {len(d)} != vertex count {grid.num_vertices}"
        )
    return OccupancyField(values=d[grid.tets].max(axis=1), mode="soft")


def count_flipped(grid: TetGrid) -> int:
    """Number of tets whose deformed signed volume is <= 0."""
    return int(np.count_nonzero(grid.tet_volumes() <= 0.0))
