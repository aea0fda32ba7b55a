"""Regular tetrahedral lattice over the unit cube.

The grid is built once by the 6-tet (Kuhn) subdivision of every cell of an
n^3 cubic grid and its topology never changes afterwards; only the
per-vertex offsets are mutable. All derived connectivity (unique faces,
face adjacency, vertex neighbors, outward face orderings) is computed at
construction in a deterministic order so that two builds of the same
resolution are identical arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import NoSurfaceError
from .geometry import signed_volume

BOUNDARY = -1  # face_adjacency marker for the virtual exterior tet

# Outward-oriented face orderings of a positively oriented tet (a,b,c,d),
# listed opposite vertex a, b, c, d respectively.
_OUTWARD = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


@dataclass
class TetGrid:
    """Deformable tetrahedral lattice over [0,1]^3.

    Topology (tets, faces, adjacency, neighbors) is immutable after
    construction; ``offsets`` is the only mutable state. Concurrent reads
    are safe, mutation is single-writer.
    """

    rest_positions: np.ndarray  # (N, 3)
    offsets: np.ndarray  # (N, 3)
    tets: np.ndarray  # (K, 4), positive rest volume
    faces: np.ndarray  # (F, 3), sorted index triples, lexicographic order
    face_adjacency: np.ndarray  # (F, 2), owning tets; BOUNDARY fills slot 2
    neighbor_indptr: np.ndarray  # CSR over vertex neighbors
    neighbor_indices: np.ndarray
    resolution: int
    tet_faces: np.ndarray = field(repr=False, default=None)  # (K, 4) face ids

    @property
    def num_vertices(self):
        return len(self.rest_positions)

    @property
    def num_tets(self):
        return len(self.tets)

    @property
    def num_faces(self):
        return len(self.faces)

    @property
    def cell_size(self):
        return 1.0 / self.resolution

    def vertex_neighbors(self, i):
        """Edge-adjacent vertex indices of vertex i, ascending."""
        return self.neighbor_indices[self.neighbor_indptr[i] : self.neighbor_indptr[i + 1]]

    def deformed_positions(self) -> np.ndarray:
        """Current vertex positions: rest + offset."""
        return self.rest_positions + self.offsets

    def tet_corners(self, positions=None) -> np.ndarray:
        """(K, 4, 3) corner positions, deformed unless given explicitly."""
        if positions is None:
            positions = self.deformed_positions()
        return positions[self.tets]

    def tet_volumes(self, positions=None) -> np.ndarray:
        c = self.tet_corners(positions)
        return signed_volume(c[:, 0], c[:, 1], c[:, 2], c[:, 3])

    def rest_volumes(self) -> np.ndarray:
        return self.tet_volumes(self.rest_positions)

    def outward_face(self, tet_index, face_index):
        """The stored face reordered so its normal points out of the tet."""
        tet = self.tets[tet_index]
        want = set(self.faces[face_index])
        for opp in range(4):
            order = [tet[j] for j in _OUTWARD[opp]]
            if set(order) == want:
                return np.array(order, dtype=np.int64)
        raise ValueError("face does not belong to tet")


def build_lattice(resolution: int) -> TetGrid:
    """Freudenthal (6-tet Kuhn) subdivision of an n^3 grid over [0,1]^3.

    (n+1)^3 vertices, 6 n^3 tets, deterministic ordering; every tet is
    reoriented to positive rest volume at construction.
    """
    n = int(resolution)
    if n < 1:
        raise ValueError("resolution must be >= 1")

    m = n + 1
    # vertex id (i, j, k) -> (i * m + j) * m + k; coordinate = index / n
    grid = np.arange(m, dtype=np.float64) / n
    ii, jj, kk = np.meshgrid(grid, grid, grid, indexing="ij")
    rest = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)

    # Kuhn subdivision: one tet per axis permutation, every tet runs from
    # the cell's base corner to its far corner along a monotone path.
    axis_perms = list(permutations(range(3)))
    cells = np.arange(n)
    ci, cj, ck = np.meshgrid(cells, cells, cells, indexing="ij")
    base = np.stack([ci, cj, ck], axis=-1).reshape(-1, 3)  # (n^3, 3)

    tets = np.empty((len(base) * 6, 4), dtype=np.int64)
    eye = np.eye(3, dtype=np.int64)
    for p, perm in enumerate(axis_perms):
        c0 = base
        c1 = c0 + eye[perm[0]]
        c2 = c1 + eye[perm[1]]
        c3 = c2 + eye[perm[2]]
        ids = [
            (c[:, 0] * m + c[:, 1]) * m + c[:, 2] for c in (c0, c1, c2, c3)
        ]
        tets[p :: 6] = np.stack(ids, axis=1)

    # canonical orientation: positive signed rest volume
    corners = rest[tets]
    vol = signed_volume(corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3])
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]

    faces, face_adjacency, tet_faces = _unique_faces(tets)
    indptr, indices = _vertex_neighbors(tets, len(rest))

    return TetGrid(
        rest_positions=rest,
        offsets=np.zeros_like(rest),
        tets=tets,
        faces=faces,
        face_adjacency=face_adjacency,
        neighbor_indptr=indptr,
        neighbor_indices=indices,
        resolution=n,
        tet_faces=tet_faces,
    )


def _unique_faces(tets):
    k = len(tets)
    # instance layout is opp-major: rows [opp*k, (opp+1)*k) hold the face
    # opposite local corner ``opp`` of every tet
    corners = np.empty((4 * k, 3), dtype=np.int64)
    for opp in range(4):
        cols = [c for c in range(4) if c != opp]
        corners[opp * k : (opp + 1) * k] = tets[:, cols]
    key = np.sort(corners, axis=1)
    faces, inverse = np.unique(key, axis=0, return_inverse=True)

    tet_of_instance = np.tile(np.arange(k, dtype=np.int64), 4)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(faces))
    if counts.max() > 2:
        raise AssertionError("face shared by more than two tets")
    starts = np.concatenate([[0], np.cumsum(counts)])
    owners = np.full((len(faces), 2), BOUNDARY, dtype=np.int64)
    owners[:, 0] = tet_of_instance[order[starts[:-1]]]
    two = counts == 2
    owners[two, 1] = tet_of_instance[order[starts[:-1][two] + 1]]
    # owners within a face sorted ascending for determinism
    lo = np.minimum(owners[two, 0], owners[two, 1])
    hi = np.maximum(owners[two, 0], owners[two, 1])
    owners[two, 0], owners[two, 1] = lo, hi

    tet_faces = np.empty((k, 4), dtype=np.int64)
    for opp in range(4):
        tet_faces[:, opp] = inverse[opp * k : (opp + 1) * k]
    return faces, owners, tet_faces


def _vertex_neighbors(tets, n_vertices):
    pairs = []
    for a in range(4):
        for b in range(a + 1, 4):
            pairs.append(tets[:, [a, b]])
    edges = np.concatenate(pairs, axis=0)
    edges = np.concatenate([edges, edges[:, ::-1]], axis=0)
    edges = np.unique(edges, axis=0)
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    np.add.at(indptr, edges[:, 0] + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, edges[:, 1].copy()


def deformed_positions(grid: TetGrid) -> np.ndarray:
    return grid.deformed_positions()


def surface_candidate_faces(grid: TetGrid, occ_values, threshold=0.5):
    """Faces separating occupied from unoccupied tets, oriented outward.

    ``occ_values`` is a length-K array (soft values are thresholded with
    occ > threshold; the domain boundary counts as a permanently
    unoccupied exterior tet). Returns (face_indices, oriented_faces) where
    oriented_faces[(i)] is the vertex triple of faces[face_indices[i]]
    reordered so its normal points from the occupied side outward.
    """
    occ_values = np.asarray(occ_values, dtype=np.float64).reshape(-1)
    if len(occ_values) != grid.num_tets:
        raise ValueError(
            f"occupancy length {len(occ_values)} != tet count {grid.num_tets}"
        )
    occupied = occ_values > threshold

    adj = grid.face_adjacency
    occ0 = occupied[adj[:, 0]]
    occ1 = np.where(adj[:, 1] == BOUNDARY, False, occupied[np.maximum(adj[:, 1], 0)])
    sel = occ0 != occ1
    face_idx = np.nonzero(sel)[0]
    owner = np.where(occ0[sel], adj[sel, 0], adj[sel, 1])

    oriented = np.empty((len(face_idx), 3), dtype=np.int64)
    tet_rows = grid.tets[owner]
    face_rows = grid.faces[face_idx]
    # the opposite corner is the tet vertex absent from the face; its
    # outward ordering is fixed by the tet's canonical orientation
    in_face = np.zeros((len(face_idx), 4), dtype=bool)
    for col in range(4):
        in_face[:, col] = (tet_rows[:, col : col + 1] == face_rows).any(axis=1)
    opp_col = np.argmin(in_face, axis=1)
    for opp in range(4):
        rows = opp_col == opp
        oriented[rows] = tet_rows[np.ix_(rows.nonzero()[0], list(_OUTWARD[opp]))]
    return face_idx, oriented


def extracted_edges_closed(oriented_faces) -> bool:
    """True if every edge of the face set is shared by exactly two faces."""
    f = np.asarray(oriented_faces, dtype=np.int64)
    if len(f) == 0:
        return True
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))
