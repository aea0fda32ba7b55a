"""Axis-aligned BVH over triangles with batched, vectorized traversal.

The tree topology is built once (median split on the longest centroid
extent); bounds are refit level-by-level when vertices move, which keeps
per-iteration cost flat during optimization. Traversal processes a whole
frontier of (ray, node) pairs per step instead of walking rays one at a
time, so candidate generation stays inside numpy.
"""

from __future__ import annotations

import numpy as np

_LEAF_SIZE = 4
# Conservative slab slack: extra candidates are harmless (the exact
# ray-triangle test decides), missed ones are not.
_AABB_EPS = 1e-9


class TriangleBVH:
    def __init__(self, triangles):
        """triangles: (T, 3, 3) corner positions used for the initial build."""
        tris = np.asarray(triangles, dtype=np.float64)
        if len(tris) == 0:
            raise ValueError("cannot build a BVH over zero triangles")
        self.n_tris = len(tris)
        self._build_topology(tris)
        self.refit(tris)

    def _build_topology(self, tris):
        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        centers = 0.5 * (lo + hi)

        order = np.arange(self.n_tris)
        node_start = []
        node_count = []
        node_left = []
        node_right = []
        node_depth = []

        stack = [(0, self.n_tris, 0, -1, False)]  # start, end, depth, parent, is_right
        while stack:
            start, end, depth, parent, is_right = stack.pop()
            idx = len(node_start)
            node_start.append(start)
            node_count.append(end - start)
            node_left.append(-1)
            node_right.append(-1)
            node_depth.append(depth)
            if parent >= 0:
                if is_right:
                    node_right[parent] = idx
                else:
                    node_left[parent] = idx
            if end - start <= _LEAF_SIZE:
                continue
            sub = order[start:end]
            c = centers[sub]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            half = (end - start) // 2
            part = np.argpartition(c[:, axis], half)
            order[start:end] = sub[part]
            mid = start + half
            node_start[idx] = -1  # internal
            stack.append((start, mid, depth + 1, idx, False))
            stack.append((mid, end, depth + 1, idx, True))

        self.order = order
        self.start = np.array(node_start, dtype=np.int64)
        self.count = np.array(node_count, dtype=np.int64)
        self.left = np.array(node_left, dtype=np.int64)
        self.right = np.array(node_right, dtype=np.int64)
        depth = np.array(node_depth, dtype=np.int64)
        self.is_leaf = self.start >= 0
        n_nodes = len(self.start)
        self.bounds_lo = np.empty((n_nodes, 3))
        self.bounds_hi = np.empty((n_nodes, 3))

        # leaves padded to fixed width so refit is one gather + min/max
        leaf_ids = np.nonzero(self.is_leaf)[0]
        pad = np.empty((len(leaf_ids), _LEAF_SIZE), dtype=np.int64)
        for row, leaf in enumerate(leaf_ids):
            s, c0 = self.start[leaf], self.count[leaf]
            members = self.order[s : s + c0]
            pad[row] = np.resize(members, _LEAF_SIZE)
        self._leaf_ids = leaf_ids
        self._leaf_pad = pad

        # internal nodes grouped by depth, deepest first, for bottom-up refit
        internal = np.nonzero(~self.is_leaf)[0]
        self._levels = [
            internal[depth[internal] == d]
            for d in range(depth.max(), -1, -1)
            if np.any(depth[internal] == d)
        ]

    def refit(self, triangles):
        """Recompute all node bounds for moved vertices; topology unchanged."""
        tris = np.asarray(triangles, dtype=np.float64)
        tlo = tris.min(axis=1) - _AABB_EPS
        thi = tris.max(axis=1) + _AABB_EPS
        self.bounds_lo[self._leaf_ids] = tlo[self._leaf_pad].min(axis=1)
        self.bounds_hi[self._leaf_ids] = thi[self._leaf_pad].max(axis=1)
        for level in self._levels:
            l, r = self.left[level], self.right[level]
            self.bounds_lo[level] = np.minimum(self.bounds_lo[l], self.bounds_lo[r])
            self.bounds_hi[level] = np.maximum(self.bounds_hi[l], self.bounds_hi[r])

    def candidate_pairs(self, origins, dirs):
        """All (ray, triangle) pairs whose AABB the ray enters with t >= 0.

        origins, dirs: (R, 3). Returns (ray_idx, tri_idx) int arrays; a
        conservative superset of the true hits.
        """
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n_rays = len(origins)
        with np.errstate(divide="ignore"):
            inv = 1.0 / dirs

        rays = np.arange(n_rays, dtype=np.int64)
        nodes = np.zeros(n_rays, dtype=np.int64)
        out_rays = []
        out_tris = []
        while len(rays):
            o = origins[rays]
            iv = inv[rays]
            lo = self.bounds_lo[nodes]
            hi = self.bounds_hi[nodes]
            with np.errstate(invalid="ignore"):
                t1 = (lo - o) * iv
                t2 = (hi - o) * iv
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            # NaN lanes (origin exactly on a slab with zero direction) fall
            # back to hit=True via the nan-reductions above plus this guard
            bad = np.isnan(tmin) | np.isnan(tmax)
            hit = ((tmax >= np.maximum(tmin, 0.0)) | bad)
            rays = rays[hit]
            nodes = nodes[hit]
            if not len(rays):
                break
            leaf = self.is_leaf[nodes]
            if np.any(leaf):
                lrays = rays[leaf]
                lnodes = nodes[leaf]
                counts = self.count[lnodes]
                starts = self.start[lnodes]
                # expand leaf ranges (<= _LEAF_SIZE wide) without a python loop
                width = int(counts.max())
                lane = np.arange(width, dtype=np.int64)
                live = lane[None, :] < counts[:, None]
                pos = (starts[:, None] + lane[None, :])[live]
                out_rays.append(np.repeat(lrays, counts))
                out_tris.append(self.order[pos])
            inner = ~leaf
            rays = rays[inner]
            nodes_in = nodes[inner]
            rays = np.concatenate([rays, rays])
            nodes = np.concatenate([self.left[nodes_in], self.right[nodes_in]])

        if not out_rays:
            return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        return np.concatenate(out_rays), np.concatenate(out_tris)
