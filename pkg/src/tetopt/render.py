"""Differentiable tet-mesh renderer.

Per-pixel rays are cast against candidate triangle faces (BVH-accelerated,
bit-identical to brute force), hits are depth-sorted and composited
front-to-back with soft per-vertex visibility:

    m_k = D_k * prod_{i<k} (1 - D_i),   M = sum m_k,   R = sum m_k C_k

The backward pass returns exact reverse-mode gradients of that formula to
vertex colors, visibility logits, and vertex positions (through the hit
barycentrics; the hit set and depth order are frozen, and depth itself
carries no gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvh import TriangleBVH
from .geometry import RAY_T_MIN, ray_triangle_batch
from .lattice import TetGrid, surface_candidate_faces

_ORTHO_TOL = 1e-9


@dataclass
class Camera:
    """Pinhole camera: pixel-unit intrinsics plus a rigid world-to-camera map.

    Camera space looks down +z; pixel (x, y) sees direction
    ((x + .5 - cx)/fx, (y + .5 - cy)/fy, 1) in camera coordinates.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4) row-major rigid transform

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.world_to_camera[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("world_to_camera rotation block is not orthonormal")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    def center(self):
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def rays(self):
        """World-space rays through all pixel centers, row-major pixel order.

        Returns (origins (P, 3), dirs (P, 3)) with unit directions.
        """
        xs = np.arange(self.width) + 0.5
        ys = np.arange(self.height) + 0.5
        px, py = np.meshgrid(xs, ys)  # (H, W)
        d = np.stack(
            [(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px)],
            axis=-1,
        ).reshape(-1, 3)
        d_world = d @ self.rotation  # == (R^T d^T)^T
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        origins = np.broadcast_to(self.center(), d_world.shape).copy()
        return origins, d_world

    def project(self, points):
        """World points -> (pixel x, pixel y, camera depth z)."""
        p = np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation
        z = p[..., 2]
        return np.stack(
            [self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy, z],
            axis=-1,
        )


@dataclass
class VertexAttributes:
    """Per-vertex RGB colors and visibility logits."""

    colors: np.ndarray  # (N, 3)
    visibility_logits: np.ndarray  # (N,)

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.visibility_logits = np.asarray(
            self.visibility_logits, dtype=np.float64
        ).reshape(-1)
        if len(self.colors) != len(self.visibility_logits):
            raise ValueError("colors and visibility logits disagree on vertex count")
        if not (np.isfinite(self.colors).all() and np.isfinite(self.visibility_logits).all()):
            raise ValueError("vertex attributes must be finite")

    @property
    def visibility(self):
        """Per-vertex visibility D = sigmoid(logit), in (0, 1)."""
        x = self.visibility_logits
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        return out


@dataclass
class Image:
    """Float RGB image with an optional coverage mask."""

    rgb: np.ndarray  # (H, W, 3)
    mask: np.ndarray | None = None  # (H, W)

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError("rgb must be (H, W, 3)")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)
            if self.mask.shape != self.rgb.shape[:2]:
                raise ValueError("mask shape must match rgb")

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]


@dataclass
class HitList:
    """All ray-face hits of one render, CSR-indexed by pixel.

    Hits are sorted per pixel by (t, face slot); ``faces`` is the candidate
    face array (vertex index triples) the slots refer to. Ray geometry is
    kept so the backward pass can rebuild the intersection systems.
    """

    width: int
    height: int
    faces: np.ndarray  # (Fc, 3) candidate faces (grid vertex ids)
    pixel: np.ndarray  # (H,) pixel index per hit (row-major)
    face_slot: np.ndarray  # (H,) index into faces
    t: np.ndarray  # (H,)
    bary_uv: np.ndarray  # (H, 2) barycentrics of face vertices 1 and 2
    indptr: np.ndarray  # (W*H + 1,) CSR starts per pixel
    ray_origins: np.ndarray = field(repr=False, default=None)  # (P, 3)
    ray_dirs: np.ndarray = field(repr=False, default=None)  # (P, 3)

    @property
    def n_hits(self):
        return len(self.t)

    def counts(self):
        return np.diff(self.indptr)

    def pixel_hits(self, x, y):
        """Hits of pixel (x, y) as (face_slot, t, (w0, w1, w2)) tuples."""
        p = y * self.width + x
        s, e = self.indptr[p], self.indptr[p + 1]
        out = []
        for h in range(s, e):
            u, v = self.bary_uv[h]
            out.append((int(self.face_slot[h]), float(self.t[h]), (1.0 - u - v, u, v)))
        return out

    def bary_full(self):
        """(H, 3) barycentrics including the first vertex weight."""
        u, v = self.bary_uv[:, 0], self.bary_uv[:, 1]
        return np.stack([1.0 - u - v, u, v], axis=1)


class RayCaster:
    """Reusable BVH-backed caster for one grid and candidate face set."""

    def __init__(self, grid: TetGrid, faces, use_bvh=True):
        self.grid = grid
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        self.use_bvh = use_bvh and len(self.faces) > 0
        self._bvh = None
        if self.use_bvh:
            self._bvh = TriangleBVH(grid.deformed_positions()[self.faces])

    def refresh(self):
        """Refit acceleration bounds to the grid's current positions."""
        if self._bvh is not None:
            self._bvh.refit(self.grid.deformed_positions()[self.faces])

    def cast(self, camera: Camera) -> HitList:
        origins, dirs = camera.rays()
        tris = self.grid.deformed_positions()[self.faces]
        if len(self.faces) == 0:
            pairs = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        elif self._bvh is not None:
            pairs = self._bvh.candidate_pairs(origins, dirs)
        else:
            n_ray, n_tri = len(origins), len(tris)
            pairs = (
                np.repeat(np.arange(n_ray, dtype=np.int64), n_tri),
                np.tile(np.arange(n_tri, dtype=np.int64), n_ray),
            )
        return _hits_from_pairs(camera, origins, dirs, tris, self.faces, pairs)


def _hits_from_pairs(camera, origins, dirs, tris, faces, pairs):
    ray_idx, tri_idx = pairs
    n_pixels = camera.width * camera.height
    if len(ray_idx):
        hit, t, u, v = ray_triangle_batch(
            origins[ray_idx], dirs[ray_idx], tris[tri_idx], t_min=RAY_T_MIN
        )
        ray_idx, tri_idx = ray_idx[hit], tri_idx[hit]
        t, u, v = t[hit], u[hit], v[hit]
    else:
        t = u = v = np.empty(0, dtype=np.float64)
    order = np.lexsort((tri_idx, t, ray_idx))
    ray_idx, tri_idx = ray_idx[order], tri_idx[order]
    t, u, v = t[order], u[order], v[order]
    indptr = np.zeros(n_pixels + 1, dtype=np.int64)
    np.add.at(indptr, ray_idx + 1, 1)
    indptr = np.cumsum(indptr)
    return HitList(
        width=camera.width,
        height=camera.height,
        faces=faces,
        pixel=ray_idx,
        face_slot=tri_idx,
        t=t,
        bary_uv=np.stack([u, v], axis=1),
        indptr=indptr,
        ray_origins=origins,
        ray_dirs=dirs,
    )


def cast_rays(grid: TetGrid, faces, camera: Camera, use_bvh=True) -> HitList:
    """All ray-face intersections per pixel, depth-sorted.

    ``faces`` is an (Fc, 3) array of grid vertex triples. The BVH path and
    brute force produce identical hit lists; ties in t break by face slot.
    """
    return RayCaster(grid, faces, use_bvh=use_bvh).cast(camera)


def _padded(hits: HitList, values, fill=0.0):
    """Scatter per-hit values into a (pixels, max_hits[, ...]) dense array."""
    counts = hits.counts()
    width = int(counts.max()) if len(counts) and counts.max() > 0 else 0
    n_pixels = len(counts)
    rank = (n_pixels, width) + values.shape[1:]
    out = np.full(rank, fill, dtype=np.float64)
    if width == 0:
        return out, np.zeros((n_pixels, 0), dtype=bool)
    slot = np.arange(hits.n_hits) - hits.indptr[hits.pixel]
    out[hits.pixel, slot] = values
    live = np.zeros((n_pixels, width), dtype=bool)
    live[hits.pixel, slot] = True
    return out, live


def composite(hits: HitList, attrs: VertexAttributes, grid: TetGrid) -> Image:
    """Front-to-back soft compositing of a hit list into an RGB+mask image."""
    d_hit, c_hit = _interpolate(hits, attrs)
    d_pad, _ = _padded(hits, d_hit)
    c_pad, _ = _padded(hits, c_hit)
    n_pixels = hits.width * hits.height
    if d_pad.shape[1] == 0:
        return Image(
            rgb=np.zeros((hits.height, hits.width, 3)),
            mask=np.zeros((hits.height, hits.width)),
        )
    trans = np.cumprod(1.0 - d_pad, axis=1)
    trans_excl = np.concatenate([np.ones((n_pixels, 1)), trans[:, :-1]], axis=1)
    m = trans_excl * d_pad
    mask = m.sum(axis=1)
    rgb = (m[:, :, None] * c_pad).sum(axis=1)
    return Image(
        rgb=rgb.reshape(hits.height, hits.width, 3),
        mask=mask.reshape(hits.height, hits.width),
    )


def _interpolate(hits: HitList, attrs: VertexAttributes):
    bary = hits.bary_full()  # (H, 3)
    verts = hits.faces[hits.face_slot]  # (H, 3)
    d_vert = attrs.visibility[verts]  # (H, 3)
    c_vert = attrs.colors[verts]  # (H, 3, 3)
    d_hit = (bary * d_vert).sum(axis=1)
    c_hit = np.einsum("hj,hjc->hc", bary, c_vert)
    return d_hit, c_hit


def composite_backward(hits: HitList, attrs: VertexAttributes, grid: TetGrid,
                       grad_rgb, grad_mask):
    """Exact reverse-mode gradients of ``composite``.

    grad_rgb: (H, W, 3); grad_mask: (H, W) or None. Returns
    (grad_colors (N, 3), grad_visibility_logits (N,), grad_offsets (N, 3)).
    Hit membership and depth order are frozen; no gradient flows through t.
    """
    n_verts = grid.num_vertices
    grad_colors = np.zeros((n_verts, 3))
    grad_logits = np.zeros(n_verts)
    grad_offsets = np.zeros((n_verts, 3))
    if hits.n_hits == 0:
        return grad_colors, grad_logits, grad_offsets

    d_hit, c_hit = _interpolate(hits, attrs)
    d_pad, live = _padded(hits, d_hit)
    c_pad, _ = _padded(hits, c_hit)
    n_pixels, width = d_pad.shape

    trans = np.cumprod(1.0 - d_pad, axis=1)
    trans_excl = np.concatenate([np.ones((n_pixels, 1)), trans[:, :-1]], axis=1)

    g_rgb = np.asarray(grad_rgb, dtype=np.float64).reshape(n_pixels, 3)
    if grad_mask is None:
        g_mask = np.zeros(n_pixels)
    else:
        g_mask = np.asarray(grad_mask, dtype=np.float64).reshape(n_pixels)

    # dL/dm_k = dL/dM + dL/dR . C_k ; dL/dC_k = m_k dL/dR
    g_m = g_mask[:, None] + np.einsum("pc,pkc->pk", g_rgb, c_pad)
    m = trans_excl * d_pad
    g_c_pad = m[:, :, None] * g_rgb[:, None, :]

    # dL/dD_i = T_i (g_m_i - S_i) with the reverse recurrence
    # S_i = D_{i+1} g_m_{i+1} + (1 - D_{i+1}) S_{i+1}
    s = np.zeros_like(d_pad)
    for i in range(width - 2, -1, -1):
        s[:, i] = d_pad[:, i + 1] * g_m[:, i + 1] + (1.0 - d_pad[:, i + 1]) * s[:, i + 1]
    g_d_pad = trans_excl * (g_m - s)

    # back to flat per-hit arrays
    slot = np.arange(hits.n_hits) - hits.indptr[hits.pixel]
    g_d_hit = g_d_pad[hits.pixel, slot]
    g_c_hit = g_c_pad[hits.pixel, slot]

    bary = hits.bary_full()
    verts = hits.faces[hits.face_slot]
    d_vert = attrs.visibility[verts]
    c_vert = attrs.colors[verts]

    # attribute gradients through interpolation
    np.add.at(grad_colors, verts.reshape(-1),
              (bary[:, :, None] * g_c_hit[:, None, :]).reshape(-1, 3))
    g_logit_vert = bary * g_d_hit[:, None] * (d_vert * (1.0 - d_vert))
    np.add.at(grad_logits, verts.reshape(-1), g_logit_vert.reshape(-1))

    # barycentric gradients: dL/dw_j = D_j dL/dD_hit + C_j . dL/dC_hit
    g_w = d_vert * g_d_hit[:, None] + np.einsum("hjc,hc->hj", c_vert, g_c_hit)
    g_u = g_w[:, 1] - g_w[:, 0]
    g_v = g_w[:, 2] - g_w[:, 0]

    # position gradients: with A = [e1, e2, -dir] and x = (u, v, t) solving
    # A x = o - v0, a vertex perturbation gives dx = -w_k A^{-1} dv_k, so
    # dL/dv_k = -w_k A^{-T} (g_u, g_v, 0)
    pos = grid.deformed_positions()
    tri = pos[verts]  # (H, 3, 3)
    dirs = hits.ray_dirs[hits.pixel]
    a_mat = np.stack(
        [tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0], -dirs], axis=2
    )  # columns e1, e2, -d
    rhs = np.stack([g_u, g_v, np.zeros_like(g_u)], axis=1)
    y = np.linalg.solve(np.swapaxes(a_mat, 1, 2), rhs)  # A^{-T} g
    g_pos = -bary[:, :, None] * y[:, None, :]
    np.add.at(grad_offsets, verts.reshape(-1), g_pos.reshape(-1, 3))

    return grad_colors, grad_logits, grad_offsets


def mask_identity_residual(hits: HitList, attrs: VertexAttributes) -> float:
    """Max |M - (1 - prod(1 - D_k))| over pixels; analytically zero."""
    d_hit, _ = _interpolate(hits, attrs)
    d_pad, _ = _padded(hits, d_hit)
    if d_pad.shape[1] == 0:
        return 0.0
    trans = np.cumprod(1.0 - d_pad, axis=1)
    trans_excl = np.concatenate([np.ones((len(d_pad), 1)), trans[:, :-1]], axis=1)
    m = (trans_excl * d_pad).sum(axis=1)
    return float(np.abs(m - (1.0 - trans[:, -1])).max())


def visible_face_filter(grid: TetGrid, attrs: VertexAttributes, faces, cull_below):
    """Drop faces whose every vertex visibility is below ``cull_below``."""
    if cull_below is None:
        return np.asarray(faces, dtype=np.int64)
    faces = np.asarray(faces, dtype=np.int64)
    keep = (attrs.visibility[faces] >= cull_below).any(axis=1)
    return faces[keep]


def render(grid: TetGrid, camera: Camera, *, attrs: VertexAttributes = None,
           occ=None, mode="soft", threshold=0.5, cull_below=None,
           use_bvh=True) -> Image:
    """Render the grid through one camera.

    soft mode composites all lattice faces with the per-vertex visibility
    attributes (optionally culling all-invisible faces); hard mode draws
    the extracted occupancy surface opaque with flat headlight shading as a
    non-differentiable preview.
    """
    if mode == "soft":
        if attrs is None:
            raise ValueError("soft rendering needs vertex attributes")
        faces = visible_face_filter(grid, attrs, grid.faces, cull_below)
        hits = cast_rays(grid, faces, camera, use_bvh=use_bvh)
        img = composite(hits, attrs, grid)
        img.rgb = np.clip(img.rgb, 0.0, 1.0)
        return img
    if mode == "hard":
        if occ is None:
            raise ValueError("hard rendering needs an occupancy field")
        values = occ.values if hasattr(occ, "values") else np.asarray(occ)
        _, oriented = surface_candidate_faces(grid, values, threshold)
        return render_hard_surface(grid.deformed_positions(), oriented, camera,
                                   use_bvh=use_bvh)
    raise ValueError(f"unknown render mode {mode!r}")


def render_hard_surface(positions, oriented_faces, camera: Camera, use_bvh=True) -> Image:
    """Opaque nearest-hit preview of an extracted triangle surface."""
    h, w = camera.height, camera.width
    rgb = np.zeros((h, w, 3))
    mask = np.zeros(h * w)
    faces = np.asarray(oriented_faces, dtype=np.int64)
    if len(faces) == 0:
        return Image(rgb=rgb, mask=mask.reshape(h, w))
    origins, dirs = camera.rays()
    tris = np.asarray(positions, dtype=np.float64)[faces]
    if use_bvh:
        pairs = TriangleBVH(tris).candidate_pairs(origins, dirs)
    else:
        n_ray, n_tri = len(origins), len(tris)
        pairs = (
            np.repeat(np.arange(n_ray, dtype=np.int64), n_tri),
            np.tile(np.arange(n_tri, dtype=np.int64), n_ray),
        )
    ray_idx, tri_idx = pairs
    if len(ray_idx):
        hit, t, _, _ = ray_triangle_batch(origins[ray_idx], dirs[ray_idx], tris[tri_idx])
        ray_idx, tri_idx, t = ray_idx[hit], tri_idx[hit], t[hit]
    else:
        t = np.empty(0)
    flat = rgb.reshape(-1, 3)
    if len(ray_idx):
        order = np.lexsort((tri_idx, t, ray_idx))
        ray_idx, tri_idx, t = ray_idx[order], tri_idx[order], t[order]
        first = np.ones(len(ray_idx), dtype=bool)
        first[1:] = ray_idx[1:] != ray_idx[:-1]
        ray_idx, tri_idx = ray_idx[first], tri_idx[first]
        tri = tris[tri_idx]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = n / np.where(norm == 0, 1.0, norm)
        lambert = np.abs((n * dirs[ray_idx]).sum(axis=1))
        shade = 0.15 + 0.85 * lambert
        flat[ray_idx] = shade[:, None]
        mask[ray_idx] = 1.0
    return Image(rgb=flat.reshape(h, w, 3), mask=mask.reshape(h, w))
