"""Pure geometric kernels.

Everything here is a stateless function on numpy arrays: signed volumes,
solid angles / winding numbers, point-triangle distances with analytic
gradients, dihedral angles, barycentric coordinates, ray-triangle
intersection and area-weighted surface sampling. Scalar convenience
wrappers sit on top of vectorized implementations so the hot paths stay
array-shaped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError

# Region tags for point_triangle_distance.
REGION_INTERIOR = 0
REGION_VERTEX_A = 1
REGION_VERTEX_B = 2
REGION_VERTEX_C = 3
REGION_EDGE_AB = 4
REGION_EDGE_AC = 5
REGION_EDGE_BC = 6

# Edge order used for the six dihedral angles of a tet, by local vertex index.
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass
class SurfaceMesh:
    """A triangle soup: (V, 3) float vertices and (T, 3) int triangles.

    Intended watertight when used for winding-number queries; that is not
    enforced here (the occupancy labeler emits a diagnostic instead).
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)


@dataclass
class SampleSet:
    """Points sampled from a surface, with their provenance.

    ``source_face`` and ``barycentric`` let callers recompute the points
    when the source vertices move (gradients flow through the frozen
    barycentric coordinates).
    """

    points: np.ndarray
    source_face: np.ndarray | None = None
    barycentric: np.ndarray | None = None
    seed: int = 0


def signed_volume(a, b, c, d):
    """Signed volume det[b-a, c-a, d-a] / 6. Broadcasts over leading dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    u, v, w = b - a, c - a, d - a
    det = (
        u[..., 0] * (v[..., 1] * w[..., 2] - v[..., 2] * w[..., 1])
        + u[..., 1] * (v[..., 2] * w[..., 0] - v[..., 0] * w[..., 2])
        + u[..., 2] * (v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0])
    )
    return det / 6.0


def signed_volume_grad(a, b, c, d):
    """Gradients of signed_volume w.r.t. each of the four corners.

    Returns (ga, gb, gc, gd), each broadcasting like the inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    gb = np.cross(c - a, d - a) / 6.0
    gc = np.cross(d - a, b - a) / 6.0
    gd = np.cross(b - a, c - a) / 6.0
    ga = -(gb + gc + gd)
    return ga, gb, gc, gd


def centroid(verts):
    """Arithmetic mean of four tet corners; (..., 4, 3) -> (..., 3)."""
    verts = np.asarray(verts, dtype=np.float64)
    return verts.mean(axis=-2)


def _dot(a, b):
    return (
        a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]
    )


def winding_number(points, surface: SurfaceMesh, chunk=4_000_000):
    """Generalized winding number of ``points`` w.r.t. a triangle mesh.

    Uses the two-argument-arctangent solid angle formula per triangle, so
    values stay finite and well-conditioned arbitrarily close to the
    surface. Returns a scalar for a single point, else an array of shape
    (P,). ~1 strictly inside a closed outward-oriented surface, ~0 outside.
    """
    if len(surface.triangles) == 0:
        raise ValueError("winding number of an empty surface is undefined")
    pts = np.asarray(points, dtype=np.float64)
    scalar_in = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    tri = surface.corners  # (T, 3, 3)
    n_pts, n_tri = len(pts), len(tri)

    out = np.zeros(n_pts, dtype=np.float64)
    # chunk is a pair budget so huge meshes don't blow memory
    rows = max(1, int(chunk // max(n_tri, 1)))
    for lo in range(0, n_pts, rows):
        p = pts[lo : lo + rows, None, :]  # (r, 1, 3)
        a = tri[None, :, 0, :] - p
        b = tri[None, :, 1, :] - p
        c = tri[None, :, 2, :] - p
        la = np.sqrt(_dot(a, a))
        lb = np.sqrt(_dot(b, b))
        lc = np.sqrt(_dot(c, c))
        num = _dot(a, np.cross(b, c))
        den = la * lb * lc + _dot(a, b) * lc + _dot(b, c) * la + _dot(c, a) * lb
        omega = 2.0 * np.arctan2(num, den)
        out[lo : lo + rows] = omega.sum(axis=1)
    out /= 4.0 * np.pi
    return float(out[0]) if scalar_in else out


def solid_angle(p, tri_corners):
    """Signed solid angle of one triangle seen from point p."""
    mesh = SurfaceMesh(np.asarray(tri_corners, dtype=np.float64), [[0, 1, 2]])
    return winding_number(p, mesh) * 4.0 * np.pi


def point_triangle_distance_batch(points, tris):
    """Closest points on triangles for every (point, triangle) pair.

    points: (P, 3); tris: (T, 3, 3).
    Returns (sq_dist (P, T), bary (P, T, 3), region (P, T) int).
    Region classification follows the standard seven-case Voronoi split
    of the triangle (interior / 3 vertices / 3 edges).
    """
    p = np.asarray(points, dtype=np.float64)[:, None, :]  # (P,1,3)
    tris = np.asarray(tris, dtype=np.float64)
    a = tris[None, :, 0, :]
    b = tris[None, :, 1, :]
    c = tris[None, :, 2, :]

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    shape = d1.shape
    u = np.empty(shape)
    v = np.empty(shape)
    region = np.empty(shape, dtype=np.int8)
    done = np.zeros(shape, dtype=bool)

    def assign(mask, uu, vv, tag):
        m = mask & ~done
        u[m] = uu[m] if isinstance(uu, np.ndarray) else uu
        v[m] = vv[m] if isinstance(vv, np.ndarray) else vv
        region[m] = tag
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 0.0, 0.0, REGION_VERTEX_A)
        assign((d3 >= 0) & (d4 <= d3), 1.0, 0.0, REGION_VERTEX_B)
        t_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), t_ab, 0.0, REGION_EDGE_AB)
        assign((d6 >= 0) & (d5 <= d6), 0.0, 1.0, REGION_VERTEX_C)
        t_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 0.0, t_ac, REGION_EDGE_AC)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign(
            (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
            1.0 - t_bc,
            t_bc,
            REGION_EDGE_BC,
        )
        denom = va + vb + vc
        # Fully degenerate triangles can reach here with denom == 0; the
        # edge cases above have already caught every such pair in practice,
        # but guard the division anyway.
        safe = np.where(denom == 0, 1.0, denom)
        assign(~done, vb / safe, vc / safe, REGION_INTERIOR)

    w0 = 1.0 - u - v
    bary = np.stack([w0, u, v], axis=-1)
    closest = bary[..., 0:1] * a + bary[..., 1:2] * b + bary[..., 2:3] * c
    diff = p - closest
    sq = _dot(diff, diff)
    return sq, bary, region


_REGION_NAMES = {
    REGION_INTERIOR: "interior",
    REGION_VERTEX_A: "vertex-a",
    REGION_VERTEX_B: "vertex-b",
    REGION_VERTEX_C: "vertex-c",
    REGION_EDGE_AB: "edge-ab",
    REGION_EDGE_AC: "edge-ac",
    REGION_EDGE_BC: "edge-bc",
}


def point_triangle_distance(p, tri):
    """Squared distance from p to one triangle.

    Returns (sq_dist, closest_point, region_name). Squared distance keeps
    the value smooth at zero; take sqrt for reporting.
    """
    tri = np.asarray(tri, dtype=np.float64).reshape(1, 3, 3)
    sq, bary, region = point_triangle_distance_batch(
        np.asarray(p, dtype=np.float64).reshape(1, 3), tri
    )
    closest = (bary[0, 0, :, None] * tri[0]).sum(axis=0)
    return float(sq[0, 0]), closest, _REGION_NAMES[int(region[0, 0])]


def point_triangle_distance_grad(p, tri):
    """Analytic gradients of the squared point-triangle distance.

    Returns (grad_p (3,), grad_tri (3, 3)). The closest point is treated
    as a projection onto a fixed convex set, so grad_p = 2 (p - c) and
    grad_v_i = -2 w_i (p - c) with w the closest point's barycentrics;
    exact wherever the closest point is unique, and the stated
    region-frozen subgradient on region boundaries.
    """
    p = np.asarray(p, dtype=np.float64)
    tri = np.asarray(tri, dtype=np.float64)
    _, bary, _ = point_triangle_distance_batch(p.reshape(1, 3), tri.reshape(1, 3, 3))
    w = bary[0, 0]
    closest = (w[:, None] * tri).sum(axis=0)
    r = 2.0 * (p - closest)
    grad_tri = -w[:, None] * r[None, :]
    return r, grad_tri


def dihedral_angles(verts):
    """Interior dihedral angles (degrees) along the six edges of a tet.

    Edge order follows TET_EDGES. Raises DegenerateGeometryError when the
    tet has (numerically) zero volume.
    """
    verts = np.asarray(verts, dtype=np.float64).reshape(1, 4, 3)
    scale = np.abs(verts).max() + 1.0
    if abs(signed_volume(*verts[0])) <= 1e-14 * scale**3:
        raise DegenerateGeometryError("dihedral angles of a degenerate tetrahedron")
    return dihedral_angles_batch(verts)[0]


def dihedral_angles_batch(verts):
    """(K, 4, 3) tet corners -> (K, 6) interior dihedral angles in degrees."""
    verts = np.asarray(verts, dtype=np.float64)
    out = np.empty(verts.shape[:-2] + (6,), dtype=np.float64)
    for e, (i, j) in enumerate(TET_EDGES):
        k, l = (m for m in range(4) if m not in (i, j))
        vi = verts[..., i, :]
        edge = verts[..., j, :] - vi
        en = edge / np.linalg.norm(edge, axis=-1, keepdims=True)
        u = verts[..., k, :] - vi
        w = verts[..., l, :] - vi
        u = u - _dot(u, en)[..., None] * en
        w = w - _dot(w, en)[..., None] * en
        cr = np.cross(u, w)
        out[..., e] = np.arctan2(np.linalg.norm(cr, axis=-1), _dot(u, w))
    return np.degrees(out)


def barycentric_2d(v_a, v_b, v_c, pixel):
    """Affine barycentric coordinates of a 2D point in a 2D triangle."""
    v_a = np.asarray(v_a, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    v_c = np.asarray(v_c, dtype=np.float64)
    pixel = np.asarray(pixel, dtype=np.float64)
    e1 = v_b - v_a
    e2 = v_c - v_a
    det = e1[0] * e2[1] - e1[1] * e2[0]
    if det == 0.0:
        raise DegenerateGeometryError("zero-area projected triangle")
    d = pixel - v_a
    wb = (d[0] * e2[1] - d[1] * e2[0]) / det
    wc = (e1[0] * d[1] - e1[1] * d[0]) / det
    return 1.0 - wb - wc, wb, wc


RAY_T_MIN = 1e-6
_RAY_DET_EPS = 1e-12


def ray_triangle_batch(origins, dirs, tris, t_min=RAY_T_MIN):
    """Moller-Trumbore over paired rays and triangles (no backface culling).

    origins, dirs: (M, 3); tris: (M, 3, 3). Returns (hit (M,) bool,
    t (M,), u (M,), v (M,)) where (u, v) are the barycentrics of the
    second and third triangle vertices. Misses leave t/u/v unspecified.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.float64)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    pvec = np.cross(d, e2)
    det = _dot(e1, pvec)
    ok = np.abs(det) > _RAY_DET_EPS
    inv = np.where(ok, det, 1.0)
    s = o - tris[:, 0]
    u = _dot(s, pvec) / inv
    qvec = np.cross(s, e1)
    v = _dot(d, qvec) / inv
    t = _dot(e2, qvec) / inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
    return hit, t, u, v


def ray_triangle_intersect(origin, direction, tri, t_min=RAY_T_MIN):
    """Single ray-triangle intersection.

    Returns None on a miss, else (t, (w0, w1, w2)) with t > t_min. Both
    triangle orientations are treated alike.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        raise ValueError("ray direction must be nonzero")
    hit, t, u, v = ray_triangle_batch(
        np.asarray(origin, dtype=np.float64).reshape(1, 3),
        direction.reshape(1, 3),
        np.asarray(tri, dtype=np.float64).reshape(1, 3, 3),
        t_min=t_min,
    )
    if not hit[0]:
        return None
    return float(t[0]), (float(1.0 - u[0] - v[0]), float(u[0]), float(v[0]))


def sample_surface(surface: SurfaceMesh, count, seed=0) -> SampleSet:
    """Area-weighted uniform sampling of a triangle mesh.

    Faces are chosen proportionally to area, points by the square-root
    barycentric trick; fully reproducible for a fixed seed.
    """
    if count < 1:
        raise ValueError("sample count must be >= 1")
    areas = surface.areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateGeometryError("cannot sample a zero-area surface")
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(areas), size=count, p=areas / total)
    r1 = rng.random(count)
    r2 = rng.random(count)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    corners = surface.corners[faces]
    points = np.einsum("ij,ijk->ik", bary, corners)
    return SampleSet(points=points, source_face=faces, barycentric=bary, seed=seed)
