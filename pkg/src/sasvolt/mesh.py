"""Triangle meshes, OBJ load/save, and BVH-accelerated ray casting.

The BVH is a flat-array median-split tree traversed by numba kernels;
each ray writes its own output slot, so results are deterministic
regardless of the thread schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import EmptyMesh

_EPS = 1e-12


@dataclass
class Mesh:
    """Indexed triangle mesh with per-face unit normals."""

    vertices: np.ndarray   # (V, 3) float64, meters
    triangles: np.ndarray  # (F, 3) int64, vertex indices
    normals: np.ndarray    # (F, 3) float64, unit length

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self) -> np.ndarray:
        """Axis-aligned bounds as a (2, 3) [min; max] array."""
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "Mesh":
        verts = self.vertices * float(scale) + np.asarray(offset, dtype=float)
        return make_mesh(verts, self.triangles)


def make_mesh(vertices, triangles) -> Mesh:
    """Build a Mesh, dropping degenerate (zero-area) triangles."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0 or len(vertices) == 0:
        raise EmptyMesh("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise ValueError("triangle index out of range")
    v = vertices[triangles]
    cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    area2 = np.linalg.norm(cross, axis=1)
    keep = area2 > _EPS
    if not np.any(keep):
        raise EmptyMesh("all triangles are degenerate")
    triangles = triangles[keep]
    normals = cross[keep] / area2[keep][:, None]
    return Mesh(vertices=vertices, triangles=triangles, normals=normals)


def load_obj(path) -> Mesh:
    """Read an ASCII Wavefront OBJ (v/f records, polygons fan-triangulated)."""
    verts, faces = [], []
    with open(path, "r") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not faces:
        raise EmptyMesh(f"no faces in {path}")
    return make_mesh(np.array(verts), np.array(faces))


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# primitive constructors (test targets and demo scenes)

def make_plate(center, normal, half_extent: float) -> Mesh:
    """Square plate of side 2*half_extent, two triangles, given normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    a = np.array([1.0, 0.0, 0.0])
    if abs(n @ a) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    c = np.asarray(center, dtype=float)
    h = half_extent
    verts = np.array([c - h * u - h * v, c + h * u - h * v,
                      c + h * u + h * v, c - h * u + h * v])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    mesh = make_mesh(verts, faces)
    # orient both faces along the requested normal
    if mesh.normals[0] @ n < 0:
        mesh = make_mesh(verts, faces[:, ::-1])
    return mesh


def make_icosphere(radius: float = 1.0, subdivisions: int = 2,
                   center=(0.0, 0.0, 0.0)) -> Mesh:
    """Geodesic sphere from a subdivided icosahedron, outward normals."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    verts /= np.linalg.norm(verts[0])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    verts = list(verts)
    cache: dict = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = 0.5 * (verts[i] + verts[j])
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
    verts = np.array(verts) * radius + np.asarray(center, dtype=float)
    return make_mesh(verts, faces)


def make_notched_sphere(radius: float = 1.0, subdivisions: int = 3,
                        center=(0.0, 0.0, 0.0), notch_axis=(1.0, 0.0, 0.0),
                        notch_angle_rad: float = 0.55,
                        notch_depth: float = 0.35) -> Mesh:
    """Sphere with a flat-bottomed circular notch cut along one axis.

    Vertices inside a cone of half-angle notch_angle_rad around the
    notch axis are pulled onto the plane at (1 - notch_depth) * radius,
    carving a recognisable asymmetric feature into an otherwise smooth
    target.
    """
    mesh = make_icosphere(radius=radius, subdivisions=subdivisions)
    axis = np.asarray(notch_axis, dtype=float)
    axis /= np.linalg.norm(axis)
    verts = mesh.vertices.copy()
    proj = verts @ axis
    cos_to_axis = proj / np.linalg.norm(verts, axis=1)
    inside = cos_to_axis > np.cos(notch_angle_rad)
    floor = (1.0 - notch_depth) * radius
    lateral = verts - proj[:, None] * axis[None, :]
    verts[inside] = lateral[inside] + floor * axis[None, :]
    verts += np.asarray(center, dtype=float)
    return make_mesh(verts, mesh.triangles)


# ---------------------------------------------------------------------------
# BVH

_LEAF_SIZE = 4


@dataclass
class Bvh:
    """Flat-array bounding volume hierarchy over a mesh's triangles."""

    node_min: np.ndarray    # (N, 3) float64
    node_max: np.ndarray
    node_left: np.ndarray   # (N,) int64; -1 marks a leaf
    node_right: np.ndarray
    node_start: np.ndarray  # leaf: first index into tri_order
    node_count: np.ndarray
    tri_order: np.ndarray   # permutation of triangle indices
    v0: np.ndarray          # (F, 3) triangle vertex / edge cache
    e1: np.ndarray
    e2: np.ndarray


def build_bvh(mesh: Mesh) -> Bvh:
    tri_verts = mesh.vertices[mesh.triangles]  # (F, 3, 3)
    lo = tri_verts.min(axis=1)
    hi = tri_verts.max(axis=1)
    centroids = tri_verts.mean(axis=1)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    tri_order = np.arange(len(mesh.triangles))

    def build(lo_idx: int, hi_idx: int) -> int:
        node = len(node_min)
        idx = tri_order[lo_idx:hi_idx]
        node_min.append(lo[idx].min(axis=0))
        node_max.append(hi[idx].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(lo_idx)
        node_count.append(hi_idx - lo_idx)
        if hi_idx - lo_idx > _LEAF_SIZE:
            cent = centroids[idx]
            axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
            order = np.argsort(cent[:, axis], kind="stable")
            tri_order[lo_idx:hi_idx] = idx[order]
            mid = (lo_idx + hi_idx) // 2
            node_left[node] = build(lo_idx, mid)
            node_right[node] = build(mid, hi_idx)
            node_count[node] = 0
        return node

    build(0, len(tri_order))
    v = tri_verts
    return Bvh(node_min=np.array(node_min), node_max=np.array(node_max),
               node_left=np.array(node_left, dtype=np.int64),
               node_right=np.array(node_right, dtype=np.int64),
               node_start=np.array(node_start, dtype=np.int64),
               node_count=np.array(node_count, dtype=np.int64),
               tri_order=tri_order.astype(np.int64),
               v0=np.ascontiguousarray(v[:, 0]),
               e1=np.ascontiguousarray(v[:, 1] - v[:, 0]),
               e2=np.ascontiguousarray(v[:, 2] - v[:, 0]))


@njit(cache=True, inline="always")
def _ray_tri(orig, d, v0, e1, e2):
    """Moller-Trumbore; returns hit distance or inf."""
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) < 1e-14:
        return np.inf
    inv = 1.0 / det
    tx = orig[0] - v0[0]
    ty = orig[1] - v0[1]
    tz = orig[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return np.inf
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return np.inf
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= 1e-9:
        return np.inf
    return t


@njit(cache=True, inline="always")
def _slab_hit(orig, inv_d, lo, hi, tmax):
    tmin = 0.0
    for k in range(3):
        t1 = (lo[k] - orig[k]) * inv_d[k]
        t2 = (hi[k] - orig[k]) * inv_d[k]
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
        if tmin > tmax:
            return False
    return True


@njit(cache=True, parallel=True)
def _bvh_first_hit(node_min, node_max, node_left, node_right, node_start,
                   node_count, tri_order, v0, e1, e2, origins, dirs,
                   out_t, out_tri):
    n_rays = origins.shape[0]
    for r in prange(n_rays):
        orig = origins[r]
        d = dirs[r]
        inv_d = np.empty(3)
        for k in range(3):
            if abs(d[k]) < 1e-300:
                inv_d[k] = 1e300 if d[k] >= 0 else -1e300
            else:
                inv_d[k] = 1.0 / d[k]
        best_t = np.inf
        best_tri = -1
        stack = np.empty(64, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if not _slab_hit(orig, inv_d, node_min[node], node_max[node], best_t):
                continue
            if node_left[node] < 0:
                start = node_start[node]
                for i in range(start, start + node_count[node]):
                    tri = tri_order[i]
                    t = _ray_tri(orig, d, v0[tri], e1[tri], e2[tri])
                    if t < best_t:
                        best_t = t
                        best_tri = tri
            else:
                stack[top] = node_left[node]
                top += 1
                stack[top] = node_right[node]
                top += 1
        out_t[r] = best_t
        out_tri[r] = best_tri


def first_hit(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray):
    """Nearest intersection per ray.

    Returns (t, tri_index); t = inf and tri_index = -1 for misses.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    out_t = np.empty(len(origins))
    out_tri = np.empty(len(origins), dtype=np.int64)
    _bvh_first_hit(bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
                   bvh.node_start, bvh.node_count, bvh.tri_order,
                   bvh.v0, bvh.e1, bvh.e2, origins, dirs, out_t, out_tri)
    return out_t, out_tri


def sample_surface(mesh: Mesh, n: int, seed=0) -> np.ndarray:
    """n points drawn uniformly over the surface (area-weighted faces)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    faces = rng.choice(len(areas), size=n, p=areas / areas.sum())
    v = mesh.vertices[mesh.triangles[faces]]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (w0[:, None] * v[:, 0] + w1[:, None] * v[:, 1]
            + w2[:, None] * v[:, 2])
