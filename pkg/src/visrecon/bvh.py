"""Axis-aligned bounding-box tree over mesh faces with ray and distance
queries.

Construction splits at the centroid median of the node's longest axis,
which is deterministic (no SAH) and keeps golden tests stable.  Queries run
through the numba kernels in `_kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geom import Hit, TriangleMesh

DEFAULT_LEAF_SIZE = 4


@dataclass
class Bvh:
    mesh: TriangleMesh
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray    # child id, -1 for leaves
    node_right: np.ndarray
    node_start: np.ndarray   # leaf range into prim
    node_count: np.ndarray
    prim: np.ndarray         # face ids in leaf order
    eps_ray: float           # default self-intersection offset

    @property
    def n_nodes(self):
        return len(self.node_lo)

    def root_box(self):
        return self.node_lo[0].copy(), self.node_hi[0].copy()


def build_bvh(mesh, leaf_size=DEFAULT_LEAF_SIZE):
    """Median-split BVH; every face lands in exactly one leaf."""
    if mesh.n_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    v = mesh.vertices
    f = mesh.faces
    tri_lo = np.minimum(np.minimum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
    tri_hi = np.maximum(np.maximum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
    centroids = (tri_lo + tri_hi) * 0.5

    order = np.arange(mesh.n_faces, dtype=np.int64)
    node_lo, node_hi = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []

    def new_node(lo, hi):
        node_lo.append(lo)
        node_hi.append(hi)
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(0)
        node_count.append(0)
        return len(node_lo) - 1

    # (node id, start, end) ranges over `order`
    root = new_node(tri_lo[order].min(axis=0), tri_hi[order].max(axis=0))
    stack = [(root, 0, mesh.n_faces)]
    while stack:
        node, s, e = stack.pop()
        span = node_hi[node] - node_lo[node]
        if e - s <= leaf_size:
            node_start[node] = s
            node_count[node] = e - s
            continue
        axis = int(np.argmax(span))
        seg = order[s:e]
        key = centroids[seg, axis]
        mid = (e - s) // 2
        part = np.argsort(key, kind="stable")
        order[s:e] = seg[part]
        lseg = order[s:s + mid]
        rseg = order[s + mid:e]
        left = new_node(tri_lo[lseg].min(axis=0), tri_hi[lseg].max(axis=0))
        right = new_node(tri_lo[rseg].min(axis=0), tri_hi[rseg].max(axis=0))
        node_left[node] = left
        node_right[node] = right
        stack.append((right, s + mid, e))
        stack.append((left, s, s + mid))

    diag = float(np.linalg.norm(node_hi[0] - node_lo[0]))
    return Bvh(mesh=mesh,
               node_lo=np.asarray(node_lo, dtype=np.float64),
               node_hi=np.asarray(node_hi, dtype=np.float64),
               node_left=np.asarray(node_left, dtype=np.int64),
               node_right=np.asarray(node_right, dtype=np.int64),
               node_start=np.asarray(node_start, dtype=np.int64),
               node_count=np.asarray(node_count, dtype=np.int64),
               prim=order,
               eps_ray=1e-6 * diag)


def _tri_arrays(bvh):
    v = bvh.mesh.vertices
    f = bvh.mesh.faces
    v0 = v[f[:, 0]]
    return v0, v[f[:, 1]] - v0, v[f[:, 2]] - v0


def ray_cast_batch(bvh, origins, dirs, max_range=None, eps=None):
    """Nearest hits for many rays at once; returns (t, face) arrays with
    t = +inf and face = -1 where nothing was hit."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    if max_range is None:
        limit = np.full(len(origins), np.inf)
    else:
        limit = np.broadcast_to(np.asarray(max_range, dtype=np.float64),
                                (len(origins),)).copy()
    v0, e1, e2 = _tri_arrays(bvh)
    t, face = _kernels.ray_cast_many(
        bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
        bvh.node_start, bvh.node_count, bvh.prim,
        np.ascontiguousarray(v0), np.ascontiguousarray(e1),
        np.ascontiguousarray(e2), origins, dirs, limit,
        bvh.eps_ray if eps is None else float(eps))
    return t, face


def ray_cast(bvh, ray, eps=None):
    """Nearest intersection of one ray, or None."""
    limit = np.inf if ray.max_range is None else float(ray.max_range)
    t, face = ray_cast_batch(bvh, ray.origin[None, :], ray.direction[None, :],
                             max_range=[limit], eps=eps)
    if face[0] < 0:
        return None
    f = int(face[0])
    point = ray.origin + t[0] * ray.direction
    tri = bvh.mesh.faces[f]
    v = bvh.mesh.vertices
    n = np.cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]])
    norm = np.linalg.norm(n)
    if norm > 0:
        n = n / norm
    return Hit(t=float(t[0]), face=f, point=point, normal=n)


def closest_point_batch(bvh, queries):
    """Distance to the mesh and nearest face id for many query points."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    v = bvh.mesh.vertices
    f = bvh.mesh.faces
    d2, face = _kernels.closest_point_many(
        bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
        bvh.node_start, bvh.node_count, bvh.prim,
        np.ascontiguousarray(v[f[:, 0]]), np.ascontiguousarray(v[f[:, 1]]),
        np.ascontiguousarray(v[f[:, 2]]), queries)
    return np.sqrt(d2), face
