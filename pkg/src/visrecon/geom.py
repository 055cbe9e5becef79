"""Core geometric types: point clouds, triangle meshes, rays and cameras.

Vectors are plain numpy arrays of shape (3,) in scene units (meters unless
a caller says otherwise).  All types are immutable by convention once
constructed and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


@dataclass
class PointCloud:
    positions: np.ndarray                 # (n, 3) float64
    colors: np.ndarray | None = None      # (n, 3) uint8, optional

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be an (n, 3) array")
        if np.isnan(self.positions).any():
            raise ValueError("positions contain NaN coordinates")
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
            if self.colors.shape != self.positions.shape:
                raise ValueError("colors must match positions in shape")

    def __len__(self):
        return len(self.positions)


@dataclass
class TriangleMesh:
    vertices: np.ndarray   # (n, 3) float64
    faces: np.ndarray      # (m, 3) int64, counter-clockwise = outward

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if self.faces.size and self.faces.ndim != 2:
            raise ValueError("faces must be an (m, 3) array")
        self.faces = self.faces.reshape(-1, 3)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                bad = np.nonzero((self.faces < 0)
                                 | (self.faces >= len(self.vertices)))[0][0]
                raise ValueError("face %d references a vertex out of range"
                                 % bad)
            degen = (self.faces[:, 0] == self.faces[:, 1]) \
                | (self.faces[:, 1] == self.faces[:, 2]) \
                | (self.faces[:, 2] == self.faces[:, 0])
            if degen.any():
                raise ValueError("face %d repeats a vertex index"
                                 % np.nonzero(degen)[0][0])

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def aabb(self):
        if not len(self.vertices):
            raise ValueError("empty mesh has no bounding box")
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def face_normals(self):
        """Unit normals per face, right-hand rule over the winding."""
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        lens = np.linalg.norm(n, axis=1)
        lens[lens == 0] = 1.0
        return n / lens[:, None]


@dataclass
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def union(self, other):
        return Aabb(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray        # unit length
    max_range: float | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


@dataclass
class Hit:
    t: float                 # distance along the (unit) ray
    face: int
    point: np.ndarray
    normal: np.ndarray       # unit geometric normal of the hit face


@dataclass
class PinholeCamera:
    """Pinhole with camera x right, y down, z forward; world->camera
    rotation stored row-major; vertical field of view sets the focal
    length; pixels are square with centers at (u + 0.5, v + 0.5)."""

    center: np.ndarray
    rotation: np.ndarray       # (3, 3), world -> camera
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        rtr = self.rotation @ self.rotation.T
        if not np.allclose(rtr, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("field of view must be in (0, 180) degrees")

    @property
    def focal(self):
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def forward(self):
        return self.rotation[2]

    def project(self, points):
        """Project world points; returns (u, v, z, dist) arrays where (u, v)
        are continuous pixel coordinates and z is the camera-space depth."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = (pts - self.center) @ self.rotation.T
        z = cam[:, 2]
        safe = np.where(z != 0, z, 1.0)
        f = self.focal
        u = f * cam[:, 0] / safe + self.width / 2.0
        v = f * cam[:, 1] / safe + self.height / 2.0
        dist = np.linalg.norm(cam, axis=1)
        return u, v, z, dist

    def pixel_rays(self):
        """Unit world-space directions through every pixel center, shaped
        (height, width, 3)."""
        f = self.focal
        us = (np.arange(self.width) + 0.5) - self.width / 2.0
        vs = (np.arange(self.height) + 0.5) - self.height / 2.0
        uu, vv = np.meshgrid(us, vs)
        d = np.stack([uu / f, vv / f, np.ones_like(uu)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation


@dataclass
class PanoramicCamera:
    """Full-sphere camera emitting a fixed count of lattice directions."""

    center: np.ndarray
    n_rays: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.n_rays < 1:
            raise ValueError("a panoramic camera needs at least one ray")

    def directions(self):
        return fibonacci_directions(self.n_rays)


def fibonacci_directions(n):
    """n unit directions on the Fibonacci lattice.

    The i-th direction has z = 1 - 2(i + 0.5)/n and azimuth 2*pi*i / phi
    with phi the golden ratio; the half-cell offset keeps samples off the
    poles.  Deterministic in i and n.
    """
    if n < 1:
        raise ValueError("direction count must be >= 1")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * i / GOLDEN_RATIO
    out = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out


def look_at(center, target, fov_deg=60.0, width=256, height=256):
    """Pinhole camera at `center` whose principal ray passes through
    `target`; up is +z, falling back to +x when the view direction is
    within one degree of vertical."""
    center = np.asarray(center, dtype=np.float64)
    forward = unit(np.asarray(target, dtype=np.float64) - center)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ up)) > math.cos(math.radians(1.0)):
        up = np.array([1.0, 0.0, 0.0])
    right = unit(np.cross(forward, up))
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return PinholeCamera(center=center, rotation=rot, fov_deg=fov_deg,
                         width=width, height=height)
