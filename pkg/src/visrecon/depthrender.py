"""Point-cloud and mesh depth rendering plus depth-comparison visibility
labels.

Depth is the Euclidean distance from the camera center along the pixel's
ray (not the z coordinate), so point depths and ray-cast mesh depths are
directly comparable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bvh import ray_cast_batch

VISIBLE = 1
OCCLUDED = 2
INVALID = 0


@dataclass
class DepthIndexMap:
    depth: np.ndarray   # (h, w) float64, +inf where empty
    index: np.ndarray   # (h, w) int64, -1 where empty

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class DepthMap:
    depth: np.ndarray   # (h, w) float64, +inf where empty

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class VisibilityLabelMap:
    labels: np.ndarray  # (h, w) uint8 of VISIBLE / OCCLUDED / INVALID

    @property
    def shape(self):
        return self.labels.shape


def render_point_depth(cloud, camera):
    """Splat each point into its pixel (1 px splats); the z-buffer keeps
    the nearest point, ties broken toward the smaller point index."""
    h, w = camera.height, camera.width
    depth = np.full((h, w), np.inf)
    index = np.full((h, w), -1, dtype=np.int64)
    u, v, z, dist = camera.project(cloud.positions)
    cols = np.floor(u).astype(np.int64)
    rows = np.floor(v).astype(np.int64)
    ok = (z > 0) & (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    if not ok.any():
        return DepthIndexMap(depth=depth, index=index)
    ids = np.nonzero(ok)[0]
    pix = rows[ids] * w + cols[ids]
    # sort by (pixel, depth, index); the first record per pixel wins
    order = np.lexsort((ids, dist[ids], pix))
    pix = pix[order]
    ids = ids[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix = pix[first]
    ids = ids[first]
    depth.reshape(-1)[pix] = dist[ids]
    index.reshape(-1)[pix] = ids
    return DepthIndexMap(depth=depth, index=index)


def render_mesh_depth(bvh, camera, eps=0.0):
    """One ray per pixel center against the mesh; +inf where nothing is
    hit."""
    dirs = camera.pixel_rays().reshape(-1, 3)
    origins = np.broadcast_to(camera.center, dirs.shape)
    t, face = ray_cast_batch(bvh, origins, dirs, eps=eps)
    depth = np.where(face >= 0, t, np.inf)
    return DepthMap(depth=depth.reshape(camera.height, camera.width))


def label_visibility(points, surface, eps=0.05, absolute=False):
    """Label every rendered point visible or occluded by comparing its
    depth with the surface depth at the same pixel.

    `eps` is a fraction of the view's finite point-depth range by default;
    `absolute=True` reads it in scene units instead.  Pixels whose surface
    depth is empty keep their point visible (no occluder evidence).
    """
    if points.shape != surface.shape:
        raise ValueError("point map %s and surface map %s differ in size"
                         % (points.shape, surface.shape))
    has_point = points.index >= 0
    labels = np.full(points.shape, INVALID, dtype=np.uint8)
    if not has_point.any():
        return VisibilityLabelMap(labels=labels)
    if absolute:
        tol = float(eps)
    else:
        finite = points.depth[has_point]
        rng = float(finite.max() - finite.min())
        if rng == 0.0:
            rng = max(float(finite.max()), 1.0)
        tol = float(eps) * rng
    no_surface = ~np.isfinite(surface.depth)
    diff = np.where(has_point & ~no_surface,
                    points.depth - np.where(no_surface, 0.0, surface.depth),
                    np.inf)
    vis = has_point & (no_surface | (np.abs(diff) <= tol))
    labels[vis] = VISIBLE
    labels[has_point & ~vis] = OCCLUDED
    return VisibilityLabelMap(labels=labels)


def unproject_pixel(camera, col, row, dist):
    """World point at distance `dist` along the ray through pixel center
    (col + 0.5, row + 0.5)."""
    f = camera.focal
    d = np.array([(col + 0.5 - camera.width / 2.0) / f,
                  (row + 0.5 - camera.height / 2.0) / f, 1.0])
    d /= np.linalg.norm(d)
    return camera.center + dist * (d @ camera.rotation)


# -- debug exports ---------------------------------------------------------

def save_pfm(depth, path):
    """Portable float map, little-endian, bottom row first."""
    arr = np.asarray(depth, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(("%d %d\n" % (arr.shape[1], arr.shape[0])).encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def load_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError("%s: not a grayscale PFM" % path)
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(w * h * 4),
                             dtype="<f4" if scale < 0 else ">f4")
        return data.reshape(h, w)[::-1].astype(np.float64)


def save_pgm16(depth, path):
    """16-bit PGM of finite depths scaled to the full range (empty = 0)."""
    arr = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(arr)
    out = np.zeros(arr.shape, dtype=">u2")
    if finite.any():
        lo = arr[finite].min()
        hi = arr[finite].max()
        span = (hi - lo) or 1.0
        out[finite] = (1 + (arr[finite] - lo) / span * 65534).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(("P5\n%d %d\n65535\n" % (arr.shape[1], arr.shape[0]))
                 .encode("ascii"))
        fh.write(out.tobytes())


def save_index_map(imap, path):
    """Raw int32 little-endian with an 8-byte width/height header."""
    with open(path, "wb") as fh:
        h, w = imap.index.shape
        fh.write(struct.pack("<II", w, h))
        fh.write(imap.index.astype("<i4").tobytes())


def load_index_map(path):
    with open(path, "rb") as fh:
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(w * h * 4), dtype="<i4")
        return data.reshape(h, w).astype(np.int64)
