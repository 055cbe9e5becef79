"""Virtual view generation.

Reconstruction views: spherical orbits around a target, nadir/oblique
grids above a bounding box, or an explicit view file.  Conflation views:
panoramic camera centers seeded from a coarse occupancy grid's top-height
layer using a two-pass window maximum (begin/end layers per column).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Aabb, PanoramicCamera, PinholeCamera, fibonacci_directions, look_at

DEFAULT_FOV_DEG = 60.0
DEFAULT_RES = 256
DEFAULT_WINDOW = 3          # window size (voxels) for panoramic placement
DEFAULT_CELL_BUDGET = 100_000_000


class ViewFileError(ValueError):
    pass


def spherical_views(target, radius, count, fov_deg=DEFAULT_FOV_DEG,
                    width=DEFAULT_RES, height=DEFAULT_RES):
    """Cameras on a sphere around `target`, all aimed at it."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if count < 1:
        raise ValueError("need at least one view")
    target = np.asarray(target, dtype=np.float64)
    views = []
    for d in fibonacci_directions(count):
        views.append(look_at(target + radius * d, target, fov_deg=fov_deg,
                             width=width, height=height))
    return views


def _lattice_1d(lo, hi, spacing):
    """Camera coordinates covering [lo, hi]: one centered camera when a
    single spacing step covers the range, else a lattice at the given
    spacing, centered on the range."""
    span = hi - lo
    if span <= spacing * (1.0 + 1e-9):
        return [0.5 * (lo + hi)]
    n = int(math.floor(span / spacing + 1e-9)) + 1
    margin = 0.5 * (span - (n - 1) * spacing)
    return [lo + margin + i * spacing for i in range(n)]


def grid_views(bbox, height_agl, overlap, mode="nadir", oblique_angle=45.0,
               fov_deg=DEFAULT_FOV_DEG, width=DEFAULT_RES,
               height=DEFAULT_RES):
    """Aerial-survey style views above a bounding box.

    Nadir cameras sit on an XY lattice at bbox-top + height_agl looking
    straight down; footprint spacing is footprint * (1 - overlap).  In
    oblique mode each lattice node adds four cameras pitched by
    `oblique_angle` toward the cardinal azimuths.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    if height_agl <= 0:
        raise ValueError("height above ground must be positive")
    if mode not in ("nadir", "oblique"):
        raise ValueError("mode must be 'nadir' or 'oblique'")
    footprint = 2.0 * height_agl * math.tan(math.radians(fov_deg) / 2.0)
    spacing = footprint * (1.0 - overlap)
    if spacing <= 0:
        raise ValueError("footprint spacing is not positive")
    z = float(bbox.hi[2]) + height_agl
    xs = _lattice_1d(float(bbox.lo[0]), float(bbox.hi[0]), spacing)
    ys = _lattice_1d(float(bbox.lo[1]), float(bbox.hi[1]), spacing)
    ang = math.radians(oblique_angle)
    views = []
    for y in ys:
        for x in xs:
            center = np.array([x, y, z])
            views.append(look_at(center, center + np.array([0.0, 0.0, -1.0]),
                                 fov_deg=fov_deg, width=width, height=height))
            if mode == "oblique":
                for az in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                    fwd = np.array([az[0] * math.sin(ang),
                                    az[1] * math.sin(ang),
                                    -math.cos(ang)])
                    views.append(look_at(center, center + fwd,
                                         fov_deg=fov_deg, width=width,
                                         height=height))
    return views


def load_view_file(path):
    """One camera per line: px py pz tx ty tz fov_deg width height."""
    views = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            tok = body.split()
            if len(tok) != 9:
                raise ViewFileError("%s:%d: expected 9 fields, got %d"
                                    % (path, ln, len(tok)))
            try:
                vals = [float(v) for v in tok]
            except ValueError:
                raise ViewFileError("%s:%d: non-numeric field"
                                    % (path, ln)) from None
            views.append(look_at(vals[0:3], vals[3:6], fov_deg=vals[6],
                                 width=int(vals[7]), height=int(vals[8])))
    if not views:
        raise ViewFileError("%s: no views" % path)
    return views


def save_view_file(views, path):
    with open(path, "w", encoding="ascii") as fh:
        for cam in views:
            c = cam.center
            t = cam.center + cam.forward
            fh.write("%.17g %.17g %.17g %.17g %.17g %.17g %.17g %d %d\n"
                     % (c[0], c[1], c[2], t[0], t[1], t[2], cam.fov_deg,
                        cam.width, cam.height))


@dataclass
class OccupancyGrid:
    origin: np.ndarray          # world position of voxel (0, 0, 0) corner
    voxel: float
    occupied: np.ndarray        # (p, q, r) bool
    top_height: np.ndarray      # (p, q) int: highest occupied k, -1 if none

    @property
    def dims(self):
        return self.occupied.shape

    def voxel_center(self, i, j, k):
        return self.origin + (np.array([i, j, k], dtype=np.float64) + 0.5) \
            * self.voxel

    def dump_layers(self, path):
        """ASCII dump, one z layer per block ('#' occupied, '.' free)."""
        p, q, r = self.occupied.shape
        with open(path, "w", encoding="ascii") as fh:
            for k in range(r):
                fh.write("layer %d\n" % k)
                for j in range(q - 1, -1, -1):
                    fh.write("".join("#" if self.occupied[i, j, k] else "."
                                     for i in range(p)) + "\n")


def build_occupancy(mesh, voxel, cell_budget=DEFAULT_CELL_BUDGET):
    """Conservative voxelization: a cell is occupied iff a triangle
    touches it (separating-axis overlap test)."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    box = mesh.aabb()
    span = box.hi - box.lo
    dims = np.maximum(1, np.ceil(span / voxel - 1e-12).astype(np.int64))
    if int(dims[0]) * int(dims[1]) * int(dims[2]) > cell_budget:
        raise ValueError(
            "occupancy grid of %s cells exceeds the budget of %d; "
            "use a larger voxel size" % ("x".join(map(str, dims)),
                                         cell_budget))
    occ = np.zeros(tuple(dims), dtype=bool)
    origin = box.lo.copy()
    v = mesh.vertices
    half = voxel / 2.0
    for tri in mesh.faces:
        t0, t1, t2 = v[tri[0]], v[tri[1]], v[tri[2]]
        lo = np.minimum(np.minimum(t0, t1), t2)
        hi = np.maximum(np.maximum(t0, t1), t2)
        i0 = np.maximum(0, np.floor((lo - origin) / voxel - 1e-12)
                        .astype(np.int64))
        i1 = np.minimum(dims - 1, np.floor((hi - origin) / voxel + 1e-12)
                        .astype(np.int64))
        ii, jj, kk = np.meshgrid(np.arange(i0[0], i1[0] + 1),
                                 np.arange(i0[1], i1[1] + 1),
                                 np.arange(i0[2], i1[2] + 1), indexing="ij")
        centers = origin + (np.stack([ii, jj, kk], axis=-1) + 0.5) * voxel
        centers = centers.reshape(-1, 3)
        hit = _tri_box_overlap(t0, t1, t2, centers, half)
        flat = np.stack([ii.reshape(-1), jj.reshape(-1), kk.reshape(-1)],
                        axis=1)[hit]
        occ[flat[:, 0], flat[:, 1], flat[:, 2]] = True

    p, q, r = occ.shape
    ks = np.arange(r)
    top = np.where(occ.any(axis=2), (occ * (ks + 1)).argmax(axis=2), -1)
    # argmax of occ*(k+1) returns the highest occupied k because values
    # grow with k; empty columns were masked above
    top = top.astype(np.int64)
    return OccupancyGrid(origin=origin, voxel=float(voxel), occupied=occ,
                         top_height=top)


def _tri_box_overlap(t0, t1, t2, centers, half):
    """Vectorized triangle vs cube overlap (13 separating axes) for one
    triangle against many equally sized boxes."""
    v0 = t0 - centers
    v1 = t1 - centers
    v2 = t2 - centers
    ok = np.ones(len(centers), dtype=bool)

    # box axes
    for a in range(3):
        mn = np.minimum(np.minimum(v0[:, a], v1[:, a]), v2[:, a])
        mx = np.maximum(np.maximum(v0[:, a], v1[:, a]), v2[:, a])
        ok &= (mn <= half) & (mx >= -half)

    edges = (t1 - t0, t2 - t1, t0 - t2)

    # triangle plane
    n = np.cross(edges[0], edges[1])
    d = -(n * v0).sum(axis=1)
    rad = half * (abs(n[0]) + abs(n[1]) + abs(n[2]))
    ok &= abs(d) <= rad

    # cross axes
    for e in edges:
        for a in range(3):
            axis = np.zeros(3)
            axis[a] = 1.0
            ax = np.cross(axis, e)
            if not ax.any():
                continue
            p0 = v0 @ ax
            p1 = v1 @ ax
            p2 = v2 @ ax
            mn = np.minimum(np.minimum(p0, p1), p2)
            mx = np.maximum(np.maximum(p0, p1), p2)
            rad = half * (abs(ax[0]) + abs(ax[1]) + abs(ax[2]))
            ok &= (mn <= rad) & (mx >= -rad)
    return ok


def _window_max(field, radius):
    """Max over the (2r+1)^2 neighborhood, truncated at the borders."""
    p, q = field.shape
    out = np.full((p, q), np.iinfo(np.int64).min, dtype=np.int64)
    for di in range(-radius, radius + 1):
        si0, si1 = max(0, -di), min(p, p - di)
        ti0, ti1 = max(0, di), min(p, p + di)
        if si0 >= si1:
            continue
        for dj in range(-radius, radius + 1):
            sj0, sj1 = max(0, -dj), min(q, q - dj)
            tj0, tj1 = max(0, dj), min(q, q + dj)
            if sj0 >= sj1:
                continue
            np.maximum(out[ti0:ti1, tj0:tj1],
                       field[si0:si1, sj0:sj1],
                       out=out[ti0:ti1, tj0:tj1])
    return out


def panoramic_layers(grid, window=DEFAULT_WINDOW):
    """The per-column camera layer range [begin_k, end_k) of the placement
    algorithm: begin is the window max of the top-height layer, end is the
    window max of begin plus one."""
    begin_k = _window_max(grid.top_height, window)
    end_k = _window_max(begin_k, window) + 1
    return begin_k, end_k


def place_panoramic(grid, window=DEFAULT_WINDOW, rays_per_camera=4096):
    """Panoramic cameras at voxel centers over every occupied column,
    stacked vertically from the windowed top height to the neighborhood's
    windowed maximum."""
    if not grid.occupied.any():
        raise ValueError("occupancy grid has no occupied cells")
    begin_k, end_k = panoramic_layers(grid, window)
    p, q = grid.top_height.shape
    cams = []
    for i in range(p):
        for j in range(q):
            if grid.top_height[i, j] < 0:
                continue
            for k in range(begin_k[i, j], end_k[i, j]):
                cams.append(PanoramicCamera(center=grid.voxel_center(i, j, k),
                                            n_rays=rays_per_camera))
    return cams
