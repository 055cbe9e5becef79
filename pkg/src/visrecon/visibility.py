"""Point visibility per virtual view and aggregation into lines of sight.

Two sources are supported: the stock Hidden Point Removal operator
(spherical flipping plus a convex hull) and externally supplied per-pixel
masks aligned with rendered point-index maps.
"""

from __future__ import annotations

import os
import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geom import TriangleMesh


@dataclass
class LineOfSight:
    point: int              # index into the deduplicated cloud
    view_center: np.ndarray


def convex_hull3(points):
    """Outward-oriented triangulated convex hull of >= 4 points."""
    pts = np.asarray(getattr(points, "positions", points), dtype=np.float64)
    if len(pts) < 4:
        raise ValueError("convex hull needs at least 4 points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise ValueError("degenerate input for convex hull: %s"
                         % str(exc).splitlines()[0]) from None
    used = np.unique(hull.simplices)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    faces = remap[hull.simplices]
    # reorient so the winding normal agrees with qhull's outward equation
    tri = verts[faces]
    winding = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = (winding * hull.equations[:, :3]).sum(axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(vertices=verts, faces=faces)


def hpr_visible(cloud, viewpoint, radius_exponent=2.0):
    """Hidden Point Removal: indices of points visible from `viewpoint`.

    Points are flipped through a sphere of radius 10**radius_exponent times
    the largest viewpoint distance; a point is visible iff its flipped
    image lies on the convex hull of the flipped set plus the viewpoint
    origin.
    """
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    rel = pts - np.asarray(viewpoint, dtype=np.float64)
    norms = np.linalg.norm(rel, axis=1)
    if (norms == 0).any():
        raise ValueError("viewpoint coincides with a cloud point")
    radius = (10.0 ** radius_exponent) * norms.max()
    flipped = rel + 2.0 * (radius - norms)[:, None] * rel / norms[:, None]
    try:
        hull = ConvexHull(np.vstack([flipped, np.zeros(3)]))
    except QhullError:
        warnings.warn("degenerate flipped set in HPR; reporting all points "
                      "visible")
        return set(range(len(pts)))
    return set(int(v) for v in hull.vertices if v < len(pts))


def save_visibility_mask(mask, path):
    """Binary 8-bit PGM (P5), 255 = visible."""
    arr = np.ascontiguousarray(mask, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(("P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
                 .encode("ascii"))
        fh.write(arr.tobytes())


def load_visibility_mask(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError("%s: not a binary (P5) PGM" % path)
    w, h, maxval = (int(m.group(k)) for k in (1, 2, 3))
    if maxval != 255:
        raise ValueError("%s: expected 8-bit PGM, got maxval %d"
                         % (path, maxval))
    body = data[m.end():]
    if len(body) < w * h:
        raise ValueError("%s: truncated pixel data" % path)
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w)


def load_visibility_masks(dirpath, view_count, shapes=None):
    """Read `vis_<index>.pgm` for every view; `shapes` optionally carries
    the per-view index-map sizes to check against."""
    masks = []
    for i in range(view_count):
        path = os.path.join(dirpath, "vis_%d.pgm" % i)
        if not os.path.exists(path):
            raise FileNotFoundError("missing visibility mask for view %d: %s"
                                    % (i, path))
        mask = load_visibility_mask(path)
        if shapes is not None and tuple(mask.shape) != tuple(shapes[i]):
            raise ValueError("mask for view %d has shape %s, expected %s"
                             % (i, mask.shape, tuple(shapes[i])))
        masks.append(mask)
    return masks


def sights_from_masks(views, index_maps, masks, threshold=128):
    """One line of sight per (visible pixel with a point, view)."""
    out = []
    for cam, imap, mask in zip(views, index_maps, masks):
        if imap.index.shape != mask.shape:
            raise ValueError("index map %s and mask %s differ in size"
                             % (imap.index.shape, mask.shape))
        sel = (mask >= threshold) & (imap.index >= 0)
        for point in np.unique(imap.index[sel]):
            out.append(LineOfSight(point=int(point),
                                   view_center=cam.center))
    return out


def sights_from_visible_sets(views, visible_sets):
    """One line of sight per (visible point, view) pair, e.g. HPR output."""
    out = []
    for cam, visible in zip(views, visible_sets):
        center = cam.center
        for point in sorted(visible):
            out.append(LineOfSight(point=int(point), view_center=center))
    return out


def collect_lines_of_sight(views, index_maps=None, masks=None,
                           visible_sets=None, threshold=128):
    """Aggregate per-view visibility into deduplicated lines of sight.

    Exactly one of (`masks` with `index_maps`) or `visible_sets` must be
    given; duplicates of the same (point, view) pair collapse.
    """
    if (visible_sets is None) == (masks is None):
        raise ValueError("provide either visible_sets or masks+index_maps")
    if visible_sets is not None:
        raw = sights_from_visible_sets(views, visible_sets)
    else:
        if index_maps is None:
            raise ValueError("mask mode needs the matching index maps")
        raw = sights_from_masks(views, index_maps, masks, threshold)
    seen = set()
    out = []
    for s in raw:
        key = (s.point, s.view_center[0], s.view_center[1],
               s.view_center[2])
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def save_sights(sights, path):
    """ASCII dump: `point_index cx cy cz` per line."""
    with open(path, "w", encoding="ascii") as fh:
        for s in sights:
            fh.write("%d %.17g %.17g %.17g\n"
                     % (s.point, s.view_center[0], s.view_center[1],
                        s.view_center[2]))


def load_sights(path):
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for ln, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 4:
                raise ValueError("%s:%d: expected 4 fields" % (path, ln))
            out.append(LineOfSight(point=int(tok[0]),
                                   view_center=np.array(
                                       [float(tok[1]), float(tok[2]),
                                        float(tok[3])])))
    return out
