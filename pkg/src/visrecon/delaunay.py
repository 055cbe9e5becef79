"""Incremental 3D Delaunay tetrahedralization with a symbolic infinite vertex.

The complex partitions the convex hull of the input points into positively
oriented finite tets and completes the outside with one infinite tet per
hull facet, so every facet has exactly two incident tets.  All orientation
and circumsphere decisions go through the exact predicates, which makes the
structure deterministic and immune to degenerate inputs (duplicates are
merged, exact co-sphericity is broken by insertion order).

Segment traversal (`traverse_ray`) walks the face-adjacent chain of tets
crossed by a view-center-to-vertex segment; ties (segment exactly through a
facet, edge or vertex) are resolved by a symbolic lexicographic perturbation
of the segment endpoints so every query yields one well-defined chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .predicates import orient3d, sign_det2, _in_sphere_oriented

INFINITE_VERTEX = -1

# Face i is opposite vertex i; the triples are even permutations of the tet
# tuple, so orient3d(face, opposite vertex) equals the tet's orientation.
_FACES = ((1, 3, 2), (0, 2, 3), (0, 3, 1), (0, 1, 2))


class DegenerateInputError(ValueError):
    pass


@dataclass
class TetTraversal:
    """Chain of tets crossed by a segment from a view center to a vertex."""

    tets: list            # ordered tet ids, T_1 .. T_M
    behind: int           # tet entered by extending the ray past the endpoint
    crossing_dists: list  # distance from each facet crossing to the endpoint,
                          # one entry per consecutive pair in `tets`

    @property
    def last(self):
        return self.tets[-1]


class TetComplex:
    """Delaunay tetrahedralization plus face adjacency.

    Attributes
    ----------
    points : (n, 3) float64 array of deduplicated input points.
    dedup_map : (n_in,) int array mapping original point indices to rows of
        `points`.
    tets : (T, 4) int array; INFINITE_VERTEX (-1) marks the infinite vertex.
    neighbors : (T, 4) int array; neighbors[t, i] is the tet sharing the
        face opposite vertex i of tet t.
    """

    def __init__(self, points, dedup_map, tets, neighbors):
        self.points = np.asarray(points, dtype=np.float64)
        self.dedup_map = np.asarray(dedup_map, dtype=np.int64)
        self.tets = np.asarray(tets, dtype=np.int64)
        self.neighbors = np.asarray(neighbors, dtype=np.int64)
        self.finite_mask = (self.tets >= 0).all(axis=1)
        # Private caches for the walking code: plain tuples are much faster
        # to feed to the predicates than numpy rows.
        self._pts = [tuple(p) for p in self.points]
        self._tets = [tuple(int(v) for v in t) for t in self.tets]
        self._nbrs = [tuple(int(v) for v in t) for t in self.neighbors]
        self._vertex_tet = self._build_vertex_tets()

    def _build_vertex_tets(self):
        vt = np.full(len(self.points), -1, dtype=np.int64)
        for t, verts in enumerate(self._tets):
            for v in verts:
                if v >= 0 and vt[v] < 0:
                    vt[v] = t
        return vt

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_tets(self):
        return len(self._tets)

    def is_finite(self, t):
        return bool(self.finite_mask[t])

    def finite_tets(self):
        return np.nonzero(self.finite_mask)[0]

    def face(self, t, i):
        """Ordered vertex triple of face i of tet t (opposite vertex i)."""
        verts = self._tets[t]
        f = _FACES[i]
        return (verts[f[0]], verts[f[1]], verts[f[2]])

    def hull_facet(self, t):
        """For an infinite tet, its finite (hull) facet, ordered so the
        outside of the hull is on the positive orient3d side."""
        verts = self._tets[t]
        i = verts.index(INFINITE_VERTEX)
        a, b, c = self.face(t, i)
        # (face, infinite vertex) is positively oriented with the infinite
        # vertex "outside", i.e. orient3d(a, b, c, outside) > 0 symbolically,
        # which means the stored order already has the outside positive.
        return (a, b, c)

    def incident_tets(self, v):
        """All tets having vertex v, found by flooding from a seed tet."""
        seed = int(self._vertex_tet[v])
        if seed < 0:
            return []
        out = [seed]
        seen = {seed}
        stack = [seed]
        while stack:
            t = stack.pop()
            verts = self._tets[t]
            for i in range(4):
                if verts[i] == v:
                    continue
                n = self._nbrs[t][i]
                if n >= 0 and n not in seen and v in self._tets[n]:
                    seen.add(n)
                    out.append(n)
                    stack.append(n)
        return out

    def dump(self, path):
        """Debug dump: one tet per line, 4 vertex ids then 4 neighbor ids."""
        with open(path, "w", encoding="ascii") as fh:
            for t in range(self.n_tets):
                row = list(self._tets[t]) + list(self._nbrs[t])
                fh.write(" ".join(str(v) for v in row) + "\n")

    # -- point location -------------------------------------------------

    def locate(self, p, hint=None):
        """Walk to a finite tet containing p, or to an infinite tet whose
        hull facet p lies beyond.  `hint` is a tet id to start from."""
        p = (float(p[0]), float(p[1]), float(p[2]))
        return self._locate(p, 0 if hint is None else int(hint))

    def _locate(self, p, start):
        pts = self._pts
        tets = self._tets
        nbrs = self._nbrs
        t = start
        prev = -1
        # Deterministic pseudo-random face order breaks walk cycles on
        # co-planar point sets.
        rng_state = 0x9E3779B9
        for _ in range(16 * len(tets) + 64):
            verts = tets[t]
            if INFINITE_VERTEX in verts:
                i = verts.index(INFINITE_VERTEX)
                f = _FACES[i]
                a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
                if orient3d(pts[a], pts[b], pts[c], p) >= 0:
                    return t
                prev, t = t, nbrs[t][i]
                continue
            rng_state = (rng_state * 1103515245 + 12345) & 0x7FFFFFFF
            best = -1
            for k in range(4):
                i = (k + rng_state) & 3
                n = nbrs[t][i]
                if n == prev:
                    continue
                f = _FACES[i]
                a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
                if orient3d(pts[a], pts[b], pts[c], p) < 0:
                    best = i
                    break
            if best < 0:
                return t
            prev, t = t, nbrs[t][best]
        raise RuntimeError("point location walk failed to terminate")

    # -- segment traversal ------------------------------------------------

    def traverse_ray(self, vertex, view_center, hint=None):
        """Tets crossed by the segment from `view_center` to vertex id
        `vertex`, in crossing order, plus the tet behind the endpoint."""
        return _traverse(self, int(vertex), view_center, hint)


def tetrahedralize(points, jitter=None, seed=0):
    """Build the Delaunay complex of a point set.

    Exact duplicates are merged first (the mapping is kept on the result).
    `jitter`, when given, displaces every point by a uniform random offset
    of that magnitude after deduplication; it is the escape hatch for fully
    degenerate (e.g. all co-planar) inputs.
    """
    pts = np.asarray(getattr(points, "positions", points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (n, 3) point array")
    if not np.isfinite(pts).all():
        raise ValueError("points contain NaN or infinite coordinates")

    seen = {}
    dedup_map = np.empty(len(pts), dtype=np.int64)
    unique = []
    for i, row in enumerate(pts):
        key = (row[0], row[1], row[2])
        j = seen.get(key)
        if j is None:
            j = len(unique)
            seen[key] = j
            unique.append(key)
        dedup_map[i] = j
    upts = np.array(unique, dtype=np.float64)

    if len(upts) < 4:
        raise DegenerateInputError(
            "need at least 4 distinct points, got %d" % len(upts))

    if jitter is not None and jitter > 0:
        rng = np.random.default_rng(seed)
        upts = upts + rng.uniform(-jitter, jitter, size=upts.shape)

    builder = _Builder(upts)
    builder.run()
    return TetComplex(upts, dedup_map, builder.export_tets(),
                      builder.export_neighbors())


class _Builder:
    """Bowyer-Watson insertion over growing tet/neighbor tables."""

    def __init__(self, points):
        self.pts = [tuple(p) for p in points]
        self.order = _spatial_order(points)
        self.tets = []       # list of 4-tuples of vertex ids
        self.nbrs = []       # list of 4-lists of tet ids
        self.alive = []
        self.free = []
        self.last = 0

    def run(self):
        order = self._bootstrap()
        for v in order:
            self.insert(v)

    def _bootstrap(self):
        pts = self.pts
        order = list(self.order)
        a = order[0]
        b = order[1]
        # first point not collinear with (a, b), then not coplanar
        c = d = -1
        for k in range(2, len(order)):
            if not _collinear(pts[a], pts[b], pts[order[k]]):
                c = k
                break
        if c >= 0:
            for k in range(2, len(order)):
                if k == c:
                    continue
                if orient3d(pts[a], pts[b], pts[order[c]], pts[order[k]]) != 0:
                    d = k
                    break
        if c < 0 or d < 0:
            raise DegenerateInputError(
                "degenerate input: points are collinear or coplanar "
                "(enable jitter to proceed)")
        vc, vd = order[c], order[d]
        rest = [order[k] for k in range(2, len(order)) if k != c and k != d]
        if orient3d(pts[a], pts[b], pts[vc], pts[vd]) < 0:
            a, b = b, a
        t0 = self._new_tet((a, b, vc, vd))
        inf = [self._new_tet(_flip(_face_of((a, b, vc, vd), i)) +
                             (INFINITE_VERTEX,)) for i in range(4)]
        for i in range(4):
            self.nbrs[t0][i] = inf[i]
            # the infinite tet's face opposite INFINITE_VERTEX (index 3 in
            # its tuple) is the shared hull facet
            self.nbrs[inf[i]][3] = t0
        # wire infinite tets to each other: two hull facets of the initial
        # tet share an edge iff the corresponding faces share two vertices
        for i in range(4):
            for j in range(4):
                if i == j:
                    continue
                # face of inf[i] opposite the vertex it does not share
                # with inf[j]
                ti = self.tets[inf[i]]
                tj_set = set(self.tets[inf[j]])
                for k in range(3):
                    if ti[k] not in tj_set:
                        self.nbrs[inf[i]][k] = inf[j]
        self.last = t0
        return rest

    def _new_tet(self, verts):
        if self.free:
            t = self.free.pop()
            self.tets[t] = tuple(verts)
            self.nbrs[t] = [-1, -1, -1, -1]
            self.alive[t] = True
        else:
            t = len(self.tets)
            self.tets.append(tuple(verts))
            self.nbrs.append([-1, -1, -1, -1])
            self.alive.append(True)
        return t

    def _conflict(self, t, p):
        verts = self.tets[t]
        pts = self.pts
        if verts[3] == INFINITE_VERTEX or INFINITE_VERTEX in verts:
            i = verts.index(INFINITE_VERTEX)
            f = _FACES[i]
            a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
            o = orient3d(pts[a], pts[b], pts[c], p)
            if o != 0:
                return o > 0
            # coplanar with the hull facet: inside its circumdisk iff
            # strictly inside the circumsphere of the finite neighbor
            n = self.nbrs[t][i]
            nv = self.tets[n]
            return _in_sphere_oriented(pts[nv[0]], pts[nv[1]], pts[nv[2]],
                                       pts[nv[3]], p) > 0
        return _in_sphere_oriented(pts[verts[0]], pts[verts[1]],
                                   pts[verts[2]], pts[verts[3]], p) > 0

    def _locate(self, p):
        pts = self.pts
        tets = self.tets
        nbrs = self.nbrs
        t = self.last
        prev = -1
        rng_state = 0x2545F491
        for _ in range(16 * len(tets) + 64):
            verts = tets[t]
            if INFINITE_VERTEX in verts:
                i = verts.index(INFINITE_VERTEX)
                f = _FACES[i]
                a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
                if orient3d(pts[a], pts[b], pts[c], p) >= 0:
                    return t
                prev, t = t, nbrs[t][i]
                continue
            rng_state = (rng_state * 1103515245 + 12345) & 0x7FFFFFFF
            best = -1
            for k in range(4):
                i = (k + rng_state) & 3
                n = nbrs[t][i]
                if n == prev:
                    continue
                f = _FACES[i]
                a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
                if orient3d(pts[a], pts[b], pts[c], p) < 0:
                    best = i
                    break
            if best < 0:
                return t
            prev, t = t, nbrs[t][best]
        raise RuntimeError("insertion walk failed to terminate")

    def insert(self, v):
        p = self.pts[v]
        t0 = self._locate(p)
        if not self._conflict(t0, p):
            # p sits exactly on a boundary shared with the true conflict
            # region; scan the neighborhood, then everything, for a seed.
            t0 = self._find_conflict_near(t0, p)

        # grow the conflict cavity
        dead = {t0}
        stack = [t0]
        boundary = []  # (dead tet, face index, live neighbor)
        while stack:
            t = stack.pop()
            for i in range(4):
                n = self.nbrs[t][i]
                if n in dead:
                    continue
                if self._conflict(n, p):
                    dead.add(n)
                    stack.append(n)
                else:
                    boundary.append((t, i, n))

        for t in dead:
            self.alive[t] = False

        # one new tet per boundary facet, glued to the survivor across it
        created = []
        face_map = {}
        for t, i, live in boundary:
            f = _face_of(self.tets[t], i)
            nt = self._new_tet(f + (v,))
            created.append(nt)
            self.nbrs[nt][3] = live
            li = self.nbrs[live].index(t)
            self.nbrs[live][li] = nt
            # the three faces containing v match up between new tets by
            # their shared (undirected) edge of the cavity boundary
            for k in range(3):
                e = (f[(k + 1) % 3], f[(k + 2) % 3])
                key = (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])
                other = face_map.pop(key, None)
                if other is None:
                    face_map[key] = (nt, k)
                else:
                    ot, ok = other
                    self.nbrs[nt][k] = ot
                    self.nbrs[ot][ok] = nt
        for t in dead:
            self.free.append(t)
        if face_map:
            raise RuntimeError("cavity boundary was not watertight")
        self.last = created[0]

    def _find_conflict_near(self, t0, p):
        seen = {t0}
        queue = [t0]
        qi = 0
        while qi < len(queue):
            t = queue[qi]
            qi += 1
            if self._conflict(t, p):
                return t
            for n in self.nbrs[t]:
                if n >= 0 and n not in seen:
                    seen.add(n)
                    queue.append(n)
        raise RuntimeError("no conflict tet found for inserted point")

    def export_tets(self):
        keep = [t for t in range(len(self.tets)) if self.alive[t]]
        self.remap = {t: i for i, t in enumerate(keep)}
        return np.array([self.tets[t] for t in keep], dtype=np.int64)

    def export_neighbors(self):
        keep = [t for t in range(len(self.tets)) if self.alive[t]]
        return np.array([[self.remap[n] for n in self.nbrs[t]] for t in keep],
                        dtype=np.int64)


class _SegSigns:
    """Orientation of complex edges against a fixed directed segment.

    s(u, v) is the sign of orient3d(a, b, u, v) for the segment a -> b.
    Exact zeros (the segment's supporting line meets the edge's line) are
    resolved as if the start point a were displaced by an infinitesimal
    (eps, eps^2, eps^3), which keeps every decision consistent with a
    single perturbed line.  `special` is the vertex id sitting exactly at
    a (the traversal endpoint), whose edges need the first-order rule.
    """

    def __init__(self, a, b, pts, special=-1):
        self.a = a
        self.b = b
        self.pts = pts
        self.special = special
        self.cache = {}

    def __call__(self, u, v):
        if u > v:
            return -self(v, u)
        key = (u, v)
        s = self.cache.get(key)
        if s is None:
            a, b = self.a, self.b
            if u == self.special or v == self.special:
                other = self.pts[v if u == self.special else u]
                # derivative of the determinant when a (== the special
                # vertex position) is displaced: cross(b - a, other - a)
                s = self._cascade((b[0] - a[0], b[1] - a[1], b[2] - a[2]),
                                  (other[0] - a[0], other[1] - a[1],
                                   other[2] - a[2]))
                if v == self.special:
                    s = -s
                if s == 0:
                    s = 1 if u < v else -1
            else:
                pu, pv = self.pts[u], self.pts[v]
                s = orient3d(a, b, pu, pv)
                if s == 0:
                    # displacing a by delta shifts the determinant by
                    # exactly -delta . ((u-b) x (v-b)); cascade over the
                    # components of that cross product
                    s = -self._cascade((pu[0] - b[0], pu[1] - b[1],
                                        pu[2] - b[2]),
                                       (pv[0] - b[0], pv[1] - b[1],
                                        pv[2] - b[2]))
                    if s == 0:
                        # edge line through both segment points; an index
                        # rule stays antisymmetric, hence consistent
                        s = 1 if u < v else -1
            self.cache[key] = s
        return s

    @staticmethod
    def _cascade(e, f):
        s = sign_det2(e[1], e[2], f[1], f[2])
        if s == 0:
            s = sign_det2(e[2], e[0], f[2], f[0])
        if s == 0:
            s = sign_det2(e[0], e[1], f[0], f[1])
        return s


def _traverse(cx, vertex, view_center, hint=None):
    """March the segment backward from the endpoint vertex toward the view
    center; the reversed walk reaches the hull exit (whose infinite tet
    provably has the view center beyond it) in a handful of steps, which
    keeps far-away cameras cheap."""
    pts = cx._pts
    tets = cx._tets
    nbrs = cx._nbrs
    c = (float(view_center[0]), float(view_center[1]), float(view_center[2]))
    p = pts[vertex]
    if c == p:
        raise ValueError("view center coincides with the target vertex")
    w = (c[0] - p[0], c[1] - p[1], c[2] - p[2])   # travel direction p -> c
    seg_len = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    signs = _SegSigns(p, c, pts, special=vertex)

    last, behind = _endpoint_tets(cx, vertex, c)
    current = last
    chain = [current]
    dists = []
    entry = -1
    for _ in range(4 * len(tets) + 16):
        verts = tets[current]
        if INFINITE_VERTEX in verts:
            # first infinite tet on the way out: the view center is beyond
            # its hull facet (the crossing is monotone along the segment),
            # so it is a valid camera tet and the march ends
            break
        exit_face = -1
        for i in range(4):
            if i == entry:
                continue
            f = _face_of(verts, i)
            if (signs(f[0], f[2]) > 0 and signs(f[2], f[1]) > 0
                    and signs(f[1], f[0]) > 0):
                exit_face = i
                break
        if exit_face < 0:
            # no face is pierced ahead: the view center is inside this tet
            break
        f = _face_of(verts, exit_face)
        t_cross = _plane_crossing_t(p, w, pts[f[0]], pts[f[1]], pts[f[2]])
        if t_cross >= 1.0:
            break  # the crossing lies past the view center
        dists.append(t_cross * seg_len)
        nxt = nbrs[current][exit_face]
        entry = _shared_face_index(tets[nxt], nbrs[nxt], current)
        chain.append(nxt)
        current = nxt
    else:
        raise RuntimeError("segment traversal failed to terminate")

    chain.reverse()
    dists.reverse()
    return TetTraversal(tets=chain, behind=behind, crossing_dists=dists)


def _endpoint_tets(cx, vertex, c):
    """(T_M, T_{M+1}) around the endpoint: the incident tets whose cones at
    the endpoint contain the direction toward the view center and its
    opposite continuation."""
    pts = cx._pts
    p = pts[vertex]
    q_toward = c
    q_behind = (2.0 * p[0] - c[0], 2.0 * p[1] - c[1], 2.0 * p[2] - c[2])
    toward_fin = []
    toward_inf = []
    behind_fin = []
    behind_inf = []
    for t in cx.incident_tets(vertex):
        verts = cx._tets[t]
        if INFINITE_VERTEX in verts:
            i = verts.index(INFINITE_VERTEX)
            h = _face_of(verts, i)
            if vertex not in h:
                continue
            ha, hb, hc = pts[h[0]], pts[h[1]], pts[h[2]]
            if orient3d(ha, hb, hc, q_toward) >= 0:
                toward_inf.append(t)
            if orient3d(ha, hb, hc, q_behind) >= 0:
                behind_inf.append(t)
            continue
        ok_toward = True
        ok_behind = True
        for i in range(4):
            if verts[i] == vertex:
                continue  # the face opposite the endpoint is not a cone wall
            f = _face_of(verts, i)
            fa, fb, fc = pts[f[0]], pts[f[1]], pts[f[2]]
            if ok_toward and orient3d(fa, fb, fc, q_toward) < 0:
                ok_toward = False
            if ok_behind and orient3d(fa, fb, fc, q_behind) < 0:
                ok_behind = False
            if not ok_toward and not ok_behind:
                break
        if ok_toward:
            toward_fin.append(t)
        if ok_behind:
            behind_fin.append(t)
    last = min(toward_fin) if toward_fin else (
        min(toward_inf) if toward_inf else -1)
    behind = min(behind_fin) if behind_fin else (
        min(behind_inf) if behind_inf else -1)
    if last < 0 or behind < 0:
        raise RuntimeError("endpoint cone location failed")
    return last, behind


def _shared_face_index(verts, nbr_row, other):
    for i in range(4):
        if nbr_row[i] == other:
            return i
    return -1


def _plane_crossing_t(p, w, a, b, d):
    """Segment parameter (from p along w) where the plane of (a, b, d) is
    crossed, clamped to [0, 1]."""
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = d[0] - a[0], d[1] - a[1], d[2] - a[2]
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    denom = nx * w[0] + ny * w[1] + nz * w[2]
    if denom == 0:
        return 0.0
    t = (nx * (a[0] - p[0]) + ny * (a[1] - p[1])
         + nz * (a[2] - p[2])) / denom
    return min(1.0, max(0.0, t))


def _face_of(verts, i):
    f = _FACES[i]
    return (verts[f[0]], verts[f[1]], verts[f[2]])


def _flip(face):
    return (face[0], face[2], face[1])


def _collinear(a, b, c):
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    return (sign_det2(uy, uz, vy, vz) == 0 and
            sign_det2(uz, ux, vz, vx) == 0 and
            sign_det2(ux, uy, vx, vy) == 0)


def _spatial_order(points):
    """Deterministic Morton-code insertion order for short locate walks."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span == 0] = 1.0
    q = np.clip(((pts - lo) / span * 1023.0).astype(np.int64), 0, 1023)
    code = np.zeros(len(pts), dtype=np.int64)
    for bit in range(10):
        for axis in range(3):
            code |= ((q[:, axis] >> bit) & 1) << (3 * bit + axis)
    return np.argsort(code, kind="stable")
