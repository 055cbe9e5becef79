"""Visibility-driven s-t graph over tetrahedra, exact max-flow/min-cut,
and oriented surface extraction.

Every line of sight walks its tet chain and deposits capacity: a sentinel
source link on the tet holding the view center, a sink link on the tet
behind the endpoint, and a directed facet capacity at every crossing whose
soft weight decays toward the endpoint.  An adaptive incidence factor
(gamma) down-weights rays that graze the local surface; at
lambda_avw = 0 it is identically one and the construction reduces to the
classic baseline.  A facet-quality term adds symmetric capacities that make
well-shaped triangles expensive to cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .delaunay import INFINITE_VERTEX, _FACES
from .geom import TriangleMesh, unit

OUTER = 0   # source side (free space)
INNER = 1   # sink side (solid)

_SINK = -2  # sink marker in capacity keys; source edges live in `pinned`


@dataclass
class EnergyParams:
    alpha_max: float = 32.0      # visibility confidence scale
    sigma_soft: float = 0.01     # soft-visibility decay scale, scene units
    lambda_avw: float = 0.0      # adaptive weighting mix, 0 = baseline
    lambda_ql: float = 1.0       # facet-quality weight
    pin_infinite: bool = True    # source-link every infinite tet

    def __post_init__(self):
        if self.alpha_max <= 0:
            raise ValueError("alpha_max must be positive")
        if self.sigma_soft <= 0:
            raise ValueError("sigma_soft must be positive")
        if not 0.0 <= self.lambda_avw <= 1.0:
            raise ValueError("lambda_avw must be in [0, 1]")
        if self.lambda_ql < 0:
            raise ValueError("lambda_ql must be non-negative")


class StGraph:
    """Directed capacities over tets plus implicit source/sink.

    `caps` maps (u, v) tet pairs, or (u, _SINK), to accumulated float
    capacity.  `pinned` holds tets connected to the source by the sentinel
    capacity, which is materialized as 1 + sum of all finite capacities.
    """

    def __init__(self, n_tets):
        self.n_tets = n_tets
        self.caps = {}
        self.pinned = set()

    def add(self, u, v, cap):
        if cap != 0.0:
            key = (u, v)
            self.caps[key] = self.caps.get(key, 0.0) + cap

    def add_sink(self, u, cap):
        self.add(u, _SINK, cap)

    def pin_to_source(self, u):
        self.pinned.add(u)

    @property
    def sentinel(self):
        return 1.0 + math.fsum(self.caps.values())

    def sink_capacity(self, u):
        return self.caps.get((u, _SINK), 0.0)

    def facet_capacity(self, u, v):
        return self.caps.get((u, v), 0.0)

    def dump(self, path):
        """ASCII dump: `s <tet> <cap>`, `<tet> t <cap>`, `<u> <v> <cap>`."""
        sentinel = self.sentinel
        with open(path, "w", encoding="ascii") as fh:
            for u in sorted(self.pinned):
                fh.write("s %d %.17g\n" % (u, sentinel))
            for (u, v), cap in sorted(self.caps.items()):
                if v == _SINK:
                    fh.write("%d t %.17g\n" % (u, cap))
                else:
                    fh.write("%d %d %.17g\n" % (u, v, cap))


@dataclass
class CutLabels:
    labels: np.ndarray   # per-tet OUTER / INNER

    def __len__(self):
        return len(self.labels)


def soft_vis_weight(distance, params):
    """Visibility confidence at `distance` from the sight's endpoint:
    0 at the endpoint, saturating to alpha_max far away."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    s = distance / params.sigma_soft
    return params.alpha_max * (1.0 - math.exp(-0.5 * s * s))


def avw_gamma(ray_dir, face_normals, lambda_avw):
    """Incidence weight: mixes 1 with the best cosine between the ray and
    the candidate surface normals, clamped to [0, 1]."""
    if not 0.0 <= lambda_avw <= 1.0:
        raise ValueError("lambda_avw must be in [0, 1]")
    if lambda_avw == 0.0:
        return 1.0
    best = 0.0
    d = np.asarray(ray_dir, dtype=np.float64)
    for n in face_normals:
        c = float(d @ np.asarray(n, dtype=np.float64))
        if c > best:
            best = c
    best = min(1.0, best)
    return (1.0 - lambda_avw) + lambda_avw * best


def _facet_quality(pa, pb, pc):
    """2 * inradius / circumradius of the facet: 1 for equilateral,
    0 for degenerate triangles."""
    a = math.dist(pb, pc)
    b = math.dist(pa, pc)
    c = math.dist(pa, pb)
    s = 0.5 * (a + b + c)
    area2 = s * (s - a) * (s - b) * (s - c)
    if area2 <= 0 or a * b * c == 0:
        return 0.0
    area = math.sqrt(area2)
    # 2 * (area/s) / (abc / 4 area) = 8 area^2 / (s a b c)
    return min(1.0, 8.0 * area * area / (s * a * b * c))


def _endpoint_face_normals(cx, behind, vertex, pts):
    """Unit normals of the faces of the behind-the-endpoint tet that touch
    the endpoint, oriented into the tet (the direction of travel of the
    continuing ray).  For an infinite tet only its hull facet counts, with
    "into" meaning out of the hull."""
    verts = cx._tets[behind]
    normals = []
    if INFINITE_VERTEX in verts:
        h = cx.hull_facet(behind)  # outward-positive ordering
        if vertex in h:
            n = np.cross(np.subtract(pts[h[1]], pts[h[0]]),
                         np.subtract(pts[h[2]], pts[h[0]]))
            ln = np.linalg.norm(n)
            if ln > 0:
                normals.append(n / ln)
        return normals
    for i in range(4):
        if verts[i] == vertex:
            continue
        f = cx.face(behind, i)
        # face windings put the opposite vertex (tet interior) on the
        # positive side, so the winding normal already points inward
        n = np.cross(np.subtract(pts[f[1]], pts[f[0]]),
                     np.subtract(pts[f[2]], pts[f[0]]))
        ln = np.linalg.norm(n)
        if ln > 0:
            normals.append(n / ln)
    return normals


def build_st_graph(complex_, sights, params):
    """Assemble the capacitated graph from all lines of sight plus the
    facet-quality term."""
    cx = complex_
    pts = cx._pts
    graph = StGraph(cx.n_tets)

    if params.pin_infinite:
        for t in np.nonzero(~cx.finite_mask)[0]:
            graph.pin_to_source(int(t))

    sink_alpha = soft_vis_weight(params.sigma_soft, params)

    hints = {}
    for s in sights:
        if not 0 <= s.point < cx.n_vertices:
            raise ValueError("line of sight references unknown vertex %d"
                             % s.point)
        center = (float(s.view_center[0]), float(s.view_center[1]),
                  float(s.view_center[2]))
        tr = cx.traverse_ray(s.point, center, hint=hints.get(center))
        hints[center] = tr.tets[0]
        ray_dir = unit(np.subtract(pts[s.point], center))
        gamma = avw_gamma(ray_dir,
                          _endpoint_face_normals(cx, tr.behind, s.point, pts),
                          params.lambda_avw)
        graph.pin_to_source(tr.tets[0])
        graph.add_sink(tr.behind, gamma * sink_alpha)
        for i, d in enumerate(tr.crossing_dists):
            graph.add(tr.tets[i], tr.tets[i + 1],
                      gamma * soft_vis_weight(d, params))

    if params.lambda_ql > 0:
        for t in range(cx.n_tets):
            verts = cx._tets[t]
            for i in range(4):
                n = cx._nbrs[t][i]
                if n < t:
                    continue  # handle each facet once
                f = _face_of_tuple(verts, i)
                if INFINITE_VERTEX in f:
                    continue
                q = params.lambda_ql * _facet_quality(pts[f[0]], pts[f[1]],
                                                      pts[f[2]])
                graph.add(t, n, q)
                graph.add(n, t, q)
    return graph


def _face_of_tuple(verts, i):
    f = _FACES[i]
    return (verts[f[0]], verts[f[1]], verts[f[2]])


def max_flow(graph, scale_bits=44):
    """Exact max flow / min cut of the assembled graph.

    Capacities are scaled to 2**scale_bits and solved exactly in int64
    (Dinic); the sentinel source links are contracted into the source
    instead of materialized, so the headroom covers only finite
    capacities.  Returns the flow value in capacity units and per-tet
    OUTER/INNER labels from source reachability in the residual network.
    """
    n = graph.n_tets
    total = math.fsum(graph.caps.values())
    if total > 0:
        scale_bits = min(scale_bits,
                         int(61 - math.ceil(math.log2(total + 1))))
    scale = float(2 ** scale_bits)

    pinned = graph.pinned
    node_of = np.empty(n, dtype=np.int64)
    nxt = 2
    for u in range(n):
        if u in pinned:
            node_of[u] = 0
        else:
            node_of[u] = nxt
            nxt += 1

    us, vs, caps = [], [], []
    for (u, v), cap in graph.caps.items():
        icap = int(round(cap * scale))
        if icap <= 0:
            continue
        a = int(node_of[u])
        b = 1 if v == _SINK else int(node_of[v])
        if a == b or b == 0:
            continue  # self loops and edges into the source are irrelevant
        us.append(a)
        vs.append(b)
        caps.append(icap)
    if not us:
        labels = np.full(n, INNER, dtype=np.uint8)
        for u in pinned:
            labels[u] = OUTER
        return 0.0, CutLabels(labels=labels)

    first, nxt_e, to, cap_arr = _kernels.build_adjacency(
        np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64),
        np.asarray(caps, dtype=np.int64), nxt)
    flow_int = _kernels.dinic_max_flow(first, nxt_e, to, cap_arr, 0, 1)
    reach = _kernels.residual_reachable(first, nxt_e, to, cap_arr, 0)
    labels = np.where(reach[node_of], OUTER, INNER).astype(np.uint8)
    return flow_int / scale, CutLabels(labels=labels)


def cut_capacity(graph, labels):
    """Float capacity of the labeled cut (source side -> sink side)."""
    lab = labels.labels
    parts = []
    for (u, v), cap in graph.caps.items():
        if v == _SINK:
            if lab[u] == OUTER:
                parts.append(cap)
        elif lab[u] == OUTER and lab[v] == INNER:
            parts.append(cap)
    # sentinel edges: s -> u with u labeled inner would be cut
    sentinel = graph.sentinel
    for u in graph.pinned:
        if lab[u] == INNER:
            parts.append(sentinel)
    return math.fsum(parts)


def _edge_ring(cx, t0, a, b):
    """Tets around edge (a, b) in cyclic order, starting at t0."""
    ring = [t0]
    prev = -1
    cur = t0
    while True:
        verts = cx._tets[cur]
        nxt = -1
        for i in range(4):
            if verts[i] == a or verts[i] == b:
                continue  # faces holding the edge are opposite other verts
            n = cx._nbrs[cur][i]
            if n != prev:
                nxt = n
                break
        if nxt < 0 or nxt == t0:
            return ring
        ring.append(nxt)
        prev, cur = cur, nxt
        if len(ring) > cx.n_tets:
            raise RuntimeError("edge ring failed to close")


def _flip_smallest_inner_arc(lab, ring):
    """Around a singular edge, relabel the shortest inner arc to outer."""
    k = len(ring)
    arcs = []
    start = None
    for i in range(2 * k):
        if lab[ring[i % k]] == INNER:
            if start is None:
                start = i
        else:
            if start is not None and start < k:
                arcs.append((start, i))
            start = None
    if start is not None and start < k:
        arcs.append((start, 2 * k))
    arcs = [(s, e) for s, e in arcs if e - s < k]
    if len(arcs) < 2:
        return False
    s, e = min(arcs, key=lambda se: (se[1] - se[0], ring[se[0] % k]))
    for i in range(s, e):
        lab[ring[i % k]] = OUTER
    return True


def _vertex_components(cx, vertex, tets, lab, want):
    """Face-connected components of the tets with label `want` around a
    vertex (adjacency through faces containing the vertex)."""
    group = [t for t in tets if lab[t] == want]
    group_set = set(group)
    comps = []
    seen = set()
    for seed in group:
        if seed in seen:
            continue
        comp = [seed]
        seen.add(seed)
        stack = [seed]
        while stack:
            t = stack.pop()
            verts = cx._tets[t]
            for i in range(4):
                if verts[i] == vertex:
                    continue  # that face does not contain the vertex
                n = cx._nbrs[t][i]
                if n in group_set and n not in seen:
                    seen.add(n)
                    comp.append(n)
                    stack.append(n)
        comps.append(comp)
    return comps


def regularize_labels(complex_, labels, pinned=(), max_rounds=32):
    """Remove label singularities so the inner-tet union has a 2-manifold
    boundary: around every surface edge the inner tets must form one arc,
    and around every surface vertex both label sets must be connected.
    Flips only move tets to the outer side unless safe, and never touch
    source-pinned tets."""
    cx = complex_
    lab = labels.labels.copy()
    pinned = set(pinned)
    for _ in range(max_rounds):
        changed = False
        # edge pass: count boundary facets per undirected vertex edge
        edge_count = {}
        edge_seed = {}
        for t in range(cx.n_tets):
            if lab[t] != OUTER:
                continue
            verts = cx._tets[t]
            for i in range(4):
                n = cx._nbrs[t][i]
                if lab[n] != INNER:
                    continue
                f = _face_of_tuple(verts, i)
                for k in range(3):
                    a, b = f[k], f[(k + 1) % 3]
                    if a > b:
                        a, b = b, a
                    edge_count[(a, b)] = edge_count.get((a, b), 0) + 1
                    edge_seed[(a, b)] = t
        for (a, b), cnt in sorted(edge_count.items()):
            if cnt <= 2:
                continue
            ring = _edge_ring(cx, edge_seed[(a, b)], a, b)
            changed |= _flip_smallest_inner_arc(lab, ring)
        # vertex pass: both label sets around each surface vertex must be
        # face-connected
        surface_verts = set()
        for (a, b) in edge_count:
            surface_verts.add(a)
            surface_verts.add(b)
        for v in sorted(surface_verts):
            tets = cx.incident_tets(v)
            inner_comps = _vertex_components(cx, v, tets, lab, INNER)
            if len(inner_comps) > 1:
                inner_comps.sort(key=lambda c: (len(c), min(c)))
                for comp in inner_comps[:-1]:
                    for t in comp:
                        lab[t] = OUTER
                changed = True
            outer_comps = _vertex_components(cx, v, tets, lab, OUTER)
            if len(outer_comps) > 1:
                keep = max(
                    range(len(outer_comps)),
                    key=lambda i: (any(t in pinned for t in outer_comps[i]),
                                   len(outer_comps[i]),
                                   -min(outer_comps[i])))
                for i, comp in enumerate(outer_comps):
                    if i == keep:
                        continue
                    if any(t in pinned for t in comp):
                        continue  # never pull a source-pinned tet inside
                    for t in comp:
                        lab[t] = INNER
                    changed = True
        if not changed:
            break
    return CutLabels(labels=lab)


def extract_surface(complex_, labels):
    """Oriented boundary between outer- and inner-labeled tets.

    Every finite facet whose two tets are labeled differently is emitted,
    wound so its normal points into the outer tet; vertices are compacted.
    """
    cx = complex_
    lab = labels.labels
    tris = []
    for t in range(cx.n_tets):
        if lab[t] != OUTER:
            continue
        verts = cx._tets[t]
        for i in range(4):
            n = cx._nbrs[t][i]
            if lab[n] != INNER:
                continue
            f = _face_of_tuple(verts, i)
            if INFINITE_VERTEX in f:
                continue  # symbolic facet, not a real triangle
            # face_of orders the triple with the outer tet's interior on
            # the positive side, i.e. the winding normal points into the
            # outer tet already (for an infinite outer tet this is its
            # hull facet, wound toward the outside)
            tris.append(f)
    if not tris:
        return TriangleMesh(vertices=np.zeros((0, 3)),
                            faces=np.zeros((0, 3), dtype=np.int64))
    tris = np.array(tris, dtype=np.int64)
    used, inverse = np.unique(tris, return_inverse=True)
    return TriangleMesh(vertices=cx.points[used],
                        faces=inverse.reshape(-1, 3))
