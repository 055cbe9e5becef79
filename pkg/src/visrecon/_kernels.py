"""Numba kernels for BVH traversal: batched ray casts and closest points.

Kept in one module so the JIT cost is paid once; every function takes the
flattened BVH arrays produced by `bvh.build_bvh`.
"""

import numpy as np
from numba import njit

_STACK = 128


@njit(cache=True)
def _ray_box_t(ox, oy, oz, dx, dy, dz, lo, hi, tmax):
    """Entry t of the ray into the box, or -1.0 when the box is missed."""
    tmin = 0.0
    if dx != 0.0:
        inv = 1.0 / dx
        t1 = (lo[0] - ox) * inv
        t2 = (hi[0] - ox) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif ox < lo[0] or ox > hi[0]:
        return -1.0
    if dy != 0.0:
        inv = 1.0 / dy
        t1 = (lo[1] - oy) * inv
        t2 = (hi[1] - oy) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif oy < lo[1] or oy > hi[1]:
        return -1.0
    if dz != 0.0:
        inv = 1.0 / dz
        t1 = (lo[2] - oz) * inv
        t2 = (hi[2] - oz) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif oz < lo[2] or oz > hi[2]:
        return -1.0
    if tmin > tmax:
        return -1.0
    return tmin


@njit(cache=True)
def ray_cast_many(node_lo, node_hi, node_left, node_right, node_start,
                  node_count, prim, v0, e1, e2, origins, dirs, t_limit,
                  eps):
    """Nearest hit per ray: returns (t, face) with face -1 on miss."""
    n = origins.shape[0]
    out_t = np.full(n, np.inf)
    out_f = np.full(n, -1, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = t_limit[r]
        best_f = -1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            tbox = _ray_box_t(ox, oy, oz, dx, dy, dz, node_lo[node],
                              node_hi[node], best)
            if tbox < 0.0:
                continue
            left = node_left[node]
            if left < 0:
                s = node_start[node]
                for k in range(s, s + node_count[node]):
                    f = prim[k]
                    e1x, e1y, e1z = e1[f, 0], e1[f, 1], e1[f, 2]
                    e2x, e2y, e2z = e2[f, 0], e2[f, 1], e2[f, 2]
                    px = dy * e2z - dz * e2y
                    py = dz * e2x - dx * e2z
                    pz = dx * e2y - dy * e2x
                    det = e1x * px + e1y * py + e1z * pz
                    if det == 0.0:
                        continue
                    inv = 1.0 / det
                    tx = ox - v0[f, 0]
                    ty = oy - v0[f, 1]
                    tz = oz - v0[f, 2]
                    u = (tx * px + ty * py + tz * pz) * inv
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = ty * e1z - tz * e1y
                    qy = tz * e1x - tx * e1z
                    qz = tx * e1y - ty * e1x
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2x * qx + e2y * qy + e2z * qz) * inv
                    if eps < t < best:
                        best = t
                        best_f = f
            else:
                if top + 2 > _STACK:
                    continue
                stack[top] = node_right[node]
                top += 1
                stack[top] = left
                top += 1
        out_t[r] = best if best_f >= 0 else np.inf
        out_f[r] = best_f
    return out_t, out_f


@njit(cache=True)
def build_adjacency(us, vs, caps, n_nodes):
    """Paired-edge adjacency (reverse edge = e ^ 1) as linked lists."""
    m = len(us)
    first = np.full(n_nodes, -1, dtype=np.int64)
    nxt = np.empty(2 * m, dtype=np.int64)
    to = np.empty(2 * m, dtype=np.int64)
    cap = np.zeros(2 * m, dtype=np.int64)
    for i in range(m):
        e = 2 * i
        to[e] = vs[i]
        cap[e] = caps[i]
        nxt[e] = first[us[i]]
        first[us[i]] = e
        r = e + 1
        to[r] = us[i]
        cap[r] = 0
        nxt[r] = first[vs[i]]
        first[vs[i]] = r
    return first, nxt, to, cap


@njit(cache=True)
def dinic_max_flow(first, nxt, to, cap, s, t):
    """Exact max flow on int64 residual capacities (mutates cap)."""
    n = len(first)
    level = np.empty(n, dtype=np.int64)
    iters = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    path_edge = np.empty(n, dtype=np.int64)
    path_node = np.empty(n + 1, dtype=np.int64)
    flow = 0
    while True:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        queue[0] = s
        qh, qt = 0, 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            e = first[u]
            while e != -1:
                v = to[e]
                if cap[e] > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
                e = nxt[e]
        if level[t] < 0:
            return flow
        for i in range(n):
            iters[i] = first[i]
        top = 0
        path_node[0] = s
        while True:
            u = path_node[top]
            if u == t:
                aug = np.int64(2 ** 62)
                for i in range(top):
                    if cap[path_edge[i]] < aug:
                        aug = cap[path_edge[i]]
                flow += aug
                for i in range(top):
                    e = path_edge[i]
                    cap[e] -= aug
                    cap[e ^ 1] += aug
                # backtrack to the first saturated edge on the path
                newtop = top
                for i in range(top):
                    if cap[path_edge[i]] == 0:
                        newtop = i
                        break
                top = newtop
                continue
            advanced = False
            e = iters[u]
            while e != -1:
                v = to[e]
                if cap[e] > 0 and level[v] == level[u] + 1:
                    path_edge[top] = e
                    top += 1
                    path_node[top] = v
                    advanced = True
                    break
                e = nxt[e]
                iters[u] = e
            if not advanced:
                if top == 0:
                    break
                level[u] = -1
                top -= 1
    return flow


@njit(cache=True)
def residual_reachable(first, nxt, to, cap, s):
    """Nodes reachable from s over positive residual capacity."""
    n = len(first)
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    seen[s] = True
    queue[0] = s
    qh, qt = 0, 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        e = first[u]
        while e != -1:
            v = to[e]
            if cap[e] > 0 and not seen[v]:
                seen[v] = True
                queue[qt] = v
                qt += 1
            e = nxt[e]
    return seen


@njit(cache=True)
def _box_dist2(px, py, pz, lo, hi):
    d = 0.0
    if px < lo[0]:
        d += (lo[0] - px) ** 2
    elif px > hi[0]:
        d += (px - hi[0]) ** 2
    if py < lo[1]:
        d += (lo[1] - py) ** 2
    elif py > hi[1]:
        d += (py - hi[1]) ** 2
    if pz < lo[2]:
        d += (lo[2] - pz) ** 2
    elif pz > hi[2]:
        d += (pz - hi[2]) ** 2
    return d


@njit(cache=True)
def _tri_dist2(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Squared distance from a point to a triangle (region tests)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        qx = ax + v * abx - px
        qy = ay + v * aby - py
        qz = az + v * abz - pz
        return qx * qx + qy * qy + qz * qz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        qx = ax + w * acx - px
        qy = ay + w * acy - py
        qz = az + w * acz - pz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        qx = bx + w * (cx - bx) - px
        qy = by + w * (cy - by) - py
        qz = bz + w * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz
    denom = va + vb + vc
    if denom == 0.0:
        return apx * apx + apy * apy + apz * apz
    v = vb / denom
    w = vc / denom
    qx = ax + abx * v + acx * w - px
    qy = ay + aby * v + acy * w - py
    qz = az + abz * v + acz * w - pz
    return qx * qx + qy * qy + qz * qz


@njit(cache=True)
def closest_point_many(node_lo, node_hi, node_left, node_right, node_start,
                       node_count, prim, va, vb, vc, queries):
    """Squared distance and face index of the closest triangle per query."""
    n = queries.shape[0]
    out_d = np.full(n, np.inf)
    out_f = np.full(n, -1, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        px, py, pz = queries[r, 0], queries[r, 1], queries[r, 2]
        best = np.inf
        best_f = -1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_dist2(px, py, pz, node_lo[node], node_hi[node]) >= best:
                continue
            left = node_left[node]
            if left < 0:
                s = node_start[node]
                for k in range(s, s + node_count[node]):
                    f = prim[k]
                    d2 = _tri_dist2(px, py, pz,
                                    va[f, 0], va[f, 1], va[f, 2],
                                    vb[f, 0], vb[f, 1], vb[f, 2],
                                    vc[f, 0], vc[f, 1], vc[f, 2])
                    if d2 < best:
                        best = d2
                        best_f = f
            else:
                if top + 2 > _STACK:
                    continue
                right = node_right[node]
                dl = _box_dist2(px, py, pz, node_lo[left], node_hi[left])
                dr = _box_dist2(px, py, pz, node_lo[right], node_hi[right])
                if dl <= dr:
                    stack[top] = right
                    top += 1
                    stack[top] = left
                    top += 1
                else:
                    stack[top] = left
                    top += 1
                    stack[top] = right
                    top += 1
        out_d[r] = best
        out_f[r] = best_f
    return out_d, out_f
