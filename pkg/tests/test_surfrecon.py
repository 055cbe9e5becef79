import itertools
import math
import random

import numpy as np
import pytest

from visrecon.delaunay import INFINITE_VERTEX, tetrahedralize
from visrecon.geom import PointCloud, look_at
from visrecon.surfrecon import (INNER, OUTER, CutLabels, EnergyParams,
                                StGraph, avw_gamma, build_st_graph,
                                cut_capacity, extract_surface, max_flow,
                                regularize_labels, soft_vis_weight, _SINK)
from visrecon.visibility import LineOfSight, collect_lines_of_sight, hpr_visible
from visrecon.viewgen import spherical_views

from conftest import edge_incidence, euler_characteristic, sphere_cloud


def test_soft_vis_weight_endpoints():
    p = EnergyParams(alpha_max=32.0, sigma_soft=0.5)
    assert soft_vis_weight(0.0, p) == 0.0
    assert soft_vis_weight(1e9, p) == pytest.approx(32.0)
    assert soft_vis_weight(0.5, p) == \
        pytest.approx(32.0 * (1 - math.exp(-0.5)))
    assert soft_vis_weight(0.5, p) == pytest.approx(0.3935 * 32.0, rel=1e-3)
    # strictly increasing
    ds = np.linspace(0, 3, 50)
    vals = [soft_vis_weight(d, p) for d in ds]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_avw_gamma_values():
    n = [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    assert avw_gamma((0.0, 0.0, 1.0), n, 0.0) == 1.0
    assert avw_gamma((0.0, 0.0, 1.0), n, 1.0) == 1.0  # parallel normal
    deg60 = [(math.sin(math.pi / 3), 0.0, math.cos(math.pi / 3))]
    assert avw_gamma((0.0, 0.0, 1.0), deg60, 1.0) == pytest.approx(0.5)
    # negative cosines clamp to zero before mixing
    assert avw_gamma((0.0, 0.0, 1.0), [(0.0, 0.0, -1.0)], 1.0) == 0.0
    assert avw_gamma((0.0, 0.0, 1.0), [(0.0, 0.0, -1.0)], 0.25) == \
        pytest.approx(0.75)


def hand_fixture():
    """Two face-glued tets, dyadic coordinates: camera inside the top tet,
    endpoint at the bottom apex, one facet crossing exactly 3.0 from the
    endpoint."""
    pts = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.75, 0.0],   # shared tri
        [0.5, 0.25, 1.0],                                      # top apex
        [0.5, 0.25, -3.0],                                     # endpoint p
    ])
    cx = tetrahedralize(pts)
    assert cx.finite_mask.sum() == 2
    top = bottom = None
    for t in cx.finite_tets():
        if 3 in cx.tets[t]:
            top = int(t)
        if 4 in cx.tets[t]:
            bottom = int(t)
    camera = (0.5, 0.25, 0.5)
    return cx, top, bottom, camera


def test_hand_evaluated_single_sight_graph():
    cx, top, bottom, camera = hand_fixture()
    params = EnergyParams(alpha_max=32.0, sigma_soft=1.0, lambda_avw=0.0,
                          lambda_ql=0.0)
    sights = [LineOfSight(point=4, view_center=np.array(camera))]
    graph = build_st_graph(cx, sights, params)

    # Hand evaluation: the sight traverses [top, bottom]; the crossing of
    # the shared z=0 facet is at (0.5, 0.25, 0), exactly 3.0 from the
    # endpoint; the extension beyond the endpoint leaves the hull.
    alpha_cross = 32.0 * (1.0 - math.exp(-0.5 * 3.0 * 3.0))
    alpha_sink = 32.0 * (1.0 - math.exp(-0.5))

    assert top in graph.pinned                      # source link on T_1
    infinite = set(int(t) for t in np.nonzero(~cx.finite_mask)[0])
    assert graph.pinned == infinite | {top}

    facet_keys = [k for k in graph.caps if k[1] != _SINK]
    sink_keys = [k for k in graph.caps if k[1] == _SINK]
    assert facet_keys == [(top, bottom)]
    assert graph.caps[(top, bottom)] == alpha_cross  # d is exactly 3.0
    assert len(sink_keys) == 1
    behind = sink_keys[0][0]
    assert not cx.finite_mask[behind]
    assert 4 in cx.tets[behind]
    assert graph.caps[sink_keys[0]] == alpha_sink
    assert graph.sentinel == 1.0 + math.fsum(graph.caps.values())


def test_zero_sights_quality_only():
    cx, top, bottom, camera = hand_fixture()
    params = EnergyParams(alpha_max=32.0, sigma_soft=1.0, lambda_ql=0.5)
    graph = build_st_graph(cx, [], params)
    # only symmetric quality edges on real facets
    for (u, v), cap in graph.caps.items():
        assert v != _SINK
        assert graph.caps[(v, u)] == cap
    flow, labels = max_flow(graph)
    assert flow == 0.0
    # trivial one-sided labeling: nothing inner except unreachable tets,
    # and the min cut costs nothing
    assert cut_capacity(graph, labels) == 0.0


def test_sight_with_unknown_vertex_rejected():
    cx, top, bottom, camera = hand_fixture()
    params = EnergyParams(sigma_soft=1.0)
    with pytest.raises(ValueError, match="unknown vertex"):
        build_st_graph(cx, [LineOfSight(point=99,
                                        view_center=np.array(camera))],
                       params)


def baseline_graph(cx, sights, params):
    """Independent transcription of the pre-adaptive construction: facet
    and sink capacities carry the soft weight alone (no incidence factor)."""
    graph = StGraph(cx.n_tets)
    if params.pin_infinite:
        for t in np.nonzero(~cx.finite_mask)[0]:
            graph.pin_to_source(int(t))
    sink_alpha = soft_vis_weight(params.sigma_soft, params)
    for s in sights:
        tr = cx.traverse_ray(s.point, tuple(s.view_center))
        graph.pin_to_source(tr.tets[0])
        graph.add_sink(tr.behind, sink_alpha)
        for i, d in enumerate(tr.crossing_dists):
            graph.add(tr.tets[i], tr.tets[i + 1], soft_vis_weight(d, params))
    if params.lambda_ql > 0:
        from visrecon.surfrecon import _face_of_tuple, _facet_quality
        for t in range(cx.n_tets):
            verts = cx._tets[t]
            for i in range(4):
                n = cx._nbrs[t][i]
                if n < t:
                    continue
                f = _face_of_tuple(verts, i)
                if INFINITE_VERTEX in f:
                    continue
                pts = cx._pts
                q = params.lambda_ql * _facet_quality(pts[f[0]], pts[f[1]],
                                                      pts[f[2]])
                graph.add(t, n, q)
                graph.add(n, t, q)
    return graph


def test_lambda_avw_zero_reduces_to_baseline_bitwise():
    pts = sphere_cloud(1000, seed=21)
    cloud = PointCloud(positions=pts)
    cx = tetrahedralize(pts)
    views = spherical_views((0, 0, 0), 3.0, 8)
    visible = [hpr_visible(cloud, cam.center, 2.0) for cam in views]
    sights = collect_lines_of_sight(views, visible_sets=visible)
    params = EnergyParams(alpha_max=32.0, sigma_soft=0.03, lambda_avw=0.0,
                          lambda_ql=1.0)
    ours = build_st_graph(cx, sights, params)
    base = baseline_graph(cx, sights, params)
    assert ours.pinned == base.pinned
    assert set(ours.caps) == set(base.caps)
    for key, cap in base.caps.items():
        assert ours.caps[key] == cap  # bitwise
    # and lambda_avw > 0 genuinely changes capacities
    bent = build_st_graph(cx, sights,
                          EnergyParams(alpha_max=32.0, sigma_soft=0.03,
                                       lambda_avw=1.0, lambda_ql=1.0))
    assert any(bent.caps[k] != base.caps[k] for k in base.caps
               if k[1] != _SINK)


def test_max_flow_spec_example():
    g = StGraph(3)
    g.pin_to_source(2)
    g.add(2, 0, 3.0)
    g.add(2, 1, 2.0)
    g.add_sink(0, 2.0)
    g.add_sink(1, 3.0)
    g.add(0, 1, 1.0)
    flow, labels = max_flow(g)
    assert flow == 5.0
    assert cut_capacity(g, labels) == 5.0


def test_max_flow_single_edge():
    g = StGraph(1)
    g.pin_to_source(0)
    g.add_sink(0, 7.0)
    flow, labels = max_flow(g)
    assert flow == 7.0
    assert labels.labels[0] == OUTER


def enumerate_min_cut(n, edges, sinks, forced_outer):
    best = None
    free = [u for u in range(n) if u not in forced_outer]
    for bits in itertools.product([OUTER, INNER], repeat=len(free)):
        lab = {}
        for u in forced_outer:
            lab[u] = OUTER
        for u, b in zip(free, bits):
            lab[u] = b
        c = sum(cap for (u, v), cap in edges.items()
                if lab[u] == OUTER and lab[v] == INNER)
        c += sum(cap for u, cap in sinks.items() if lab[u] == OUTER)
        best = c if best is None else min(best, c)
    return best


def test_max_flow_random_graphs_vs_enumeration():
    rng = random.Random(17)
    for _ in range(120):
        n = rng.randint(2, 11)
        g = StGraph(n)
        pinned = {rng.randrange(n)}
        for u in pinned:
            g.pin_to_source(u)
        edges = {}
        for _ in range(rng.randint(1, 22)):
            u, v = rng.randrange(n), rng.randrange(n)
            if u == v:
                continue
            cap = float(rng.randint(1, 9))
            g.add(u, v, cap)
            edges[(u, v)] = edges.get((u, v), 0.0) + cap
        sinks = {}
        for _ in range(rng.randint(1, 4)):
            u = rng.randrange(n)
            cap = float(rng.randint(1, 9))
            g.add_sink(u, cap)
            sinks[u] = sinks.get(u, 0.0) + cap
        flow, labels = max_flow(g)
        best = enumerate_min_cut(n, edges, sinks, pinned)
        assert flow == best
        assert cut_capacity(g, labels) == pytest.approx(flow, rel=1e-12,
                                                        abs=1e-12)


def test_extract_surface_hull_when_inside_is_inner():
    pts = sphere_cloud(120, seed=23)
    cx = tetrahedralize(pts)
    lab = np.where(cx.finite_mask, INNER, OUTER).astype(np.uint8)
    mesh = extract_surface(cx, CutLabels(labels=lab))
    # every emitted facet is a hull facet: the complex's hull boundary
    n_hull = int((~cx.finite_mask).sum())
    assert mesh.n_faces == n_hull
    inc = edge_incidence(mesh)
    assert set(inc.values()) == {2}
    assert euler_characteristic(mesh) == 2


def test_extract_surface_all_outer_empty():
    pts = sphere_cloud(50, seed=24)
    cx = tetrahedralize(pts)
    lab = np.full(cx.n_tets, OUTER, dtype=np.uint8)
    mesh = extract_surface(cx, CutLabels(labels=lab))
    assert mesh.n_faces == 0


def test_extract_surface_orientation_outward():
    pts = sphere_cloud(200, seed=25)
    cx = tetrahedralize(pts)
    lab = np.where(cx.finite_mask, INNER, OUTER).astype(np.uint8)
    mesh = extract_surface(cx, CutLabels(labels=lab))
    normals = mesh.face_normals()
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    assert ((normals * centers).sum(axis=1) > 0).all()


def reconstruct_sphere(n_points, n_views, lambda_avw, seed=42):
    pts = sphere_cloud(n_points, seed=seed)
    cloud = PointCloud(positions=pts)
    cx = tetrahedralize(pts)
    views = spherical_views((0, 0, 0), 3.0, n_views)
    visible = [hpr_visible(cloud, cam.center, 2.0) for cam in views]
    sights = collect_lines_of_sight(views, visible_sets=visible)
    params = EnergyParams(alpha_max=32.0, sigma_soft=0.01 * 2 * math.sqrt(3),
                          lambda_avw=lambda_avw, lambda_ql=1.0)
    graph = build_st_graph(cx, sights, params)
    flow, labels = max_flow(graph)
    assert abs(flow - cut_capacity(graph, labels)) <= 1e-9 * max(1.0, flow)
    labels = regularize_labels(cx, labels, pinned=graph.pinned)
    return extract_surface(cx, labels), sights, graph, flow


def test_sphere_end_to_end_closed_manifold():
    mesh, sights, graph, flow = reconstruct_sphere(1200, 14, 1.0)
    inc = edge_incidence(mesh)
    assert set(inc.values()) == {2}
    assert euler_characteristic(mesh) == 2
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert radii.min() > 0.8 and radii.max() < 1.2


def test_duplicated_sights_double_capacities_same_cut():
    pts = sphere_cloud(300, seed=26)
    cloud = PointCloud(positions=pts)
    cx = tetrahedralize(pts)
    views = spherical_views((0, 0, 0), 3.0, 6)
    visible = [hpr_visible(cloud, cam.center, 2.0) for cam in views]
    sights = collect_lines_of_sight(views, visible_sets=visible)
    params = EnergyParams(alpha_max=8.0, sigma_soft=0.05, lambda_ql=0.0)
    g1 = build_st_graph(cx, sights, params)
    g2 = build_st_graph(cx, sights + sights, params)
    for key, cap in g1.caps.items():
        assert g2.caps[key] == pytest.approx(2.0 * cap, rel=1e-12)
    f1, l1 = max_flow(g1)
    f2, l2 = max_flow(g2)
    assert f2 == pytest.approx(2.0 * f1, rel=1e-9)
    assert np.array_equal(l1.labels, l2.labels)


def test_graph_dump_format(tmp_path):
    cx, top, bottom, camera = hand_fixture()
    params = EnergyParams(sigma_soft=1.0, lambda_ql=0.0)
    graph = build_st_graph(cx, [LineOfSight(point=4,
                                            view_center=np.array(camera))],
                           params)
    path = tmp_path / "graph.txt"
    graph.dump(str(path))
    lines = path.read_text().splitlines()
    s_lines = [l for l in lines if l.startswith("s ")]
    t_lines = [l for l in lines if l.split()[1] == "t"]
    assert len(s_lines) == len(graph.pinned)
    assert len(t_lines) == 1
    sentinel = float(s_lines[0].split()[2])
    assert sentinel == graph.sentinel
