import math

import numpy as np
import pytest

from visrecon.bvh import build_bvh, ray_cast
from visrecon.geom import PanoramicCamera, Ray, TriangleMesh
from visrecon.metrics import SampleSet, f_score, mean_distance, sample_mesh
from visrecon.tsdf import (FusionSource, RaySample, SparseTsdfGrid,
                           adaptive_neg_band, conflate_sources,
                           integrate_ray, marching_cubes)
from visrecon.viewgen import build_occupancy, place_panoramic

from conftest import edge_incidence, make_icosphere


def quad_mesh(x, half=5.0):
    """Vertical quad in the plane x = const, facing -x."""
    v = np.array([[x, -half, -half], [x, half, -half], [x, half, half],
                  [x, -half, half]])
    return TriangleMesh(vertices=v, faces=np.array([[0, 2, 1], [0, 3, 2]]))


def test_adaptive_band_isolated_plane():
    bvh = build_bvh(quad_mesh(1.0))
    ray = Ray(origin=np.zeros(3), direction=np.array([1.0, 0.0, 0.0]))
    hit = ray_cast(bvh, ray)
    assert adaptive_neg_band(bvh, hit, ray, 0.3) == 0.3


def test_adaptive_band_two_planes():
    m = 0.6
    for gap, expect in ((m, m / 2), (2.5 * m, m), (0.5 * m, 0.25 * m)):
        mesh_a = quad_mesh(1.0)
        mesh_b = quad_mesh(1.0 + gap)
        both = TriangleMesh(
            vertices=np.vstack([mesh_a.vertices, mesh_b.vertices]),
            faces=np.vstack([mesh_a.faces, mesh_b.faces + 4]))
        bvh = build_bvh(both)
        ray = Ray(origin=np.zeros(3), direction=np.array([1.0, 0.0, 0.0]))
        hit = ray_cast(bvh, ray)
        assert hit.t == pytest.approx(1.0)
        lam = adaptive_neg_band(bvh, hit, ray, m)
        assert lam == pytest.approx(expect, rel=1e-6)


def test_integrate_clamps_and_zero_at_hit():
    grid = SparseTsdfGrid(voxel=0.2, band=0.6)
    s = RaySample(origin=np.zeros(3), direction=np.array([1.0, 0.0, 0.0]),
                  t_hit=10.0, neg_band=0.6)
    integrate_ray(grid, s, 1.0)
    key_at_hit = grid.key_of((10.0, 0.0, 0.0))
    d, w = grid.data[key_at_hit]
    assert abs(d) <= 0.1  # voxel containing the hit holds a near-zero value
    # first marched sample sits at the band edge: d = +m exactly
    d2, _ = grid.data[grid.key_of((9.45, 0.0, 0.0))]
    assert d2 == pytest.approx(0.6)
    # signed side behind the hit
    d3, _ = grid.data[grid.key_of((10.55, 0.0, 0.0))]
    assert d3 < 0
    for d, w in grid.data.values():
        assert abs(d) <= grid.band and w > 0


def test_signed_distance_clamp_formula():
    # the stored value is clamp(t_hit - t, -neg_band, +band) at each sample
    assert max(-0.6, min(0.6, 10.0 - 9.2)) == 0.6
    grid = SparseTsdfGrid(voxel=0.2, band=0.6)
    s = RaySample(origin=np.zeros(3), direction=np.array([1.0, 0.0, 0.0]),
                  t_hit=10.0, neg_band=0.2)
    integrate_ray(grid, s, 1.0)
    # asymmetric band: negative side clamps at -0.2
    assert min(d for d, _ in grid.data.values()) >= -0.2


def test_weighted_average_update():
    grid = SparseTsdfGrid(voxel=0.2, band=0.6)
    grid.update((0, 0, 0), 0.5, 3.0)
    grid.update((0, 0, 0), -0.1, 1.0)
    d, w = grid.data[(0, 0, 0)]
    assert d == pytest.approx((3 * 0.5 + 1 * -0.1) / 4)
    assert w == 4.0


def test_integration_order_independence():
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(60, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t_hits = rng.uniform(1.0, 2.0, 60)
    bands = rng.uniform(0.2, 0.4, 60)
    weights = rng.uniform(0.5, 3.0, 60)
    samples = [RaySample(origin=np.zeros(3), direction=dirs[i],
                         t_hit=t_hits[i], neg_band=bands[i])
               for i in range(60)]
    g1 = SparseTsdfGrid(voxel=0.1, band=0.4)
    g2 = SparseTsdfGrid(voxel=0.1, band=0.4)
    for i in range(60):
        integrate_ray(g1, samples[i], weights[i])
    order = rng.permutation(60)
    for i in order:
        integrate_ray(g2, samples[i], weights[i])
    assert set(g1.data) == set(g2.data)
    for key in g1.data:
        assert g1.data[key][0] == pytest.approx(g2.data[key][0], abs=1e-6)
        assert g1.data[key][1] == pytest.approx(g2.data[key][1], abs=1e-6)


def test_band_invariant_after_integration():
    grid = SparseTsdfGrid(voxel=0.1, band=0.3)
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        integrate_ray(grid, RaySample(origin=rng.uniform(-0.2, 0.2, 3),
                                      direction=d,
                                      t_hit=rng.uniform(0.5, 1.5),
                                      neg_band=rng.uniform(0.1, 0.3)),
                      rng.uniform(0.5, 2.0))
    for d, w in grid.data.values():
        assert abs(d) <= grid.band + 1e-12
        assert w > 0


def test_marching_cubes_all_positive_empty():
    grid = SparseTsdfGrid(voxel=0.5, band=1.6)
    for i in range(4):
        for j in range(4):
            for k in range(4):
                grid.data[(i, j, k)] = [1.0, 1.0]
    mesh = marching_cubes(grid)
    assert mesh.n_faces == 0


def test_marching_cubes_single_corner_config():
    grid = SparseTsdfGrid(voxel=1.0, band=2.0)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                grid.data[(i, j, k)] = [1.0, 1.0]
    grid.data[(0, 0, 0)] = [-1.0, 1.0]
    mesh = marching_cubes(grid)
    assert mesh.n_faces == 1  # one crossed corner, one triangle
    assert mesh.n_vertices == 3
    # vertices at the midpoints of the three incident edges
    expect = {(1.0, 0.5, 0.5), (0.5, 1.0, 0.5), (0.5, 0.5, 1.0)}
    got = {tuple(v) for v in np.round(mesh.vertices, 9)}
    assert got == expect


def test_marching_cubes_analytic_sphere():
    voxel = 0.05
    band = 3 * voxel
    grid = SparseTsdfGrid(voxel=voxel, band=band)
    n = int(math.ceil(1.3 / voxel))
    for i in range(-n, n + 1):
        for j in range(-n, n + 1):
            for k in range(-n, n + 1):
                c = (np.array([i, j, k]) + 0.5) * voxel
                d = np.linalg.norm(c) - 1.0
                if abs(d) <= band:
                    grid.data[(i, j, k)] = [d, 1.0]
    mesh = marching_cubes(grid)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    half_diag = voxel * math.sqrt(3) / 2
    assert np.abs(radii - 1.0).max() <= half_diag
    assert set(edge_incidence(mesh).values()) == {2}
    # outward winding
    normals = mesh.face_normals()
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    assert ((normals * centers).sum(axis=1) > 0).all()


def test_marching_cubes_vertices_on_zero_level():
    """Linear interpolation along each crossed edge lands exactly on the
    zero crossing of the stored distances."""
    grid = SparseTsdfGrid(voxel=0.25, band=0.75)
    rng = np.random.default_rng(2)
    for i in range(6):
        for j in range(6):
            for k in range(6):
                c = (np.array([i, j, k]) + 0.5) * 0.25
                d = np.linalg.norm(c - 0.75) - 0.5 + rng.normal(0, 0.02)
                grid.data[(i, j, k)] = [float(np.clip(d, -0.75, 0.75)), 1.0]
    mesh = marching_cubes(grid)
    assert mesh.n_faces > 0
    for v in mesh.vertices:
        # trilinear interpolation of D at an edge vertex reduces to the
        # linear interpolation along that edge
        frac = v / 0.25 - 0.5
        base = np.floor(frac + 1e-9).astype(int)
        rel = frac - base
        val = 0.0
        for ci in range(2):
            for cj in range(2):
                for ck in range(2):
                    key = (base[0] + ci, base[1] + cj, base[2] + ck)
                    wgt = ((rel[0] if ci else 1 - rel[0])
                           * (rel[1] if cj else 1 - rel[1])
                           * (rel[2] if ck else 1 - rel[2]))
                    if wgt:
                        val += wgt * grid.data[key][0]
        assert abs(val) <= 1e-6 * grid.band


def two_plane_sources(delta, w_a, w_b):
    return [FusionSource(mesh=quad_mesh(1.0), weight=w_a),
            FusionSource(mesh=quad_mesh(1.0 + delta), weight=w_b)]


def test_two_plane_weighted_zero_crossing():
    voxel = 0.05
    band = 3 * voxel
    delta = 0.04
    cam = PanoramicCamera(center=np.array([0.0, 0.0, 0.0]), n_rays=2048)
    for (wa, wb) in ((1.0, 1.0), (3.0, 1.0), (1.0, 9.0)):
        grid = conflate_sources(two_plane_sources(delta, wa, wb), voxel,
                                band, [cam])
        mesh = marching_cubes(grid)
        assert mesh.n_faces > 0
        expect = 1.0 + wb * delta / (wa + wb)
        # examine the crossing near the ray axis
        sel = np.abs(mesh.vertices[:, 1]) + np.abs(mesh.vertices[:, 2]) < 1.0
        got = mesh.vertices[sel, 0]
        assert np.abs(got - expect).max() <= voxel / 2


def test_conflating_identical_copies_matches_single():
    mesh = make_icosphere(2)
    voxel = 0.1
    band = 3 * voxel
    cams = [PanoramicCamera(center=np.zeros(3), n_rays=1024)]
    single = conflate_sources([FusionSource(mesh=mesh)], voxel, band, cams)
    double = conflate_sources([FusionSource(mesh=mesh),
                               FusionSource(mesh=mesh)], voxel, band, cams)
    assert set(single.data) == set(double.data)
    for key in single.data:
        assert single.data[key][0] == pytest.approx(double.data[key][0],
                                                    abs=1e-9)
        assert double.data[key][1] == pytest.approx(2 * single.data[key][1],
                                                    rel=1e-9)
    m1 = marching_cubes(single)
    m2 = marching_cubes(double)
    assert np.allclose(m1.vertices, m2.vertices, atol=1e-9)
    assert np.array_equal(m1.faces, m2.faces)


def test_conflate_sphere_zero_set_near_truth():
    mesh = make_icosphere(3)
    voxel = 0.08
    band = 3 * voxel
    occ = build_occupancy(mesh, 4 * voxel)
    cams = place_panoramic(occ, window=2, rays_per_camera=512)
    grid = conflate_sources([FusionSource(mesh=mesh)], voxel, band, cams)
    fused = marching_cubes(grid)
    assert fused.n_faces > 0
    samples = sample_mesh(fused, 5000, seed=3)
    md = mean_distance(samples, build_bvh(mesh))
    assert md <= voxel


def test_conflate_empty_warns():
    mesh = quad_mesh(1.0, half=0.5)
    cams = [PanoramicCamera(center=np.array([50.0, 50.0, 50.0]), n_rays=8)]
    with pytest.warns(UserWarning, match="no virtual camera"):
        grid = conflate_sources([FusionSource(mesh=mesh)], 0.1, 0.3, cams)
    assert len(grid) == 0


def test_source_validation():
    with pytest.raises(ValueError):
        FusionSource(mesh=quad_mesh(0.0), weight=0.0)
    with pytest.raises(ValueError):
        SparseTsdfGrid(voxel=0.5, band=0.4)
    with pytest.raises(ValueError):
        conflate_sources([], 0.1, 0.3, [])


def test_grid_dump(tmp_path):
    grid = SparseTsdfGrid(voxel=0.5, band=1.6)
    grid.update((1, -2, 3), 0.25, 2.0)
    path = tmp_path / "grid.txt"
    grid.dump(str(path))
    assert path.read_text() == "1 -2 3 0.25 2\n"
