"""Command-line interface composing the reconstruction and conflation
pipelines, plus single-stage helpers.

Configuration precedence: built-in defaults < config file (`key = value`
lines, `#` comments) < explicit flags.  All runs are deterministic given
identical inputs and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import meshio, viewgen
from .bvh import build_bvh
from .delaunay import tetrahedralize
from .depthrender import (render_mesh_depth, render_point_depth,
                          save_index_map, save_pfm)
from .geom import PointCloud, TriangleMesh
from .metrics import SampleSet, chamfer_distance, f_score, mean_distance, sample_mesh
from .surfrecon import (EnergyParams, build_st_graph, cut_capacity,
                        extract_surface, max_flow, regularize_labels)
from .tsdf import FusionSource, conflate_sources, marching_cubes
from .visibility import (collect_lines_of_sight, hpr_visible, load_sights,
                         load_visibility_masks, save_sights,
                         save_visibility_mask)

_DEFAULTS = {
    "views": "spherical:26",
    "view_radius": None,        # None: 1.25 x bbox diagonal
    "fov": 60.0,
    "resolution": 256,
    "gamma_hpr": 2.0,
    "eps": 0.05,
    "alpha_max": 32.0,
    "sigma_soft": "1%",
    "lambda_avw": 0.0,
    "lambda_ql": 1.0,
    "voxel": 0.5,
    "band": None,               # None: 3 x voxel
    "coarse_voxel": None,       # None: 4 x voxel
    "rays_per_camera": 4096,
    "window": 3,
    "tau": 0.5,
    "samples": 100000,
    "seed": 0,
    "jitter": None,
    "threads": 0,
}


def _percent_or_abs(text, reference):
    """Parse '1.5%' as a fraction of `reference`, else an absolute value."""
    s = str(text).strip()
    if s.endswith("%"):
        return float(s[:-1]) / 100.0 * reference
    return float(s)


def _load_config(path):
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError("%s:%d: expected key = value" % (path, ln))
            key, val = body.split("=", 1)
            cfg[key.strip().replace("-", "_")] = val.strip()
    return cfg


def _setting(args, cfg, key, cast=None):
    """Flag value if given, else config value, else default."""
    val = getattr(args, key, None)
    if val is None:
        val = cfg.get(key, _DEFAULTS.get(key))
    if val is not None and cast is not None:
        val = cast(val)
    return val


def _parse_views_spec(spec, cloud_like, args, cfg):
    fov = _setting(args, cfg, "fov", float)
    res = _setting(args, cfg, "resolution", int)
    kind, _, rest = str(spec).partition(":")
    if kind == "file":
        return viewgen.load_view_file(rest)
    box = cloud_like.aabb() if hasattr(cloud_like, "aabb") else _cloud_aabb(
        cloud_like)
    if kind == "spherical":
        count = int(rest)
        target = (box.lo + box.hi) / 2.0
        radius = _setting(args, cfg, "view_radius")
        radius = float(radius) if radius is not None \
            else 1.25 * box.diagonal()
        return viewgen.spherical_views(target, radius, count, fov_deg=fov,
                                       width=res, height=res)
    if kind in ("grid", "oblique"):
        parts = rest.split(",")
        if kind == "grid":
            if len(parts) != 2:
                raise ValueError("grid views need HEIGHT,OVERLAP")
            return viewgen.grid_views(box, float(parts[0]), float(parts[1]),
                                      mode="nadir", fov_deg=fov, width=res,
                                      height=res)
        if len(parts) != 3:
            raise ValueError("oblique views need HEIGHT,OVERLAP,ANGLE")
        return viewgen.grid_views(box, float(parts[0]), float(parts[1]),
                                  mode="oblique",
                                  oblique_angle=float(parts[2]),
                                  fov_deg=fov, width=res, height=res)
    raise ValueError("unknown view pattern %r (expected spherical:N, "
                     "grid:H,OV, oblique:H,OV,ANG or file:PATH)" % spec)


def _cloud_aabb(cloud):
    from .geom import Aabb
    return Aabb(cloud.positions.min(axis=0), cloud.positions.max(axis=0))


def _cmd_reconstruct(args, cfg):
    cloud = meshio.load_point_cloud(args.input)
    box = _cloud_aabb(cloud)
    diag = box.diagonal()

    complex_ = tetrahedralize(
        cloud.positions,
        jitter=(None if _setting(args, cfg, "jitter") is None else
                _percent_or_abs(_setting(args, cfg, "jitter"), diag)),
        seed=_setting(args, cfg, "seed", int))
    dedup = PointCloud(positions=complex_.points)

    views = _parse_views_spec(_setting(args, cfg, "views"), cloud, args, cfg)

    dump = args.dump_intermediate
    if dump:
        os.makedirs(dump, exist_ok=True)

    if args.sights:
        sights = load_sights(args.sights)
    elif args.masks:
        index_maps = [render_point_depth(dedup, cam) for cam in views]
        masks = load_visibility_masks(args.masks, len(views),
                                      shapes=[m.shape for m in index_maps])
        sights = collect_lines_of_sight(views, index_maps=index_maps,
                                        masks=masks)
    else:
        gamma = _setting(args, cfg, "gamma_hpr", float)
        visible = [hpr_visible(dedup, cam.center, gamma) for cam in views]
        sights = collect_lines_of_sight(views, visible_sets=visible)

    params = EnergyParams(
        alpha_max=_setting(args, cfg, "alpha_max", float),
        sigma_soft=_percent_or_abs(_setting(args, cfg, "sigma_soft"), diag),
        lambda_avw=_setting(args, cfg, "lambda_avw", float),
        lambda_ql=_setting(args, cfg, "lambda_ql", float))
    graph = build_st_graph(complex_, sights, params)
    flow, labels = max_flow(graph)
    cut = cut_capacity(graph, labels)
    if abs(flow - cut) > 1e-9 * max(1.0, abs(cut)):
        raise RuntimeError("max-flow/min-cut duality violated: flow %.17g "
                           "vs cut %.17g" % (flow, cut))
    labels = regularize_labels(complex_, labels, pinned=graph.pinned)
    mesh = extract_surface(complex_, labels)
    meshio.save_mesh(mesh, args.output, ascii=args.ascii)

    if dump:
        save_sights(sights, os.path.join(dump, "sights.txt"))
        graph.dump(os.path.join(dump, "graph.txt"))
        complex_.dump(os.path.join(dump, "complex.txt"))
        viewgen.save_view_file(views, os.path.join(dump, "views.txt"))
    print("reconstructed %d vertices / %d faces from %d sights "
          "(flow %.6g)" % (mesh.n_vertices, mesh.n_faces, len(sights), flow))
    return 0


def _cmd_conflate(args, cfg):
    meshes = [meshio.load_mesh(p) for p in args.inputs]
    weights = args.weight or []
    if weights and len(weights) != len(meshes):
        raise ValueError("got %d --weight values for %d meshes"
                         % (len(weights), len(meshes)))
    if not weights:
        weights = [1.0] * len(meshes)
    sources = [FusionSource(mesh=m, weight=w)
               for m, w in zip(meshes, weights)]

    voxel = _setting(args, cfg, "voxel", float)
    band = _setting(args, cfg, "band")
    band = 3.0 * voxel if band is None else float(band)
    coarse = _setting(args, cfg, "coarse_voxel")
    coarse = 4.0 * voxel if coarse is None else float(coarse)

    union = TriangleMesh(
        vertices=np.vstack([m.vertices for m in meshes]),
        faces=np.vstack([m.faces + off for m, off in
                         zip(meshes, np.cumsum([0] + [m.n_vertices
                                                      for m in meshes[:-1]]))]))
    grid = viewgen.build_occupancy(union, coarse)
    cams = viewgen.place_panoramic(
        grid, window=_setting(args, cfg, "window", int),
        rays_per_camera=_setting(args, cfg, "rays_per_camera", int))
    field = conflate_sources(sources, voxel, band, cams)
    mesh = marching_cubes(field)
    meshio.save_mesh(mesh, args.output, ascii=args.ascii)

    dump = args.dump_intermediate
    if dump:
        os.makedirs(dump, exist_ok=True)
        grid.dump_layers(os.path.join(dump, "occupancy.txt"))
        field.dump(os.path.join(dump, "tsdf.txt"))
    print("conflated %d sources -> %d vertices / %d faces (%d cameras)"
          % (len(sources), mesh.n_vertices, mesh.n_faces, len(cams)))
    return 0


def _cmd_gen_views(args, cfg):
    cloud = meshio.load_point_cloud(args.input)
    views = _parse_views_spec(_setting(args, cfg, "views"), cloud, args, cfg)
    viewgen.save_view_file(views, args.output)
    print("wrote %d views to %s" % (len(views), args.output))
    return 0


def _cmd_render_depth(args, cfg):
    cloud = meshio.load_point_cloud(args.input)
    views = _parse_views_spec(_setting(args, cfg, "views"), cloud, args, cfg)
    os.makedirs(args.output, exist_ok=True)
    surface_bvh = None
    if args.surface:
        surface_bvh = build_bvh(meshio.load_mesh(args.surface))
    for i, cam in enumerate(views):
        imap = render_point_depth(cloud, cam)
        save_pfm(imap.depth, os.path.join(args.output, "depth_%d.pfm" % i))
        save_index_map(imap, os.path.join(args.output, "index_%d.bin" % i))
        if surface_bvh is not None:
            dm = render_mesh_depth(surface_bvh, cam)
            save_pfm(dm.depth,
                     os.path.join(args.output, "surface_%d.pfm" % i))
    print("rendered %d views into %s" % (len(views), args.output))
    return 0


def _cmd_visibility(args, cfg):
    cloud = meshio.load_point_cloud(args.input)
    views = _parse_views_spec(_setting(args, cfg, "views"), cloud, args, cfg)
    gamma = _setting(args, cfg, "gamma_hpr", float)
    os.makedirs(args.output, exist_ok=True)
    visible = []
    for i, cam in enumerate(views):
        vis = hpr_visible(cloud, cam.center, gamma)
        visible.append(vis)
        imap = render_point_depth(cloud, cam)
        mask = np.zeros(imap.index.shape, dtype=np.uint8)
        present = imap.index >= 0
        mask[present] = np.where(
            np.isin(imap.index[present], np.fromiter(vis, dtype=np.int64)),
            255, 0)
        save_visibility_mask(mask, os.path.join(args.output,
                                                "vis_%d.pgm" % i))
    sights = collect_lines_of_sight(views, visible_sets=visible)
    save_sights(sights, os.path.join(args.output, "sights.txt"))
    print("wrote %d masks and %d sights" % (len(views), len(sights)))
    return 0


def _cmd_eval(args, cfg):
    recon_mesh = meshio.load_mesh(args.recon)
    ref_mesh = meshio.load_mesh(args.reference)
    tau = _setting(args, cfg, "tau", float)
    count = _setting(args, cfg, "samples", int)
    seed = _setting(args, cfg, "seed", int)
    recon = sample_mesh(recon_mesh, count, seed) if recon_mesh.n_faces \
        else SampleSet(points=recon_mesh.vertices)
    ref = sample_mesh(ref_mesh, count, seed) if ref_mesh.n_faces \
        else SampleSet(points=ref_mesh.vertices)
    cd = chamfer_distance(recon, ref)
    fs = f_score(recon, ref, tau)
    md = mean_distance(recon, build_bvh(ref_mesh)) if ref_mesh.n_faces \
        else float("nan")
    print("chamfer=%.9g fscore@%g=%.9g mean_dist=%.9g" % (cd, tau, fs, md))
    print()
    print("  metric          value")
    print("  chamfer         %.9g" % cd)
    print("  f-score @ %-5g %.9g" % (tau, fs))
    print("  mean distance   %.9g" % md)
    return 0


def _add_common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--threads", type=int, help="worker cap (advisory)")
    p.add_argument("--seed", type=int, help="deterministic seed")
    p.add_argument("--dump-intermediate", metavar="DIR",
                   help="write stage artifacts for inspection")
    p.add_argument("--ascii", action="store_true",
                   help="write ASCII PLY instead of binary")


def _add_view_flags(p):
    p.add_argument("--views", help="spherical:N | grid:H,OV | "
                                   "oblique:H,OV,ANG | file:PATH")
    p.add_argument("--view-radius", type=float,
                   help="spherical orbit radius (default 1.25 x diagonal)")
    p.add_argument("--fov", type=float, help="vertical field of view (deg)")
    p.add_argument("--resolution", type=int, help="render size in pixels")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="visrecon",
        description="surface reconstruction and mesh conflation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct",
                       help="point cloud to watertight surface")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_view_flags(p)
    p.add_argument("--masks", metavar="DIR",
                   help="externally supplied vis_<i>.pgm masks")
    p.add_argument("--sights", metavar="FILE",
                   help="precomputed lines of sight (point_index cx cy cz)")
    p.add_argument("--gamma-hpr", type=float,
                   help="HPR radius exponent (default 2)")
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--sigma-soft",
                   help="soft-visibility scale; absolute or 'N%%' of "
                        "the bbox diagonal")
    p.add_argument("--lambda-avw", type=float)
    p.add_argument("--lambda-ql", type=float)
    p.add_argument("--jitter", help="point jitter; absolute or 'N%%'")
    _add_common(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("conflate", help="merge meshes into one")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--voxel", type=float)
    p.add_argument("--band", type=float,
                   help="truncation bandwidth (default 3 x voxel)")
    p.add_argument("--coarse-voxel", type=float,
                   help="occupancy voxel (default 4 x voxel)")
    p.add_argument("--rays-per-camera", type=int)
    p.add_argument("--window", type=int,
                   help="camera placement window in voxels")
    p.add_argument("--weight", type=float, action="append",
                   help="per-input quality weight, repeatable")
    _add_common(p)
    p.set_defaults(func=_cmd_conflate)

    p = sub.add_parser("gen-views", help="write a view file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_view_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_gen_views)

    p = sub.add_parser("render-depth", help="depth/index maps per view")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--surface", help="mesh rendered alongside the points")
    _add_view_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_render_depth)

    p = sub.add_parser("visibility", help="HPR masks and lines of sight")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gamma-hpr", type=float)
    _add_view_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_visibility)

    p = sub.add_parser("eval", help="compare geometry against a reference")
    p.add_argument("recon")
    p.add_argument("reference")
    p.add_argument("--tau", type=float, help="F-score threshold (m)")
    p.add_argument("--samples", type=int)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)
    return ap


def run(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures exit 1, usage errors exit 2
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
