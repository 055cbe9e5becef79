"""Geometry reconstruction toolkit.

Two pipelines share the primitives in this package:

* `reconstruct`: watertight surfaces from unstructured point clouds via
  virtual-view visibility, Delaunay tetrahedralization and s-t min-cut
  energy minimization with adaptive visibility weighting.
* `conflate`: merging overlapping open meshes into one seamless mesh via
  virtual panoramic cameras, weighted TSDF fusion with adaptive truncation
  bandwidth, and marching cubes.
"""

from .geom import (Aabb, Hit, PanoramicCamera, PinholeCamera, PointCloud,
                   Ray, TriangleMesh, fibonacci_directions, look_at)
from .meshio import (MeshIOError, load_mesh, load_point_cloud, save_mesh,
                     save_point_cloud)
from .bvh import Bvh, build_bvh, closest_point_batch, ray_cast, ray_cast_batch
from .predicates import DegenerateTetError, in_sphere, orient3d
from .delaunay import (DegenerateInputError, TetComplex, TetTraversal,
                       tetrahedralize)
from .viewgen import (OccupancyGrid, build_occupancy, grid_views,
                      load_view_file, place_panoramic, save_view_file,
                      spherical_views)
from .depthrender import (DepthIndexMap, DepthMap, VisibilityLabelMap,
                          label_visibility, render_mesh_depth,
                          render_point_depth)
from .visibility import (LineOfSight, collect_lines_of_sight, convex_hull3,
                         hpr_visible, load_sights, load_visibility_masks,
                         save_sights)
from .surfrecon import (CutLabels, EnergyParams, StGraph, avw_gamma,
                        build_st_graph, cut_capacity, extract_surface,
                        max_flow, regularize_labels, soft_vis_weight)
from .tsdf import (FusionSource, RaySample, SparseTsdfGrid,
                   adaptive_neg_band, conflate_sources, integrate_ray,
                   marching_cubes)
from .metrics import (SampleSet, chamfer_distance, f_score, mean_distance,
                      sample_mesh)

__version__ = "0.1.0"
