"""Geometry comparison metrics: Chamfer distance, F-score, mean distance.

Chamfer here is the symmetric mean of unsquared nearest-neighbor
distances; report conventions alongside numbers when comparing across
papers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .bvh import closest_point_batch

DEFAULT_SAMPLES = 100_000
DEFAULT_SEED = 42


@dataclass
class SampleSet:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points,
                                           dtype=np.float64).reshape(-1, 3)
        if not len(self.points):
            raise ValueError("sample set is empty")

    def __len__(self):
        return len(self.points)


def sample_mesh(mesh, count=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Uniform area-weighted surface samples, deterministic in the seed."""
    if mesh.n_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(f), size=count, p=areas / total)
    r1 = np.sqrt(rng.uniform(size=count))
    r2 = rng.uniform(size=count)
    a = v[f[picks, 0]]
    b = v[f[picks, 1]]
    c = v[f[picks, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b \
        + (r1 * r2)[:, None] * c
    return SampleSet(points=pts)


def chamfer_distance(a, b):
    """Symmetric mean nearest-neighbor distance between two sample sets."""
    pa = a.points
    pb = b.points
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def f_score(recon, ref, tau):
    """Harmonic mean of precision (recon within tau of ref) and recall
    (ref within tau of recon); 0 when both vanish."""
    if tau <= 0:
        raise ValueError("threshold must be positive")
    d_rp, _ = cKDTree(ref.points).query(recon.points, k=1)
    d_pr, _ = cKDTree(recon.points).query(ref.points, k=1)
    precision = float((d_rp <= tau).mean())
    recall = float((d_pr <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def mean_distance(recon, ref_bvh):
    """Mean exact point-to-mesh distance of the samples to the reference."""
    d, _ = closest_point_batch(ref_bvh, recon.points)
    return float(d.mean())
