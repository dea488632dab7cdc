"""Reconstruction metrics: Chamfer distance, mask overlap and a topology proxy."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .graph_core import ProcGraph
from .raster import SilhouetteMask, _check_dims
from .synth_gen import Cylinder


class EmptyGeometryError(ValueError):
    pass


def _frames(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to each row of ``d``."""
    helper = np.where(np.abs(d[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u, np.cross(d, u)


def sample_surface_points(cyls: Sequence[Cylinder], n: int = 4096, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``n`` points on the lateral surfaces of a set of frustums.

    Frustums are chosen in proportion to lateral area; within one, the axial
    parameter and the angle are uniform and the radius is interpolated.
    Returns an (n, 3) array.
    """
    if not cyls:
        raise EmptyGeometryError("no cylinders to sample")
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    p0 = np.array([c.p0 for c in cyls], float)
    p1 = np.array([c.p1 for c in cyls], float)
    r0 = np.array([c.r0 for c in cyls], float)
    r1 = np.array([c.r1 for c in cyls], float)
    axis = p1 - p0
    length = np.linalg.norm(axis, axis=1)
    area = np.pi * (r0 + r1) * np.sqrt(length**2 + (r0 - r1) ** 2)
    if area.sum() <= 0:
        raise EmptyGeometryError("cylinders have zero lateral area")
    d = np.where(length[:, None] > 0, axis / np.maximum(length, 1e-300)[:, None], [[0.0, 1.0, 0.0]])
    u, w = _frames(d)

    idx = rng.choice(len(cyls), size=n, p=area / area.sum())
    t = rng.random(n)
    theta = rng.random(n) * 2.0 * np.pi
    rad = r0[idx] + t * (r1[idx] - r0[idx])
    ring = np.cos(theta)[:, None] * u[idx] + np.sin(theta)[:, None] * w[idx]
    return p0[idx] + t[:, None] * axis[idx] + rad[:, None] * ring


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of the two directed mean nearest-neighbour distances (not squared)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if len(a) == 0 or len(b) == 0:
        raise EmptyGeometryError("chamfer needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def chamfer_bruteforce(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> float:
    """O(|A||B|) reference implementation of :func:`chamfer`."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if len(a) == 0 or len(b) == 0:
        raise EmptyGeometryError("chamfer needs two non-empty point sets")

    def directed(x, y):
        best = np.empty(len(x))
        for s in range(0, len(x), chunk):
            diff = x[s : s + chunk, None, :] - y[None, :, :]
            best[s : s + chunk] = np.sqrt((diff**2).sum(-1)).min(1)
        return best

    return 0.5 * (float(np.mean(directed(a, b))) + float(np.mean(directed(b, a))))


@dataclass(frozen=True)
class Overlap:
    precision: float
    recall: float
    iou: float


def mask_overlap(mA: SilhouetteMask, mB: SilhouetteMask) -> Overlap:
    """Precision of ``mA`` against ``mB``, recall of ``mB`` and IoU (0/0 -> 0)."""
    _check_dims(mA, mB)
    inter = int(np.count_nonzero(mA.bits & mB.bits))
    union = int(np.count_nonzero(mA.bits | mB.bits))
    na, nb = mA.count(), mB.count()
    return Overlap(
        inter / na if na else 0.0,
        inter / nb if nb else 0.0,
        inter / union if union else 0.0,
    )


def degree_counts(g: ProcGraph) -> Counter:
    deg = [0] * g.n_vertices
    for e in g.edges:
        deg[e.a] += 1
        deg[e.b] += 1
    return Counter(deg)


def topo_sim(g1: ProcGraph, g2: ProcGraph) -> float:
    """Degree-histogram intersection scaled by the vertex-count ratio.

    A stand-in topology similarity in [0, 1]; not comparable to published
    Topo-Sim numbers. Integer arithmetic keeps it exactly 1 on identical
    graphs and exactly symmetric.
    """
    n1, n2 = g1.n_vertices, g2.n_vertices
    if n1 == 0 or n2 == 0:
        return 1.0 if n1 == n2 else 0.0
    c1, c2 = degree_counts(g1), degree_counts(g2)
    # sum_k min(c1/n1, c2/n2) with a common denominator
    inter = sum(min(c1[k] * n2, c2[k] * n1) for k in c1.keys() & c2.keys())
    return (inter / (n1 * n2)) * (min(n1, n2) / max(n1, n2))
