"""Stochastic generators for cactus, tree and bridge graphs, plus cylinder geometry.

World frame: +y is up (the camera's image-up axis), the ground is y = 0 and
vertex 0 is the trunk base / deck origin. Generators return normalized
graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import graph_core as gc
from .graph_core import Edge, ProcGraph, Vertex
from .quant import quantize
from .rng import substream

MAX_ATTEMPTS = 32
DEFAULT_RADIUS = 0.008
UP = np.array([0.0, 1.0, 0.0])


class BandUnreachableError(RuntimeError):
    """No attempt produced a graph inside the category's vertex band."""


@dataclass(frozen=True)
class CactusParams:
    trunk_segments: tuple[int, int] = (4, 10)
    branch_prob: float = 0.25
    max_depth: int = 3
    radius0: float = 0.06
    radius_decay: float = 0.7
    segment_len: float = 0.09
    up_bias: float = 0.6
    jitter_angle: float = 30.0
    branch_segments: tuple[int, int] = (4, 8)


@dataclass(frozen=True)
class TreeParams:
    trunk_segments: tuple[int, int] = (5, 12)
    branch_prob: float = 0.35
    max_depth: int = 4
    segment_len: float = 0.07
    up_bias: float = 0.45
    jitter_angle: float = 40.0
    branch_angle: tuple[float, float] = (35.0, 65.0)
    branch_segments: int = 6  # at depth 1, one fewer per extra depth level


@dataclass(frozen=True)
class BridgeParams:
    deck_nodes: tuple[int, int] = (16, 24)
    tower_count: int = 2
    tower_height: float = 0.5
    deck_y: float = 0.15
    height_jitter: float = 0.2
    tower_jitter: float = 0.05


@dataclass(frozen=True)
class GenParams:
    seed: int = 0
    category: str = "cactus"
    cactus: CactusParams = field(default_factory=CactusParams)
    tree: TreeParams = field(default_factory=TreeParams)
    bridge: BridgeParams = field(default_factory=BridgeParams)

    def __post_init__(self):
        if self.category not in gc.CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        for sub in (self.cactus, self.tree):
            if not 0.0 <= sub.branch_prob <= 1.0 or not 0.0 <= sub.up_bias <= 1.0:
                raise ValueError("probabilities and blend weights must lie in [0, 1]")
            if sub.segment_len <= 0 or sub.max_depth < 0:
                raise ValueError("segment_len must be positive and max_depth non-negative")
            lo, hi = sub.trunk_segments
            if not 1 <= lo <= hi:
                raise ValueError(f"bad trunk_segments range {sub.trunk_segments}")
        c = self.cactus
        if c.radius0 <= 0 or not 0 < c.radius_decay <= 1:
            raise ValueError("radius0 must be positive and radius_decay in (0, 1]")
        b = self.bridge
        if b.deck_nodes[0] < 2 or b.deck_nodes[0] > b.deck_nodes[1]:
            raise ValueError(f"bad deck_nodes range {b.deck_nodes}")
        if b.tower_count < 1 or b.tower_height <= 0 or b.deck_y <= 0:
            raise ValueError("tower_count, tower_height and deck_y must be positive")


# ----------------------------------------------------------------- helpers


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else UP.copy()


def _perpendicular(d: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random unit vector orthogonal to ``d``."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = _unit(np.cross(d, helper))
    w = np.cross(d, u)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return math.cos(phi) * u + math.sin(phi) * w


def _rotate_toward(d: np.ndarray, axis_dir: np.ndarray, angle: float) -> np.ndarray:
    return _unit(math.cos(angle) * d + math.sin(angle) * axis_dir)


def _jitter(d: np.ndarray, max_deg: float, up_bias: float, rng: np.random.Generator) -> np.ndarray:
    angle = math.radians(max_deg) * rng.uniform(0.0, 1.0)
    d = _rotate_toward(d, _perpendicular(d, rng), angle)
    return _unit((1.0 - up_bias) * d + up_bias * UP)


def _quantized_unique(g: ProcGraph) -> bool:
    keys = set()
    for v in g.vertices:
        k = (tuple(quantize(x) for x in v.pos), v.radius and quantize(v.radius), v.semantic)
        if k in keys:
            return False
        keys.add(k)
    return True


class _Builder:
    def __init__(self):
        self.pos: list[np.ndarray] = []
        self.radius: list[Optional[float]] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, p: np.ndarray, r: Optional[float] = None, parent: Optional[int] = None) -> int:
        self.pos.append(np.asarray(p, dtype=float))
        self.radius.append(r)
        idx = len(self.pos) - 1
        if parent is not None:
            self.edges.append((parent, idx))
        return idx

    def graph(self, category: str) -> ProcGraph:
        verts = tuple(
            Vertex(tuple(float(x) for x in p), None if r is None else float(r))
            for p, r in zip(self.pos, self.radius)
        )
        return ProcGraph(category, verts, tuple(Edge(a, b) for a, b in self.edges))


def _finish(g: ProcGraph, enforce_band: bool) -> Optional[ProcGraph]:
    g = gc.normalize(g)
    if not _quantized_unique(g):
        return None
    if not gc.validate(g, check_band=enforce_band).ok:
        return None
    return g


def _attempts(params: GenParams, grow, enforce_band: bool) -> ProcGraph:
    for attempt in range(MAX_ATTEMPTS):
        g = _finish(grow(params, attempt), enforce_band)
        if g is not None:
            return g
    lo, hi = gc.CATEGORY_BANDS[params.category]
    raise BandUnreachableError(
        f"{params.category} seed {params.seed}: no valid graph in [{lo},{hi}] after {MAX_ATTEMPTS} attempts"
    )


# ------------------------------------------------------------------ cactus


def _grow_cactus(params: GenParams, attempt: int) -> ProcGraph:
    cp = params.cactus
    b = _Builder()
    branch_counter = [0]
    # (start vertex, start direction, segment count, depth, radius, stream id)
    pending: list[tuple[int, np.ndarray, int, int, float, int]] = []

    rng0 = substream(params.seed, attempt, 0)
    root = b.add(np.zeros(3), cp.radius0)
    n_trunk = int(rng0.integers(cp.trunk_segments[0], cp.trunk_segments[1] + 1))
    pending.append((root, UP.copy(), n_trunk, 0, cp.radius0, 0))

    while pending:
        start, d, n_seg, depth, radius, sid = pending.pop(0)
        rng = substream(params.seed, attempt, sid) if sid else rng0
        cur = start
        for s in range(n_seg):
            if depth > 0 and s == 0:
                d = _unit(d)
            else:
                d = _jitter(d, cp.jitter_angle, cp.up_bias, rng)
            cur = b.add(b.pos[cur] + cp.segment_len * d, radius, cur)
            if depth < cp.max_depth and rng.random() < cp.branch_prob:
                branch_counter[0] += 1
                phi = rng.uniform(0.0, 2.0 * math.pi)
                out = _unit(np.array([math.cos(phi), 0.15, math.sin(phi)]))
                segs = int(rng.integers(cp.branch_segments[0], cp.branch_segments[1] + 1))
                pending.append((cur, out, segs, depth + 1, radius * cp.radius_decay, branch_counter[0]))
    return b.graph("cactus")


def gen_cactus(params: GenParams, enforce_band: bool = True) -> ProcGraph:
    """Grow a cactus: an upward trunk with arms that curve toward +y."""
    if params.category != "cactus":
        raise ValueError("gen_cactus needs category='cactus'")
    return _attempts(params, _grow_cactus, enforce_band)


# -------------------------------------------------------------------- tree


def _grow_tree(params: GenParams, attempt: int) -> ProcGraph:
    tp = params.tree
    b = _Builder()
    rng0 = substream(params.seed, attempt, 0)
    root = b.add(np.zeros(3))
    n_trunk = int(rng0.integers(tp.trunk_segments[0], tp.trunk_segments[1] + 1))
    pending = [(root, UP.copy(), n_trunk, 0, 0)]
    counter = 0
    while pending:
        start, d, n_seg, depth, sid = pending.pop(0)
        rng = substream(params.seed, attempt, sid) if sid else rng0
        cur = start
        for s in range(n_seg):
            if not (depth > 0 and s == 0):
                d = _jitter(d, tp.jitter_angle, tp.up_bias, rng)
            cur = b.add(b.pos[cur] + tp.segment_len * d, None, cur)
            if depth < tp.max_depth and s < n_seg - 1 and rng.random() < tp.branch_prob:
                counter += 1
                angle = math.radians(rng.uniform(*tp.branch_angle))
                bd = _rotate_toward(d, _perpendicular(d, rng), angle)
                segs = max(2, tp.branch_segments - depth)
                pending.append((cur, bd, segs, depth + 1, counter))
    return b.graph("tree")


def gen_tree(params: GenParams, enforce_band: bool = True) -> ProcGraph:
    """Grow a branching tree skeleton (no radius attribute)."""
    if params.category != "tree":
        raise ValueError("gen_tree needs category='tree'")
    return _attempts(params, _grow_tree, enforce_band)


# ------------------------------------------------------------------ bridge


def gen_bridge(params: GenParams) -> ProcGraph:
    """Suspension-style bridge: straight deck, towers on anchors, fan cables.

    Vertex order: deck nodes (vertex 0 is the deck origin), then one
    (anchor, tower top) pair per tower.
    """
    if params.category != "bridge":
        raise ValueError("gen_bridge needs category='bridge'")
    bp = params.bridge
    rng = substream(params.seed, 0, 0)
    n_deck = int(rng.integers(bp.deck_nodes[0], bp.deck_nodes[1] + 1))
    verts: list[Vertex] = []
    edges: list[Edge] = []
    for i in range(n_deck):
        verts.append(Vertex((i / (n_deck - 1), bp.deck_y, 0.0), None, "deck"))
    for i in range(n_deck - 1):
        edges.append(Edge(i, i + 1, "compression", "deck", "trail"))
    tops = []
    for t in range(bp.tower_count):
        x = (t + 0.5) / bp.tower_count + rng.uniform(-bp.tower_jitter, bp.tower_jitter)
        h = bp.tower_height * (1.0 + rng.uniform(-bp.height_jitter, bp.height_jitter))
        base = len(verts)
        verts.append(Vertex((x, 0.0, 0.0), None, "anchor"))
        verts.append(Vertex((x, bp.deck_y + h, 0.0), None, "tower"))
        edges.append(Edge(base, base + 1, "compression", "tower", "trail"))
        tops.append(base + 1)
    for top in tops:
        for i in range(n_deck):
            edges.append(Edge(top, i, "tension", "cable", "deviation"))
    return gc.normalize(ProcGraph("bridge", tuple(verts), tuple(edges)))


def generate(params: GenParams, enforce_band: bool = True) -> ProcGraph:
    if params.category == "cactus":
        return gen_cactus(params, enforce_band)
    if params.category == "tree":
        return gen_tree(params, enforce_band)
    return gen_bridge(params)


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class Cylinder:
    """Truncated cone between two points; radii are in normalized units."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    r0: float
    r1: float


def graph_to_cylinders(g: ProcGraph, default_radius: float = DEFAULT_RADIUS) -> list[Cylinder]:
    out = []
    for e in g.edges:
        va, vb = g.vertices[e.a], g.vertices[e.b]
        out.append(
            Cylinder(
                tuple(va.pos),
                tuple(vb.pos),
                default_radius if va.radius is None else va.radius,
                default_radius if vb.radius is None else vb.radius,
            )
        )
    return out


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int, zero-based

    def to_obj(self) -> str:
        lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        return "\n".join(lines) + ("\n" if lines else "")


def _frustum(c: Cylinder, sides: int, offset: int) -> tuple[np.ndarray, np.ndarray]:
    p0, p1 = np.asarray(c.p0, float), np.asarray(c.p1, float)
    axis = p1 - p0
    if np.linalg.norm(axis) == 0.0:
        axis = UP * 1e-9
    d = _unit(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = _unit(np.cross(d, helper))
    w = np.cross(d, u)
    theta = 2.0 * np.pi * np.arange(sides) / sides
    ring = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * w
    verts = np.vstack([p0 + c.r0 * ring, p1 + c.r1 * ring, p0, p1])
    i = np.arange(sides)
    j = (i + 1) % sides
    bottom, top = i, sides + i
    cb, ct = 2 * sides, 2 * sides + 1
    faces = np.vstack(
        [
            np.stack([bottom, j, sides + j], 1),
            np.stack([bottom, sides + j, top], 1),
            np.stack([np.full(sides, cb), j, i], 1),
            np.stack([np.full(sides, ct), sides + i, sides + j], 1),
        ]
    )
    return verts, faces + offset


def export_mesh(cyls: list[Cylinder], sides: int = 16) -> TriMesh:
    """Tessellate every cylinder as a closed, capped frustum."""
    if sides < 3:
        raise ValueError("sides must be at least 3")
    vs, fs = [], []
    offset = 0
    for c in cyls:
        v, f = _frustum(c, sides, offset)
        vs.append(v)
        fs.append(f)
        offset += len(v)
    if not vs:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    return TriMesh(np.vstack(vs), np.vstack(fs).astype(int))
