"""Procedural graph data model, validation, normalization and traversal orders.

A :class:`ProcGraph` holds vertices with per-category attributes and
undirected edges. Vertex 0 is always the root (trunk base or deck origin).
Graphs are immutable; every operation returns a new graph.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .quant import quantize

CATEGORIES = ("cactus", "tree", "bridge")

#: inclusive vertex-count bands for generated graphs
CATEGORY_BANDS = {"cactus": (30, 100), "tree": (50, 400), "bridge": (20, 140)}

VERTEX_SEMANTICS = ("deck", "tower", "anchor")
FORCE_SIGNS = ("tension", "compression")
EDGE_SEMANTICS = ("deck", "cable", "tower")
CEM_TYPES = ("trail", "deviation")

MAX_RADIUS = 0.25


class GraphError(ValueError):
    """Raised for graphs that an operation cannot accept."""


class DegenerateBBoxError(GraphError):
    pass


class CyclicGraphError(GraphError):
    pass


@dataclass(frozen=True)
class Vertex:
    pos: tuple[float, float, float]
    radius: Optional[float] = None
    semantic: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    force_sign: Optional[str] = None
    e_semantic: Optional[str] = None
    cem_type: Optional[str] = None

    @property
    def has_attributes(self) -> bool:
        return any(x is not None for x in (self.force_sign, self.e_semantic, self.cem_type))


@dataclass(frozen=True)
class NormTransform:
    """Maps world positions to normalized ones via ``(p - center) / scale``."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def to_world(self, p: Iterable[float]) -> tuple[float, float, float]:
        return tuple(float(x) * self.scale + c for x, c in zip(p, self.center))

    def to_normalized(self, p: Iterable[float]) -> tuple[float, float, float]:
        return tuple((float(x) - c) / self.scale for x, c in zip(p, self.center))


@dataclass(frozen=True)
class ProcGraph:
    category: str
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    norm: NormTransform = field(default_factory=NormTransform)

    def __post_init__(self):
        # accept lists for convenience but store tuples so the graph stays hashable
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.vertices]
        for e in self.edges:
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
        return adj


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    kind: str
    index: Optional[int] = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]

    def __bool__(self) -> bool:  # truthy when there are problems, like a non-empty list
        return bool(self.violations)


def validate(g: ProcGraph, check_band: bool = False) -> ValidationReport:
    """Check every graph invariant and report each violation.

    ``count-band`` is always raised for graphs with fewer than two vertices;
    with ``check_band`` the category's generation band is enforced as well.
    """
    out: list[Violation] = []
    n = len(g.vertices)
    if g.category not in CATEGORIES:
        out.append(Violation("unknown-category", None, g.category))

    for i, v in enumerate(g.vertices):
        if len(v.pos) != 3 or any(not (0.0 <= x <= 1.0) for x in v.pos):
            out.append(Violation("pos-range", i, f"pos={v.pos}"))
        if v.radius is not None and not (0.0 < v.radius <= MAX_RADIUS):
            out.append(Violation("radius-range", i, f"radius={v.radius}"))
        want_radius = g.category == "cactus"
        want_sem = g.category == "bridge"
        if (v.radius is not None) != want_radius:
            out.append(Violation("attribute-presence", i, "vertex radius"))
        if (v.semantic is not None) != want_sem:
            out.append(Violation("attribute-presence", i, "vertex semantic"))
        elif v.semantic is not None and v.semantic not in VERTEX_SEMANTICS:
            out.append(Violation("attribute-value", i, f"semantic={v.semantic}"))

    seen: dict[tuple[int, int], int] = {}
    usable: list[tuple[int, int]] = []
    for j, e in enumerate(g.edges):
        if not (0 <= e.a < n and 0 <= e.b < n):
            out.append(Violation("index-out-of-range", j, f"({e.a},{e.b})"))
            continue
        if e.a == e.b:
            out.append(Violation("self-loop", j, f"({e.a},{e.b})"))
            continue
        key = (min(e.a, e.b), max(e.a, e.b))
        if key in seen:
            out.append(Violation("duplicate-edge", j, f"duplicates edge {seen[key]}"))
            continue
        seen[key] = j
        usable.append((e.a, e.b))
        is_bridge = g.category == "bridge"
        attrs = (e.force_sign, e.e_semantic, e.cem_type)
        if is_bridge and any(x is None for x in attrs):
            out.append(Violation("attribute-presence", j, "bridge edge attributes"))
        elif not is_bridge and e.has_attributes:
            out.append(Violation("attribute-presence", j, "edge attributes"))
        if is_bridge and None not in attrs:
            if (
                e.force_sign not in FORCE_SIGNS
                or e.e_semantic not in EDGE_SEMANTICS
                or e.cem_type not in CEM_TYPES
            ):
                out.append(Violation("attribute-value", j, f"{attrs}"))

    if not g.edges or n == 0:
        out.append(Violation("disconnected-or-empty", None, "no edges"))
    else:
        reach = _reachable(n, usable, 0)
        missing = [i for i in range(n) if not reach[i]]
        if missing:
            out.append(Violation("disconnected-or-empty", missing[0], f"{len(missing)} unreachable"))

    if g.category in ("cactus", "tree"):
        closing = _cycle_edges(n, usable)
        for k in closing:
            # map back to the original edge index
            a, b = usable[k]
            out.append(Violation("cycle", seen[(min(a, b), max(a, b))]))

    lo, hi = CATEGORY_BANDS.get(g.category, (2, math.inf))
    if n < 2 or (check_band and not (lo <= n <= hi)):
        out.append(Violation("count-band", None, f"{n} vertices"))
    return ValidationReport(tuple(out))


def _reachable(n: int, pairs: list[tuple[int, int]], root: int) -> list[bool]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n
    if n == 0:
        return seen
    seen[root] = True
    stack = [root]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    return seen


def _cycle_edges(n: int, pairs: list[tuple[int, int]]) -> list[int]:
    """Indices of edges that close a cycle, by union-find in list order."""
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    closing = []
    for k, (a, b) in enumerate(pairs):
        ra, rb = find(a), find(b)
        if ra == rb:
            closing.append(k)
        else:
            parent[ra] = rb
    return closing


# ------------------------------------------------------------- normalization


def normalize(g: ProcGraph) -> ProcGraph:
    """Fit the positions' bounding box into the unit cube with a uniform scale.

    The longest axis spans [0, 1] and the others are centered. Radii are
    divided by the same scale. The stored transform is composed with any
    existing one so ``denormalize`` always returns to the original frame.
    """
    if len(g.vertices) < 2:
        raise GraphError("normalize needs at least 2 vertices")
    lo = [min(v.pos[k] for v in g.vertices) for k in range(3)]
    hi = [max(v.pos[k] for v in g.vertices) for k in range(3)]
    ext = [h - l for l, h in zip(lo, hi)]
    scale = max(ext)
    if not scale > 0.0:
        raise DegenerateBBoxError("all vertices coincide")
    center = tuple(l - (scale - e) / 2.0 for l, e in zip(lo, ext))

    def fit(p):
        return tuple(min(1.0, max(0.0, (x - c) / scale)) for x, c in zip(p, center))

    verts = tuple(
        replace(v, pos=fit(v.pos), radius=None if v.radius is None else v.radius / scale)
        for v in g.vertices
    )
    old = g.norm
    norm = NormTransform(
        center=tuple(c0 + old.scale * c for c0, c in zip(old.center, center)),
        scale=old.scale * scale,
    )
    return replace(g, vertices=verts, norm=norm)


def denormalize(g: ProcGraph) -> ProcGraph:
    """Map positions and radii back to world units (identity transform)."""
    nt = g.norm
    verts = tuple(
        replace(v, pos=nt.to_world(v.pos), radius=None if v.radius is None else v.radius * nt.scale)
        for v in g.vertices
    )
    return replace(g, vertices=verts, norm=NormTransform())


# ----------------------------------------------------------------- traversal


def order_key(v: Vertex, index: int) -> tuple:
    """Sort key for children and BFS frontiers: quantized position first."""
    q = tuple(quantize(x) for x in v.pos)
    r = -1 if v.radius is None else quantize(v.radius)
    return (q, r, v.semantic or "", index)


def _sorted_adjacency(g: ProcGraph) -> list[list[int]]:
    keys = [order_key(v, i) for i, v in enumerate(g.vertices)]
    return [sorted(set(nb), key=keys.__getitem__) for nb in g.adjacency()]


def traverse_dfs(g: ProcGraph, root: int = 0) -> list[tuple[int, int]]:
    """Pre-order depth-first edge list, each edge directed parent -> child."""
    n = len(g.vertices)
    if n == 0 or not g.edges:
        raise GraphError("empty graph")
    if _cycle_edges(n, [(e.a, e.b) for e in g.edges]):
        raise CyclicGraphError(f"{g.category} graph is not a tree ({n} vertices, {len(g.edges)} edges)")
    adj = _sorted_adjacency(g)
    seen = [False] * n
    seen[root] = True
    out: list[tuple[int, int]] = []
    stack = [(root, iter(adj[root]))]
    while stack:
        u, it = stack[-1]
        for w in it:
            if not seen[w]:
                seen[w] = True
                out.append((u, w))
                stack.append((w, iter(adj[w])))
                break
        else:
            stack.pop()
    if len(out) != len(g.edges) or len(out) != n - 1:
        raise GraphError("graph is disconnected")
    return out


def traverse_bfs(g: ProcGraph, root: int = 0) -> list[tuple[int, int]]:
    """Breadth-first edge list.

    Tree edges are emitted on discovery. An edge between two already
    discovered vertices closes a cycle and is emitted once its second
    endpoint is dequeued, directed from the earlier-discovered endpoint.
    """
    n = len(g.vertices)
    if n == 0 or not g.edges:
        raise GraphError("empty graph")
    adj = _sorted_adjacency(g)
    disc = [-1] * n
    done = [False] * n
    emitted: set[tuple[int, int]] = set()
    out: list[tuple[int, int]] = []
    disc[root] = 0
    counter = 1
    queue = deque([root])
    while queue:
        u = queue.popleft()
        done[u] = True
        for w in adj[u]:
            key = (min(u, w), max(u, w))
            if key in emitted:
                continue
            if disc[w] < 0:
                disc[w] = counter
                counter += 1
                queue.append(w)
                emitted.add(key)
                out.append((u, w))
            elif done[w]:
                emitted.add(key)
                out.append((w, u) if disc[w] < disc[u] else (u, w))
    n_unique = len({(min(e.a, e.b), max(e.a, e.b)) for e in g.edges})
    if len(out) != n_unique:
        raise GraphError("graph is disconnected")
    return out


# ----------------------------------------------------------------- file i/o

_TOP_FIELDS = {"category", "norm", "vertices", "edges"}
_NORM_FIELDS = {"center", "scale"}
_VERTEX_FIELDS = {"pos", "radius", "semantic"}
_EDGE_FIELDS = {"a", "b", "force_sign", "e_semantic", "cem_type"}


def graph_to_dict(g: ProcGraph) -> dict:
    verts = []
    for v in g.vertices:
        d: dict = {"pos": list(v.pos)}
        if v.radius is not None:
            d["radius"] = v.radius
        if v.semantic is not None:
            d["semantic"] = v.semantic
        verts.append(d)
    edges = []
    for e in g.edges:
        d = {"a": e.a, "b": e.b}
        for name in ("force_sign", "e_semantic", "cem_type"):
            val = getattr(e, name)
            if val is not None:
                d[name] = val
        edges.append(d)
    return {
        "category": g.category,
        "norm": {"center": list(g.norm.center), "scale": g.norm.scale},
        "vertices": verts,
        "edges": edges,
    }


def _check_fields(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise GraphError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise GraphError(f"{where}: unknown field(s) {sorted(extra)}")


def graph_from_dict(d: dict) -> ProcGraph:
    _check_fields(d, _TOP_FIELDS, "graph")
    missing = _TOP_FIELDS - set(d)
    if missing:
        raise GraphError(f"graph: missing field(s) {sorted(missing)}")
    _check_fields(d["norm"], _NORM_FIELDS, "norm")
    norm = NormTransform(tuple(float(x) for x in d["norm"]["center"]), float(d["norm"]["scale"]))
    verts = []
    for i, v in enumerate(d["vertices"]):
        _check_fields(v, _VERTEX_FIELDS, f"vertices[{i}]")
        pos = tuple(float(x) for x in v["pos"])
        if len(pos) != 3:
            raise GraphError(f"vertices[{i}]: pos must have 3 components")
        r = v.get("radius")
        verts.append(Vertex(pos, None if r is None else float(r), v.get("semantic")))
    edges = []
    for j, e in enumerate(d["edges"]):
        _check_fields(e, _EDGE_FIELDS, f"edges[{j}]")
        edges.append(
            Edge(int(e["a"]), int(e["b"]), e.get("force_sign"), e.get("e_semantic"), e.get("cem_type"))
        )
    return ProcGraph(d["category"], tuple(verts), tuple(edges), norm)


def dumps_graph(g: ProcGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1) + "\n"


def save_graph(g: ProcGraph, path) -> None:
    Path(path).write_text(dumps_graph(g))


def load_graph(path) -> ProcGraph:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not a graph file ({exc})") from exc
    return graph_from_dict(d)
