"""Edge-based tokenization of procedural graphs.

Each edge becomes ``p`` tokens: the slots of its first endpoint, the slots
of its second endpoint, then the edge's own slots. Continuous slots use bins
``[0, 128)``; categorical slots use packed ids starting at 128; the three
special tokens (SPLIT, BOS, EOS) follow the categorical block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import graph_core as gc
from .graph_core import Edge, ProcGraph, Vertex
from .quant import N_BINS, dequantize, quantize

__all__ = [
    "CategorySchema",
    "TokenSeq",
    "MalformedSequenceError",
    "SCHEMAS",
    "get_schema",
    "quantize",
    "dequantize",
    "encode",
    "decode",
    "parse_edges",
    "read_corpus",
    "write_corpus",
]

CONTINUOUS_SLOTS = ("x", "y", "z", "radius")


class MalformedSequenceError(ValueError):
    pass


@dataclass(frozen=True)
class CategorySchema:
    category: str
    vertex_slots: tuple[str, ...]
    edge_slots: tuple[str, ...]
    categorical_tables: dict = field(default_factory=dict, hash=False, compare=False)
    traversal: str = "dfs"

    def __post_init__(self):
        offsets: dict[str, int] = {}
        nxt = N_BINS
        for slot in self.vertex_slots + self.edge_slots:
            if slot in CONTINUOUS_SLOTS or slot in offsets:
                continue
            table = self.categorical_tables.get(slot)
            if not table:
                raise ValueError(f"categorical slot {slot!r} has no label table")
            offsets[slot] = nxt
            nxt += len(table)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "n_categorical", nxt - N_BINS)

        ranges = []
        for slot in self.vertex_slots * 2 + self.edge_slots:
            if slot in CONTINUOUS_SLOTS:
                ranges.append((0, N_BINS))
            else:
                lo = offsets[slot]
                ranges.append((lo, lo + len(self.categorical_tables[slot])))
        object.__setattr__(self, "slot_ranges", tuple(ranges))

    @property
    def p(self) -> int:
        return 2 * len(self.vertex_slots) + len(self.edge_slots)

    @property
    def SPLIT(self) -> int:
        return N_BINS + self.n_categorical

    @property
    def BOS(self) -> int:
        return self.SPLIT + 1

    @property
    def EOS(self) -> int:
        return self.SPLIT + 2

    @property
    def vocab_size(self) -> int:
        return N_BINS + 3 + self.n_categorical

    @property
    def n_vertex_slots(self) -> int:
        return len(self.vertex_slots)

    def slot_names(self) -> tuple[str, ...]:
        return self.vertex_slots * 2 + self.edge_slots

    def label_to_id(self, slot: str, label: str) -> int:
        try:
            return self._offsets[slot] + self.categorical_tables[slot].index(label)
        except ValueError:
            raise ValueError(f"unknown {slot} label {label!r}") from None

    def id_to_label(self, slot: str, tok: int) -> str:
        return self.categorical_tables[slot][tok - self._offsets[slot]]

    def header(self) -> str:
        return f"#schema {self.category} p={self.p} vocab={self.vocab_size}"


SCHEMAS: dict[str, CategorySchema] = {
    "cactus": CategorySchema("cactus", ("x", "y", "z", "radius"), (), {}, "dfs"),
    "tree": CategorySchema("tree", ("x", "y", "z"), (), {}, "dfs"),
    "bridge": CategorySchema(
        "bridge",
        ("x", "y", "z", "semantic"),
        ("force_sign", "e_semantic", "cem_type"),
        {
            "semantic": gc.VERTEX_SEMANTICS,
            "force_sign": gc.FORCE_SIGNS,
            "e_semantic": gc.EDGE_SEMANTICS,
            "cem_type": gc.CEM_TYPES,
        },
        "bfs",
    ),
}


def get_schema(category: str) -> CategorySchema:
    try:
        return SCHEMAS[category]
    except KeyError:
        raise ValueError(f"unknown category {category!r}") from None


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    schema: CategorySchema

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def is_complete(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == self.schema.EOS


# ------------------------------------------------------------------- encode


def _vertex_tokens(v: Vertex, schema: CategorySchema) -> list[int]:
    out = []
    for slot in schema.vertex_slots:
        if slot == "radius":
            if v.radius is None:
                raise ValueError("cactus vertex without radius")
            out.append(quantize(v.radius))
        elif slot in CONTINUOUS_SLOTS:
            out.append(quantize(v.pos["xyz".index(slot)]))
        else:
            out.append(schema.label_to_id(slot, v.semantic))
    return out


def encode_edge(g: ProcGraph, a: int, b: int, edge: Edge, schema: CategorySchema) -> list[int]:
    toks = _vertex_tokens(g.vertices[a], schema) + _vertex_tokens(g.vertices[b], schema)
    for slot in schema.edge_slots:
        toks.append(schema.label_to_id(slot, getattr(edge, slot)))
    return toks


def encode(g: ProcGraph, schema: Optional[CategorySchema] = None) -> TokenSeq:
    """Serialize a valid, normalized graph in its schema's traversal order."""
    schema = schema or get_schema(g.category)
    if schema.category != g.category:
        raise ValueError(f"schema {schema.category} does not match graph {g.category}")
    report = gc.validate(g)
    if not report.ok:
        raise gc.GraphError(f"cannot encode invalid graph: {report.kinds()}")
    order = gc.traverse_dfs(g) if schema.traversal == "dfs" else gc.traverse_bfs(g)
    lookup = {(min(e.a, e.b), max(e.a, e.b)): e for e in g.edges}
    toks = [schema.BOS]
    for i, (a, b) in enumerate(order):
        if i:
            toks.append(schema.SPLIT)
        toks.extend(encode_edge(g, a, b, lookup[(min(a, b), max(a, b))], schema))
    toks.append(schema.EOS)
    return TokenSeq(tuple(toks), schema)


# ------------------------------------------------------------------- decode


def parse_edges(tokens: Sequence[int], schema: CategorySchema) -> tuple[list[tuple[int, ...]], bool]:
    """Split a (possibly partial) sequence into complete edge tuples.

    Returns the edges and whether EOS was reached. An incomplete trailing
    edge is dropped; a token outside its slot's range raises.
    """
    toks = list(tokens)
    if not toks or toks[0] != schema.BOS:
        raise MalformedSequenceError("sequence must start with BOS")
    p = schema.p
    ranges = schema.slot_ranges
    edges: list[tuple[int, ...]] = []
    i = 1
    n = len(toks)
    while i < n:
        if edges:
            sep = toks[i]
            if sep == schema.EOS:
                if i != n - 1:
                    raise MalformedSequenceError(f"tokens after EOS at position {i}")
                return edges, True
            if sep != schema.SPLIT:
                raise MalformedSequenceError(f"expected SPLIT or EOS at position {i}, got {sep}")
            i += 1
        chunk = toks[i : i + p]
        for k, t in enumerate(chunk):
            lo, hi = ranges[k]
            if not lo <= t < hi:
                raise MalformedSequenceError(
                    f"token {t} at position {i + k} outside slot range [{lo},{hi})"
                )
        if len(chunk) < p:
            break
        edges.append(tuple(chunk))
        i += p
    return edges, False


def vertex_from_tokens(vt: Sequence[int], schema: CategorySchema) -> Vertex:
    pos = [0.0, 0.0, 0.0]
    radius = semantic = None
    for slot, t in zip(schema.vertex_slots, vt):
        if slot == "radius":
            radius = dequantize(t)
        elif slot in CONTINUOUS_SLOTS:
            pos["xyz".index(slot)] = dequantize(t)
        else:
            semantic = schema.id_to_label(slot, t)
    return Vertex(tuple(pos), radius, semantic)


def decode(t: TokenSeq | Sequence[int], schema: Optional[CategorySchema] = None) -> ProcGraph:
    """Rebuild a graph, merging vertices whose slot tokens are identical."""
    if isinstance(t, TokenSeq):
        schema = schema or t.schema
        tokens = t.tokens
    else:
        tokens = t
        if schema is None:
            raise ValueError("decode of a bare token list needs a schema")
    edge_tuples, _ = parse_edges(tokens, schema)
    nv = schema.n_vertex_slots
    index: dict[tuple[int, ...], int] = {}
    verts: list[Vertex] = []
    edges: list[Edge] = []
    seen: set[tuple[int, int]] = set()
    for et in edge_tuples:
        ends = []
        for key in (et[:nv], et[nv : 2 * nv]):
            if key not in index:
                index[key] = len(verts)
                verts.append(vertex_from_tokens(key, schema))
            ends.append(index[key])
        a, b = ends
        pair = (min(a, b), max(a, b))
        if a == b or pair in seen:
            continue
        seen.add(pair)
        attrs = {slot: schema.id_to_label(slot, tok) for slot, tok in zip(schema.edge_slots, et[2 * nv :])}
        edges.append(Edge(a, b, **attrs))
    return ProcGraph(schema.category, tuple(verts), tuple(edges))


# ------------------------------------------------------------------- corpus


def write_corpus(path, seqs: Sequence[Sequence[int]], schema: CategorySchema) -> None:
    lines = [schema.header()]
    for s in seqs:
        toks = s.tokens if isinstance(s, TokenSeq) else s
        lines.append(" ".join(str(int(x)) for x in toks))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_header(line: str) -> CategorySchema:
    parts = line.strip().split()
    if len(parts) != 4 or parts[0] != "#schema":
        raise ValueError(f"bad corpus header: {line.strip()!r}")
    schema = get_schema(parts[1])
    fields = dict(kv.split("=", 1) for kv in parts[2:])
    if int(fields.get("p", -1)) != schema.p or int(fields.get("vocab", -1)) != schema.vocab_size:
        raise ValueError(f"corpus header {line.strip()!r} does not match schema {schema.header()!r}")
    return schema


def read_corpus(path) -> tuple[CategorySchema, list[tuple[int, ...]]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    schema = parse_header(lines[0])
    seqs = [tuple(int(x) for x in ln.split()) for ln in lines[1:] if ln.strip()]
    return schema, seqs
