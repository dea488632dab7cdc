import pytest
from hypothesis import given, strategies as st

from procgraph import graph_core as gc
from procgraph.graph_core import Edge, ProcGraph, Vertex
from procgraph.synth_gen import GenParams, generate
from procgraph.tokenizer import (
    SCHEMAS,
    MalformedSequenceError,
    TokenSeq,
    decode,
    dequantize,
    encode,
    get_schema,
    parse_edges,
    quantize,
    read_corpus,
    write_corpus,
)


@pytest.mark.parametrize("v,b", [(0.0, 0), (1.0, 127), (0.5, 64), (-3.0, 0), (7.0, 127)])
def test_quantize(v, b):
    assert quantize(v) == b


def test_dequantize_examples():
    assert dequantize(0) == 0.00390625
    assert dequantize(127) == 0.99609375
    with pytest.raises(ValueError):
        dequantize(128)


def test_bin_center_roundtrip_all_bins():
    assert all(quantize(dequantize(b)) == b for b in range(128))


@given(st.floats(0.0, 1.0))
def test_quantization_error_bound(v):
    assert abs(dequantize(quantize(v)) - v) <= 1 / 256


def test_schema_layouts():
    assert [SCHEMAS[c].p for c in ("cactus", "tree", "bridge")] == [8, 6, 11]
    br = SCHEMAS["bridge"]
    assert br.n_categorical == 10 and br.vocab_size == 141
    assert (br.SPLIT, br.BOS, br.EOS) == (138, 139, 140)
    assert SCHEMAS["cactus"].vocab_size == 131 and SCHEMAS["cactus"].SPLIT == 128
    # categorical ids packed in slot order: vertex semantic, force, edge semantic, cem
    assert br.label_to_id("semantic", "deck") == 128
    assert br.label_to_id("force_sign", "tension") == 131
    assert br.label_to_id("e_semantic", "deck") == 133
    assert br.label_to_id("cem_type", "deviation") == 137


def cactus_path(m):
    verts = [Vertex((0.5, i / m, 0.5), 0.05) for i in range(m + 1)]
    return ProcGraph("cactus", verts, [Edge(i, i + 1) for i in range(m)])


def test_cactus_two_edges_length():
    t = encode(cactus_path(2))
    assert len(t) == 2 + 16 + 1 == 19


def test_tree_single_edge_tokens():
    g = ProcGraph("tree", [Vertex((0, 0, 0)), Vertex((1, 1, 1))], [Edge(0, 1)])
    s = SCHEMAS["tree"]
    assert encode(g).tokens == (s.BOS, 0, 0, 0, 127, 127, 127, s.EOS)


def test_empty_edge_set_rejected():
    g = ProcGraph("tree", [Vertex((0, 0, 0)), Vertex((1, 1, 1))], [])
    with pytest.raises(gc.GraphError):
        encode(g)


def test_decode_merges_identical_endpoints():
    s = SCHEMAS["tree"]
    toks = [s.BOS, 10, 10, 10, 20, 20, 20, s.SPLIT, 20, 20, 20, 30, 30, 30, s.EOS]
    g = decode(toks, s)
    assert g.n_vertices == 3 and g.n_edges == 2


def test_decode_drops_truncated_edge():
    s = SCHEMAS["tree"]
    toks = [s.BOS, 10, 10, 10, 20, 20, 20, s.SPLIT, 20, 20, 20, 30]
    g = decode(toks, s)
    assert g.n_edges == 1 and g.n_vertices == 2


def test_decode_drops_duplicates_and_self_loops():
    s = SCHEMAS["tree"]
    e = [10, 10, 10, 20, 20, 20]
    loop = [5, 5, 5, 5, 5, 5]
    toks = [s.BOS, *e, s.SPLIT, *e[3:], *e[:3], s.SPLIT, *loop, s.EOS]
    g = decode(toks, s)
    assert g.n_edges == 1


def test_decode_rejects_wrong_slot_class():
    s = SCHEMAS["bridge"]
    toks = [s.BOS, 1, 2, 3, 4]  # slot 3 is the vertex semantic block
    with pytest.raises(MalformedSequenceError):
        decode(toks, s)
    with pytest.raises(MalformedSequenceError):
        decode([5, 5, 5], SCHEMAS["tree"])


def test_parse_reports_eos():
    s = SCHEMAS["tree"]
    edges, done = parse_edges([s.BOS, 1, 2, 3, 4, 5, 6, s.EOS], s)
    assert edges == [(1, 2, 3, 4, 5, 6)] and done
    with pytest.raises(MalformedSequenceError):
        parse_edges([s.BOS, 1, 2, 3, 4, 5, 6, s.EOS, 1], s)


@pytest.mark.parametrize("category", ["cactus", "tree", "bridge"])
def test_generated_roundtrip(category):
    schema = get_schema(category)
    for seed in range(15):
        g = generate(GenParams(seed=seed, category=category))
        t = encode(g)
        m = g.n_edges
        assert len(t) == 2 + m * schema.p + (m - 1)
        d = decode(t)
        assert encode(d).tokens == t.tokens
        assert d.n_vertices == g.n_vertices and d.n_edges == m
        for ii, tok in enumerate(t.tokens[1:-1]):
            q = ii % (schema.p + 1)
            if q == schema.p:
                assert tok == schema.SPLIT
            else:
                lo, hi = schema.slot_ranges[q]
                assert lo <= tok < hi


def test_bridge_attributes_survive_roundtrip():
    g = generate(GenParams(seed=3, category="bridge"))
    d = decode(encode(g))
    labels = sorted((e.force_sign, e.e_semantic, e.cem_type) for e in d.edges)
    assert labels == sorted((e.force_sign, e.e_semantic, e.cem_type) for e in g.edges)


def test_corpus_file_roundtrip(tmp_path):
    seqs = [encode(generate(GenParams(seed=s, category="tree"))) for s in range(3)]
    path = tmp_path / "c.tokens"
    write_corpus(path, seqs, SCHEMAS["tree"])
    first = path.read_text().splitlines()[0]
    assert first == "#schema tree p=6 vocab=131"
    schema, back = read_corpus(path)
    assert schema is SCHEMAS["tree"] and back == [s.tokens for s in seqs]


def test_corpus_header_mismatch(tmp_path):
    path = tmp_path / "c.tokens"
    path.write_text("#schema tree p=8 vocab=131\n1 2 3\n")
    with pytest.raises(ValueError):
        read_corpus(path)


def test_tokenseq_completeness():
    s = SCHEMAS["tree"]
    assert TokenSeq((s.BOS, 1, 2, 3, 4, 5, 6, s.EOS), s).is_complete
    assert not TokenSeq((s.BOS, 1, 2), s).is_complete
