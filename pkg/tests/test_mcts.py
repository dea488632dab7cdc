import math

import numpy as np
import pytest

from procgraph.graph_core import Edge, ProcGraph, Vertex
from procgraph.mcts import (
    EdgePainter,
    SearchConfig,
    SearchNode,
    _Base,
    decode_greedy,
    decode_with_mcts,
    expand,
    propagate,
    render_tokens,
    select,
    simulate,
    ucb_score,
)
from procgraph.prior import SequencePrior, UniformPrior, admissible, slot_of, train_ngram
from procgraph.raster import Camera, EmptyTargetError, SilhouetteMask, render_mask, reward
from procgraph.rng import substream
from procgraph.synth_gen import GenParams, generate, graph_to_cylinders
from procgraph.tokenizer import SCHEMAS, decode, encode, parse_edges

CAM = Camera()
TREE = SCHEMAS["tree"]


@pytest.fixture(scope="module")
def cactus_prior():
    seqs = [encode(generate(GenParams(seed=s, category="cactus"))) for s in range(150)]
    return train_ngram(seqs)


def target_of(g):
    return render_mask(graph_to_cylinders(g), CAM)


# ----------------------------------------------------------------------- ucb


def test_ucb_examples():
    assert ucb_score(0.5, 10, 4, 1.0) == pytest.approx(0.5 + math.sqrt(math.log(10) / 5), abs=1e-12)
    assert ucb_score(0.5, 10, 4, 1.0) == pytest.approx(1.1786, abs=1e-4)
    assert ucb_score(0.37, 50, 3, 0.0) == 0.37
    assert ucb_score(0.0, 7, 0, 2.0) == pytest.approx(2.0 * math.sqrt(math.log(7)), abs=1e-12)


def test_select_boundary_and_unvisited_child():
    root = SearchNode((TREE.BOS,))
    assert select(root, math.sqrt(2)) == [root]
    a = SearchNode((1,), N=10, Q=0.9)
    b = SearchNode((2,), N=0, Q=0.1)
    root = SearchNode((TREE.BOS,), children=[a, b], N=10)
    sa = ucb_score(0.9, 10, 10, math.sqrt(2))
    sb = ucb_score(0.1, 10, 0, math.sqrt(2))
    assert sa == pytest.approx(1.5470, abs=1e-4) and sb == pytest.approx(2.2460, abs=1e-4)
    assert select(root, math.sqrt(2)) == [root, b]


def test_select_greedy_and_ties():
    kids = [SearchNode((i,), N=3, Q=q) for i, q in enumerate([0.2, 0.7, 0.7, 0.1])]
    root = SearchNode((TREE.BOS,), children=kids, N=12)
    assert select(root, 0.0)[-1] is kids[1]
    deep = SearchNode((9,), N=1, Q=0.5)
    kids[1].children = [SearchNode((8,), N=1, Q=0.3), deep]
    assert select(root, 0.0) == [root, kids[1], deep]
    kids[1].terminal = True
    assert select(root, 0.0) == [root, kids[1]]


# ------------------------------------------------------------------- propagate


def test_propagate_examples():
    n = SearchNode((TREE.BOS,))
    propagate([n], 0.6)
    assert (n.N, n.Q) == (1, pytest.approx(0.6))
    propagate([n], 0.2)
    assert (n.N, n.Q) == (2, pytest.approx(0.4))


def test_propagate_order_independent():
    rng = np.random.default_rng(0)
    rs = rng.random(50)
    a, b = SearchNode(()), SearchNode(())
    for r in rs:
        propagate([a, b], r)
    c, d = SearchNode(()), SearchNode(())
    for r in rs:
        propagate([d, c], r)
    assert (a.N, a.Q) == (c.N, c.Q) == (b.N, b.Q) == (d.N, d.Q)
    assert abs(a.Q - rs.mean()) < 1e-12


# ---------------------------------------------------------------------- expand


class _EosPrior(SequencePrior):
    """Uniform inside edges, always EOS at the separator."""

    def __init__(self, schema):
        self.schema = schema
        self._u = UniformPrior(schema)

    def next_dist(self, prefix):
        if slot_of(self.schema, len(prefix)) == self.schema.p:
            d = np.zeros(self.schema.vocab_size)
            d[self.schema.EOS] = 1.0
            return d
        return self._u.next_dist(prefix)


def test_expand_dedups_concentrated_prior():
    seq = (TREE.BOS, 1, 2, 3, 4, 5, 6, TREE.EOS)
    prior = train_ngram([seq], alpha=1e-9, schema=TREE)
    kids = expand(SearchNode((TREE.BOS,)), prior, SearchConfig(k=1), substream(0, 0))
    assert len(kids) == 1 and kids[0].proposal.tokens == (1, 2, 3, 4, 5, 6)


def test_expand_all_eos_gives_single_terminal():
    prior = _EosPrior(TREE)
    kids = expand(SearchNode((TREE.BOS, 1, 2, 3, 4, 5, 6), 1), prior, SearchConfig(), substream(0, 0))
    assert len(kids) == 1 and kids[0].terminal and kids[0].state[-1] == TREE.EOS
    with pytest.raises(ValueError):
        expand(kids[0], prior, SearchConfig(), substream(0, 1))


def test_expand_children_distinct_and_sorted(cactus_prior):
    s = cactus_prior.schema
    kids = expand(SearchNode((s.BOS,)), cactus_prior, SearchConfig(k_candidates=16), substream(3, 0))
    keys = [(k.terminal, k.proposal.tokens) for k in kids]
    assert len(set(keys)) == len(keys) >= 2
    lps = [k.proposal.logp for k in kids]
    assert lps == sorted(lps, reverse=True)
    assert all(k.n_edges == 1 for k in kids)


# -------------------------------------------------------------------- simulate


def test_terminal_child_on_source_graph_scores_one():
    t = encode(generate(GenParams(seed=4, category="cactus"))).tokens
    g = decode(t, SCHEMAS["cactus"])  # the committed graph lives on the token grid
    child = SearchNode(t, g.n_edges, terminal=True)
    r = simulate(child, UniformPrior(SCHEMAS["cactus"]), target_of(g), SearchConfig(), substream(0, 0), CAM)
    assert r == 1.0


def test_empty_rollout_scores_zero():
    g = generate(GenParams(seed=4, category="cactus"))
    s = SCHEMAS["cactus"]
    root = SearchNode((s.BOS,), 0)
    assert simulate(root, UniformPrior(s), target_of(g), SearchConfig(L=0), substream(0, 0), CAM) == 0.0


def test_rollout_rewards_in_range(cactus_prior):
    g = generate(GenParams(seed=8, category="cactus"))
    tgt = target_of(g)
    s = cactus_prior.schema
    cfg = SearchConfig()
    for i in range(300):
        r = simulate(SearchNode((s.BOS,)), cactus_prior, tgt, cfg, substream(1, i), CAM)
        assert 0.0 <= r <= 1.0


def test_incremental_render_matches_full(cactus_prior):
    g = generate(GenParams(seed=12, category="cactus"))
    tgt = target_of(g)
    s = cactus_prior.schema
    cfg = SearchConfig()
    painter = EdgePainter(s, CAM, cfg.default_radius)
    t = encode(g).tokens
    for m in (1, 5, 20):
        prefix = t[: 1 + m * (s.p + 1) - 1]
        bits = render_tokens(prefix, s, CAM).bits
        assert np.array_equal(bits, render_tokens(list(prefix) + [s.EOS], s, CAM).bits)
        base = _Base(len(prefix), bits)
        for i in range(20):
            node = SearchNode(tuple(prefix), m)
            full = simulate(node, cactus_prior, tgt, cfg, substream(5, m, i), CAM)
            inc = simulate(node, cactus_prior, tgt, cfg, substream(5, m, i), CAM, base, painter)
            assert full == inc


def test_painter_matches_decode_render():
    g = generate(GenParams(seed=2, category="bridge"))
    s = SCHEMAS["bridge"]
    t = encode(g).tokens
    bits = np.zeros((256, 256), bool)
    painter = EdgePainter(s, CAM)
    painter.paint(bits, painter.edges_in(t, 0))
    assert np.array_equal(bits, render_tokens(t, s, CAM).bits)


# ---------------------------------------------------------------------- decode


def test_decode_requires_target(cactus_prior):
    with pytest.raises(EmptyTargetError):
        decode_with_mcts(cactus_prior, SilhouetteMask.empty(CAM))


def test_single_edge_target_beats_greedy():
    trees = [encode(generate(GenParams(seed=s, category="tree"))) for s in range(60)]
    prior = train_ngram(trees)
    g = ProcGraph("tree", [Vertex((0.5, 0.1, 0.5)), Vertex((0.5, 0.9, 0.5))], [Edge(0, 1)])
    tgt = target_of(g)
    wins = 0
    for seed in range(3):
        cfg = SearchConfig(seed=seed, max_edges=40)
        m = decode_with_mcts(prior, tgt, cfg)
        gr = decode_greedy(prior, cfg, tgt)
        wins += m.reward >= gr.reward
    assert wins == 3


def test_ratio_zero_commits_max_prior_child(cactus_prior):
    s = cactus_prior.schema
    g = generate(GenParams(seed=1, category="cactus"))
    cfg = SearchConfig(ratio=0, max_edges=3, seed=4)
    res = decode_with_mcts(cactus_prior, target_of(g), cfg)
    root = SearchNode((s.BOS,))
    kids = expand(root, cactus_prior, cfg, substream(cfg.seed, 0, 0))
    assert res.trace[0].sims == 0
    assert tuple(res.trace[0].committed) == kids[0].proposal.tokens


def test_trace_and_structure(cactus_prior):
    s = cactus_prior.schema
    g = generate(GenParams(seed=6, category="cactus"))
    res = decode_with_mcts(cactus_prior, target_of(g), SearchConfig(seed=1, max_edges=12))
    edges, done = parse_edges(res.tokens, s)
    assert done and len(edges) == sum(not st.terminal for st in res.trace) <= 12
    for st in res.trace:
        assert 0.0 <= st.best_Q <= 1.0
        assert st.sims == (0 if st.n_candidates == 1 else st.n_candidates * 4)
    assert res.reward == reward(target_of(decode(res.tokens, s)), target_of(g), 0.5)


def test_mcts_deterministic_and_concurrency_invariant(cactus_prior):
    g = generate(GenParams(seed=9, category="cactus"))
    tgt = target_of(g)
    a = decode_with_mcts(cactus_prior, tgt, SearchConfig(seed=3, max_edges=8, batch=4, workers=1))
    b = decode_with_mcts(cactus_prior, tgt, SearchConfig(seed=3, max_edges=8, batch=4, workers=4))
    c = decode_with_mcts(cactus_prior, tgt, SearchConfig(seed=3, max_edges=8, batch=4, workers=1))
    assert a.tokens == b.tokens == c.tokens
    assert [t.best_Q for t in a.trace] == [t.best_Q for t in b.trace]


def test_greedy_memorizes_and_is_valid(cactus_prior):
    seq = encode(generate(GenParams(seed=0, category="tree")))
    prior = train_ngram([seq], alpha=1e-9, shift=0)
    out = decode_greedy(prior, SearchConfig(k=1, temperature=0.0))
    assert out.tokens == seq.tokens
    s = cactus_prior.schema
    for seed in range(5):
        r1 = decode_greedy(cactus_prior, SearchConfig(seed=seed))
        r2 = decode_greedy(cactus_prior, SearchConfig(seed=seed))
        assert r1.tokens == r2.tokens
        edges, done = parse_edges(r1.tokens, s)
        assert done
        for i, tok in enumerate(r1.tokens[1:-1]):
            q = i % (s.p + 1)
            assert tok in set(admissible(s, q).tolist())


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(lam=1.5)
    with pytest.raises(ValueError):
        SearchConfig(workers=0)
