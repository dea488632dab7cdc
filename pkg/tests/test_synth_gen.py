from dataclasses import replace

import numpy as np
import pytest

from procgraph import graph_core as gc
from procgraph.graph_core import Edge, ProcGraph, Vertex
from procgraph.synth_gen import (
    BridgeParams,
    CactusParams,
    GenParams,
    TreeParams,
    export_mesh,
    gen_bridge,
    gen_cactus,
    gen_tree,
    generate,
    graph_to_cylinders,
)


@pytest.mark.parametrize("category", ["cactus", "tree", "bridge"])
def test_same_seed_identical(category):
    p = GenParams(seed=1234, category=category)
    assert gc.dumps_graph(generate(p)) == gc.dumps_graph(generate(p))
    assert gc.dumps_graph(generate(p)) != gc.dumps_graph(generate(replace(p, seed=1235)))


def test_cactus_without_branching_is_a_path():
    p = GenParams(seed=5, category="cactus", cactus=CactusParams(branch_prob=0.0, trunk_segments=(7, 7)))
    g = gen_cactus(p, enforce_band=False)
    assert g.n_vertices == 8 and g.n_edges == 7
    degrees = sorted(len(nb) for nb in g.adjacency())
    assert degrees == [1, 1] + [2] * 6


def test_tree_without_depth_is_bare_trunk():
    p = GenParams(seed=2, category="tree", tree=TreeParams(max_depth=0, trunk_segments=(9, 9)))
    g = gen_tree(p, enforce_band=False)
    assert g.n_vertices == 10 and g.n_edges == 9
    assert all(v.radius is None for v in g.vertices)


def test_band_enforced_by_default_for_bare_trunk():
    p = GenParams(seed=2, category="tree", tree=TreeParams(max_depth=0))
    with pytest.raises(RuntimeError):
        gen_tree(p)


@pytest.mark.parametrize("category", ["cactus", "tree", "bridge"])
def test_generated_graphs_validate_inside_band(category):
    lo, hi = gc.CATEGORY_BANDS[category]
    for seed in range(40):
        g = generate(GenParams(seed=seed, category=category))
        assert gc.validate(g, check_band=True).ok
        assert lo <= g.n_vertices <= hi


def test_cactus_radius_decays_with_depth():
    g = generate(GenParams(seed=0, category="cactus"))
    radii = [v.radius for v in g.vertices]
    assert max(radii) == pytest.approx(0.06 / g.norm.scale)
    assert min(radii) < max(radii)


def test_bridge_with_six_deck_nodes():
    p = GenParams(seed=0, category="bridge", bridge=BridgeParams(deck_nodes=(6, 6)))
    g = gen_bridge(p)
    assert g.n_vertices == 10 and g.n_edges == 19
    kinds = [e.e_semantic for e in g.edges]
    assert kinds.count("deck") == 5 and kinds.count("tower") == 2 and kinds.count("cable") == 12
    assert all(e.force_sign == "tension" for e in g.edges if e.e_semantic == "cable")
    assert gc.validate(g).ok


def test_bridge_towers_near_quartiles():
    g = gen_bridge(GenParams(seed=9, category="bridge"))
    deck_x = [v.pos[0] for v in g.vertices if v.semantic == "deck"]
    lo, hi = min(deck_x), max(deck_x)
    tops = [(v.pos[0] - lo) / (hi - lo) for v in g.vertices if v.semantic == "tower"]
    assert tops[0] == pytest.approx(0.25, abs=0.06) and tops[1] == pytest.approx(0.75, abs=0.06)


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        GenParams(category="cactus", cactus=CactusParams(branch_prob=1.5))
    with pytest.raises(ValueError):
        GenParams(category="shrub")
    with pytest.raises(ValueError):
        GenParams(category="tree", tree=TreeParams(segment_len=0.0))


def test_cylinders_follow_edges_and_radii():
    g = ProcGraph("cactus", [Vertex((0, 0, 0), 0.06), Vertex((0, 1, 0), 0.042)], [Edge(0, 1)])
    (c,) = graph_to_cylinders(g)
    assert (c.r0, c.r1) == (0.06, 0.042)
    t = ProcGraph("tree", [Vertex((0, 0, 0)), Vertex((0, 1, 0))], [Edge(0, 1)])
    (c,) = graph_to_cylinders(t)
    assert (c.r0, c.r1) == (0.008, 0.008)
    big = generate(GenParams(seed=1, category="tree"))
    cyls = graph_to_cylinders(big)
    assert len(cyls) == big.n_edges
    assert cyls[3].p0 == big.vertices[big.edges[3].a].pos


def _euler(faces):
    edges = set()
    for f in faces:
        for i in range(3):
            a, b = int(f[i]), int(f[(i + 1) % 3])
            edges.add((min(a, b), max(a, b)))
    return len(np.unique(faces)) - len(edges) + len(faces), edges


def test_single_frustum_counts_and_euler():
    g = generate(GenParams(seed=0, category="cactus"))
    mesh = export_mesh(graph_to_cylinders(g)[:1], sides=16)
    assert mesh.vertices.shape == (34, 3) and mesh.faces.shape == (64, 3)
    chi, edges = _euler(mesh.faces)
    assert chi == 2
    # closed surface: every edge shared by exactly two triangles
    use = {}
    for f in mesh.faces:
        for i in range(3):
            a, b = int(f[i]), int(f[(i + 1) % 3])
            use[(min(a, b), max(a, b))] = use.get((min(a, b), max(a, b)), 0) + 1
    assert set(use.values()) == {2}


def test_mesh_per_frustum_euler_and_obj():
    g = generate(GenParams(seed=4, category="tree"))
    cyls = graph_to_cylinders(g)[:5]
    mesh = export_mesh(cyls, sides=8)
    per = 2 * 8 + 2
    for k in range(len(cyls)):
        sel = mesh.faces[(mesh.faces >= k * per).all(1) & (mesh.faces < (k + 1) * per).all(1)]
        assert len(sel) == 32 and _euler(sel)[0] == 2
    text = mesh.to_obj().splitlines()
    assert sum(line.startswith("v ") for line in text) == 5 * per
    assert sum(line.startswith("f ") for line in text) == 5 * 32
    assert min(int(x) for line in text if line.startswith("f ") for x in line.split()[1:]) == 1


def test_empty_mesh():
    mesh = export_mesh([])
    assert mesh.vertices.shape == (0, 3) and mesh.to_obj() == ""
    with pytest.raises(ValueError):
        export_mesh([], sides=2)
