"""MCTS-guided autoregressive decoding over whole-edge moves.

One decision step grows a fresh search tree below the committed sequence:
the root is expanded into up to ``k_candidates`` distinct edge proposals,
``n * ratio`` simulations are spent by repeated UCB selection from the root,
and the root child with the highest mean reward is committed. A single
distinct candidate is committed without simulating.

Simulations may run concurrently in waves of ``batch`` selections: selection
inside a wave is sequential (pending visits count toward N), every
simulation draws from its own random stream keyed by (seed, step, slot),
and statistics are applied in slot order, so any worker count yields the
same result.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph_core import ProcGraph
from .prior import EdgeProposal, SequencePrior, sample_edge
from .quant import dequantize
from .raster import Camera, EmptyTargetError, SilhouetteMask, paint_capsules, render_mask, reward_from_counts
from .rng import substream
from .synth_gen import DEFAULT_RADIUS, graph_to_cylinders
from .tokenizer import CategorySchema, decode

# spawn-key tags separating the random streams of one step
_ROOT, _SIM, _EXPAND = 0, 1, 2


@dataclass(frozen=True)
class SearchConfig:
    c: float = math.sqrt(2.0)
    k_candidates: int = 8
    ratio: int = 4
    L: int = 10
    lam: float = 0.5
    max_edges: int = 512
    k: int = 50
    p: float = 0.95
    temperature: float = 1.0
    seed: int = 0
    batch: int = 1
    workers: int = 1
    default_radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if self.c < 0 or self.k_candidates < 1 or self.ratio < 0 or self.L < 0:
            raise ValueError("c, k_candidates, ratio and L must be non-negative (k_candidates >= 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.max_edges < 1 or self.k < 1 or not 0.0 < self.p <= 1.0:
            raise ValueError("max_edges and k must be positive, p in (0, 1]")
        if self.batch < 1 or self.workers < 1:
            raise ValueError("batch and workers must be positive")


@dataclass(eq=False)
class SearchNode:
    state: tuple[int, ...]
    n_edges: int = 0
    proposal: Optional[EdgeProposal] = None
    children: list["SearchNode"] = field(default_factory=list)
    N: int = 0
    Q: float = 0.0
    terminal: bool = False
    pending: int = 0

    @property
    def visits(self) -> int:
        return self.N + self.pending


# ------------------------------------------------------------------ rendering


class EdgePainter:
    """Turns edge token tuples straight into capsules for incremental masks.

    Equivalent to decode -> graph_to_cylinders -> render_mask: merged vertices
    and duplicate edges do not change the union of capsules, and edges whose
    endpoints are token-identical are skipped as decode drops them.
    """

    def __init__(self, schema: CategorySchema, cam: Camera, default_radius: float = DEFAULT_RADIUS):
        self.schema = schema
        self.cam = cam
        self.default_radius = default_radius
        slots = schema.vertex_slots
        self._xi, self._yi = slots.index("x"), slots.index("y")
        self._ri = slots.index("radius") if "radius" in slots else None
        self._nv = len(slots)
        self._centers = np.array([dequantize(b) for b in range(128)])

    def edges_in(self, tokens: Sequence[int], start: int) -> list[tuple[int, ...]]:
        """Complete edges in ``tokens[start:]``; ``start`` must sit at an edge boundary."""
        s = self.schema
        out = []
        i = start
        n = len(tokens)
        while i < n:
            t = tokens[i]
            if t == s.SPLIT or t == s.BOS:
                i += 1
                continue
            if t == s.EOS:
                break
            if i + s.p > n:
                break
            out.append(tuple(tokens[i : i + s.p]))
            i += s.p
        return out

    def paint(self, bits: np.ndarray, edges: Sequence[tuple[int, ...]]) -> None:
        nv = self._nv
        keep = [e for e in edges if e[:nv] != e[nv : 2 * nv]]
        if not keep:
            return
        arr = np.array(keep)
        c = self._centers
        p0 = np.stack([c[arr[:, self._xi]], c[arr[:, self._yi]]], 1)
        p1 = np.stack([c[arr[:, nv + self._xi]], c[arr[:, nv + self._yi]]], 1)
        if self._ri is None:
            r0 = r1 = np.full(len(arr), self.default_radius)
        else:
            r0, r1 = c[arr[:, self._ri]], c[arr[:, nv + self._ri]]
        paint_capsules(bits, p0, p1, r0, r1, self.cam)


@dataclass
class _Base:
    """Mask of the committed prefix, reused by every simulation of a step."""

    n_tokens: int
    bits: np.ndarray


def render_tokens(tokens: Sequence[int], schema: CategorySchema, cam: Camera, default_radius: float = DEFAULT_RADIUS) -> SilhouetteMask:
    """Reference path: decode the sequence and rasterize its cylinders."""
    g = decode(list(tokens), schema)
    return render_mask(graph_to_cylinders(g, default_radius), cam)


# ------------------------------------------------------------ search pieces


def ucb_score(Q: float, N_parent: int, N_child: int, c: float) -> float:
    return Q + c * math.sqrt(math.log(N_parent) / (1 + N_child))


def select(root: SearchNode, c: float) -> list[SearchNode]:
    """Descend by maximal UCB (lowest index on ties) to a leaf or terminal node."""
    path = [root]
    node = root
    while node.children and not node.terminal:
        n_parent = max(node.visits, 1)
        best, best_score = None, -math.inf
        for ch in node.children:
            s = ucb_score(ch.Q, n_parent, ch.visits, c)
            if s > best_score:
                best, best_score = ch, s
        node = best
        path.append(node)
    return path


def expand(leaf: SearchNode, prior: SequencePrior, cfg: SearchConfig, rng: np.random.Generator) -> list[SearchNode]:
    """Attach distinct sampled edge proposals as children, most probable first."""
    if leaf.terminal:
        raise ValueError("cannot expand a terminal node")
    schema = prior.schema
    if leaf.n_edges >= cfg.max_edges:
        props = [EdgeProposal((), True, 0.0)]
    else:
        seen: dict[tuple, EdgeProposal] = {}
        for _ in range(cfg.k_candidates):
            prop = sample_edge(prior, leaf.state, cfg.k, cfg.p, cfg.temperature, rng)
            seen.setdefault((prop.terminal, prop.tokens), prop)
        props = sorted(seen.values(), key=lambda e: -e.logp)  # stable: first-drawn wins ties
    leaf.children = [
        SearchNode(
            state=prop.extend(leaf.state, schema),
            n_edges=leaf.n_edges + (0 if prop.terminal else 1),
            proposal=prop,
            terminal=prop.terminal,
        )
        for prop in props
    ]
    return leaf.children


def rollout(state: Sequence[int], n_edges: int, prior: SequencePrior, cfg: SearchConfig, rng: np.random.Generator) -> list[int]:
    """Extend a non-terminal state by up to ``cfg.L`` sampled edges."""
    seq = list(state)
    if seq and seq[-1] == prior.schema.EOS:
        return seq
    for _ in range(cfg.L):
        if n_edges >= cfg.max_edges:
            break
        prop = sample_edge(prior, seq, cfg.k, cfg.p, cfg.temperature, rng)
        seq = list(prop.extend(seq, prior.schema))
        if prop.terminal:
            break
        n_edges += 1
    return seq


def simulate(
    child: SearchNode,
    prior: SequencePrior,
    target: SilhouetteMask,
    cfg: SearchConfig,
    rng: np.random.Generator,
    cam: Optional[Camera] = None,
    base: Optional[_Base] = None,
    painter: Optional[EdgePainter] = None,
) -> float:
    """Roll out from ``child``, render the whole partial graph and score it.

    With ``base`` (mask of an already rendered prefix) only the new edges
    are painted; the result is identical to a full render.
    """
    cam = cam or Camera(resolution=target.width)
    seq = rollout(child.state, child.n_edges, prior, cfg, rng)
    if base is None:
        rendered = render_tokens(seq, prior.schema, cam, cfg.default_radius).bits
    else:
        painter = painter or EdgePainter(prior.schema, cam, cfg.default_radius)
        rendered = base.bits.copy()
        painter.paint(rendered, painter.edges_in(seq, base.n_tokens))
    inter = int(np.count_nonzero(rendered & target.bits))
    return reward_from_counts(inter, int(np.count_nonzero(rendered)), target.count(), cfg.lam)


def propagate(path: Sequence[SearchNode], r: float) -> None:
    for node in path:
        node.N += 1
        node.Q += (r - node.Q) / node.N


# ----------------------------------------------------------------- decoding


@dataclass
class StepTrace:
    step: int
    n_candidates: int
    sims: int
    best_Q: float
    committed: list[int]
    terminal: bool
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DecodeResult:
    graph: ProcGraph
    tokens: tuple[int, ...]
    trace: list[StepTrace]
    reward: Optional[float] = None
    wall_s: float = 0.0


def _finish(seq: list[int], schema: CategorySchema) -> tuple[int, ...]:
    if seq[-1] != schema.EOS:
        seq = seq + [schema.EOS]
    return tuple(seq)


def decode_with_mcts(
    prior: SequencePrior,
    target: SilhouetteMask,
    cfg: SearchConfig = SearchConfig(),
    cam: Optional[Camera] = None,
) -> DecodeResult:
    if target.count() == 0:
        raise EmptyTargetError("target mask is empty")
    t_start = time.perf_counter()
    schema = prior.schema
    cam = cam or Camera(resolution=target.width)
    painter = EdgePainter(schema, cam, cfg.default_radius)
    seq: tuple[int, ...] = (schema.BOS,)
    n_edges = 0
    committed_bits = np.zeros_like(target.bits)
    trace: list[StepTrace] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        step = 0
        while True:
            t0 = time.perf_counter()
            root = SearchNode(seq, n_edges)
            expand(root, prior, cfg, substream(cfg.seed, step, _ROOT))
            n = len(root.children)
            sims = 0
            if n > 1 and cfg.ratio > 0:
                base = _Base(len(seq), committed_bits)
                sims = _run_simulations(root, prior, target, cfg, cam, base, painter, step, n * cfg.ratio, pool)
            best = root.children[0]
            for ch in root.children[1:]:
                if ch.Q > best.Q:
                    best = ch
            added = [] if best.terminal else list(best.proposal.tokens)
            trace.append(
                StepTrace(step, n, sims, best.Q, added, best.terminal, (time.perf_counter() - t0) * 1e3)
            )
            seq = best.state
            if best.terminal:
                break
            n_edges += 1
            committed_bits = committed_bits.copy()
            painter.paint(committed_bits, [best.proposal.tokens])
            step += 1
            if n_edges >= cfg.max_edges:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    tokens = _finish(list(seq), schema)
    g = decode(list(tokens), schema)
    r = _score(g, target, cfg, cam)
    return DecodeResult(g, tokens, trace, r, time.perf_counter() - t_start)


def _run_simulations(root, prior, target, cfg, cam, base, painter, step, budget, pool) -> int:
    slot = 0
    while slot < budget:
        wave = []
        for _ in range(min(cfg.batch, budget - slot)):
            path = select(root, cfg.c)
            leaf = path[-1]
            if not leaf.terminal and leaf.visits > 0:
                kids = expand(leaf, prior, cfg, substream(cfg.seed, step, _EXPAND, slot))
                path.append(kids[0])
            for node in path:
                node.pending += 1
            wave.append((slot, path))
            slot += 1

        def run(item):
            s, path = item
            return simulate(path[-1], prior, target, cfg, substream(cfg.seed, step, _SIM, s), cam, base, painter)

        rewards = list(pool.map(run, wave)) if pool is not None and len(wave) > 1 else [run(w) for w in wave]
        for (s, path), r in zip(wave, rewards):
            for node in path:
                node.pending -= 1
            propagate(path, r)
    return slot


def _score(g: ProcGraph, target: SilhouetteMask, cfg: SearchConfig, cam: Camera) -> float:
    from .raster import reward

    return reward(render_mask(graph_to_cylinders(g, cfg.default_radius), cam), target, cfg.lam)


def decode_greedy(prior: SequencePrior, cfg: SearchConfig = SearchConfig(), target: Optional[SilhouetteMask] = None, cam: Optional[Camera] = None) -> DecodeResult:
    """Plain ancestral top-k/top-p sampling; ``target`` is only used to report a reward."""
    t_start = time.perf_counter()
    schema = prior.schema
    rng = substream(cfg.seed, 0, _ROOT)
    seq = [schema.BOS]
    n_edges = 0
    while n_edges < cfg.max_edges:
        prop = sample_edge(prior, seq, cfg.k, cfg.p, cfg.temperature, rng)
        seq = list(prop.extend(seq, schema))
        if prop.terminal:
            break
        n_edges += 1
    tokens = _finish(seq, schema)
    g = decode(list(tokens), schema)
    r = None
    if target is not None:
        cam = cam or Camera(resolution=target.width)
        r = _score(g, target, cfg, cam)
    return DecodeResult(g, tokens, [], r, time.perf_counter() - t_start)
