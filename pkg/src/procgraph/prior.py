"""Autoregressive sequence priors with structural slot masking.

The search code only needs ``prior.schema`` and ``prior.next_dist(prefix)``;
:class:`NGramPrior` is the trained implementation and :class:`UniformPrior`
a baseline. Sampling helpers (top-k / top-p, whole-edge proposals) work
with any prior.

NGramPrior details
------------------
Counts are keyed by (slot, context) where the slot is the position inside
the edge layout, so a short context never mixes x and radius statistics.
Contexts are stored as 64-bit hashes in a sorted array (exact tuples would
not fit in memory at order 12). A distribution is built bottom-up::

    P_-1(w) = 1 / |A|                                 (uniform over admissible A)
    P_l(w)  = (c_l(w) + beta * P_{l-1}(w)) / (C_l + beta),  beta = alpha * |A|

for l = 0 (slot unigram) up to the longest context seen in training;
unseen longer contexts leave the distribution unchanged.

With ``relative=True`` continuous vertex coordinates are modelled as
differences from a reference token already in the prefix: the second
endpoint relative to the first, and the first endpoint relative to the
previous edge's second endpoint (DFS schemas) or first endpoint (BFS
schemas). Given the prefix this is a bijection on the admissible ids, so
the model is still a proper distribution over the real vocabulary; it just
shares statistics between edges that differ only by a translation. Context
tokens of relative positions keep a coarse absolute bin (``shift``) so the
model still knows where in the frame it is.

In both modes the separator slot (SPLIT vs EOS) is keyed on the edge count
so far in buckets of ``LENGTH_BUCKET``, which lets the model learn typical
graph sizes instead of stopping whenever a short context looks final.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .quant import N_BINS
from .tokenizer import CategorySchema, MalformedSequenceError, TokenSeq, get_schema, parse_edges

_MASK = (1 << 64) - 1
_K1 = 0x9E3779B97F4A7C15
_K2 = 0xBF58476D1CE4E5B9
_K3 = 0x94D049BB133111EB

MODEL_MAGIC = b"PGNGRAM\n"
MODEL_VERSION = 1

# view-space id of a coordinate difference d is REL_BASE + d, d in [-127, 127]
REL_BASE = 1127
# the separator is keyed on the number of edges so far, in buckets
LENGTH_BUCKET = 8
MAX_BUCKET = 63


# ------------------------------------------------------------------ slot mask


def slot_of(schema: CategorySchema, n_prefix: int) -> int:
    """Slot index of the next token after a prefix of ``n_prefix`` tokens.

    0..p-1 are edge slots, p is the separator (SPLIT or EOS).
    """
    if n_prefix < 1:
        raise MalformedSequenceError("prefix must contain BOS")
    return (n_prefix - 1) % (schema.p + 1)


def admissible(schema: CategorySchema, slot: int) -> np.ndarray:
    """Token ids allowed at ``slot``."""
    if slot == schema.p:
        return np.array([schema.SPLIT, schema.EOS])
    lo, hi = schema.slot_ranges[slot]
    return np.arange(lo, hi)


def admissible_mask(schema: CategorySchema, slot: int) -> np.ndarray:
    m = np.zeros(schema.vocab_size, dtype=bool)
    m[admissible(schema, slot)] = True
    return m


# -------------------------------------------------------------------- hashing


def _mix(h: int, tok: int) -> int:
    h = ((h ^ (tok + 1)) * _K1) & _MASK
    h ^= h >> 31
    h = (h * _K2) & _MASK
    h ^= h >> 29
    return h


def _mix_np(h: np.ndarray, tok: np.ndarray) -> np.ndarray:
    h = (h ^ (tok.astype(np.uint64) + np.uint64(1))) * np.uint64(_K1)
    h ^= h >> np.uint64(31)
    h = h * np.uint64(_K2)
    h ^= h >> np.uint64(29)
    return h


def _slot_seed(slot: int) -> int:
    return _mix(_K3, 1_000_003 + slot)


def context_class(tok: int, shift: int) -> int:
    """Context alphabet: absolute continuous bins are merged ``2**shift`` at a time."""
    return tok >> shift if tok < N_BINS else tok


def context_keys(tokens: Sequence[int], slot: int, order: int, shift: int = 0) -> list[int]:
    """Hash keys of the contexts of length 0..order ending at ``tokens[-1]``."""
    h = _slot_seed(slot)
    keys = [h]
    n = len(tokens)
    for ell in range(1, min(order, n) + 1):
        h = _mix(h, context_class(int(tokens[n - ell]), shift))
        keys.append(h)
    return keys


def reference_offsets(schema: CategorySchema) -> np.ndarray:
    """Per slot, how far back the reference token of a relative coordinate sits (0: absolute)."""
    nv = schema.n_vertex_slots
    step = schema.p + 1
    back_a = step - nv if schema.traversal == "dfs" else step
    off = np.zeros(step, dtype=np.int64)
    for j in range(nv):
        if schema.slot_ranges[j][1] <= N_BINS:
            off[j] = back_a
            off[nv + j] = nv
    return off


def _rel_context(delta_id, tok, shift):
    # a relative context token remembers the difference and the coarse absolute bin
    return delta_id + 256 * (1 + (tok >> shift))


def relative_context(tokens: Sequence[int], start: int, offsets: np.ndarray, p: int, shift: int) -> list[int]:
    """Context-alphabet view of ``tokens[start:]``; earlier positions serve as references."""
    out = []
    for i in range(max(start, 0), len(tokens)):
        t = int(tokens[i])
        off = int(offsets[(i - 1) % (p + 1)]) if i >= 1 else 0
        if off and i - off >= 1:
            out.append(_rel_context(REL_BASE + t - int(tokens[i - off]), t, shift))
        else:
            out.append(context_class(t, shift))
    return out


# --------------------------------------------------------------------- priors


class SequencePrior:
    """Interface: a next-token distribution restricted to the slot mask."""

    schema: CategorySchema

    def next_dist(self, prefix: Sequence[int]) -> np.ndarray:
        raise NotImplementedError


def _check_prefix(schema: CategorySchema, prefix: Sequence[int]) -> int:
    if not prefix or prefix[0] != schema.BOS:
        raise MalformedSequenceError("prefix must start with BOS")
    if prefix[-1] == schema.EOS:
        raise MalformedSequenceError("prefix already ended with EOS")
    return slot_of(schema, len(prefix))


class UniformPrior(SequencePrior):
    def __init__(self, schema: CategorySchema):
        self.schema = schema

    def next_dist(self, prefix: Sequence[int]) -> np.ndarray:
        slot = _check_prefix(self.schema, prefix)
        out = np.zeros(self.schema.vocab_size)
        ids = admissible(self.schema, slot)
        out[ids] = 1.0 / len(ids)
        return out


@dataclass(eq=False)
class NGramPrior(SequencePrior):
    schema: CategorySchema
    order: int
    alpha: float
    ctx_keys: np.ndarray  # (C,) uint64, sorted
    ctx_start: np.ndarray  # (C+1,) int64 offsets into succ arrays
    succ_tok: np.ndarray  # (S,) int16
    succ_cnt: np.ndarray  # (S,) int32
    shift: int = 0
    relative: bool = False
    min_count: int = 1
    cache_size: int = 50_000

    def __post_init__(self):
        self._cache: dict[tuple[int, int, int], np.ndarray] = {}
        self._offsets = reference_offsets(self.schema) if self.relative else np.zeros(self.schema.p + 1, dtype=np.int64)
        self._masks = [admissible_mask(self.schema, s) for s in range(self.schema.p + 1)]
        self._uniform = [m / m.sum() for m in self._masks]
        self.ctx_total = np.add.reduceat(self.succ_cnt, self.ctx_start[:-1]) if len(self.succ_cnt) else np.zeros(0)

    def _key_slot(self, slot: int, n: int, off: int, ref: int) -> int:
        step = self.schema.p + 1
        if off and ref < 0:
            # a relative slot with nothing to refer to (first edge) keeps its own statistics
            return slot + step
        if slot == self.schema.p:
            return 2 * step + min(((n - 1) // step + 1) // LENGTH_BUCKET, MAX_BUCKET)
        return slot

    def _seen_depth(self, keys: list[int]) -> tuple[int, np.ndarray]:
        q = np.array(keys, dtype=np.uint64)
        if len(self.ctx_keys) == 0:
            return 0, np.zeros(len(keys), dtype=np.int64)
        pos = np.searchsorted(self.ctx_keys, q)
        pos_c = np.minimum(pos, len(self.ctx_keys) - 1)
        hit = self.ctx_keys[pos_c] == q
        # every suffix of a seen context was also seen, so hits form a prefix
        depth = int(np.argmin(hit)) if not hit.all() else len(keys)
        if self.min_count > 1 and depth:
            # context totals shrink with length, so rare contexts form a suffix
            tot = self.ctx_total[pos_c[:depth]]
            low = tot < self.min_count
            if low.any():
                depth = int(np.argmax(low))
        return depth, pos_c

    def next_dist(self, prefix: Sequence[int]) -> np.ndarray:
        slot = _check_prefix(self.schema, prefix)
        n = len(prefix)
        if self.relative:
            ctx = relative_context(prefix, n - self.order, self._offsets, self.schema.p, self.shift)
            off = int(self._offsets[slot])
            ref = int(prefix[n - off]) if off and n - off >= 1 else -1
            ctx_shift = 0  # already mapped to the context alphabet
        else:
            ctx, off, ref, ctx_shift = prefix, 0, -1, self.shift
        key_slot = self._key_slot(slot, n, off, ref)
        keys = context_keys(ctx, key_slot, self.order, ctx_shift)
        depth, pos = self._seen_depth(keys)
        if depth == 0:
            return self._uniform[slot].copy()
        ck = (slot, keys[depth - 1], ref)
        hit = self._cache.get(ck)
        if hit is not None:
            return hit.copy()
        mask = self._masks[slot]
        beta = self.alpha * float(mask.sum())
        dist = self._uniform[slot].copy()
        counts = np.zeros(self.schema.vocab_size)
        for ell in range(depth):
            c = int(pos[ell])
            s, e = self.ctx_start[c], self.ctx_start[c + 1]
            counts[:] = 0.0
            tok = self.succ_tok[s:e].astype(np.int64)
            cnt = self.succ_cnt[s:e]
            if ref >= 0:
                tok = tok - REL_BASE + ref
                ok = (tok >= 0) & (tok < N_BINS)
                tok, cnt = tok[ok], cnt[ok]
            counts[tok] = cnt
            counts *= mask
            total = counts.sum()
            dist = (counts + beta * dist) / (total + beta)
        if len(self._cache) >= self.cache_size:
            self._cache.clear()
        self._cache[ck] = dist
        return dist.copy()

    # ---------------------------------------------------------- persistence

    def header(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "order": self.order,
            "alpha": self.alpha,
            "shift": self.shift,
            "relative": self.relative,
            "schema": self.schema.header(),
            "n_contexts": int(len(self.ctx_keys)),
            "n_successors": int(len(self.succ_tok)),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(len(head).to_bytes(8, "little"))
        buf.write(head)
        for arr, dt in (
            (self.ctx_keys, "<u8"),
            (self.ctx_start, "<i8"),
            (self.succ_tok, "<i2"),
            (self.succ_cnt, "<i4"),
        ):
            buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def load_prior(path, expect_schema: Optional[CategorySchema] = None) -> NGramPrior:
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not an n-gram model file")
    off = len(MODEL_MAGIC)
    n = int.from_bytes(raw[off : off + 8], "little")
    off += 8
    head = json.loads(raw[off : off + n])
    off += n
    if head.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {head.get('version')}")
    from .tokenizer import parse_header

    schema = parse_header(head["schema"])
    if expect_schema is not None and expect_schema.header() != schema.header():
        raise ValueError(f"model schema {schema.header()!r} does not match {expect_schema.header()!r}")
    nc, ns = head["n_contexts"], head["n_successors"]
    arrays = []
    for count, dt in ((nc, "<u8"), (nc + 1, "<i8"), (ns, "<i2"), (ns, "<i4")):
        size = count * np.dtype(dt).itemsize
        arrays.append(np.frombuffer(raw[off : off + size], dtype=dt).copy())
        off += size
    if off != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes in model file")
    keys, start, tok, cnt = arrays
    return NGramPrior(
        schema,
        int(head["order"]),
        float(head["alpha"]),
        keys.astype(np.uint64),
        start,
        tok,
        cnt,
        shift=int(head["shift"]),
        relative=bool(head["relative"]),
    )


# ------------------------------------------------------------------- training


def _corpus_arrays(corpus, schema: Optional[CategorySchema]):
    seqs = []
    for item in corpus:
        if isinstance(item, TokenSeq):
            if schema is None:
                schema = item.schema
            elif item.schema.header() != schema.header():
                raise ValueError(f"mixed-schema corpus: {item.schema.category} vs {schema.category}")
            seqs.append(item.tokens)
        else:
            seqs.append(tuple(item))
    if schema is None:
        raise ValueError("bare token lists need an explicit schema")
    if not seqs:
        raise ValueError("empty corpus")
    for s in seqs:
        edges, done = parse_edges(s, schema)
        if not done or not edges:
            raise MalformedSequenceError("training sequences must be complete (BOS ... EOS)")
    return schema, seqs


def train_ngram(
    corpus,
    order: int = 12,
    alpha: float = 0.1,
    schema: Optional[CategorySchema] = None,
    shift: int = 3,
    relative: bool = False,
) -> NGramPrior:
    """Count successors of every context of length 0..order over the corpus."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    schema, seqs = _corpus_arrays(corpus, schema)

    toks = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    lengths = np.array([len(s) for s in seqs])
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    pos_in_seq = np.arange(len(toks)) - np.repeat(starts, lengths)
    key_slot = (pos_in_seq - 1) % (schema.p + 1)
    if relative:
        off = reference_offsets(schema)[key_slot]
        rel = (pos_in_seq >= 1) & (off > 0) & (pos_in_seq - off >= 1)
        ref = toks[np.where(rel, np.arange(len(toks)) - off, 0)]
        ctx_toks = np.where(rel, _rel_context(REL_BASE + toks - ref, toks, shift), np.where(toks < N_BINS, toks >> shift, toks))
        toks = np.where(rel, REL_BASE + toks - ref, toks)
        key_slot = np.where((off > 0) & ~rel, key_slot + schema.p + 1, key_slot)
    else:
        ctx_toks = np.where(toks < N_BINS, toks >> shift, toks)
    # the separator slot is keyed on the number of edges so far, in buckets
    sep = (pos_in_seq >= 1) & ((pos_in_seq - 1) % (schema.p + 1) == schema.p)
    n_edges = (pos_in_seq - 1) // (schema.p + 1) + 1
    key_slot = np.where(sep, 2 * (schema.p + 1) + np.minimum(n_edges // LENGTH_BUCKET, MAX_BUCKET), key_slot)
    tgt_idx = np.nonzero(pos_in_seq >= 1)[0]  # predict every token after BOS
    slots = key_slot[tgt_idx]
    seeds = np.array([_slot_seed(s) for s in range(2 * (schema.p + 1) + MAX_BUCKET + 1)], dtype=np.uint64)

    h = seeds[slots]
    key_parts = [h]
    tok_parts = [toks[tgt_idx]]
    alive = np.ones(len(tgt_idx), dtype=bool)
    for ell in range(1, order + 1):
        alive &= pos_in_seq[tgt_idx] - ell >= 0
        if not alive.any():
            break
        h = _mix_np(h, ctx_toks[np.maximum(tgt_idx - ell, 0)])
        key_parts.append(h[alive])
        tok_parts.append(toks[tgt_idx][alive])
    keys = np.concatenate(key_parts)
    nxt = np.concatenate(tok_parts)

    order_idx = np.lexsort((nxt, keys))
    keys, nxt = keys[order_idx], nxt[order_idx]
    new_pair = np.ones(len(keys), dtype=bool)
    new_pair[1:] = (keys[1:] != keys[:-1]) | (nxt[1:] != nxt[:-1])
    pair_starts = np.nonzero(new_pair)[0]
    pair_counts = np.diff(np.append(pair_starts, len(keys)))
    pk, pt = keys[pair_starts], nxt[pair_starts]
    new_ctx = np.ones(len(pk), dtype=bool)
    new_ctx[1:] = pk[1:] != pk[:-1]
    ctx_first = np.nonzero(new_ctx)[0]
    return NGramPrior(
        schema=schema,
        order=order,
        alpha=float(alpha),
        ctx_keys=pk[ctx_first].astype(np.uint64),
        ctx_start=np.append(ctx_first, len(pk)).astype(np.int64),
        succ_tok=pt.astype(np.int16),
        succ_cnt=pair_counts.astype(np.int32),
        shift=shift,
        relative=relative,
    )


def perplexity(prior: SequencePrior, corpus) -> float:
    """Per-token perplexity of complete sequences (every token after BOS)."""
    nll = 0.0
    n = 0
    for item in corpus:
        toks = item.tokens if isinstance(item, TokenSeq) else tuple(item)
        for t in range(1, len(toks)):
            pr = prior.next_dist(toks[:t])[toks[t]]
            nll -= math.log(pr) if pr > 0 else -math.inf
            n += 1
    return math.exp(nll / n)


# ------------------------------------------------------------------- sampling


def sample_topk_topp(
    dist: np.ndarray,
    k: int = 50,
    p: float = 0.95,
    temperature: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> int:
    """Draw one token after temperature, top-k and nucleus truncation.

    Ties in probability are ordered by ascending token id. A non-positive
    temperature means greedy decoding.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    ids = np.flatnonzero(dist > 0)
    if len(ids) == 0:
        raise ValueError("distribution has no support")
    probs = dist[ids].astype(float)
    if temperature <= 0:
        return int(ids[np.argmax(probs)])
    if temperature != 1.0:
        logits = np.log(probs) / temperature
        logits -= logits.max()
        probs = np.exp(logits)
    order = np.argsort(-probs, kind="stable")[:k]
    kept = probs[order]
    cum = np.cumsum(kept)
    cum /= cum[-1]
    cut = int(np.searchsorted(cum, p - 1e-12, side="left")) + 1
    cum = cum[:cut] / cum[cut - 1]
    if cut == 1:
        return int(ids[order[0]])
    rng = rng if rng is not None else np.random.default_rng()
    j = int(np.searchsorted(cum, rng.random(), side="right"))
    return int(ids[order[min(j, cut - 1)]])


@dataclass(frozen=True)
class EdgeProposal:
    tokens: tuple[int, ...]  # p tokens, empty when terminal
    terminal: bool = False
    logp: float = 0.0  # prior log-probability of the separator and edge tokens

    def extend(self, prefix: Sequence[int], schema: CategorySchema) -> tuple[int, ...]:
        """Child state: the prefix followed by this proposal."""
        prefix = tuple(prefix)
        if self.terminal:
            return prefix + (schema.EOS,)
        if len(prefix) == 1 or prefix[-1] == schema.SPLIT:
            return prefix + self.tokens
        return prefix + (schema.SPLIT,) + self.tokens


def sample_edge(
    prior: SequencePrior,
    prefix: Sequence[int],
    k: int = 50,
    p: float = 0.95,
    temperature: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> EdgeProposal:
    """Sample the next whole edge (or EOS) after a prefix at an edge boundary.

    Accepted prefixes: ``[BOS]``, a sequence ending in a complete edge (the
    separator is sampled first), or a sequence ending in SPLIT.
    """
    schema = prior.schema
    seq = list(prefix)
    slot = _check_prefix(schema, seq)
    logp = 0.0
    if slot == schema.p:
        d = prior.next_dist(seq)
        sep = sample_topk_topp(d, k, p, temperature, rng)
        logp += math.log(d[sep])
        if sep == schema.EOS:
            return EdgeProposal((), True, logp)
        seq.append(sep)
    elif slot != 0:
        raise MalformedSequenceError("prefix does not end at an edge boundary")
    start = len(seq)
    for _ in range(schema.p):
        d = prior.next_dist(seq)
        t = sample_topk_topp(d, k, p, temperature, rng)
        logp += math.log(d[t])
        seq.append(t)
    return EdgeProposal(tuple(seq[start:]), False, logp)
