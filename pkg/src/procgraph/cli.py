"""Command-line front end: dataset generation, prior training, reconstruction,
evaluation and a few conversion helpers.

Every command accepts ``--config file.json``; command-line flags override
the file, and the effective configuration is written next to the outputs.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import graph_core as gc
from .mcts import SearchConfig, decode_greedy, decode_with_mcts
from .metrics import chamfer, mask_overlap, sample_surface_points, topo_sim
from .prior import load_prior, perplexity, train_ngram
from .raster import Camera, load_pgm, render_mask, reward, save_pgm
from .rng import substream
from .synth_gen import BridgeParams, CactusParams, GenParams, TreeParams, export_mesh, generate, graph_to_cylinders
from .tokenizer import decode, encode, get_schema, read_corpus, write_corpus


VAL_FRACTION = 0.01
TEST_FRACTION = 0.04
AGGREGATE_ID = "__aggregate__"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    category: str = "cactus"
    seed: int = 0
    n: int = 1000
    dataset: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None
    resolution: int = 256
    gen: dict = field(default_factory=dict)  # per-category GenParams overrides
    search: dict = field(default_factory=dict)  # SearchConfig overrides
    prior: dict = field(default_factory=dict)  # train_ngram keyword overrides

    def __post_init__(self):
        if self.category not in gc.CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        if self.resolution < 1:
            raise ConfigError("resolution must be positive")
        allowed = {f.name for f in fields(SearchConfig)}
        bad = set(self.search) - allowed
        if bad:
            raise ConfigError(f"unknown search keys {sorted(bad)}")
        bad = set(self.prior) - {"order", "alpha", "shift", "relative"}
        if bad:
            raise ConfigError(f"unknown prior keys {sorted(bad)}")
        bad = set(self.gen) - {"cactus", "tree", "bridge"}
        if bad:
            raise ConfigError(f"unknown gen keys {sorted(bad)}")
        try:
            self.search_config()
            self.gen_params(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def camera(self) -> Camera:
        return Camera(resolution=self.resolution)

    def search_config(self) -> SearchConfig:
        return SearchConfig(**{"seed": self.seed, **self.search})

    def gen_params(self, seed: int) -> GenParams:
        subs = {}
        for name, cls in (("cactus", CactusParams), ("tree", TreeParams), ("bridge", BridgeParams)):
            over = {k: tuple(v) if isinstance(v, list) else v for k, v in self.gen.get(name, {}).items()}
            subs[name] = cls(**over)
        return GenParams(seed=seed, category=self.category, **subs)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    bad = set(data) - known
    if bad:
        raise ConfigError(f"{path}: unknown keys {sorted(bad)}")
    return data


# flag name -> (config section or None, key)
_FLAGS = {
    "category": (None, "category"),
    "seed": (None, "seed"),
    "n": (None, "n"),
    "dataset": (None, "dataset"),
    "model": (None, "model"),
    "out": (None, "out"),
    "resolution": (None, "resolution"),
    "lam": ("search", "lam"),
    "ratio": ("search", "ratio"),
    "rollout_L": ("search", "L"),
    "k": ("search", "k"),
    "p": ("search", "p"),
    "c": ("search", "c"),
    "k_candidates": ("search", "k_candidates"),
    "temperature": ("search", "temperature"),
    "max_edges": ("search", "max_edges"),
    "batch": ("search", "batch"),
    "workers": ("search", "workers"),
    "order": ("prior", "order"),
    "alpha": ("prior", "alpha"),
}


def build_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config)
    for dest, (section, key) in _FLAGS.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        if section is None:
            data[key] = val
        else:
            data.setdefault(section, {})[key] = val
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _require(value: Optional[str], flag: str) -> str:
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def split_counts(n: int) -> tuple[int, int, int]:
    n_val = round(n * VAL_FRACTION)
    n_test = round(n * TEST_FRACTION)
    return n - n_val - n_test, n_val, n_test


def cmd_gen_dataset(cfg: RunConfig, args) -> int:
    out = Path(_require(cfg.out, "--out")) / cfg.category
    if cfg.n < 1:
        raise ConfigError("--n must be at least 1")
    out.mkdir(parents=True, exist_ok=True)
    cam = cfg.camera
    schema = get_schema(cfg.category)
    seeds = [cfg.seed + i for i in range(cfg.n)]
    n_train, n_val, _ = split_counts(cfg.n)
    perm = substream(cfg.seed, 0xDA7A).permutation(cfg.n)
    split = {}
    for rank, idx in enumerate(perm):
        split[seeds[idx]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    for s in seeds:
        g = generate(cfg.gen_params(s))
        gc.save_graph(g, out / f"{s}.graph")
        write_corpus(out / f"{s}.tokens", [encode(g)], schema)
        save_pgm(render_mask(graph_to_cylinders(g), cam), out / f"{s}.mask.pgm")
    manifest = {
        "category": cfg.category,
        "schema": schema.header(),
        "items": [{"seed": s, "split": split[s]} for s in seeds],
    }
    _write_json(out / "manifest.json", manifest)
    (out / "config.json").write_text(cfg.to_json())
    counts = {k: sum(v == k for v in split.values()) for k in ("train", "val", "test")}
    print(json.dumps({"out": str(out), **counts}, sort_keys=True))
    return 0


def _dataset_dir(cfg: RunConfig) -> Path:
    d = Path(_require(cfg.dataset, "--dataset"))
    if (d / cfg.category / "manifest.json").exists():
        d = d / cfg.category
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json under {d}")
    return d


def _split_corpus(d: Path, split: str):
    manifest = json.loads((d / "manifest.json").read_text())
    schema = get_schema(manifest["category"])
    seqs = []
    for item in manifest["items"]:
        if item["split"] == split:
            sch, lines = read_corpus(d / f"{item['seed']}.tokens")
            if sch is not schema:
                raise ValueError(f"{d}/{item['seed']}.tokens: schema {sch.category} in a {schema.category} dataset")
            seqs.extend(lines)
    return schema, seqs


def cmd_train_prior(cfg: RunConfig, args) -> int:
    d = _dataset_dir(cfg)
    model = Path(_require(cfg.model, "--model"))
    schema, train = _split_corpus(d, "train")
    if schema.category != cfg.category:
        raise ConfigError(f"dataset holds {schema.category}, config asks for {cfg.category}")
    if not train:
        raise ValueError(f"{d}: empty training split")
    t0 = time.perf_counter()
    prior = train_ngram(train, schema=schema, **cfg.prior)
    model.parent.mkdir(parents=True, exist_ok=True)
    prior.save(model)
    held = _split_corpus(d, "val")[1] or _split_corpus(d, "test")[1]
    ppl = perplexity(prior, held) if held else None
    Path(str(model) + ".config.json").write_text(cfg.to_json())
    print(json.dumps({"model": str(model), "train_sequences": len(train), "heldout_perplexity": ppl, "wall_s": round(time.perf_counter() - t0, 3)}, sort_keys=True))
    return 0


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    model = _require(cfg.model, "--model")
    out = Path(_require(cfg.out, "--out"))
    schema = get_schema(cfg.category)
    prior = load_prior(model, expect_schema=schema)
    target = load_pgm(_require(args.target, "--target"))
    if target.width != cfg.resolution or target.height != cfg.resolution:
        raise ValueError(f"target is {target.width}x{target.height}, camera resolution is {cfg.resolution}")
    scfg = cfg.search_config()
    if args.greedy:
        res = decode_greedy(prior, scfg, target, cfg.camera)
        mode = "greedy"
    else:
        res = decode_with_mcts(prior, target, scfg, cfg.camera)
        mode = "mcts"
    out.mkdir(parents=True, exist_ok=True)
    cyls = graph_to_cylinders(res.graph, scfg.default_radius)
    gc.save_graph(res.graph, out / f"{mode}.graph")
    write_corpus(out / f"{mode}.tokens", [res.tokens], schema)
    save_pgm(render_mask(cyls, cfg.camera), out / f"{mode}.mask.pgm")
    (out / f"{mode}.obj").write_text(export_mesh(cyls).to_obj())
    (out / f"{mode}.trace.jsonl").write_text("".join(t.to_json() + "\n" for t in res.trace))
    summary = {
        "mode": mode,
        "reward": res.reward,
        "n_edges": res.graph.n_edges,
        "n_vertices": res.graph.n_vertices,
        "steps": len(res.trace),
        "wall_s": round(res.wall_s, 3),
    }
    _write_json(out / f"{mode}.summary.json", summary)
    (out / f"{mode}.config.json").write_text(cfg.to_json())
    print(json.dumps(summary, sort_keys=True))
    return 0


def evaluate_pair(pred: gc.ProcGraph, gt: gc.ProcGraph, cam: Camera, lam: float, n_points: int, seed: int) -> dict:
    t0 = time.perf_counter()
    cp, cg = graph_to_cylinders(pred), graph_to_cylinders(gt)
    # one stream for both sides, so identical graphs give identical point sets
    pts_p = sample_surface_points(cp, n_points, substream(seed, 0))
    pts_g = sample_surface_points(cg, n_points, substream(seed, 0))
    mp, mg = render_mask(cp, cam), render_mask(cg, cam)
    ov = mask_overlap(mp, mg)
    return {
        "cd": chamfer(pts_p, pts_g),
        "topo": topo_sim(pred, gt),
        "precision": ov.precision,
        "recall": ov.recall,
        "iou": ov.iou,
        "reward": reward(mp, mg, lam),
        "wall_ms": round((time.perf_counter() - t0) * 1e3, 3),
    }


_METRICS = ("cd", "topo", "precision", "recall", "iou", "reward", "wall_ms")


def cmd_evaluate(cfg: RunConfig, args) -> int:
    pairs_path = Path(_require(args.pairs, "--pairs"))
    out = Path(_require(cfg.out, "--out"))
    base = pairs_path.parent
    rows, missing = [], []
    for k, line in enumerate(pairs_path.read_text().splitlines()):
        if not line.strip():
            continue
        rec = json.loads(line)
        pid = str(rec.get("id", k))
        paths = [base / rec["pred"], base / rec["gt"]]
        absent = [str(p) for p in paths if not p.exists()]
        if absent:
            missing.extend(absent)
            continue
        row = evaluate_pair(gc.load_graph(paths[0]), gc.load_graph(paths[1]), cfg.camera, cfg.search_config().lam, args.points, cfg.seed)
        rows.append({"id": pid, **row})
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    if rows:
        agg = {m: float(np.mean([r[m] for r in rows])) for m in _METRICS}
        lines.append(json.dumps({"id": AGGREGATE_ID, "n": len(rows), **agg}, sort_keys=True))
    out.write_text("".join(x + "\n" for x in lines))
    Path(str(out) + ".config.json").write_text(cfg.to_json())
    for m in missing:
        print(f"missing: {m}", file=sys.stderr)
    print(json.dumps({"report": str(out), "pairs": len(rows), "missing": len(missing)}, sort_keys=True))
    return 2 if missing else 0


def cmd_render(cfg: RunConfig, args) -> int:
    g = gc.load_graph(_require(args.graph, "--graph"))
    out = Path(_require(cfg.out, "--out"))
    cyls = graph_to_cylinders(g)
    save_pgm(render_mask(cyls, cfg.camera), out)
    if args.mesh:
        Path(args.mesh).write_text(export_mesh(cyls).to_obj())
    return 0


def cmd_tokenize(cfg: RunConfig, args) -> int:
    out = Path(_require(cfg.out, "--out"))
    graphs = [gc.load_graph(p) for p in args.graphs]
    cats = {g.category for g in graphs}
    if len(cats) != 1:
        raise ValueError(f"graphs span several categories: {sorted(cats)}")
    schema = get_schema(cats.pop())
    write_corpus(out, [encode(g, schema) for g in graphs], schema)
    return 0


def cmd_detokenize(cfg: RunConfig, args) -> int:
    out = Path(_require(cfg.out, "--out"))
    schema, seqs = read_corpus(_require(args.tokens, "--tokens"))
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(seqs):
        gc.save_graph(decode(s, schema), out / f"{i}.graph")
    return 0


# ---------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config")
    p.add_argument("--category", choices=gc.CATEGORIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resolution", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--ratio", type=int)
    p.add_argument("--rollout-L", dest="rollout_L", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--k-candidates", dest="k_candidates", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-edges", dest="max_edges", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="procgraph", description=" ".join(__doc__.split("\n\n")[0].split()))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-dataset", help="generate graphs, token files and target masks")
    _common(p)
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train-prior", help="fit the n-gram prior on a dataset's train split")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--order", type=int)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_train_prior)

    p = sub.add_parser("reconstruct", help="decode a graph for a target silhouette")
    _common(p)
    _search_flags(p)
    p.add_argument("--model")
    p.add_argument("--target")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--mcts", action="store_true")
    mode.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score predicted graphs against ground truth")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--pairs", help="JSON-lines file of {id, pred, gt} graph paths")
    p.add_argument("--points", type=int, default=4096)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="render a graph file to a PGM mask")
    _common(p)
    p.add_argument("--graph")
    p.add_argument("--mesh", help="also write an OBJ mesh here")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("tokenize", help="encode graph files into a token corpus")
    _common(p)
    p.add_argument("graphs", nargs="+")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="decode a token corpus into graph files")
    _common(p)
    p.add_argument("--tokens")
    p.set_defaults(func=cmd_detokenize)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"procgraph: config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"procgraph: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
