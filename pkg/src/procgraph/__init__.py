"""Procedural graph reconstruction from silhouettes: generators, tokenizer,
n-gram prior, MCTS decoding, rasterizer and metrics."""

__version__ = "0.1.0"
