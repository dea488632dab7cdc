"""Scalar discretization shared by traversal tie-breaking and tokenization."""

import math

N_BINS = 128


def quantize(v: float) -> int:
    """Map a unit-interval scalar to one of ``N_BINS`` classes (clamped)."""
    if v != v:
        raise ValueError("cannot quantize NaN")
    if v <= 0.0:
        return 0
    if v >= 1.0:
        return N_BINS - 1
    return min(int(math.floor(v * N_BINS)), N_BINS - 1)


def dequantize(b: int) -> float:
    """Bin-center reconstruction of a quantized scalar."""
    if not 0 <= b < N_BINS:
        raise ValueError(f"bin {b} outside [0, {N_BINS})")
    return (b + 0.5) / N_BINS
