"""Binary silhouette rendering of cylinder sets and the mask-overlap reward.

Orthographic view down -z: world x runs right, world y runs up, row 0 of a
mask is the top of the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .synth_gen import Cylinder


class MaskError(ValueError):
    pass


class MaskFormatError(MaskError):
    pass


class EmptyTargetError(MaskError):
    pass


@dataclass(frozen=True)
class Camera:
    resolution: int = 256
    window: tuple[float, float] = (-0.1, 1.1)

    @property
    def pixel_size(self) -> float:
        return (self.window[1] - self.window[0]) / self.resolution

    @property
    def pixels_per_unit(self) -> float:
        return self.resolution / (self.window[1] - self.window[0])

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x of each column and world y of each row."""
        k = (np.arange(self.resolution) + 0.5) * self.pixel_size
        return self.window[0] + k, self.window[1] - k


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    bits: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise MaskError("mask must be 2-D")
        if b.dtype != bool:
            if not np.isin(b, (0, 1)).all():
                raise MaskError("mask values must be binary")
            b = b.astype(bool)
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other) -> bool:
        return isinstance(other, SilhouetteMask) and np.array_equal(self.bits, other.bits)

    @classmethod
    def empty(cls, cam: Camera) -> "SilhouetteMask":
        return cls(np.zeros((cam.resolution, cam.resolution), dtype=bool))


def paint_capsules(bits: np.ndarray, p0: np.ndarray, p1: np.ndarray, r0: np.ndarray, r1: np.ndarray, cam: Camera) -> None:
    """OR tapered 2-D capsules into ``bits`` in place.

    ``p0``/``p1`` are (n, 2+) arrays of world positions (only x, y used).
    A pixel is set when its center is within the linearly interpolated
    radius of its closest point on the projected segment.
    """
    res = cam.resolution
    px = cam.pixel_size
    x0w, y1w = cam.window[0], cam.window[1]
    for k in range(len(p0)):
        ax, ay = float(p0[k][0]), float(p0[k][1])
        bx, by = float(p1[k][0]), float(p1[k][1])
        ra, rb = float(r0[k]), float(r1[k])
        rmax = max(ra, rb)
        # pixel index ranges whose centers can fall inside the capsule
        c_lo = max(0, math.ceil((min(ax, bx) - rmax - x0w) / px - 0.5))
        c_hi = min(res - 1, math.floor((max(ax, bx) + rmax - x0w) / px - 0.5))
        r_lo = max(0, math.ceil((y1w - (max(ay, by) + rmax)) / px - 0.5))
        r_hi = min(res - 1, math.floor((y1w - (min(ay, by) - rmax)) / px - 0.5))
        if c_lo > c_hi or r_lo > r_hi:
            continue
        xs = x0w + (np.arange(c_lo, c_hi + 1) + 0.5) * px
        ys = y1w - (np.arange(r_lo, r_hi + 1) + 0.5) * px
        dx = xs[None, :] - ax
        dy = ys[:, None] - ay
        ex, ey = bx - ax, by - ay
        ll = ex * ex + ey * ey
        if ll > 0.0:
            t = np.clip((dx * ex + dy * ey) / ll, 0.0, 1.0)
            rad = ra + t * (rb - ra)
            qx = dx - t * ex
            qy = dy - t * ey
        else:
            rad = rmax
            qx = np.broadcast_to(dx, (len(ys), len(xs)))
            qy = dy
        inside = qx * qx + qy * qy <= rad * rad
        bits[r_lo : r_hi + 1, c_lo : c_hi + 1] |= inside


def render_mask(cyls: Sequence[Cylinder], cam: Camera = Camera()) -> SilhouetteMask:
    bits = np.zeros((cam.resolution, cam.resolution), dtype=bool)
    if cyls:
        p0 = np.array([c.p0 for c in cyls], dtype=float)
        p1 = np.array([c.p1 for c in cyls], dtype=float)
        r0 = np.array([c.r0 for c in cyls], dtype=float)
        r1 = np.array([c.r1 for c in cyls], dtype=float)
        paint_capsules(bits, p0, p1, r0, r1, cam)
    return SilhouetteMask(bits)


def _check_dims(a: SilhouetteMask, b: SilhouetteMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise MaskError(f"dimension mismatch {a.bits.shape} vs {b.bits.shape}")


def reward(mG: SilhouetteMask, mI: SilhouetteMask, lam: float = 0.5) -> float:
    """Weighted mix of rendered-mask precision and target-mask recall."""
    _check_dims(mG, mI)
    n_target = mI.count()
    if n_target == 0:
        raise EmptyTargetError("target mask is empty")
    return reward_from_counts(int(np.count_nonzero(mG.bits & mI.bits)), mG.count(), n_target, lam)


def reward_from_counts(inter: int, n_rendered: int, n_target: int, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    precision = inter / n_rendered if n_rendered else 0.0
    recall = inter / n_target
    return lam * precision + (1.0 - lam) * recall


# ---------------------------------------------------------------------- PGM


def save_pgm(mask: SilhouetteMask, path) -> None:
    h, w = mask.bits.shape
    data = np.where(mask.bits, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data)


def _header_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    toks: list[bytes] = []
    i = 0
    n = len(raw)
    while len(toks) < count:
        while i < n and raw[i : i + 1].isspace():
            i += 1
        if i < n and raw[i : i + 1] == b"#":
            while i < n and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not raw[j : j + 1].isspace() and raw[j : j + 1] != b"#":
            j += 1
        if j == i:
            raise MaskFormatError("truncated PGM header")
        toks.append(raw[i:j])
        i = j
    return toks, i + 1  # exactly one whitespace byte ends the header


def load_pgm(path) -> SilhouetteMask:
    """Read a binary (P5) PGM; values >= 128 of 255 are foreground."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise MaskFormatError(f"{path}: not a binary PGM (P5) file")
    try:
        (magic, w, h, maxval), start = _header_tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise MaskFormatError(f"{path}: bad PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise MaskFormatError(f"{path}: bad PGM dimensions or maxval")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    body = raw[start : start + need]
    if len(body) != need:
        raise MaskFormatError(f"{path}: expected {need} data bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64)
    return SilhouetteMask(vals * (255.0 / maxval) >= 128.0)
