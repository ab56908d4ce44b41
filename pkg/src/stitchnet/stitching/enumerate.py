"""Sliding-window enumeration of stitch positions.

A stitch position ``(l, m)`` means: run source blocks 1..l, apply a
stitching layer, then run target blocks m+1..L2. Windows of ``kernel``
consecutive block indices start at 1, 1+s, 1+2s, ... and must fit inside the
target depth. A position is valid when one window contains both the aligned
source index and ``m``; all positions whose lowest containing window is the
same share one stitching layer.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ContractError


@dataclass(frozen=True)
class WindowSpec:
    kernel: int = 2
    stride: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ContractError(f"window kernel and stride must be >= 1, got k={self.kernel} s={self.stride}")


def windows(depth: int, window: WindowSpec) -> list[tuple[int, int]]:
    """Inclusive (first, last) block ranges of every window over 1..depth."""
    if window.kernel > depth:
        raise ContractError(f"window size {window.kernel} exceeds depth {depth}: no windows")
    return [(i, i + window.kernel - 1) for i in range(1, depth - window.kernel + 2, window.stride)]


def align(l: int, depth_src: int, depth_dst: int) -> int:
    """Nearest-interpolation index of source block ``l`` in the target, rounding halves up."""
    a = (2 * l * depth_dst + depth_src) // (2 * depth_src)
    return min(max(a, 1), depth_dst)


def enumerate_unpaired(depth_src: int, depth_dst: int, window: WindowSpec) -> dict[tuple[int, int], int]:
    """Valid ``(l, m) -> window_id`` map, ordered by (l, m)."""
    if depth_src < 1 or depth_dst < 1:
        raise ContractError(f"depths must be positive, got {depth_src}, {depth_dst}")
    wins = windows(depth_dst, window)
    out: dict[tuple[int, int], int] = {}
    for l in range(1, depth_src + 1):
        a = align(l, depth_src, depth_dst)
        for wid, (lo, hi) in enumerate(wins):
            if not lo <= a <= hi:
                continue
            for m in range(lo, hi + 1):
                out.setdefault((l, m), wid)
    return dict(sorted(out.items()))


def enumerate_paired(depth: int, window: WindowSpec) -> dict[tuple[int, int], int]:
    """Equal-depth case; alignment is the identity."""
    return enumerate_unpaired(depth, depth, window)
