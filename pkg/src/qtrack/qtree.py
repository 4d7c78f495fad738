"""Quadtree representation over square power-of-two frames.

A tree covers a frame of side 2**depth_max. Internal nodes split into four
children in fixed NW, NE, SW, SE order; leaves carry a skip or acquire mode.
Serialization is a deterministic preorder bitstring:

  * every node above the maximum depth emits one structure bit
    (1 = split, 0 = leaf); nodes at the maximum depth emit none,
  * every leaf emits one mode bit (0 = skip, 1 = acquire),
  * acquire leaves emit 8 raw value bits, MSB first.

Bitstrings are plain '0'/'1' strings here; byte packing lives in `channel`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np


class QTreeError(Exception):
    pass


class TruncatedBitstream(QTreeError):
    """Bitstring ended before the tree was complete."""


class TrailingBits(QTreeError):
    """Bits remain after the root subtree was fully decoded."""


@dataclass(frozen=True)
class LeafMode:
    acquire: bool
    value: Optional[int] = None

    def __post_init__(self):
        if self.acquire:
            if self.value is None or not 0 <= self.value <= 255:
                raise ValueError("acquire leaf needs an 8-bit value")
        elif self.value is not None:
            raise ValueError("skip leaf carries no value")


SKIP = LeafMode(acquire=False)


def acquire(value: int) -> LeafMode:
    return LeafMode(acquire=True, value=int(value))


@dataclass(frozen=True)
class QTNode:
    level: int
    origin: Tuple[int, int]  # (row, col)
    size: int
    children: Optional[Tuple["QTNode", "QTNode", "QTNode", "QTNode"]] = None
    mode: Optional[LeafMode] = None

    def __post_init__(self):
        if (self.children is None) == (self.mode is None):
            raise ValueError("node is either a split (children) or a leaf (mode)")
        if self.size < 1:
            raise ValueError("leaf size must be >= 1")

    @property
    def is_leaf(self) -> bool:
        return self.children is None


def split(level: int, origin: Tuple[int, int], size: int,
          children: Tuple[QTNode, QTNode, QTNode, QTNode]) -> QTNode:
    return QTNode(level=level, origin=origin, size=size, children=children)


def leaf(level: int, origin: Tuple[int, int], size: int, mode: LeafMode) -> QTNode:
    return QTNode(level=level, origin=origin, size=size, mode=mode)


def child_geometry(origin: Tuple[int, int], size: int):
    """Origins of the NW, NE, SW, SE children of a block."""
    r, c = origin
    h = size // 2
    return ((r, c), (r, c + h), (r + h, c), (r + h, c + h)), h


@dataclass(frozen=True)
class OptimizedQT:
    root: QTNode
    depth_max: int

    @property
    def frame_side(self) -> int:
        return 1 << self.depth_max

    def leaves(self) -> Iterator[QTNode]:
        return iter_leaves(self.root)


def iter_leaves(node: QTNode) -> Iterator[QTNode]:
    if node.is_leaf:
        yield node
    else:
        for child in node.children:
            yield from iter_leaves(child)


def bit_cost(qt: OptimizedQT) -> int:
    """Exact serialized length in bits (structure + mode + value bits)."""
    total = 0
    stack = [qt.root]
    while stack:
        node = stack.pop()
        if node.level < qt.depth_max:
            total += 1  # structure bit
        if node.is_leaf:
            total += 1  # mode bit
            if node.mode.acquire:
                total += 8
        else:
            stack.extend(reversed(node.children))
    return total


def encode_tree(qt: OptimizedQT) -> str:
    """Preorder bitstring; length equals bit_cost(qt)."""
    out = []

    def visit(node: QTNode):
        if node.level < qt.depth_max:
            out.append('0' if node.is_leaf else '1')
        if node.is_leaf:
            mode = node.mode
            out.append('1' if mode.acquire else '0')
            if mode.acquire:
                out.append(format(mode.value, '08b'))
        else:
            for child in node.children:
                visit(child)

    visit(qt.root)
    return ''.join(out)


def encode_structure_modes(qt: OptimizedQT) -> Tuple[str, bytes]:
    """Structure+mode bits with acquire values split out in preorder order.

    This is the wire split: the bitstring interleaves structure and mode
    bits exactly as encode_tree does, but value bytes travel separately.
    """
    bits = []
    values = bytearray()

    def visit(node: QTNode):
        if node.level < qt.depth_max:
            bits.append('0' if node.is_leaf else '1')
        if node.is_leaf:
            bits.append('1' if node.mode.acquire else '0')
            if node.mode.acquire:
                values.append(node.mode.value)
        else:
            for child in node.children:
                visit(child)

    visit(qt.root)
    return ''.join(bits), bytes(values)


class _BitCursor:
    def __init__(self, bits: str):
        self.bits = bits
        self.pos = 0

    def take(self, n: int) -> str:
        if self.pos + n > len(self.bits):
            raise TruncatedBitstream(
                f"needed {n} bits at offset {self.pos}, have {len(self.bits)}")
        chunk = self.bits[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _decode_node(cur: _BitCursor, level: int, origin: Tuple[int, int],
                 size: int, depth_max: int,
                 values: Optional[Iterator[int]]) -> QTNode:
    if level < depth_max and cur.take(1) == '1':
        origins, half = child_geometry(origin, size)
        children = tuple(
            _decode_node(cur, level + 1, o, half, depth_max, values)
            for o in origins)
        return split(level, origin, size, children)
    if cur.take(1) == '1':
        if values is None:
            value = int(cur.take(8), 2)
        else:
            try:
                value = next(values)
            except StopIteration:
                raise TruncatedBitstream("ran out of acquire values") from None
        return leaf(level, origin, size, acquire(value))
    return leaf(level, origin, size, SKIP)


def decode_tree(bits: str, depth_max: int) -> OptimizedQT:
    """Inverse of encode_tree; exact round trip on valid trees."""
    cur = _BitCursor(bits)
    root = _decode_node(cur, 0, (0, 0), 1 << depth_max, depth_max, values=None)
    if cur.pos != len(bits):
        raise TrailingBits(f"{len(bits) - cur.pos} bits left after root subtree")
    return OptimizedQT(root=root, depth_max=depth_max)


def decode_structure_modes(bits: str, values: bytes, depth_max: int) -> OptimizedQT:
    """Inverse of encode_structure_modes; raises if counts disagree."""
    value_iter = iter(values)
    cur = _BitCursor(bits)
    root = _decode_node(cur, 0, (0, 0), 1 << depth_max, depth_max, values=value_iter)
    if cur.pos != len(bits):
        raise TrailingBits(f"{len(bits) - cur.pos} bits left after root subtree")
    leftover = sum(1 for _ in value_iter)
    if leftover:
        raise TrailingBits(f"{leftover} acquire values left unconsumed")
    return OptimizedQT(root=root, depth_max=depth_max)


def leaf_size_map(qt: OptimizedQT) -> np.ndarray:
    """Per-pixel side length of the covering leaf."""
    side = qt.frame_side
    out = np.empty((side, side), dtype=np.int32)
    for lf in qt.leaves():
        r, c = lf.origin
        out[r:r + lf.size, c:c + lf.size] = lf.size
    return out


def validate(qt: OptimizedQT) -> None:
    """Check the tiling invariant: leaves partition the frame exactly."""
    side = qt.frame_side
    cover = np.zeros((side, side), dtype=np.int32)
    for lf in qt.leaves():
        r, c = lf.origin
        if lf.size != side >> lf.level:
            raise QTreeError("leaf size inconsistent with its level")
        cover[r:r + lf.size, c:c + lf.size] += 1
    if not np.all(cover == 1):
        raise QTreeError("leaves do not tile the frame exactly")
