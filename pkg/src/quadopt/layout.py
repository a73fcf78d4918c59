"""Quadtree representation of binary grid layouts.

A layout recursively partitions an m x n grid into rectangular regions;
every leaf carries one binary state, so a layout with |L| leaves spans a
2^|L| design space under state reassignment. Layouts are immutable:
mutation operations return new layouts sharing untouched subtrees.

Split geometry: a region with both dimensions >= 2 splits four ways at the
floor midpoints of its row/column intervals (children ordered UL, UR, LL,
LR); single-row regions split into two column halves, single-column regions
into two row halves; 1x1 regions cannot split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

__all__ = [
    "Region",
    "QuadNode",
    "QuadtreeLayout",
    "LayoutStack",
    "DesignMatrix",
    "LayoutError",
    "DegenerateRegionError",
    "UnknownLeafError",
    "LayoutParseError",
    "split_region",
    "split_spec",
    "child_regions",
    "split_node",
    "resample_node",
    "split_leaf",
    "resample_leaf",
    "leaves",
    "leaf_count",
    "reconstruct",
    "root_layout",
    "root_stack",
    "stack_leaf_count",
    "reconstruct_stack",
    "serialize",
    "deserialize",
    "serialize_stack",
    "deserialize_stack",
    "export_csv",
]


class LayoutError(Exception):
    pass


class DegenerateRegionError(LayoutError):
    """Raised when a 1x1 region is asked to split."""


class UnknownLeafError(LayoutError):
    """Raised for a leaf id outside the layout's leaf enumeration."""


class LayoutParseError(LayoutError):
    """Malformed layout text; carries the character offset of the error."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.raw_message = message
        self.offset = offset


@dataclass(frozen=True)
class Region:
    """Inclusive row/column bounds of a rectangular grid subregion."""

    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def height(self) -> int:
        return self.r1 - self.r0 + 1

    @property
    def width(self) -> int:
        return self.c1 - self.c0 + 1

    @property
    def cells(self) -> int:
        return self.height * self.width

    def contains(self, i: int, j: int) -> bool:
        return self.r0 <= i <= self.r1 and self.c0 <= j <= self.c1


# Split kinds: "quad" = 4 children (UL, UR, LL, LR), "row" = 2 children
# stacked vertically, "col" = 2 children side by side.
_ARITY = {"quad": 4, "row": 2, "col": 2}


@dataclass(frozen=True)
class QuadNode:
    """A tree node covering ``region``; a leaf iff it has no children.

    Internal nodes record their split kind and cut positions. A cut at r
    puts rows [r0, r] in the upper children and [r+1, r1] in the lower
    ones, and analogously for column cuts.
    """

    region: Region
    state: int = -1
    kind: str = ""
    r_cut: int = -1
    c_cut: int = -1
    children: tuple["QuadNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class QuadtreeLayout:
    rows: int
    cols: int
    root: QuadNode


@dataclass(frozen=True)
class LayoutStack:
    """One quadtree per layer; all layers share grid dimensions."""

    layers: tuple[QuadtreeLayout, ...]

    def __post_init__(self):
        if not self.layers:
            raise LayoutError("stack needs at least one layer")
        dims = {(la.rows, la.cols) for la in self.layers}
        if len(dims) != 1:
            raise LayoutError(f"layer dimensions differ: {sorted(dims)}")

    @property
    def rows(self) -> int:
        return self.layers[0].rows

    @property
    def cols(self) -> int:
        return self.layers[0].cols


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Binary design matrix, shape (layers, m, n), values in {0, 1}."""

    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.cells, dtype=np.int8)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise LayoutError(f"design matrix must be 2- or 3-d, got {arr.ndim}-d")
        if not np.isin(arr, (0, 1)).all():
            raise LayoutError("design matrix cells must be 0 or 1")
        object.__setattr__(self, "cells", arr)

    @property
    def layers(self) -> int:
        return self.cells.shape[0]

    @property
    def rows(self) -> int:
        return self.cells.shape[1]

    @property
    def cols(self) -> int:
        return self.cells.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.layers)

    def key(self) -> str:
        """Canonical string form, also the parse format of ``from_key``."""
        bits = "".join("1" if v else "0" for v in self.cells.ravel())
        return f"{self.rows}x{self.cols}x{self.layers}:{bits}"

    @staticmethod
    def from_key(key: str) -> "DesignMatrix":
        head, _, bits = key.partition(":")
        try:
            m, n, layers = (int(v) for v in head.split("x"))
        except ValueError:
            raise LayoutError(f"bad design key header: {head!r}") from None
        if len(bits) != m * n * layers or set(bits) - {"0", "1"}:
            raise LayoutError("design key bits do not match dimensions")
        arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        return DesignMatrix(arr.reshape(layers, m, n).astype(np.int8))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DesignMatrix):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(
            (self.cells == other.cells).all()
        )

    def __hash__(self) -> int:
        return hash((self.cells.shape, self.cells.tobytes()))


# ---------------------------------------------------------------------------
# splitting


def split_spec(region: Region) -> tuple[str, int, int]:
    """Default split (kind, r_cut, c_cut) for ``region`` at floor midpoints."""
    if region.cells < 2:
        raise DegenerateRegionError(f"cannot split 1x1 region {region}")
    r_mid = (region.r0 + region.r1) // 2
    c_mid = (region.c0 + region.c1) // 2
    if region.height == 1:
        return "col", -1, c_mid
    if region.width == 1:
        return "row", r_mid, -1
    return "quad", r_mid, c_mid


def child_regions(region: Region, kind: str, r_cut: int, c_cut: int) -> tuple[Region, ...]:
    """Child regions for a split of ``region``; children partition it."""
    if kind == "quad":
        return (
            Region(region.r0, r_cut, region.c0, c_cut),
            Region(region.r0, r_cut, c_cut + 1, region.c1),
            Region(r_cut + 1, region.r1, region.c0, c_cut),
            Region(r_cut + 1, region.r1, c_cut + 1, region.c1),
        )
    if kind == "row":
        return (
            Region(region.r0, r_cut, region.c0, region.c1),
            Region(r_cut + 1, region.r1, region.c0, region.c1),
        )
    if kind == "col":
        return (
            Region(region.r0, region.r1, region.c0, c_cut),
            Region(region.r0, region.r1, c_cut + 1, region.c1),
        )
    raise LayoutError(f"unknown split kind {kind!r}")


def split_region(region: Region) -> list[Region]:
    """Split a region at its floor midpoints into 2 or 4 children."""
    kind, r_cut, c_cut = split_spec(region)
    return list(child_regions(region, kind, r_cut, c_cut))


def split_node(node: QuadNode, rng: np.random.Generator) -> QuadNode:
    """Turn a leaf into an internal node; child states drawn uniform."""
    if not node.is_leaf:
        raise LayoutError("split_node expects a leaf")
    kind, r_cut, c_cut = split_spec(node.region)
    regions = child_regions(node.region, kind, r_cut, c_cut)
    kids = tuple(QuadNode(reg, state=int(rng.random() * 2)) for reg in regions)
    return QuadNode(node.region, state=-1, kind=kind, r_cut=r_cut, c_cut=c_cut, children=kids)


def resample_node(node: QuadNode, rng: np.random.Generator) -> QuadNode:
    if not node.is_leaf:
        raise LayoutError("resample_node expects a leaf")
    return replace(node, state=int(rng.random() * 2))


# ---------------------------------------------------------------------------
# leaf enumeration and id-based mutation


def _iter_leaves(node: QuadNode) -> Iterator[QuadNode]:
    if node.is_leaf:
        yield node
    else:
        for child in node.children:
            yield from _iter_leaves(child)


def leaves(layout: QuadtreeLayout) -> list[tuple[int, Region, int]]:
    """Leaves in pre-order: (leaf_id, region, state). Order is stable."""
    return [(i, lf.region, lf.state) for i, lf in enumerate(_iter_leaves(layout.root))]


def leaf_count(layout: QuadtreeLayout) -> int:
    return sum(1 for _ in _iter_leaves(layout.root))


def _rebuild_at_leaf(node: QuadNode, target: int, op, rng) -> tuple[QuadNode, int]:
    """Apply op to the target-th leaf (pre-order); returns (node, seen)."""
    if node.is_leaf:
        if target == 0:
            return op(node, rng), 1
        return node, 1
    seen = 0
    kids = list(node.children)
    for i, child in enumerate(kids):
        if target < seen:
            break
        new_child, used = _rebuild_at_leaf(child, target - seen, op, rng)
        if new_child is not child:
            kids[i] = new_child
            return replace(node, children=tuple(kids)), seen + used
        seen += used
    return node, seen


def _apply_to_leaf(layout: QuadtreeLayout, leaf_id: int, op, rng) -> QuadtreeLayout:
    total = leaf_count(layout)
    if not 0 <= leaf_id < total:
        raise UnknownLeafError(f"leaf id {leaf_id} outside [0, {total})")
    root, _ = _rebuild_at_leaf(layout.root, leaf_id, op, rng)
    return replace(layout, root=root)


def split_leaf(layout: QuadtreeLayout, leaf_id: int, rng: np.random.Generator) -> QuadtreeLayout:
    """Split the identified leaf; its children get fresh uniform states."""
    return _apply_to_leaf(layout, leaf_id, split_node, rng)


def resample_leaf(layout: QuadtreeLayout, leaf_id: int, rng: np.random.Generator) -> QuadtreeLayout:
    """Redraw the identified leaf's state uniformly; topology unchanged."""
    return _apply_to_leaf(layout, leaf_id, resample_node, rng)


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct(layout: QuadtreeLayout) -> np.ndarray:
    """Dense (rows, cols) int8 matrix: each pixel takes its leaf's state."""
    out = np.empty((layout.rows, layout.cols), dtype=np.int8)
    for lf in _iter_leaves(layout.root):
        reg = lf.region
        out[reg.r0 : reg.r1 + 1, reg.c0 : reg.c1 + 1] = lf.state
    return out


def root_layout(rows: int, cols: int, state: int) -> QuadtreeLayout:
    if rows < 1 or cols < 1:
        raise LayoutError("grid dimensions must be positive")
    return QuadtreeLayout(rows, cols, QuadNode(Region(0, rows - 1, 0, cols - 1), state=int(state)))


def root_stack(rows: int, cols: int, layers: int, rng: np.random.Generator) -> LayoutStack:
    """Root-only stack with uniformly drawn root states."""
    return LayoutStack(tuple(root_layout(rows, cols, int(rng.random() * 2)) for _ in range(layers)))


def stack_leaf_count(stack: LayoutStack) -> int:
    return sum(leaf_count(la) for la in stack.layers)


def reconstruct_stack(stack: LayoutStack) -> DesignMatrix:
    return DesignMatrix(np.stack([reconstruct(la) for la in stack.layers]))


# ---------------------------------------------------------------------------
# serialization
#
# Grammar (whitespace-free):
#   stack    := layout ("|" layout)*
#   layout   := "q" ROWS "x" COLS ":" node
#   node     := "0" | "1" | "(" [ann] node ("," node)+ ")"
#   ann      := "@" INT "," INT ":"     4-way cut (r_cut, c_cut)
#             | "@r" INT ":"             2-way row cut
#             | "@c" INT ":"             2-way col cut
# Annotations are omitted when the cuts are the floor midpoints of the
# region and the split kind is implied by the region shape; they appear
# after importance assignment has moved a cut.


def _serialize_node(node: QuadNode, parts: list[str]) -> None:
    if node.is_leaf:
        parts.append("1" if node.state else "0")
        return
    kind, r_mid, c_mid = split_spec(node.region)
    parts.append("(")
    if node.kind == "quad":
        if node.r_cut != r_mid or node.c_cut != c_mid or kind != "quad":
            parts.append(f"@{node.r_cut},{node.c_cut}:")
    elif node.kind == "row":
        if kind != "row" or node.r_cut != r_mid:
            parts.append(f"@r{node.r_cut}:")
    else:
        if kind != "col" or node.c_cut != c_mid:
            parts.append(f"@c{node.c_cut}:")
    for i, child in enumerate(node.children):
        if i:
            parts.append(",")
        _serialize_node(child, parts)
    parts.append(")")


def serialize(layout: QuadtreeLayout) -> str:
    parts = [f"q{layout.rows}x{layout.cols}:"]
    _serialize_node(layout.root, parts)
    return "".join(parts)


def serialize_stack(stack: LayoutStack) -> str:
    return "|".join(serialize(la) for la in stack.layers)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str):
        raise LayoutParseError(message, self.pos)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, token: str):
        if not self.text.startswith(token, self.pos):
            self.fail(f"expected {token!r}")
        self.pos += len(token)

    def read_int(self) -> int:
        start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail("expected integer")
        return int(self.text[start : self.pos])

    def parse_node(self, region: Region) -> QuadNode:
        ch = self.peek()
        if ch in ("0", "1"):
            self.pos += 1
            return QuadNode(region, state=int(ch))
        if ch != "(":
            self.fail("expected leaf state or '('")
        open_pos = self.pos
        self.pos += 1
        kind = r_cut = c_cut = None
        if self.peek() == "@":
            self.pos += 1
            axis = self.peek()
            if axis in ("r", "c"):
                self.pos += 1
                value = self.read_int()
                kind = "row" if axis == "r" else "col"
                r_cut, c_cut = (value, -1) if axis == "r" else (-1, value)
            else:
                r_cut = self.read_int()
                self.expect(",")
                c_cut = self.read_int()
                kind = "quad"
            self.expect(":")
        kids_src = [self.parse_node_placeholder()]
        while self.peek() == ",":
            self.pos += 1
            kids_src.append(self.parse_node_placeholder())
        self.expect(")")
        arity = len(kids_src)
        if arity not in (2, 4):
            raise LayoutParseError(f"internal node needs 2 or 4 children, got {arity}", open_pos)
        if kind is None:
            if region.cells < 2:
                raise LayoutParseError("1x1 region cannot be internal", open_pos)
            kind, r_cut, c_cut = split_spec(region)
            if _ARITY[kind] != arity:
                raise LayoutParseError(
                    f"region shape implies {_ARITY[kind]} children, got {arity}", open_pos
                )
        elif _ARITY[kind] != arity:
            raise LayoutParseError(f"{kind} split needs {_ARITY[kind]} children, got {arity}", open_pos)
        self._check_cut(kind, region, r_cut, c_cut, open_pos)
        regions = child_regions(region, kind, r_cut, c_cut)
        kids = tuple(self.realize(spec, reg) for spec, reg in zip(kids_src, regions))
        return QuadNode(region, state=-1, kind=kind, r_cut=r_cut, c_cut=c_cut, children=kids)

    @staticmethod
    def _check_cut(kind, region, r_cut, c_cut, pos):
        if kind in ("quad", "row") and not region.r0 <= r_cut < region.r1:
            raise LayoutParseError(f"row cut {r_cut} outside region rows", pos)
        if kind in ("quad", "col") and not region.c0 <= c_cut < region.c1:
            raise LayoutParseError(f"col cut {c_cut} outside region cols", pos)

    # Child regions depend on the parent's cuts, which may only be known
    # after the children's text is consumed (the default-kind case). Parse
    # children into (text-range) placeholders first, realize afterwards.
    def parse_node_placeholder(self) -> tuple[int, int]:
        start = self.pos
        depth = 0
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "(":
                depth += 1
            elif ch == ")":
                if depth == 0:
                    break
                depth -= 1
            elif ch == "," and depth == 0:
                break
            self.pos += 1
        if self.pos == start:
            self.fail("expected node")
        return (start, self.pos)

    def realize(self, span: tuple[int, int], region: Region) -> QuadNode:
        sub = _Parser(self.text[: span[1]])
        sub.pos = span[0]
        node = sub.parse_node(region)
        if sub.pos != span[1]:
            raise LayoutParseError("trailing characters in node", sub.pos)
        return node


def deserialize(text: str) -> QuadtreeLayout:
    """Parse one layout; raises LayoutParseError with the failing offset."""
    p = _Parser(text)
    p.expect("q")
    rows = p.read_int()
    p.expect("x")
    cols = p.read_int()
    p.expect(":")
    if rows < 1 or cols < 1:
        raise LayoutParseError("grid dimensions must be positive", 1)
    root = p.parse_node(Region(0, rows - 1, 0, cols - 1))
    if p.pos != len(text):
        p.fail("trailing characters")
    return QuadtreeLayout(rows, cols, root)


def deserialize_stack(text: str) -> LayoutStack:
    offset = 0
    layers = []
    for part in text.split("|"):
        try:
            layers.append(deserialize(part))
        except LayoutParseError as err:
            raise LayoutParseError(err.raw_message, offset + err.offset) from None
        offset += len(part) + 1
    return LayoutStack(tuple(layers))


def export_csv(stack: LayoutStack, base_path: str) -> list[str]:
    """Write one dense 0/1 CSV per layer: ``<base>_layer<k>.csv``."""
    written = []
    for k, la in enumerate(stack.layers):
        path = f"{base_path}_layer{k}.csv"
        mat = reconstruct(la)
        with open(path, "w", encoding="utf-8") as fh:
            for row in mat:
                fh.write(",".join(str(int(v)) for v in row) + "\n")
        written.append(path)
    return written
