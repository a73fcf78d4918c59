"""Progressive quadtree search guided by a predictor.

``tree_search`` starts each episode from a root-only stack and repeatedly
picks a uniform-random leaf, then either resamples its state or splits it
(fair coin when a split fits under the leaf cap; otherwise the resample is
forced). Every mutated design is scored with the predictor's aggregate and
fed to a Top-K list that only strict improvements may displace. An episode
ends when the leaf count reaches the cap (or nothing can grow); episodes
restart from the root until the global step budget M is consumed.

``importance_assignment`` then refines each Top-K entry by hill climbing
over the split-line positions of its internal nodes (one cut, +-1 cell per
proposal), accepting only strict predicted improvements.

Two scoring paths share one RNG contract (see _kernel.py): a numba kernel
for predictors exposing ``cell_weight_maps`` and a pure-Python reference
used for tracing, custom predictors, and equivalence tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .layout import (
    LayoutStack,
    QuadNode,
    QuadtreeLayout,
    Region,
    child_regions,
    split_spec,
)

__all__ = [
    "SearchConfig",
    "CapSchedule",
    "grow_cap",
    "TopKEntry",
    "TopKList",
    "SearchStats",
    "tree_search",
    "merge_topk",
    "random_stack",
    "random_pixel_design",
    "importance_assignment",
]


@dataclass(frozen=True)
class SearchConfig:
    """Leaf cap, global step budget M, Top-K size K, and the rng seed."""

    n_max: int = 32
    steps: int = 100_000
    k_top: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_max < 1 or self.k_top < 1 or self.steps < 1:
            raise ValueError("n_max, k_top and steps must all be >= 1")


@dataclass(frozen=True)
class CapSchedule:
    """Per-iteration leaf cap: geometric doubling from ``start`` or constant."""

    kind: str = "geometric"
    start: int = 8
    limit: int = 32

    def __post_init__(self):
        if self.kind not in ("geometric", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.start < 1 or self.limit < 1:
            raise ValueError("schedule bounds must be >= 1")


def grow_cap(schedule: CapSchedule, iteration: int) -> int:
    if schedule.kind == "constant":
        return schedule.limit
    return min(schedule.limit, schedule.start * (2 ** min(iteration, 62)))


@dataclass
class SearchStats:
    free_splits: int = 0
    free_resamples: int = 0
    forced_resamples: int = 0
    episodes: int = 0


@dataclass
class TopKEntry:
    """One candidate: design matrix, predicted aggregate, optional layout."""

    matrix: np.ndarray
    score: float
    stack: LayoutStack | None = None
    _key: str = field(default="", repr=False)

    @property
    def key(self) -> str:
        if not self._key:
            from .layout import DesignMatrix

            self._key = DesignMatrix(self.matrix).key()
        return self._key

    def design(self):
        from .layout import DesignMatrix

        return DesignMatrix(self.matrix)


class TopKList:
    """Descending-by-score list of at most k distinct design matrices.

    A full list is only displaced by a strictly better score; equal scores
    never evict incumbents.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.entries: list[TopKEntry] = []
        self.stats = SearchStats()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def update(self, entry: TopKEntry) -> bool:
        if len(self.entries) >= self.k and entry.score <= self.entries[-1].score:
            return False
        for existing in self.entries:
            if np.array_equal(existing.matrix, entry.matrix):
                return False
        ins = len(self.entries)
        while ins > 0 and self.entries[ins - 1].score < entry.score:
            ins -= 1
        self.entries.insert(ins, entry)
        if len(self.entries) > self.k:
            self.entries.pop()
        return True


def merge_topk(lists, k: int) -> TopKList:
    """Deterministic merge: by score desc, ties by canonical design key."""
    merged = TopKList(k)
    pool = [entry for lst in lists for entry in lst]
    pool.sort(key=lambda e: (-e.score, e.key))
    for entry in pool:
        merged.update(entry)
    return merged


# ---------------------------------------------------------------------------
# mutable stack state shared by the reference search and the samplers


def _node_at(node: QuadNode, path: tuple[int, ...]) -> QuadNode:
    for i in path:
        node = node.children[i]
    return node


def _replace_at(node: QuadNode, path: tuple[int, ...], new_node: QuadNode) -> QuadNode:
    if not path:
        return new_node
    kids = list(node.children)
    kids[path[0]] = _replace_at(kids[path[0]], path[1:], new_node)
    return replace(node, children=tuple(kids))


def _classify(region: Region) -> int:
    if region.height >= 2 and region.width >= 2:
        return 3
    if region.cells >= 2:
        return 1
    return 0


class StackState:
    """Mutable mirror of the kernel's episode state, on real layout nodes.

    Keeps per-layer leaf registries in kernel order (split replaces the
    chosen slot with the first child and appends the rest), the running
    design matrix, and splittability counts for the growth guard.
    """

    def __init__(self, rows: int, cols: int, layers: int, rng: np.random.Generator):
        self.rows, self.cols, self.layers = rows, cols, layers
        self.roots: list[QuadNode] = []
        self.registry: list[list[tuple[tuple[int, ...], Region]]] = []
        self.matrix = np.zeros((layers, rows, cols), dtype=np.int8)
        full = Region(0, rows - 1, 0, cols - 1)
        for lay in range(layers):
            state = int(rng.random() * 2)
            self.roots.append(QuadNode(full, state=state))
            self.registry.append([((), full)])
            self.matrix[lay, :, :] = state
        self.total = layers
        cls = _classify(full)
        self.n2 = layers if cls == 1 else 0
        self.n4 = layers if cls == 3 else 0

    def choose(self, rng: np.random.Generator) -> tuple[int, int]:
        lay = int(rng.random() * self.layers) if self.layers > 1 else 0
        li = int(rng.random() * len(self.registry[lay]))
        return lay, li

    def leaf_delta(self, lay: int, li: int) -> int:
        return _classify(self.registry[lay][li][1])

    def can_grow(self, cap: int) -> bool:
        return (self.n2 > 0 and self.total + 1 <= cap) or (
            self.n4 > 0 and self.total + 3 <= cap
        )

    def split(self, lay: int, li: int, rng: np.random.Generator) -> None:
        path, region = self.registry[lay][li]
        kind, r_cut, c_cut = split_spec(region)
        regions = child_regions(region, kind, r_cut, c_cut)
        kids = []
        for reg in regions:
            st = int(rng.random() * 2)
            kids.append(QuadNode(reg, state=st))
            self.matrix[lay, reg.r0 : reg.r1 + 1, reg.c0 : reg.c1 + 1] = st
        new_node = QuadNode(
            region, state=-1, kind=kind, r_cut=r_cut, c_cut=c_cut, children=tuple(kids)
        )
        self.roots[lay] = _replace_at(self.roots[lay], path, new_node)
        if _classify(region) == 3:
            self.n4 -= 1
        else:
            self.n2 -= 1
        for reg in regions:
            cls = _classify(reg)
            if cls == 3:
                self.n4 += 1
            elif cls == 1:
                self.n2 += 1
        self.registry[lay][li] = (path + (0,), regions[0])
        for t in range(1, len(regions)):
            self.registry[lay].append((path + (t,), regions[t]))
        self.total += len(regions) - 1

    def resample(self, lay: int, li: int, rng: np.random.Generator) -> None:
        path, region = self.registry[lay][li]
        st = int(rng.random() * 2)
        self.roots[lay] = _replace_at(
            self.roots[lay], path, QuadNode(region, state=st)
        )
        self.matrix[lay, region.r0 : region.r1 + 1, region.c0 : region.c1 + 1] = st

    def stack(self) -> LayoutStack:
        return LayoutStack(
            tuple(QuadtreeLayout(self.rows, self.cols, root) for root in self.roots)
        )


def random_stack(
    rows: int, cols: int, layers: int, cap: int, rng: np.random.Generator
) -> LayoutStack:
    """Uniform random tree growth to the leaf cap, uniform states."""
    state = StackState(rows, cols, layers, rng)
    while state.total < cap and state.can_grow(cap):
        lay, li = state.choose(rng)
        delta = state.leaf_delta(lay, li)
        if delta > 0 and state.total + delta <= cap:
            state.split(lay, li, rng)
    return state.stack()


def random_pixel_design(
    rows: int, cols: int, layers: int, rng: np.random.Generator
) -> np.ndarray:
    return (rng.random((layers, rows, cols)) < 0.5).astype(np.int8)


# ---------------------------------------------------------------------------
# tree search


def tree_search(
    predictor,
    config: SearchConfig,
    dims: tuple[int, int, int],
    trace_path: str | None = None,
    force_reference: bool = False,
) -> TopKList:
    """Run the progressive search; returns the final Top-K list.

    Predictors exposing ``cell_weight_maps`` are searched by the numba
    kernel; anything else (and any traced run) uses the pure-Python
    reference scorer. Both consume the rng identically, so the visited
    layouts match for a given seed.
    """
    rows, cols, layers = dims
    if trace_path or force_reference or not hasattr(predictor, "cell_weight_maps"):
        return _tree_search_reference(predictor, config, dims, trace_path)
    return _tree_search_kernel(predictor, config, dims)


def _tree_search_kernel(predictor, config, dims) -> TopKList:
    rows, cols, layers = dims
    maps, intercepts = predictor.cell_weight_maps()
    p = maps.shape[0]
    prefix = np.zeros((p, layers, rows + 1, cols + 1))
    prefix[:, :, 1:, 1:] = maps.cumsum(axis=2).cumsum(axis=3)

    node_cap = 4 * max(config.n_max, layers, 1) + 8
    topk_mats = np.zeros((config.k_top, layers, rows, cols), np.int8)
    topk_scores = np.full(config.k_top, -np.inf)
    topk_nodes = np.zeros((config.k_top, layers, node_cap, 7), np.int32)
    topk_counts = np.zeros((config.k_top, layers), np.int32)
    stats = np.zeros(4, np.int64)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    filled = _kernel.run_search(
        rows,
        cols,
        layers,
        prefix,
        np.asarray(intercepts, dtype=np.float64),
        config.n_max,
        config.steps,
        config.k_top,
        rng,
        topk_mats,
        topk_scores,
        topk_nodes,
        topk_counts,
        stats,
    )

    out = TopKList(config.k_top)
    out.stats = SearchStats(
        free_splits=int(stats[0]),
        free_resamples=int(stats[1]),
        forced_resamples=int(stats[2]),
        episodes=int(stats[3]),
    )
    for e in range(filled):
        layers_out = []
        for lay in range(layers):
            root = _node_from_snapshot(topk_nodes[e, lay], 0)
            layers_out.append(QuadtreeLayout(rows, cols, root))
        out.entries.append(
            TopKEntry(
                matrix=topk_mats[e].copy(),
                score=float(topk_scores[e]),
                stack=LayoutStack(tuple(layers_out)),
            )
        )
    return out


def _node_from_snapshot(nodes: np.ndarray, idx: int) -> QuadNode:
    row = nodes[idx]
    region = Region(int(row[0]), int(row[1]), int(row[2]), int(row[3]))
    arity = int(row[6])
    if arity == 0:
        return QuadNode(region, state=int(row[4]))
    kind, r_cut, c_cut = split_spec(region)
    first = int(row[5])
    kids = tuple(_node_from_snapshot(nodes, first + t) for t in range(arity))
    return QuadNode(region, state=-1, kind=kind, r_cut=r_cut, c_cut=c_cut, children=kids)


def _tree_search_reference(predictor, config, dims, trace_path=None) -> TopKList:
    rows, cols, layers = dims
    rng = np.random.Generator(np.random.PCG64(config.seed))
    topk = TopKList(config.k_top)
    stats = topk.stats
    steps = 0
    best = -np.inf

    trace_fh = open(trace_path, "w", newline="", encoding="utf-8") if trace_path else None
    trace = csv.writer(trace_fh) if trace_fh else None
    if trace:
        trace.writerow(["step", "action", "leaves", "predicted", "best"])

    try:
        while steps < config.steps:
            stats.episodes += 1
            state = StackState(rows, cols, layers, rng)
            while steps < config.steps:
                lay, li = state.choose(rng)
                delta = state.leaf_delta(lay, li)
                can_split = delta > 0 and state.total + delta <= config.n_max
                if can_split:
                    if rng.random() < 0.5:
                        action = "split"
                        stats.free_splits += 1
                    else:
                        action = "resample"
                        stats.free_resamples += 1
                else:
                    action = "forced-resample"
                    stats.forced_resamples += 1
                if action == "split":
                    state.split(lay, li, rng)
                else:
                    state.resample(lay, li, rng)
                steps += 1
                score = float(predictor.predict_batch(state.matrix[None]).min(axis=1)[0])
                topk.update(
                    TopKEntry(matrix=state.matrix.copy(), score=score, stack=state.stack())
                )
                best = max(best, score)
                if trace:
                    trace.writerow([steps, action, state.total, repr(score), repr(best)])
                if state.total >= config.n_max or not state.can_grow(config.n_max):
                    break
    finally:
        if trace_fh:
            trace_fh.close()
    return topk


# ---------------------------------------------------------------------------
# depth-wise importance assignment


def _internal_paths(root: QuadNode) -> list[tuple[int, ...]]:
    out = []

    def rec(node: QuadNode, path: tuple[int, ...]):
        if node.is_leaf:
            return
        out.append(path)
        for i, child in enumerate(node.children):
            rec(child, path + (i,))

    rec(root, ())
    return out


def _valid_kind(kind: str, region: Region) -> bool:
    if kind == "quad":
        return region.height >= 2 and region.width >= 2
    if kind == "row":
        return region.height >= 2
    return region.width >= 2


def _rebuild_subtree(node: QuadNode, region: Region) -> QuadNode | None:
    """Re-root ``node``'s topology onto ``region``, clamping cuts.

    Returns None when some descendant's split kind no longer fits its
    reassigned region.
    """
    if node.is_leaf:
        return replace(node, region=region)
    if not _valid_kind(node.kind, region):
        return None
    r_cut, c_cut = node.r_cut, node.c_cut
    if node.kind in ("quad", "row"):
        r_cut = min(max(r_cut, region.r0), region.r1 - 1)
    if node.kind in ("quad", "col"):
        c_cut = min(max(c_cut, region.c0), region.c1 - 1)
    regions = child_regions(region, node.kind, r_cut, c_cut)
    kids = []
    for child, reg in zip(node.children, regions):
        rebuilt = _rebuild_subtree(child, reg)
        if rebuilt is None:
            return None
        kids.append(rebuilt)
    return replace(node, region=region, r_cut=r_cut, c_cut=c_cut, children=tuple(kids))


def _leaf_sums(node: QuadNode, prefix_layer: np.ndarray, acc: np.ndarray) -> None:
    """Add state-weighted region sums of each criterion map to acc."""
    if node.is_leaf:
        if node.state == 1:
            r0, r1, c0, c1 = node.region.r0, node.region.r1, node.region.c0, node.region.c1
            acc += (
                prefix_layer[:, r1 + 1, c1 + 1]
                - prefix_layer[:, r0, c1 + 1]
                - prefix_layer[:, r1 + 1, c0]
                + prefix_layer[:, r0, c0]
            )
        return
    for child in node.children:
        _leaf_sums(child, prefix_layer, acc)


def importance_assignment(
    entry: TopKEntry,
    predictor,
    steps: int,
    rng: np.random.Generator,
) -> TopKEntry:
    """Hill climb over split-line positions of one Top-K entry.

    Each proposal moves one internal node's row or column cut by one cell
    and reassigns the descendant regions; it is kept only if the predicted
    aggregate strictly improves. Entries without internal nodes (or
    without a layout) come back unchanged.
    """
    if entry.stack is None:
        return entry
    stack = entry.stack
    nodes = [
        (lay, path)
        for lay, layout in enumerate(stack.layers)
        for path in _internal_paths(layout.root)
    ]
    if not nodes:
        return entry

    linear = hasattr(predictor, "cell_weight_maps")
    if linear:
        maps, intercepts = predictor.cell_weight_maps()
        prefix = np.zeros((maps.shape[0], maps.shape[1], stack.rows + 1, stack.cols + 1))
        prefix[:, :, 1:, 1:] = maps.cumsum(axis=2).cumsum(axis=3)
        totals = np.asarray(intercepts, dtype=np.float64).copy()
        for lay, layout in enumerate(stack.layers):
            _leaf_sums(layout.root, prefix[:, lay], totals)
        current = float(totals.min())
    else:
        from .layout import reconstruct_stack

        current = float(
            predictor.predict_batch(reconstruct_stack(stack).cells[None]).min(axis=1)[0]
        )

    roots = [layout.root for layout in stack.layers]
    for _ in range(steps):
        lay, path = nodes[int(rng.random() * len(nodes))]
        node = _node_at(roots[lay], path)
        if node.kind == "quad":
            axis = "r" if rng.random() < 0.5 else "c"
        elif node.kind == "row":
            axis = "r"
        else:
            axis = "c"
        step = 1 if rng.random() < 0.5 else -1

        region = node.region
        if axis == "r":
            new_cut = node.r_cut + step
            if not region.r0 <= new_cut <= region.r1 - 1:
                continue
            moved = replace(node, r_cut=new_cut)
        else:
            new_cut = node.c_cut + step
            if not region.c0 <= new_cut <= region.c1 - 1:
                continue
            moved = replace(node, c_cut=new_cut)
        rebuilt = _rebuild_subtree(moved, region)
        if rebuilt is None:
            continue

        if linear:
            # only the moved subtree's leaves change; score via deltas
            sub_old = np.zeros_like(totals)
            sub_new = np.zeros_like(totals)
            _leaf_sums(node, prefix[:, lay], sub_old)
            _leaf_sums(rebuilt, prefix[:, lay], sub_new)
            new_totals = totals - sub_old + sub_new
            candidate = float(new_totals.min())
            if candidate > current:
                roots[lay] = _replace_at(roots[lay], path, rebuilt)
                totals = new_totals
                current = candidate
        else:
            new_root = _replace_at(roots[lay], path, rebuilt)
            trial = LayoutStack(
                tuple(
                    QuadtreeLayout(stack.rows, stack.cols, new_root if l2 == lay else roots[l2])
                    for l2 in range(len(roots))
                )
            )
            from .layout import reconstruct_stack

            candidate = float(
                predictor.predict_batch(reconstruct_stack(trial).cells[None]).min(axis=1)[0]
            )
            if candidate > current:
                roots[lay] = new_root
                current = candidate

    if current <= entry.score:
        return entry
    from .layout import reconstruct_stack

    refined = LayoutStack(
        tuple(QuadtreeLayout(stack.rows, stack.cols, root) for root in roots)
    )
    return TopKEntry(
        matrix=reconstruct_stack(refined).cells,
        score=current,
        stack=refined,
    )
