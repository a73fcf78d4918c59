"""Multi-scale mean-pooled features of binary design matrices.

Per layer, a design is summarized by block means at four scales: the whole
grid, midpoint halves (up to 2x2 blocks), midpoint quarters (up to 4x4
blocks), and single cells. Block boundaries follow the same floor-midpoint
halving the quadtree uses, so a quadrant flip moves exactly that quadrant's
halves-scale feature.

These features are computed from the design alone; both the synthetic
oracle response and the reference predictor are built on them.
"""

from __future__ import annotations

import numpy as np

FEATURE_DEF_ID = "multiscale-pool-v1"

# depth 0 = full grid, 1 = halves, 2 = quarters; cells handled separately
_SCALE_DEPTHS = (0, 1, 2)

__all__ = [
    "FEATURE_DEF_ID",
    "axis_edges",
    "scale_grid",
    "feature_length",
    "design_features",
    "batch_features",
    "cell_weight_map",
]


def axis_edges(dim: int, depth: int) -> np.ndarray:
    """Block boundaries from recursive floor-midpoint halving.

    Returns sorted edges e with e[0]=0, e[-1]=dim; block i spans
    [e[i], e[i+1]). Segments of length 1 stop splitting, so the block
    count is min(2**depth, dim).
    """
    edges = {0, dim}

    def rec(lo: int, hi: int, d: int):
        if d == 0 or hi - lo <= 1:
            return
        mid = (lo + hi - 1) // 2 + 1  # upper child starts at floor-mid + 1
        edges.add(mid)
        rec(lo, mid, d - 1)
        rec(mid, hi, d - 1)

    rec(0, dim, depth)
    return np.array(sorted(edges), dtype=np.int64)


def scale_grid(rows: int, cols: int, depth: int) -> tuple[np.ndarray, np.ndarray]:
    return axis_edges(rows, depth), axis_edges(cols, depth)


def feature_length(rows: int, cols: int) -> int:
    """Features per layer: 1 + halves + quarters + rows*cols cells."""
    total = rows * cols
    for d in _SCALE_DEPTHS:
        total += (len(axis_edges(rows, d)) - 1) * (len(axis_edges(cols, d)) - 1)
    return total


def batch_features(mats: np.ndarray) -> np.ndarray:
    """Feature matrix for a batch of designs.

    mats: (B, layers, rows, cols) array of 0/1 values.
    Returns (B, layers * feature_length) float64; layer-major, scales in
    the fixed order full, halves, quarters, cells, blocks row-major.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim == 3:
        mats = mats[:, None, :, :]
    b, layers, rows, cols = mats.shape
    flat = mats.reshape(b * layers, rows, cols)
    pieces = []
    for d in _SCALE_DEPTHS:
        re, ce = scale_grid(rows, cols, d)
        sums = np.add.reduceat(flat, re[:-1], axis=1)
        sums = np.add.reduceat(sums, ce[:-1], axis=2)
        areas = np.outer(np.diff(re), np.diff(ce)).astype(np.float64)
        pieces.append((sums / areas).reshape(b * layers, -1))
    pieces.append(flat.reshape(b * layers, rows * cols))
    feats = np.concatenate(pieces, axis=1)
    return feats.reshape(b, -1)


def design_features(cells: np.ndarray) -> np.ndarray:
    """Feature vector for a single (layers, rows, cols) design."""
    return batch_features(cells[None])[0]


def cell_weight_map(weights: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Fold per-feature weights of one layer into per-cell weights.

    Every feature is a mean over a block, so a linear functional of the
    features equals a linear functional of the cells with w/area spread
    over each block. Returns a (rows, cols) float64 map.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (feature_length(rows, cols),):
        raise ValueError(
            f"expected {feature_length(rows, cols)} weights, got {weights.shape}"
        )
    out = np.zeros((rows, cols), dtype=np.float64)
    pos = 0
    for d in _SCALE_DEPTHS:
        re, ce = scale_grid(rows, cols, d)
        for i in range(len(re) - 1):
            for j in range(len(ce) - 1):
                area = (re[i + 1] - re[i]) * (ce[j + 1] - ce[j])
                out[re[i] : re[i + 1], ce[j] : ce[j + 1]] += weights[pos] / area
                pos += 1
    out += weights[pos : pos + rows * cols].reshape(rows, cols)
    return out
