"""Numba kernel for the progressive tree search.

The search scores every mutated layout with a predictor that is linear in
the cells (any linear-in-features model folds into per-cell weights), so a
layout's predicted criteria reduce to per-leaf region sums of the cell
weight maps, answered by 2-d prefix sums. The kernel keeps the quadtrees
in flat arrays and snapshots node tables for Top-K entries so the caller
can rebuild real layout objects.

RNG contract: every decision consumes exactly one rng.random() draw, in
the order layer (multi-layer only), leaf, action (only when a split is
possible), then one draw per assigned state. The pure-Python reference in
search.py draws identically, so both paths walk the same action sequence
for the same seed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# stats slots
FREE_SPLITS = 0
FREE_RESAMPLES = 1
FORCED_RESAMPLES = 2
EPISODES = 3

# node snapshot fields
_R0, _R1, _C0, _C1, _STATE, _FIRST, _ARITY = range(7)


@njit(cache=True, nogil=True)
def _mats_equal(a, b, layers, rows, cols):
    for la in range(layers):
        for i in range(rows):
            for j in range(cols):
                if a[la, i, j] != b[la, i, j]:
                    return False
    return True


@njit(cache=True, nogil=True)
def _classify(h, w):
    """3 = quad-splittable, 1 = two-way splittable, 0 = unsplittable."""
    if h >= 2 and w >= 2:
        return 3
    if h * w >= 2:
        return 1
    return 0


@njit(cache=True, nogil=True)
def run_search(
    rows,
    cols,
    layers,
    prefix,  # (p, layers, rows+1, cols+1) prefix sums of cell weights
    intercepts,  # (p,)
    n_max,
    m_steps,
    k_top,
    rng,
    topk_mats,  # (k_top, layers, rows, cols) int8, out
    topk_scores,  # (k_top,) float64, out
    topk_nodes,  # (k_top, layers, node_cap, 7) int32, out
    topk_counts,  # (k_top, layers) int32, out
    stats,  # (4,) int64, out
):
    p = intercepts.shape[0]
    node_cap = topk_nodes.shape[2]
    leaf_cap = node_cap

    nreg = np.zeros((layers, node_cap, 4), np.int32)
    nstate = np.zeros((layers, node_cap), np.int8)
    nfirst = np.zeros((layers, node_cap), np.int32)
    narity = np.zeros((layers, node_cap), np.int8)
    ncount = np.zeros(layers, np.int32)
    lf_node = np.zeros((layers, leaf_cap), np.int32)
    lf_count = np.zeros(layers, np.int32)
    x = np.zeros((layers, rows, cols), np.int8)
    acc = np.zeros(p, np.float64)

    topk_n = 0
    steps = 0
    root_cls = _classify(rows, cols)

    while steps < m_steps:
        # episode init: root-only stack, uniform root states
        stats[EPISODES] += 1
        total = layers
        n2 = layers if root_cls == 1 else 0
        n4 = layers if root_cls == 3 else 0
        for lay in range(layers):
            ncount[lay] = 1
            nreg[lay, 0, _R0] = 0
            nreg[lay, 0, _R1] = rows - 1
            nreg[lay, 0, _C0] = 0
            nreg[lay, 0, _C1] = cols - 1
            s = np.int8(rng.random() * 2)
            nstate[lay, 0] = s
            narity[lay, 0] = 0
            lf_node[lay, 0] = 0
            lf_count[lay] = 1
            for i in range(rows):
                for j in range(cols):
                    x[lay, i, j] = s

        while steps < m_steps:
            lay = int(rng.random() * layers) if layers > 1 else 0
            li = int(rng.random() * lf_count[lay])
            nd = lf_node[lay, li]
            r0 = nreg[lay, nd, _R0]
            r1 = nreg[lay, nd, _R1]
            c0 = nreg[lay, nd, _C0]
            c1 = nreg[lay, nd, _C1]
            h = r1 - r0 + 1
            w = c1 - c0 + 1
            cls = _classify(h, w)
            delta = cls  # leaf count grows by 3 (quad) or 1 (two-way)
            can_split = delta > 0 and total + delta <= n_max

            do_split = False
            if can_split:
                if rng.random() < 0.5:
                    do_split = True
                    stats[FREE_SPLITS] += 1
                else:
                    stats[FREE_RESAMPLES] += 1
            else:
                stats[FORCED_RESAMPLES] += 1

            if do_split:
                base = ncount[lay]
                if cls == 3:
                    arity = 4
                    rm = (r0 + r1) // 2
                    cm = (c0 + c1) // 2
                    nreg[lay, base, _R0] = r0
                    nreg[lay, base, _R1] = rm
                    nreg[lay, base, _C0] = c0
                    nreg[lay, base, _C1] = cm
                    nreg[lay, base + 1, _R0] = r0
                    nreg[lay, base + 1, _R1] = rm
                    nreg[lay, base + 1, _C0] = cm + 1
                    nreg[lay, base + 1, _C1] = c1
                    nreg[lay, base + 2, _R0] = rm + 1
                    nreg[lay, base + 2, _R1] = r1
                    nreg[lay, base + 2, _C0] = c0
                    nreg[lay, base + 2, _C1] = cm
                    nreg[lay, base + 3, _R0] = rm + 1
                    nreg[lay, base + 3, _R1] = r1
                    nreg[lay, base + 3, _C0] = cm + 1
                    nreg[lay, base + 3, _C1] = c1
                elif h == 1:
                    arity = 2
                    cm = (c0 + c1) // 2
                    nreg[lay, base, _R0] = r0
                    nreg[lay, base, _R1] = r1
                    nreg[lay, base, _C0] = c0
                    nreg[lay, base, _C1] = cm
                    nreg[lay, base + 1, _R0] = r0
                    nreg[lay, base + 1, _R1] = r1
                    nreg[lay, base + 1, _C0] = cm + 1
                    nreg[lay, base + 1, _C1] = c1
                else:
                    arity = 2
                    rm = (r0 + r1) // 2
                    nreg[lay, base, _R0] = r0
                    nreg[lay, base, _R1] = rm
                    nreg[lay, base, _C0] = c0
                    nreg[lay, base, _C1] = c1
                    nreg[lay, base + 1, _R0] = rm + 1
                    nreg[lay, base + 1, _R1] = r1
                    nreg[lay, base + 1, _C0] = c0
                    nreg[lay, base + 1, _C1] = c1

                if cls == 3:
                    n4 -= 1
                else:
                    n2 -= 1
                for t in range(arity):
                    child = base + t
                    st = np.int8(rng.random() * 2)
                    nstate[lay, child] = st
                    narity[lay, child] = 0
                    ccls = _classify(
                        nreg[lay, child, _R1] - nreg[lay, child, _R0] + 1,
                        nreg[lay, child, _C1] - nreg[lay, child, _C0] + 1,
                    )
                    if ccls == 3:
                        n4 += 1
                    elif ccls == 1:
                        n2 += 1
                    for i in range(nreg[lay, child, _R0], nreg[lay, child, _R1] + 1):
                        for j in range(nreg[lay, child, _C0], nreg[lay, child, _C1] + 1):
                            x[lay, i, j] = st
                narity[lay, nd] = arity
                nfirst[lay, nd] = base
                nstate[lay, nd] = -1
                ncount[lay] = base + arity
                lf_node[lay, li] = base
                for t in range(1, arity):
                    lf_node[lay, lf_count[lay]] = base + t
                    lf_count[lay] += 1
                total += arity - 1
            else:
                s = np.int8(rng.random() * 2)
                nstate[lay, nd] = s
                for i in range(r0, r1 + 1):
                    for j in range(c0, c1 + 1):
                        x[lay, i, j] = s

            steps += 1

            # predicted criteria from leaf region sums; aggregate = min
            for k in range(p):
                acc[k] = intercepts[k]
            for l2 in range(layers):
                for t in range(lf_count[l2]):
                    nd2 = lf_node[l2, t]
                    if nstate[l2, nd2] == 1:
                        a0 = nreg[l2, nd2, _R0]
                        a1 = nreg[l2, nd2, _R1]
                        b0 = nreg[l2, nd2, _C0]
                        b1 = nreg[l2, nd2, _C1]
                        for k in range(p):
                            acc[k] += (
                                prefix[k, l2, a1 + 1, b1 + 1]
                                - prefix[k, l2, a0, b1 + 1]
                                - prefix[k, l2, a1 + 1, b0]
                                + prefix[k, l2, a0, b0]
                            )
            sc = acc[0]
            for k in range(1, p):
                if acc[k] < sc:
                    sc = acc[k]

            # Top-K update: strict improvement only, distinct matrices only
            consider = topk_n < k_top or sc > topk_scores[k_top - 1]
            if consider:
                dup = False
                for e in range(topk_n):
                    if _mats_equal(topk_mats[e], x, layers, rows, cols):
                        dup = True
                        break
                if not dup:
                    if topk_n < k_top:
                        limit = topk_n
                        topk_n += 1
                    else:
                        limit = k_top - 1
                    ins = limit
                    while ins > 0 and topk_scores[ins - 1] < sc:
                        ins -= 1
                    t = limit
                    while t > ins:
                        topk_scores[t] = topk_scores[t - 1]
                        topk_mats[t] = topk_mats[t - 1]
                        topk_nodes[t] = topk_nodes[t - 1]
                        topk_counts[t] = topk_counts[t - 1]
                        t -= 1
                    topk_scores[ins] = sc
                    topk_mats[ins] = x
                    for l2 in range(layers):
                        topk_counts[ins, l2] = ncount[l2]
                        for nd2 in range(ncount[l2]):
                            topk_nodes[ins, l2, nd2, _R0] = nreg[l2, nd2, _R0]
                            topk_nodes[ins, l2, nd2, _R1] = nreg[l2, nd2, _R1]
                            topk_nodes[ins, l2, nd2, _C0] = nreg[l2, nd2, _C0]
                            topk_nodes[ins, l2, nd2, _C1] = nreg[l2, nd2, _C1]
                            topk_nodes[ins, l2, nd2, _STATE] = nstate[l2, nd2]
                            topk_nodes[ins, l2, nd2, _FIRST] = nfirst[l2, nd2]
                            topk_nodes[ins, l2, nd2, _ARITY] = narity[l2, nd2]

            # episode over once the cap is reached or nothing can grow
            if total >= n_max:
                break
            if not ((n2 > 0 and total + 1 <= n_max) or (n4 > 0 and total + 3 <= n_max)):
                break

    return topk_n
