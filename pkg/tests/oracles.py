"""Independent brute-force oracles the tests check the library against.

Everything here is written for obviousness, not speed: per-pixel scans,
flood fill, exhaustive bipartition enumeration, dense eigensolvers.
"""

from __future__ import annotations

from collections import deque
from itertools import combinations

import numpy as np
import scipy.linalg


def bresenham_line(y0, x0, y1, x1):
    """All-octant integer Bresenham with a combined error term."""
    points = []
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    y, x = y0, x0
    while True:
        points.append((y, x))
        if y == y1 and x == x1:
            return points
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def line_max(b, y0, x0, y1, x1):
    return max(b[p] for p in bresenham_line(y0, x0, y1, x1))


def affinity_entries(b, radius, beta):
    """Every directed edge (i, j, weight) of the radius neighbourhood graph,
    walking the line from the raster-earlier endpoint."""
    h, w = b.shape
    out = {}
    for y in range(h):
        for x in range(w):
            for dy in range(0, radius + 1):
                for dx in range(-radius, radius + 1):
                    if dy == 0 and dx <= 0:
                        continue
                    if dy * dy + dx * dx > radius * radius:
                        continue
                    y2, x2 = y + dy, x + dx
                    if not (0 <= y2 < h and 0 <= x2 < w):
                        continue
                    d = line_max(b, y, x, y2, x2)
                    wgt = np.exp(-beta * d)
                    out[(y * w + x, y2 * w + x2)] = wgt
                    out[(y2 * w + x2, y * w + x)] = wgt
    return out


def flood_fill_components(values, active, connectivity):
    """BFS labeling; ids follow raster order of each component's first pixel."""
    h, w = values.shape
    comp = np.zeros((h, w), dtype=np.int32)
    if connectivity == 4:
        steps = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        steps = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))
    next_id = 0
    for y0 in range(h):
        for x0 in range(w):
            if not active[y0, x0] or comp[y0, x0]:
                continue
            next_id += 1
            v = values[y0, x0]
            queue = deque([(y0, x0)])
            comp[y0, x0] = next_id
            while queue:
                y, x = queue.popleft()
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and active[ny, nx] and not comp[ny, nx] and values[ny, nx] == v:
                        comp[ny, nx] = next_id
                        queue.append((ny, nx))
    return comp, next_id


def nearest_seed_fill(values, seed):
    """O(holes x seeds) scan with raster-order tie break."""
    sy, sx = np.nonzero(seed)
    out = values.copy()
    h, w = values.shape
    for y in range(h):
        for x in range(w):
            if seed[y, x]:
                continue
            d2 = (sy - y) ** 2 + (sx - x) ** 2
            k = np.lexsort((sx, sy, d2))[0]
            out[y, x] = values[sy[k], sx[k]]
    return out


def merge_crops_accumulate(plan, preds):
    """Per-pixel accumulation: per scale sum value and coverage count, then
    average the per-scale means."""
    h, w = plan.height, plan.width
    c = preds[0].map.c
    total = np.zeros((h, w, c), dtype=np.float64)
    by_crop = {p.crop: p for p in preds}
    for s in plan.scales:
        acc = np.zeros((h, w, c), dtype=np.float64)
        cnt = np.zeros((h, w), dtype=np.int64)
        for crop in plan.crops:
            if crop.scale != s:
                continue
            data = by_crop[crop].map.data
            for dy in range(crop.h):
                for dx in range(crop.w):
                    acc[crop.y + dy, crop.x + dx] += data[dy, dx]
                    cnt[crop.y + dy, crop.x + dx] += 1
        total += acc / cnt[:, :, None]
    return total / len(plan.scales)


def ncut_cost(weights, in_a):
    """cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V) on a dense matrix."""
    in_a = np.asarray(in_a, dtype=bool)
    in_b = ~in_a
    cut = weights[np.ix_(in_a, in_b)].sum()
    assoc_a = weights[in_a].sum()
    assoc_b = weights[in_b].sum()
    if assoc_a == 0 or assoc_b == 0:
        return np.inf
    return cut / assoc_a + cut / assoc_b


def best_bipartition(weights):
    """Global two-way NCut optimum by enumerating all 2^(n-1)-1 splits."""
    n = weights.shape[0]
    best_cost, best_mask = np.inf, None
    for size in range(1, n):
        for subset in combinations(range(1, n), size - 1):
            mask = np.zeros(n, dtype=bool)
            mask[0] = True  # fix node 0 in A to halve the enumeration
            mask[list(subset)] = True
            cost = ncut_cost(weights, mask)
            if cost < best_cost:
                best_cost, best_mask = cost, mask
    return best_cost, best_mask


def best_threshold_cut(weights, v):
    """Minimum NCut over splits at thresholds between distinct sorted values
    of v (nodes with equal value stay together)."""
    order = np.argsort(v, kind="stable")
    vs = v[order]
    best_cost, best_mask = np.inf, None
    for p in range(1, len(v)):
        if vs[p - 1] == vs[p]:
            continue
        mask = np.zeros(len(v), dtype=bool)
        mask[order[:p]] = True
        cost = ncut_cost(weights, mask)
        if cost < best_cost:
            best_cost, best_mask = cost, mask
    return best_cost, best_mask


def dense_generalized_fiedler(weights):
    """Second-smallest eigenpair of (C - A) x = lambda C x via LAPACK's
    generalized solver."""
    deg = weights.sum(axis=1)
    lap = np.diag(deg) - weights
    vals, vecs = scipy.linalg.eigh(lap, np.diag(deg))
    return vals[1], vecs[:, 1]


def random_connected_graph(rng, n):
    """Random spanning tree plus extra edges; weights in (0.1, 1]."""
    weights = np.zeros((n, n))
    nodes = list(rng.permutation(n))
    connected = [nodes.pop()]
    while nodes:
        a = nodes.pop()
        b = connected[rng.integers(len(connected))]
        w = rng.uniform(0.1, 1.0)
        weights[a, b] = weights[b, a] = w
        connected.append(a)
    extra = rng.integers(0, n)
    for _ in range(extra):
        a, b = rng.integers(n), rng.integers(n)
        if a != b and weights[a, b] == 0:
            w = rng.uniform(0.1, 1.0)
            weights[a, b] = weights[b, a] = w
    return weights
