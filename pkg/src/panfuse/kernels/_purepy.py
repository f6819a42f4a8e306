"""Pure numpy/scipy fallback for the compiled kernels.

Must stay bit-identical to ``_native``: same Bresenham cells, same raster
component ordering, same raster tie-breaking for equidistant seeds.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

__name_tag__ = "purepy"


def pairwise_line_max(b, offsets, starts, cells):
    h, w = b.shape
    rows, cols, vals = [], [], []
    for k in range(offsets.shape[0]):
        dy, dx = int(offsets[k, 0]), int(offsets[k, 1])
        y0, y1 = max(0, -dy), h - max(0, dy)
        x0, x1 = max(0, -dx), w - max(0, dx)
        if y0 >= y1 or x0 >= x1:
            continue
        acc = None
        for c in range(int(starts[k]), int(starts[k + 1])):
            ry, rx = int(cells[c, 0]), int(cells[c, 1])
            block = b[y0 + ry : y1 + ry, x0 + rx : x1 + rx]
            acc = block.copy() if acc is None else np.maximum(acc, block, out=acc)
        ys, xs = np.mgrid[y0:y1, x0:x1]
        rows.append((ys * w + xs).ravel())
        cols.append(((ys + dy) * w + (xs + dx)).ravel())
        vals.append(acc.ravel())
    if not rows:
        n = 0
        return (
            np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.float64),
        )
    return (
        np.concatenate(rows).astype(np.int64),
        np.concatenate(cols).astype(np.int64),
        np.concatenate(vals),
    )


_STRUCT4 = ndimage.generate_binary_structure(2, 1)
_STRUCT8 = ndimage.generate_binary_structure(2, 2)


def label_components(values, active, connectivity):
    structure = _STRUCT4 if connectivity == 4 else _STRUCT8
    active = active.astype(bool)
    comp = np.zeros(values.shape, dtype=np.int64)
    base = 0
    for v in np.unique(values[active]):
        mask = active & (values == v)
        lab, n = ndimage.label(mask, structure=structure)
        comp[mask] = lab[mask] + base
        base += n
    return _relabel_raster(comp, base)


def _relabel_raster(comp, n_provisional):
    """Renumber provisional component ids by raster order of first pixel."""
    if n_provisional == 0:
        return comp.astype(np.int32), 0
    flat = comp.ravel()
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq > 0
    uniq, first = uniq[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(n_provisional + 1, dtype=np.int32)
    lut[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    return lut[comp], len(uniq)


def _column_nearest_seed(seed):
    """Per pixel, the nearest seed row within its own column.

    Ties between the rows above and below resolve to the smaller row.
    Returns (row, squared distance); row -1 / a huge distance where the
    column holds no seed.
    """
    h, w = seed.shape
    rows = np.arange(h, dtype=np.int64)[:, None]

    above = np.where(seed, rows, -1)
    above = np.maximum.accumulate(above, axis=0)

    below = np.where(seed, rows, h)
    below = np.minimum.accumulate(below[::-1], axis=0)[::-1]

    big = np.int64(1) << 30  # squared later; must stay inside int64
    dist_above = np.where(above >= 0, rows - above, big)
    dist_below = np.where(below < h, below - rows, big)

    use_above = dist_above <= dist_below  # tie -> smaller row
    colrow = np.where(use_above, above, below)
    coldist = np.where(use_above, dist_above, dist_below)
    return colrow, coldist * coldist


def nearest_seed_fill(values, seed):
    seed_b = seed.astype(bool)
    h, w = values.shape
    colrow, coldist2 = _column_nearest_seed(seed_b)

    dist = ndimage.distance_transform_edt(~seed_b)
    d2 = np.rint(dist * dist).astype(np.int64)

    out = values.copy()
    hole_y, hole_x = np.nonzero(~seed_b)
    for y, x in zip(hole_y.tolist(), hole_x.tolist()):
        best = int(d2[y, x])
        reach = math.isqrt(best)
        lo, hi = max(0, x - reach), min(w, x + reach + 1)
        xs = np.arange(lo, hi)
        rem = best - (xs - x) ** 2
        ok = (rem >= 0) & (coldist2[y, lo:hi] == rem)
        cand_x = xs[ok]
        cand_r = colrow[y, lo:hi][ok]
        pick = np.lexsort((cand_x, cand_r))[0]
        out[y, x] = values[cand_r[pick], cand_x[pick]]
    return out
