# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pipeline kernels; semantics mirror ``_purepy`` bit for bit."""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t

__name_tag__ = "native"

DEF MISSING_ROW = -1


def pairwise_line_max(
    double[:, ::1] b,
    int32_t[:, ::1] offsets,
    int32_t[::1] starts,
    int32_t[:, ::1] cells,
):
    cdef Py_ssize_t h = b.shape[0]
    cdef Py_ssize_t w = b.shape[1]
    cdef Py_ssize_t n_off = offsets.shape[0]
    cdef Py_ssize_t k, y, x, c, c0, c1, pos = 0
    cdef Py_ssize_t y0, y1, x0, x1
    cdef int dy, dx
    cdef Py_ssize_t total = 0
    cdef double m, v

    for k in range(n_off):
        dy = offsets[k, 0]
        dx = offsets[k, 1]
        y0 = h - (dy if dy > 0 else -dy)
        x0 = w - (dx if dx > 0 else -dx)
        if y0 > 0 and x0 > 0:
            total += y0 * x0

    rows_arr = np.empty(total, dtype=np.int64)
    cols_arr = np.empty(total, dtype=np.int64)
    vals_arr = np.empty(total, dtype=np.float64)
    cdef int64_t[::1] rows = rows_arr
    cdef int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr

    with nogil:
        for k in range(n_off):
            dy = offsets[k, 0]
            dx = offsets[k, 1]
            y0 = -dy if dy < 0 else 0
            y1 = h - (dy if dy > 0 else 0)
            x0 = -dx if dx < 0 else 0
            x1 = w - (dx if dx > 0 else 0)
            if y0 >= y1 or x0 >= x1:
                continue
            c0 = starts[k]
            c1 = starts[k + 1]
            for y in range(y0, y1):
                for x in range(x0, x1):
                    m = b[y + cells[c0, 0], x + cells[c0, 1]]
                    for c in range(c0 + 1, c1):
                        v = b[y + cells[c, 0], x + cells[c, 1]]
                        if v > m:
                            m = v
                    rows[pos] = y * w + x
                    cols[pos] = (y + dy) * w + (x + dx)
                    vals[pos] = m
                    pos += 1

    return rows_arr[:pos], cols_arr[:pos], vals_arr[:pos]


cdef inline int64_t _find(int64_t[::1] parent, int64_t i) nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


cdef inline void _union(int64_t[::1] parent, int64_t a, int64_t b) nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label_components(
    int64_t[:, ::1] values,
    uint8_t[:, ::1] active,
    int connectivity,
):
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    cdef Py_ssize_t y, x
    cdef int64_t i, r, v
    cdef int eight = 1 if connectivity == 8 else 0

    parent_arr = np.arange(h * w, dtype=np.int64)
    cdef int64_t[::1] parent = parent_arr

    with nogil:
        for y in range(h):
            for x in range(w):
                if not active[y, x]:
                    continue
                v = values[y, x]
                i = y * w + x
                if x > 0 and active[y, x - 1] and values[y, x - 1] == v:
                    _union(parent, i, i - 1)
                if y > 0:
                    if active[y - 1, x] and values[y - 1, x] == v:
                        _union(parent, i, i - w)
                    if eight:
                        if x > 0 and active[y - 1, x - 1] and values[y - 1, x - 1] == v:
                            _union(parent, i, i - w - 1)
                        if x + 1 < w and active[y - 1, x + 1] and values[y - 1, x + 1] == v:
                            _union(parent, i, i - w + 1)

    comp_arr = np.zeros((h, w), dtype=np.int32)
    label_arr = np.zeros(h * w, dtype=np.int32)
    cdef int32_t[:, ::1] comp = comp_arr
    cdef int32_t[::1] root_label = label_arr
    cdef int32_t next_id = 0

    with nogil:
        for y in range(h):
            for x in range(w):
                if not active[y, x]:
                    continue
                r = _find(parent, y * w + x)
                if root_label[r] == 0:
                    next_id += 1
                    root_label[r] = next_id
                comp[y, x] = root_label[r]

    return comp_arr, int(next_id)


def nearest_seed_fill(uint32_t[:, ::1] values, uint8_t[:, ::1] seed):
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    cdef Py_ssize_t y, x, xx
    cdef int64_t cur, da, db, dxx, ddx2, tot, cd2, r
    cdef int64_t best_d2, best_r, best_x
    cdef int side

    colrow_arr = np.empty((h, w), dtype=np.int64)
    coldist2_arr = np.empty((h, w), dtype=np.int64)
    cdef int64_t[:, ::1] colrow = colrow_arr
    cdef int64_t[:, ::1] coldist2 = coldist2_arr
    state_arr = np.full(w, MISSING_ROW, dtype=np.int64)
    cdef int64_t[::1] state = state_arr

    out_arr = np.asarray(values).copy()
    cdef uint32_t[:, ::1] out = out_arr

    with nogil:
        # nearest seed row at or above, stored temporarily in colrow
        for y in range(h):
            for x in range(w):
                if seed[y, x]:
                    state[x] = y
                colrow[y, x] = state[x]
        for x in range(w):
            state[x] = MISSING_ROW
        # sweep upward for the seed row below, then combine (tie -> above)
        for y in range(h - 1, -1, -1):
            for x in range(w):
                if seed[y, x]:
                    state[x] = y
                cur = colrow[y, x]
                da = y - cur if cur != MISSING_ROW else (<int64_t>1) << 30
                db = state[x] - y if state[x] != MISSING_ROW else (<int64_t>1) << 30
                if da <= db:
                    colrow[y, x] = cur
                    coldist2[y, x] = da * da
                else:
                    colrow[y, x] = state[x]
                    coldist2[y, x] = db * db

        for y in range(h):
            for x in range(w):
                if seed[y, x]:
                    continue
                best_d2 = (<int64_t>1) << 62
                best_r = 0
                best_x = 0
                dxx = 0
                while dxx < w:
                    ddx2 = dxx * dxx
                    if ddx2 > best_d2:
                        break
                    for side in range(2):
                        if side == 0:
                            xx = x - dxx
                            if xx < 0:
                                continue
                        else:
                            if dxx == 0:
                                continue
                            xx = x + dxx
                            if xx >= w:
                                continue
                        r = colrow[y, xx]
                        if r == MISSING_ROW:
                            continue
                        cd2 = coldist2[y, xx]
                        tot = cd2 + ddx2
                        if tot < best_d2 or (
                            tot == best_d2
                            and (r < best_r or (r == best_r and xx < best_x))
                        ):
                            best_d2 = tot
                            best_r = r
                            best_x = xx
                    dxx += 1
                out[y, x] = values[best_r, best_x]

    return out_arr
