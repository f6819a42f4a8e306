"""Hot per-pixel kernels with a compiled core and a pure-numpy fallback.

Three operations dominate the pipeline runtime: max-over-Bresenham-line
sweeps for the affinity graph, connected-component labeling, and exact
nearest-seed label propagation. A Cython extension implements them natively;
if it is missing (or ``PANFUSE_PURE=1`` is set) the numpy/scipy fallback in
``_purepy`` is selected at import time. Both backends are required to produce
bit-identical results; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

from . import _purepy

if os.environ.get("PANFUSE_PURE", "0") == "1":
    _backend = _purepy
else:
    try:
        from . import _native as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = _purepy


def backend_name() -> str:
    return "native" if _backend.__name__.endswith("_native") else "purepy"


def bresenham_cells(dy: int, dx: int) -> list[tuple[int, int]]:
    """Grid cells on the Bresenham line from (0, 0) to (dy, dx), inclusive.

    All-octant integer form with a combined error term; translation
    invariant, so relative cells serve every base pixel.
    """
    cells = []
    y, x = 0, 0
    ax = abs(dx)
    ay = -abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    err = ax + ay
    while True:
        cells.append((y, x))
        if x == dx and y == dy:
            return cells
        e2 = 2 * err
        if e2 >= ay:
            err += ay
            x += sx
        if e2 <= ax:
            err += ax
            y += sy


@lru_cache(maxsize=None)
def disc_offsets(radius: int) -> tuple[tuple[int, int], ...]:
    """Canonical half of the Euclidean-disc neighborhood.

    Offsets (dy, dx) with 0 < dy^2 + dx^2 <= radius^2 and dy > 0, or dy == 0
    and dx > 0; the mirrored half is implied by graph symmetry.
    """
    if radius < 1:
        raise ValueError("neighborhood radius must be >= 1")
    out = []
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx <= radius * radius:
                out.append((dy, dx))
    return tuple(out)


@lru_cache(maxsize=None)
def _offset_tables(radius: int):
    """Flattened (offsets, line starts, line cells) arrays for one radius."""
    offsets = disc_offsets(radius)
    starts = [0]
    cells: list[tuple[int, int]] = []
    for dy, dx in offsets:
        cells.extend(bresenham_cells(dy, dx))
        starts.append(len(cells))
    return (
        np.asarray(offsets, dtype=np.int32),
        np.asarray(starts, dtype=np.int32),
        np.asarray(cells, dtype=np.int32).reshape(len(cells), 2),
    )


def pairwise_line_max(b: np.ndarray, radius: int):
    """Max boundary value along the Bresenham line for every node pair
    within ``radius``.

    Returns COO-style ``(i, j, d)`` arrays over flattened node indices
    ``y * w + x``; only the canonical i < j half is emitted.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("boundary map must be 2-D")
    offsets, starts, cells = _offset_tables(radius)
    return _backend.pairwise_line_max(b, offsets, starts, cells)


def label_components(values: np.ndarray, active: np.ndarray | None, connectivity: int):
    """Connected components of equal-value pixels restricted to ``active``.

    Component ids are 1..n in raster order of each component's first pixel;
    inactive pixels get 0. Returns ``(component_map, n)``.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    values = np.ascontiguousarray(values, dtype=np.int64)
    if active is None:
        active = np.ones(values.shape, dtype=np.uint8)
    else:
        active = np.ascontiguousarray(active, dtype=np.uint8)
    if active.shape != values.shape:
        raise ValueError("active mask shape mismatch")
    return _backend.label_components(values, active, connectivity)


def nearest_seed_fill(values: np.ndarray, seed: np.ndarray) -> np.ndarray:
    """Propagate each seed value to the non-seed pixels nearest to it.

    Exact Euclidean nearest seed; equidistant seeds resolve to the first in
    raster order. Raises ``ValueError`` when no seed exists.
    """
    values = np.ascontiguousarray(values, dtype=np.uint32)
    seed = np.ascontiguousarray(seed, dtype=np.uint8)
    if seed.shape != values.shape:
        raise ValueError("seed mask shape mismatch")
    if not seed.any():
        raise ValueError("nearest_seed_fill needs at least one seed pixel")
    if seed.all():
        return values.copy()
    return _backend.nearest_seed_fill(values, seed)
