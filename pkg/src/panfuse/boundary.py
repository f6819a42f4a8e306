"""Boundary-map operations: thresholding, denoising, stuff/thing transition
extraction, and ground-truth boundary label generation.

Binary maps use 1 = boundary internally; only the training-label output of
:func:`boundary_labels_from_instances` follows the 0 = boundary convention
used to supervise the boundary head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DenseMap, LabelSpec, PanopticMap, ValidationError


@dataclass(frozen=True)
class BoundaryConfig:
    lambda_b: float = 0.5
    min_boundary_size: int = 64
    boundary_convention: int = 0  # label value that denotes boundary in GT maps

    def __post_init__(self):
        if not 0.0 < self.lambda_b < 1.0:
            raise ValidationError(f"lambda_b must be in (0, 1), got {self.lambda_b}")
        if self.min_boundary_size < 0:
            raise ValidationError("min_boundary_size must be >= 0")
        if self.boundary_convention not in (0, 1):
            raise ValidationError("boundary_convention must be 0 or 1")


def threshold_boundary(soft: DenseMap, cfg: BoundaryConfig) -> DenseMap:
    """Binarize a soft boundary map: boundary iff value strictly above
    ``lambda_b``."""
    soft.validate_soft_boundary()
    binary = (soft.plane() > cfg.lambda_b).astype(np.uint8)
    return DenseMap(binary)


def denoise_boundary(binary: DenseMap, cfg: BoundaryConfig) -> DenseMap:
    """Remove 8-connected boundary components smaller than
    ``min_boundary_size`` pixels."""
    b = binary.plane()
    if cfg.min_boundary_size == 0:
        return DenseMap(b.copy())
    comp, n = kernels.label_components(
        np.zeros_like(b, dtype=np.int64), active=b != 0, connectivity=8
    )
    if n == 0:
        return DenseMap(b.copy())
    areas = np.bincount(comp.ravel(), minlength=n + 1)
    small = areas < cfg.min_boundary_size
    small[0] = False
    out = b.copy()
    out[small[comp]] = 0
    return DenseMap(out)


def stuff_thing_boundaries(semantic: DenseMap, labels: LabelSpec) -> DenseMap:
    """Mark pixels on either side of a 4-adjacent stuff/thing transition.

    Thing-thing and stuff-stuff transitions are left alone; the result is
    meant to be OR-ed into the binary boundary map.
    """
    sem = semantic.plane()
    valid_ids = (sem == labels.ignore_id) | (sem < labels.n_classes)
    if not valid_ids.all():
        raise ValidationError(f"unknown class id {int(sem[~valid_ids][0])}")
    thing = np.zeros(max(labels.n_classes, labels.ignore_id + 1), dtype=bool)
    thing[list(labels.thing_ids)] = True
    stuff = np.zeros_like(thing)
    stuff[list(labels.stuff_ids)] = True

    t = thing[sem]
    s = stuff[sem]
    out = np.zeros(sem.shape, dtype=np.uint8)
    for axis in (0, 1):
        a = (slice(None, -1), slice(None)) if axis == 0 else (slice(None), slice(None, -1))
        b = (slice(1, None), slice(None)) if axis == 0 else (slice(None), slice(1, None))
        cross = (t[a] & s[b]) | (s[a] & t[b])
        out[a] |= cross
        out[b] |= cross
    return DenseMap(out)


def boundary_labels_from_instances(
    panoptic_gt: PanopticMap, labels: LabelSpec, cfg: BoundaryConfig | None = None
) -> DenseMap:
    """Training labels for the boundary head from a ground-truth panoptic map.

    A thing pixel whose pan id differs from any of its eight neighbours gets
    the boundary label; stuff pixels are always background. Image-border
    pixels compare only the neighbours that exist.
    """
    pan = panoptic_gt.pan
    cls = pan // 1000
    thing = np.zeros(max(labels.n_classes, labels.ignore_id + 1), dtype=bool)
    thing[list(labels.thing_ids)] = True
    is_thing = thing[np.minimum(cls, thing.size - 1)] & (cls != labels.ignore_id)

    differs = np.zeros(pan.shape, dtype=bool)
    h, w = pan.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            src = (slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
            dst = (slice(max(0, -dy), h + min(0, -dy)), slice(max(0, -dx), w + min(0, -dx)))
            differs[dst] |= pan[dst] != pan[src]

    boundary = is_thing & differs
    conv = cfg.boundary_convention if cfg is not None else 0
    out = np.where(boundary, conv, 1 - conv).astype(np.uint8)
    return DenseMap(out)
