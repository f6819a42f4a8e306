"""Ground-truth-driven synthesis of head outputs (the --from-gt mode).

GT panoptic maps arrive as 2-channel uint16 PFT tensors (class id, instance
index). Probability maps are one-hot in the GT class; boundary maps carry 1.0
where a thing pixel's (class, instance) pair differs from any of its eight
neighbours, mirroring the training-label rule for the boundary head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabelCatalog:
    n_classes: int
    thing_ids: tuple[int, ...]
    ignore_id: int

    @classmethod
    def from_json(cls, path) -> "LabelCatalog":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        classes = sorted(doc["classes"], key=lambda c: int(c["id"]))
        return cls(
            n_classes=len(classes),
            thing_ids=tuple(int(c["id"]) for c in classes if c["thing"]),
            ignore_id=int(doc.get("ignore_id", 255)),
        )


def gt_to_probs(gt_class: np.ndarray, catalog: LabelCatalog) -> np.ndarray:
    """One-hot class probabilities; ignore pixels get a uniform distribution
    so the per-pixel sum stays exactly 1."""
    h, w = gt_class.shape
    probs = np.zeros((h, w, catalog.n_classes), np.float32)
    valid = gt_class != catalog.ignore_id
    ys, xs = np.nonzero(valid)
    probs[ys, xs, gt_class[valid].astype(np.int64)] = 1.0
    probs[~valid] = 1.0 / catalog.n_classes
    return probs


def gt_to_boundary(gt_class: np.ndarray, gt_instance: np.ndarray, catalog: LabelCatalog) -> np.ndarray:
    """Boundary evidence: 1.0 on thing pixels whose (class, instance) differs
    from any of the eight neighbours, 0.0 elsewhere."""
    h, w = gt_class.shape
    pair = gt_class.astype(np.int64) * 100000 + gt_instance.astype(np.int64)
    thing = np.isin(gt_class, np.asarray(catalog.thing_ids))
    differs = np.zeros((h, w), bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == dx == 0:
                continue
            src = (slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
            dst = (slice(max(0, -dy), h + min(0, -dy)), slice(max(0, -dx), w + min(0, -dx)))
            differs[dst] |= pair[dst] != pair[src]
    return np.where(thing & differs, 1.0, 0.0).astype(np.float32)


def gt_features(gt_class: np.ndarray, boundary: np.ndarray, catalog: LabelCatalog) -> np.ndarray:
    """Scene-statistics surrogate for a backbone embedding in --from-gt mode:
    the normalized class histogram plus boundary density, L2-normalized.

    Similar scenes get similar vectors, which is all the similarity sampler
    needs; the manifest records this as the pooling choice.
    """
    counts = np.bincount(
        gt_class[gt_class != catalog.ignore_id].ravel().astype(np.int64),
        minlength=catalog.n_classes,
    ).astype(np.float64)
    hist = counts / max(counts.sum(), 1.0)
    vec = np.concatenate([hist, [float(boundary.mean())]])
    norm = np.linalg.norm(vec)
    return (vec / norm if norm > 0 else vec).astype(np.float32)
