"""Cosine-similarity nearest-neighbour selection of unlabeled images for
self-training."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FeatureVector, ValidationError


@dataclass(frozen=True)
class SamplerConfig:
    n_neighbors: int = 5
    dedupe: bool = True

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValidationError(f"n_neighbors must be >= 1, got {self.n_neighbors}")


def cosine_similarity(a: FeatureVector, b: FeatureVector) -> float:
    if a.values.shape != b.values.shape:
        raise ValidationError(
            f"dimension mismatch: {a.values.shape[0]} vs {b.values.shape[0]}"
        )
    va = a.values.astype(np.float64)
    vb = b.values.astype(np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(va, vb) / (na * nb))


def _similarity_matrix(labeled, unlabeled) -> np.ndarray:
    la = np.stack([f.values for f in labeled]).astype(np.float64)
    ua = np.stack([f.values for f in unlabeled]).astype(np.float64)
    if la.shape[1] != ua.shape[1]:
        raise ValidationError(
            f"dimension mismatch: labeled d={la.shape[1]}, unlabeled d={ua.shape[1]}"
        )
    ln = np.linalg.norm(la, axis=1)
    un = np.linalg.norm(ua, axis=1)
    if (ln == 0).any() or (un == 0).any():
        raise ValidationError("cosine similarity undefined for zero-norm vectors")
    return (la / ln[:, None]) @ (ua / un[:, None]).T


def select_neighbors(
    labeled: Sequence[FeatureVector],
    unlabeled: Sequence[FeatureVector],
    cfg: SamplerConfig,
) -> list[tuple[str, list[str]]]:
    """For each labeled image, its most similar unlabeled images.

    Rankings are by descending cosine similarity with ties broken by
    ascending image id. With dedupe enabled a greedy pass over the labeled
    images assigns each unlabeled image at most once, falling through to the
    next-best candidates; if the pool runs dry the pick lists come back short
    with a warning.
    """
    if not labeled or not unlabeled:
        raise ValidationError("labeled and unlabeled sets must be non-empty")
    sims = _similarity_matrix(labeled, unlabeled)
    uids = np.array([f.image_id for f in unlabeled])
    # lexsort: last key is primary
    rankings = [np.lexsort((uids, -sims[i])) for i in range(len(labeled))]

    picks: list[tuple[str, list[str]]] = []
    taken: set[int] = set()
    for i, lab in enumerate(labeled):
        chosen: list[str] = []
        for j in rankings[i]:
            if len(chosen) == cfg.n_neighbors:
                break
            if cfg.dedupe and int(j) in taken:
                continue
            chosen.append(str(uids[j]))
            if cfg.dedupe:
                taken.add(int(j))
        if len(chosen) < cfg.n_neighbors:
            warnings.warn(
                f"only {len(chosen)} of {cfg.n_neighbors} neighbours available "
                f"for {lab.image_id!r}",
                stacklevel=2,
            )
        picks.append((lab.image_id, chosen))
    return picks
