"""Overlapping multi-scale crop planning and prediction merging.

A scale-``s`` crop is ``(w/s, h/s)`` pixels; crops of one scale are laid out
with stride ``crop_size / z`` so that neighbouring crops overlap. Merging
averages per pixel over the crops of each scale, then over scales.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import DenseMap, ValidationError


@dataclass(frozen=True)
class Crop:
    scale: int
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class CropPlan:
    width: int
    height: int
    scales: tuple[int, ...]
    overlap: int
    crops: tuple[Crop, ...]

    def crops_at(self, scale: int) -> tuple[Crop, ...]:
        return tuple(c for c in self.crops if c.scale == scale)

    def to_json_obj(self) -> list[dict]:
        return [
            {"scale": c.scale, "x": c.x, "y": c.y, "w": c.w, "h": c.h}
            for c in self.crops
        ]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class CropPrediction:
    crop: Crop
    map: DenseMap

    def __post_init__(self):
        if (self.map.h, self.map.w) != (self.crop.h, self.crop.w):
            raise ValidationError(
                f"prediction shape {(self.map.h, self.map.w)} does not match "
                f"crop {(self.crop.h, self.crop.w)}"
            )


def _axis_offsets(length: int, size: int, z: int) -> list[int]:
    """Stride-``size/z`` offsets covering [0, length); the last crop is
    clamped to the right/bottom edge so coverage holds without padding."""
    stride = max(1, size // z)
    offsets = list(range(0, length - size + 1, stride))
    if offsets[-1] != length - size:
        offsets.append(length - size)
    return offsets


def plan_crops(w: int, h: int, scales, z: int) -> CropPlan:
    """Deterministic overlapping crop layout for one image.

    Crop sizes are ``floor(axis / s)``; for z=2, s=2 this yields the
    nine-crop pattern with offsets {0, size/2, axis - size} per axis.
    """
    if w < 1 or h < 1:
        raise ValidationError(f"image size must be positive, got {(w, h)}")
    if z < 1:
        raise ValidationError(f"overlap factor must be >= 1, got {z}")
    scales = tuple(int(s) for s in scales)
    if not scales or min(scales) < 1:
        raise ValidationError(f"scales must be positive integers, got {scales}")
    if len(set(scales)) != len(scales):
        raise ValidationError(f"duplicate scales in {scales}")
    crops = []
    for s in scales:
        ws, hs = w // s, h // s
        if ws < 1 or hs < 1:
            raise ValidationError(f"scale {s} exceeds image size {(w, h)}")
        for y in _axis_offsets(h, hs, z):
            for x in _axis_offsets(w, ws, z):
                crops.append(Crop(scale=s, x=x, y=y, w=ws, h=hs))
    return CropPlan(width=w, height=h, scales=scales, overlap=z, crops=tuple(crops))


def merge_crops(plan: CropPlan, preds) -> DenseMap:
    """Average predictions back to full resolution.

    Per scale every pixel is the mean over the covering crops; the final map
    is the mean across scales. Accumulation runs in float64 so the result is
    independent of crop order up to that precision.
    """
    by_crop: dict[Crop, CropPrediction] = {}
    for p in preds:
        if p.crop in by_crop:
            raise ValidationError(f"duplicate prediction for crop {p.crop}")
        by_crop[p.crop] = p
    missing = [c for c in plan.crops if c not in by_crop]
    if missing:
        raise ValidationError(f"missing prediction for crop {missing[0]}")
    if len(by_crop) != len(plan.crops):
        extra = set(by_crop) - set(plan.crops)
        raise ValidationError(f"prediction for unplanned crop {next(iter(extra))}")

    channels = {p.map.c for p in by_crop.values()}
    if len(channels) != 1:
        raise ValidationError(f"inconsistent channel counts {sorted(channels)}")
    c = channels.pop()

    h, w = plan.height, plan.width
    total = np.zeros((h, w, c), dtype=np.float64)
    for s in plan.scales:
        acc = np.zeros((h, w, c), dtype=np.float64)
        cover = np.zeros((h, w, 1), dtype=np.float64)
        for crop in plan.crops_at(s):
            pred = by_crop[crop]
            acc[crop.y : crop.y + crop.h, crop.x : crop.x + crop.w] += pred.map.data
            cover[crop.y : crop.y + crop.h, crop.x : crop.x + crop.w] += 1.0
        if cover.min() < 1.0:
            raise ValidationError(f"scale {s} leaves pixels uncovered")
        total += acc / cover
    return DenseMap(total / len(plan.scales))
