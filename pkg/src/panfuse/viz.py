"""Panoptic map rendering to RGB (visualization only, not round-trippable)."""

from __future__ import annotations

import colorsys
import json

import numpy as np

from .core import INSTANCE_BASE, LabelSpec, PanopticMap

_GOLDEN = 0.6180339887498949


def default_palette(labels: LabelSpec) -> dict[int, tuple[int, int, int]]:
    """Deterministic class colors spread around the hue circle."""
    palette = {}
    for c in range(labels.n_classes):
        hue = (c * _GOLDEN) % 1.0
        sat = 0.85 if labels.is_thing(c) else 0.45
        r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.95)
        palette[c] = (int(r * 255), int(g * 255), int(b * 255))
    return palette


def load_palette(path) -> dict[int, tuple[int, int, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {int(k): tuple(int(x) for x in v) for k, v in doc.items()}


def render_panoptic(
    pan: PanopticMap,
    labels: LabelSpec,
    palette: dict[int, tuple[int, int, int]] | None = None,
) -> np.ndarray:
    """8-bit RGB image: class color, brightness-shifted per instance;
    ignore pixels are black."""
    palette = palette or default_palette(labels)
    cls = pan.pan // INSTANCE_BASE
    inst = pan.pan % INSTANCE_BASE

    lut = np.zeros((max(labels.n_classes, labels.ignore_id + 1), 3), dtype=np.float64)
    for c, rgb in palette.items():
        lut[c] = rgb
    rgb = lut[np.minimum(cls, lut.shape[0] - 1)]
    rgb[cls == labels.ignore_id] = 0.0

    shade = np.where(inst > 0, 0.55 + 0.45 * ((inst * _GOLDEN) % 1.0), 1.0)
    return np.clip(rgb * shade[:, :, None], 0, 255).astype(np.uint8)


def save_png(rgb: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
