"""Default material label taxonomy and color tables."""

from __future__ import annotations

import colorsys

import numpy as np

# 23 everyday material categories, the default label set.
MATERIAL_NAMES = [
    "brick",
    "carpet",
    "ceramic",
    "fabric",
    "foliage",
    "food",
    "glass",
    "hair",
    "leather",
    "metal",
    "mirror",
    "other",
    "painted",
    "paper",
    "plastic",
    "polished_stone",
    "skin",
    "sky",
    "stone",
    "tile",
    "wallpaper",
    "water",
    "wood",
]


def label_names(count: int) -> list[str]:
    """Material names for the default 23-label set, generic names otherwise."""
    if count == len(MATERIAL_NAMES):
        return list(MATERIAL_NAMES)
    return [f"mat{i:02d}" for i in range(count)]


def label_palette(count: int) -> np.ndarray:
    """Deterministic (count, 3) uint8 table of visually distinct colors."""
    colors = np.empty((count, 3), dtype=np.uint8)
    for i in range(count):
        hue = (i * 0.61803398875) % 1.0  # golden-ratio hue steps
        sat = 0.55 + 0.35 * ((i // 3) % 2)
        val = 0.95 - 0.25 * (i % 3) / 2.0
        r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
        colors[i] = (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))
    return colors
