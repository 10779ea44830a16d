import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_flat_rgb(rng, height, width, num_materials=5, jitter=10.0):
    """Piecewise-flat color image: random rectangles over a background,
    distinct base colors, bounded per-pixel jitter."""
    palette = np.array(
        [
            [200, 60, 60],
            [60, 200, 60],
            [60, 60, 200],
            [200, 200, 60],
            [160, 40, 160],
            [230, 120, 30],
            [40, 150, 150],
            [240, 240, 240],
        ]
    )[:num_materials]
    labels = np.zeros((height, width), dtype=int)
    for _ in range(4):
        y0 = int(rng.integers(0, max(1, height - 4)))
        x0 = int(rng.integers(0, max(1, width - 4)))
        y1 = int(rng.integers(y0 + 2, height + 1))
        x1 = int(rng.integers(x0 + 2, width + 1))
        labels[y0:y1, x0:x1] = int(rng.integers(0, num_materials))
    rgb = palette[labels].astype(np.float64) + rng.uniform(
        -jitter, jitter, size=(height, width, 3)
    )
    return np.clip(rgb, 0, 255), labels
