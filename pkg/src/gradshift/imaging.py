"""PNG writing and the jet-style colormap used for heatmap panels."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image


def jet(values) -> np.ndarray:
    """Map values in [0,1] to RGB in [0,1] with the classic jet ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)[..., None]
    centres = np.array([3.0, 2.0, 1.0])  # r, g, b
    return np.clip(1.5 - np.abs(4.0 * v - centres), 0.0, 1.0)


def to_uint8(a) -> np.ndarray:
    return np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(array, path) -> Path:
    """Save a [H,W], [H,W,1] or [H,W,3] array with values in [0,1]."""
    a = np.asarray(array)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    mode = "L" if a.ndim == 2 else "RGB"
    path = Path(path)
    Image.fromarray(to_uint8(a), mode=mode).save(path)
    return path


def gray_to_rgb(image) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    return np.repeat(a[..., None], 3, axis=-1)


def montage(panels: Sequence[np.ndarray], cols: int = 2, pad: int = 2) -> np.ndarray:
    """Tile equally sized RGB panels row-major with a white gutter."""
    panels = [gray_to_rgb(p) if (p.ndim == 2 or p.shape[-1] == 1) else p for p in panels]
    h, w, _ = panels[0].shape
    rows = -(-len(panels) // cols)
    out = np.ones((rows * h + (rows - 1) * pad, cols * w + (cols - 1) * pad, 3))
    for k, p in enumerate(panels):
        r, c = divmod(k, cols)
        out[r * (h + pad) : r * (h + pad) + h, c * (w + pad) : c * (w + pad) + w] = p
    return out
