"""GRAD-CAM importance maps read from the model's bottleneck activation.

For class ``c`` with logit ``y_c`` and bottleneck channels ``A_k``::

    alpha_k = mean over (i, j) of d y_c / d A_k[i, j]
    map     = ReLU(sum_k alpha_k A_k)

The map is upsampled (nearest neighbour) to the input resolution and divided
by its maximum.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .imaging import gray_to_rgb, jet, save_png
from .model import MtlModel, forward, head_logits

CSV_MAGIC = "gradshift-cam-v1"


@dataclass(frozen=True)
class CamMap:
    values: np.ndarray  # [S,S], in [0,1]
    target_class: int
    raw_max: float
    raw: Optional[np.ndarray] = None  # [S,S], before max-normalisation

    @property
    def degenerate(self) -> bool:
        return not self.raw_max > 0


def channel_weights(model: MtlModel, bottleneck: np.ndarray, target_class: int) -> np.ndarray:
    """Spatially averaged gradient of the target logit w.r.t. each channel.

    ``bottleneck`` is a single activation ``[1,h,w,C]``; returns ``[C]``.
    """
    nc = model.config.num_classes
    if not 0 <= target_class < nc:
        raise ValueError(f"target_class {target_class} out of range for {nc} classes")
    a = ad.variable(bottleneck, dtype=bottleneck.dtype)
    logits = head_logits(model, a)
    onehot = np.zeros_like(logits.value)
    onehot[:, target_class] = 1.0
    ad.backward(ad.sum(ad.mul(logits, onehot)))
    return a.grad.mean(axis=(0, 1, 2))


def weighted_map(bottleneck, alpha: np.ndarray) -> ad.Node:
    """Differentiable pre-ReLU map ``sum_k alpha_k A_k`` of shape [1,h,w,1]."""
    w = np.asarray(alpha).reshape(1, 1, -1, 1)
    return ad.conv2d(bottleneck, ad.constant(w, dtype=w.dtype), stride=1, padding=0)


def _normalise(raw_low: np.ndarray, factor: int, target_class: int) -> CamMap:
    raw = raw_low.repeat(factor, axis=0).repeat(factor, axis=1)
    raw_max = float(raw.max())
    values = raw / raw_max if raw_max > 0 else np.zeros_like(raw)
    return CamMap(values=values, target_class=int(target_class), raw_max=raw_max, raw=raw)


def cam_from_bottleneck(model: MtlModel, bottleneck: np.ndarray, target_class: int) -> CamMap:
    alpha = channel_weights(model, bottleneck, target_class)
    pre = np.tensordot(bottleneck[0], alpha, axes=([2], [0]))
    factor = model.config.input_size // bottleneck.shape[1]
    return _normalise(np.maximum(pre, 0.0), factor, target_class)


def compute_cam(model: MtlModel, image, target_class: Optional[int] = None) -> CamMap:
    """GRAD-CAM map of ``image`` for ``target_class`` (default: predicted class).

    Gradients are taken w.r.t. the pre-softmax logit. Parameters are left
    untouched. A map whose maximum is zero is returned as all zeros with
    ``degenerate`` set.
    """
    out = forward(model, np.asarray(image, dtype=model.dtype), with_mask=False)
    if target_class is None:
        target_class = int(np.argmax(out.probs.value))
    return cam_from_bottleneck(model, out.bottleneck.value, target_class)


def overlay(image, cam: CamMap, alpha: float = 0.5) -> np.ndarray:
    """Blend a grayscale image with the jet-coloured map; RGB in [0,1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    gray = gray_to_rgb(image)
    if gray.shape[:2] != cam.values.shape:
        raise ValueError(f"image {gray.shape[:2]} and map {cam.values.shape} differ in shape")
    return (1.0 - alpha) * gray + alpha * jet(cam.values)


def save_overlay_png(image, cam: CamMap, path, alpha: float = 0.5) -> Path:
    return save_png(overlay(image, cam, alpha), path)


def write_cam_csv(cam: CamMap, path, raw: bool = True) -> Path:
    """Row-major map values under a ``gradshift-cam-v1,rows,cols`` header."""
    values = cam.raw if (raw and cam.raw is not None) else cam.values
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([CSV_MAGIC, values.shape[0], values.shape[1]])
        for row in values:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_cam_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    if head[0] != CSV_MAGIC:
        raise ValueError(f"{path}: missing {CSV_MAGIC} header")
    n, m = int(head[1]), int(head[2])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.shape != (n, m):
        raise ValueError(f"{path}: header says {n}x{m}, body is {data.shape}")
    return data
