"""Models with analytically known behaviour, shared by the test modules."""

import numpy as np

from gradshift.model import ModelConfig, build_model, forward

SMALL = dict(input_size=32, stem_channels=4, residual_stages=[(1, 6), (1, 8), (1, 8)])


def gap_oracle(channel: int = 0, target_class: int = 1, seed: int = 0, config=None):
    """A model whose ``target_class`` logit is the global average of one
    bottleneck channel; every other logit is identically zero."""
    model = build_model(config or ModelConfig(**SMALL, seed=seed))
    model.params["head.w"][...] = 0.0
    model.params["head.b"][...] = 0.0
    model.params["head.w"][channel, target_class] = 1.0
    return model


def expected_gap_cam(model, image, channel: int) -> np.ndarray:
    """Normalised, nearest-upsampled ReLU(A_k) computed directly."""
    a = forward(model, np.asarray(image, dtype=np.float64), with_mask=False).bottleneck.value[0, :, :, channel]
    factor = model.config.input_size // a.shape[0]
    up = np.maximum(a, 0.0).repeat(factor, axis=0).repeat(factor, axis=1)
    return up / up.max() if up.max() > 0 else up


class LinearOracle:
    """``J(x) = w . x`` for any label; the attack code calls the method below."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def loss(self, image) -> float:
        return float((self.w * image).sum())

    def loss_and_input_grad(self, image, label):
        return self.loss(image), self.w.copy()
