"""Scaled-down residual multi-task network: classifier head plus mask decoder.

Topology (defaults shown for a 64x64 input)::

    image [S,S,1]
      stem      conv3x3/2(1->8) BN ReLU, maxpool2x2             -> S/4
      stage 0   2 basic residual blocks, 16 ch                  -> S/4
      stage 1   2 basic residual blocks, 32 ch, first stride 2  -> S/8
      stage 2   2 basic residual blocks, 64 ch                  -> S/8   (bottleneck)
      head      global-average-pool, dense-2, softmax
      decoder   n x [conv3x3 ReLU, upsample x2, BN], conv1x1, sigmoid -> [S,S,1]

Middle stages downsample; the first and last keep their resolution so the
bottleneck stays at S/8 (an 8x8 grid for 64x64 inputs). The bottleneck is
the post-ReLU output of the last residual block and is the layer GRAD-CAM
reads.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .metrics import classification_metrics

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "GRADSHIFT-CKPT-v1"
BN_MOMENTUM = 0.9
BN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    input_size: int = 64
    stem_channels: int = 8
    residual_stages: List[Tuple[int, int]] = field(default_factory=lambda: [(2, 16), (2, 32), (2, 64)])
    num_classes: int = 2
    decoder_stages: Optional[int] = None  # None -> derived from the bottleneck size
    mtl_enabled: bool = True
    loss_weight_mask: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.residual_stages = [tuple(int(v) for v in s) for s in self.residual_stages]
        if self.decoder_stages is None and self._shape_ok():
            self.decoder_stages = int(round(math.log2(self.input_size // self.bottleneck_size)))

    @property
    def num_downsamplings(self) -> int:
        # strided stem conv, stem maxpool, then one per middle stage
        return 2 + max(len(self.residual_stages) - 2, 0)

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 2**self.num_downsamplings

    @property
    def bottleneck_channels(self) -> int:
        return self.residual_stages[-1][1]

    def _shape_ok(self) -> bool:
        return (
            self.input_size > 0
            and len(self.residual_stages) > 0
            and self.input_size % 2**self.num_downsamplings == 0
        )

    def problems(self) -> List[str]:
        out = []
        if self.input_size <= 0:
            out.append(f"input_size must be positive, got {self.input_size}")
        if self.stem_channels <= 0:
            out.append(f"stem_channels must be positive, got {self.stem_channels}")
        if not self.residual_stages:
            out.append("residual_stages must not be empty")
        for blocks, ch in self.residual_stages:
            if blocks < 1 or ch < 1:
                out.append(f"residual stage ({blocks}, {ch}) needs blocks >= 1 and channels >= 1")
        if self.num_classes < 2:
            out.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.loss_weight_mask < 0:
            out.append(f"loss_weight_mask must be >= 0, got {self.loss_weight_mask}")
        if out:
            return out
        div = 2**self.num_downsamplings
        if self.input_size % div:
            out.append(f"input_size {self.input_size} is not divisible by 2^{self.num_downsamplings} = {div}")
        elif self.mtl_enabled and self.bottleneck_size * 2 ** (self.decoder_stages or 0) != self.input_size:
            out.append(
                f"decoder_stages {self.decoder_stages} inconsistent: bottleneck {self.bottleneck_size}"
                f" x 2^{self.decoder_stages} != input_size {self.input_size}"
            )
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise ConfigError("invalid ModelConfig: " + "; ".join(probs))


@dataclass
class TrainReport:
    train_cls_loss: List[float] = field(default_factory=list)
    train_mask_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_cls_loss: List[float] = field(default_factory=list)
    val_mask_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    test_accuracy: Optional[float] = None
    test_sensitivity: Optional[float] = None
    test_specificity: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


class Outputs(NamedTuple):
    probs: ad.Node
    mask: Optional[ad.Node]
    bottleneck: ad.Node
    logits: ad.Node


class MtlModel:
    """Parameters plus topology. Buffers hold batch-norm running statistics."""

    bottleneck_layer_id = "stages.last.out"

    def __init__(self, config: ModelConfig, params: Dict[str, np.ndarray], buffers: Dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.buffers = buffers

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "MtlModel":
        return MtlModel(
            ModelConfig(**asdict(self.config)),
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def astype(self, dtype) -> "MtlModel":
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.buffers = {k: v.astype(dtype) for k, v in m.buffers.items()}
        return m

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _block_specs(config: ModelConfig):
    """Yield (prefix, c_in, c_out, stride) for every residual block."""
    c_in = config.stem_channels
    last = len(config.residual_stages) - 1
    for si, (blocks, ch) in enumerate(config.residual_stages):
        for bi in range(blocks):
            stride = 2 if (0 < si < last and bi == 0) else 1
            yield f"stage{si}.block{bi}", c_in, ch, stride
            c_in = ch


def _decoder_channels(config: ModelConfig) -> List[int]:
    # a quarter of the bottleneck width, then halving, floor 4
    chans, c = [], max(config.bottleneck_channels // 2, 8)
    for _ in range(config.decoder_stages):
        c = max(c // 2, 4)
        chans.append(c)
    return chans


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered name -> shape map of every trainable tensor."""
    shapes: Dict[str, Tuple[int, ...]] = {}

    def conv(name, k, cin, cout, bias=True):
        shapes[f"{name}.w"] = (k, k, cin, cout)
        if bias:
            shapes[f"{name}.b"] = (cout,)

    def bn(name, c):
        shapes[f"{name}.gamma"] = (c,)
        shapes[f"{name}.beta"] = (c,)

    conv("stem.conv", 3, 1, config.stem_channels, bias=False)
    bn("stem.bn", config.stem_channels)
    for prefix, cin, cout, stride in _block_specs(config):
        conv(f"{prefix}.conv1", 3, cin, cout, bias=False)
        bn(f"{prefix}.bn1", cout)
        conv(f"{prefix}.conv2", 3, cout, cout, bias=False)
        bn(f"{prefix}.bn2", cout)
        if stride != 1 or cin != cout:
            conv(f"{prefix}.proj", 1, cin, cout, bias=False)
            bn(f"{prefix}.projbn", cout)
    shapes["head.w"] = (config.bottleneck_channels, config.num_classes)
    shapes["head.b"] = (config.num_classes,)
    if config.mtl_enabled:
        c = config.bottleneck_channels
        for i, cout in enumerate(_decoder_channels(config)):
            conv(f"decoder{i}.conv", 3, c, cout)
            bn(f"decoder{i}.bn", cout)
            c = cout
        conv("decoder.out", 1, c, 1)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def build_model(config: Optional[ModelConfig] = None) -> MtlModel:
    """Initialise a model deterministically from ``config.seed``.

    Conv and decoder weights are He-uniform, biases and shifts zero, scales
    one. The classifier weights start at zero: with fresh batch-norm
    statistics the pooled features share a large common offset, and random
    head weights would start the softmax saturated.
    """
    config = config or ModelConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name == "head.w":
            params[name] = np.zeros(shape)
        elif name.endswith(".w"):
            fan_in = int(np.prod(shape[:-1]))
            limit = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
        if name.endswith(".gamma"):
            stem = name[: -len(".gamma")]
            buffers[f"{stem}.mean"] = np.zeros(shape)
            buffers[f"{stem}.var"] = np.ones(shape)
    return MtlModel(config, params, buffers)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


class _Ctx:
    """Per-pass state: parameter nodes and batch-norm mode."""

    def __init__(self, model: MtlModel, param_grads: bool, training: bool):
        self.model = model
        self.training = training
        make = ad.variable if param_grads else ad.constant
        dt = model.dtype
        self.nodes = {k: make(v, dtype=dt) for k, v in model.params.items()}
        self.batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def bn(self, name: str, x: ad.Node) -> ad.Node:
        if self.training:
            flat = x.value.reshape(-1, x.value.shape[-1])
            mean = flat.mean(axis=0)
            centred = flat - mean
            var = np.einsum("ij,ij->j", centred, centred) / len(flat)
            self.batch_stats[name] = (mean, var)
        else:
            mean = self.model.buffers[f"{name}.mean"]
            var = self.model.buffers[f"{name}.var"]
        return ad.batchnorm(x, self.nodes[f"{name}.gamma"], self.nodes[f"{name}.beta"], mean, var, eps=BN_EPS)

    def conv(self, name: str, x: ad.Node, stride: int = 1, padding: int = 1) -> ad.Node:
        b = self.nodes.get(f"{name}.b")
        return ad.conv2d(x, self.nodes[f"{name}.w"], b, stride=stride, padding=padding)


def _as_batch(model: MtlModel, image) -> Tuple[ad.Node, bool]:
    size = model.config.input_size
    if isinstance(image, ad.Node):
        node = image
    else:
        node = ad.constant(np.asarray(image, dtype=model.dtype))
    shape = node.value.shape
    if shape == (size, size, 1):
        return ad.reshape(node, (1, size, size, 1)), True
    if len(shape) == 4 and shape[1:] == (size, size, 1):
        return node, False
    raise ad.ShapeError(f"forward: expected image of shape ({size}, {size}, 1) or a batch of them, got {shape}")


def _backbone(ctx: _Ctx, x: ad.Node) -> ad.Node:
    h = ad.relu(ctx.bn("stem.bn", ctx.conv("stem.conv", x, stride=2)))
    h = ad.maxpool2x2(h)
    for prefix, cin, cout, stride in _block_specs(ctx.model.config):
        y = ad.relu(ctx.bn(f"{prefix}.bn1", ctx.conv(f"{prefix}.conv1", h, stride=stride)))
        y = ctx.bn(f"{prefix}.bn2", ctx.conv(f"{prefix}.conv2", y))
        if f"{prefix}.proj.w" in ctx.nodes:
            sc = ctx.bn(f"{prefix}.projbn", ctx.conv(f"{prefix}.proj", h, stride=stride, padding=0))
        else:
            sc = h
        h = ad.relu(ad.add(y, sc))
    return h


def _head(ctx: _Ctx, bottleneck: ad.Node) -> ad.Node:
    return ad.dense(ad.global_avg_pool(bottleneck), ctx.nodes["head.w"], ctx.nodes["head.b"])


def _decoder(ctx: _Ctx, bottleneck: ad.Node) -> ad.Node:
    d = bottleneck
    for i in range(ctx.model.config.decoder_stages):
        d = ad.relu(ctx.conv(f"decoder{i}.conv", d))
        # conv, upsample, BN; BN is applied first because nearest
        # upsampling leaves per-channel statistics unchanged, so the
        # result is identical and 4x cheaper
        d = ctx.bn(f"decoder{i}.bn", d)
        d = ad.upsample(d, 2)
    return ad.sigmoid(ctx.conv("decoder.out", d, padding=0))


def _run(ctx: _Ctx, x: ad.Node, with_mask: bool) -> Outputs:
    bottleneck = _backbone(ctx, x)
    logits = _head(ctx, bottleneck)
    mask = _decoder(ctx, bottleneck) if (with_mask and ctx.model.config.mtl_enabled) else None
    return Outputs(ad.softmax(logits), mask, bottleneck, logits)


def head_logits(model: MtlModel, bottleneck) -> ad.Node:
    """Classifier logits computed from a bottleneck activation [N,h,w,C]."""
    node = bottleneck if isinstance(bottleneck, ad.Node) else ad.constant(bottleneck)
    return _head(_Ctx(model, param_grads=False, training=False), node)


def forward(model: MtlModel, image, *, with_mask: bool = True) -> Outputs:
    """Inference-mode forward pass.

    ``image`` may be an array or an :class:`~gradshift.autodiff.Node` (pass a
    variable node to get input gradients). A single ``[S,S,1]`` image yields
    ``probs`` of shape ``[num_classes]`` and ``mask`` of shape ``[S,S,1]``;
    batches keep their leading axis.
    """
    x, single = _as_batch(model, image)
    ctx = _Ctx(model, param_grads=False, training=False)
    out = _run(ctx, x, with_mask)
    if not single:
        return out
    s = model.config.input_size
    probs = ad.reshape(out.probs, (model.config.num_classes,))
    mask = ad.reshape(out.mask, (s, s, 1)) if out.mask is not None else None
    return Outputs(probs, mask, out.bottleneck, out.logits)


def predict(model: MtlModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Class probabilities for a stack of images, shape [N, num_classes]."""
    images = np.asarray(images, dtype=model.dtype)
    if images.ndim == 3:
        images = images[None]
    chunks = []
    for i in range(0, len(images), batch_size):
        chunks.append(forward(model, images[i : i + batch_size], with_mask=False).probs.value)
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# loss and training
# ---------------------------------------------------------------------------


def mtl_loss(class_probs, label, mask_pred=None, mask_true=None, lam: float = 1.0) -> ad.Node:
    """Cross-entropy plus ``lam`` times the mask binary cross-entropy."""
    if lam < 0:
        raise ValueError(f"mask loss weight must be >= 0, got {lam}")
    probs = class_probs
    if isinstance(probs, ad.Node) and probs.value.ndim == 1:
        probs = ad.reshape(probs, (1, -1))
    elif not isinstance(probs, ad.Node):
        probs = ad.constant(np.atleast_2d(probs))
    loss = ad.cross_entropy(probs, label)
    if lam == 0 or mask_pred is None:
        return loss
    if mask_true is None:
        raise ValueError("mask_true is required when lam > 0")
    mask_true = np.asarray(mask_true.value if isinstance(mask_true, ad.Node) else mask_true)
    mp_shape = mask_pred.value.shape if isinstance(mask_pred, ad.Node) else np.shape(mask_pred)
    if mp_shape != mask_true.shape:
        raise ad.ShapeError(f"mtl_loss: mask prediction {mp_shape} vs target {mask_true.shape}")
    bce = ad.binary_cross_entropy(mask_pred, mask_true.astype(mask_true.dtype if mask_true.dtype.kind == "f" else float))
    return ad.add(loss, ad.mul(bce, float(lam)))


def loss_and_gradients(model: MtlModel, images, labels, masks=None, training: bool = True):
    """Combined loss on one batch and its gradient for every parameter.

    Batch-norm uses batch statistics when ``training`` is set, running
    statistics otherwise. The mask term is included when the model has a
    decoder, its weight is positive and ``masks`` is given.
    """
    cfg = model.config
    lam = float(cfg.loss_weight_mask) if cfg.mtl_enabled else 0.0
    with_mask = lam > 0 and masks is not None
    ctx = _Ctx(model, param_grads=True, training=training)
    out = _run(ctx, ad.constant(np.asarray(images), dtype=model.dtype), with_mask)
    loss = mtl_loss(out.probs, np.asarray(labels), out.mask if with_mask else None,
                    None if masks is None else np.asarray(masks, dtype=model.dtype), lam=lam)
    ad.backward(loss)
    return float(loss.value[0]), {k: n.grad for k, n in ctx.nodes.items()}


def _stack(samples) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=int)
    masks = np.stack([s.mask for s in samples])
    return images, labels, masks


def evaluate(model: MtlModel, samples, batch_size: int = 64) -> dict:
    """Classification and mask losses plus accuracy over ``samples``."""
    images, labels, masks = _stack(samples)
    images = images.astype(model.dtype)
    lam_on = model.config.mtl_enabled
    ce_total = bce_total = 0.0
    preds = []
    for i in range(0, len(images), batch_size):
        out = forward(model, images[i : i + batch_size], with_mask=lam_on)
        lb = labels[i : i + batch_size]
        ce_total += float(ad.cross_entropy(out.probs, lb).value[0]) * len(lb)
        if out.mask is not None:
            bce = ad.binary_cross_entropy(out.mask, masks[i : i + batch_size].astype(model.dtype))
            bce_total += float(bce.value[0]) * len(lb)
        preds.append(out.probs.value.argmax(axis=1))
    preds = np.concatenate(preds)
    n = len(labels)
    return {
        "cls_loss": ce_total / n,
        "mask_loss": bce_total / n if lam_on else 0.0,
        "predictions": preds,
        "labels": labels,
        "accuracy": float((preds == labels).mean()),
    }


def recalibrate_batchnorm(model: MtlModel, images: np.ndarray, batch_size: int = 16) -> None:
    """Set running statistics to population statistics over ``images``.

    Each batch is normalised with its own statistics, as in training; the
    stored variance is the pooled one, ``E[x^2] - E[x]^2`` over all batches.
    """
    sums: Dict[str, list] = {}
    for start in range(0, len(images), batch_size):
        ctx = _Ctx(model, param_grads=False, training=True)
        _run(ctx, ad.constant(images[start : start + batch_size], dtype=model.dtype), model.config.mtl_enabled)
        w = min(batch_size, len(images) - start)
        for name, (bm, bv) in ctx.batch_stats.items():
            acc = sums.setdefault(name, [0.0, 0.0, 0])
            acc[0] = acc[0] + w * bm
            acc[1] = acc[1] + w * (bv + bm * bm)
            acc[2] += w
    for name, (s1, s2, n) in sums.items():
        mean = s1 / n
        model.buffers[f"{name}.mean"] = mean.astype(model.dtype)
        model.buffers[f"{name}.var"] = np.maximum(s2 / n - mean * mean, 0.0).astype(model.dtype)


def train(
    model: MtlModel,
    dataset,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 0.01,
    momentum: float = 0.9,
    seed: int = 0,
    dtype=np.float32,
    log_every: int = 1,
    recalibrate_bn: bool = True,
    schedule: str = "cosine",
) -> TrainReport:
    """Mini-batch SGD with momentum on the combined classification/mask loss.

    Parameters are updated in place. The arithmetic runs in ``dtype``
    (float32 by default); the accumulated change is added back to the
    model's parameters at their own precision. The mask branch is skipped entirely when its loss weight is 0,
    which leaves backbone and head gradients unchanged.

    ``lr`` is the peak rate. With ``schedule="cosine"`` it decays per batch
    along a half cosine to zero at the end of the last epoch; ``"constant"``
    keeps it fixed.

    Running batch-norm statistics are tracked with momentum during training.
    With ``recalibrate_bn`` they are then replaced, before the last
    validation pass, by population statistics of the training set under the
    final weights; the momentum averages lag the weights badly enough to
    wreck inference-mode accuracy.
    """
    if not dataset.train or not dataset.val:
        raise ValueError("training needs non-empty train and validation splits")
    if schedule not in ("cosine", "constant"):
        raise ValueError(f"schedule must be 'cosine' or 'constant', got {schedule!r}")
    cfg = model.config
    lam = float(cfg.loss_weight_mask) if cfg.mtl_enabled else 0.0
    with_mask = lam > 0
    home_dtype = model.dtype
    work = model.astype(dtype)
    start_params = {k: v.copy() for k, v in work.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in work.params.items()}
    images, labels, masks = _stack(dataset.train)
    images = images.astype(dtype)
    masks = masks.astype(dtype)
    rng = np.random.default_rng(seed)
    report = TrainReport()
    n = len(images)
    batches = -(-n // batch_size)
    total_steps = max(epochs * batches, 1)
    step = 0

    for epoch in range(epochs):
        order = rng.permutation(n)
        ce_sum = bce_sum = 0.0
        correct = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            ctx = _Ctx(work, param_grads=True, training=True)
            out = _run(ctx, ad.constant(images[idx], dtype=dtype), with_mask)
            ce = ad.cross_entropy(out.probs, labels[idx])
            loss = ce
            if with_mask:
                bce = ad.binary_cross_entropy(out.mask, masks[idx])
                loss = ad.add(ce, ad.mul(bce, lam))
                bce_sum += float(bce.value[0]) * len(idx)
            if not np.isfinite(loss.value[0]):
                raise TrainingDiverged(f"non-finite loss {loss.value[0]} at epoch {epoch}, batch starting {start}")
            ad.backward(loss)
            rate = lr if schedule == "constant" else 0.5 * lr * (1 + math.cos(math.pi * step / total_steps))
            step += 1
            for name, node in ctx.nodes.items():
                if node._grad is None:
                    continue
                v = velocity[name]
                v *= momentum
                v -= rate * node._grad
                work.params[name] += v
            for name, (bm, bv) in ctx.batch_stats.items():
                work.buffers[f"{name}.mean"] = BN_MOMENTUM * work.buffers[f"{name}.mean"] + (1 - BN_MOMENTUM) * bm
                work.buffers[f"{name}.var"] = BN_MOMENTUM * work.buffers[f"{name}.var"] + (1 - BN_MOMENTUM) * bv
            ce_sum += float(ce.value[0]) * len(idx)
            correct += int((out.probs.value.argmax(axis=1) == labels[idx]).sum())
        report.train_cls_loss.append(ce_sum / n)
        report.train_mask_loss.append(bce_sum / n)
        report.train_accuracy.append(correct / n)
        if recalibrate_bn and epoch == epochs - 1:
            recalibrate_batchnorm(work, images, batch_size)
        val = evaluate(work, dataset.val)
        report.val_cls_loss.append(val["cls_loss"])
        report.val_mask_loss.append(val["mask_loss"] if with_mask else 0.0)
        report.val_accuracy.append(val["accuracy"])
        if log_every and (epoch + 1) % log_every == 0:
            logger.info(
                "epoch %d/%d  ce %.4f  bce %.4f  acc %.3f  val_acc %.3f",
                epoch + 1, epochs, report.train_cls_loss[-1], report.train_mask_loss[-1],
                report.train_accuracy[-1], val["accuracy"],
            )

    # apply the change rather than the rounded working copy, so a zero
    # update leaves the stored parameters bit-identical
    for k, v in work.params.items():
        model.params[k][...] += (v - start_params[k]).astype(home_dtype)
    for k, v in work.buffers.items():
        model.buffers[k][...] = v.astype(home_dtype)
    if dataset.test:
        test = evaluate(model, dataset.test)
        cm = classification_metrics(test["predictions"], test["labels"])
        report.test_accuracy = cm.accuracy
        report.test_sensitivity = cm.sensitivity
        report.test_specificity = cm.specificity
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _pack(arrays: Dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in arrays.items()}


def _unpack(blob: dict) -> Dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def save_checkpoint(model: MtlModel, path) -> None:
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.config),
        "params": _pack(model.params),
        "buffers": _pack(model.buffers),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> MtlModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    config = ModelConfig(**doc["config"])
    config.validate()
    params = _unpack(doc["params"])
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        raise ValueError(f"{path}: parameter names do not match the configured topology")
    for k, shape in expected.items():
        if params[k].shape != tuple(shape):
            raise ValueError(f"{path}: parameter {k} has shape {params[k].shape}, expected {shape}")
    return MtlModel(config, params, _unpack(doc["buffers"]))
