"""Iterated sign-gradient attacks on the classifier and on its GRAD-CAM map.

Two modes:

``misclassify``
    Repeated steps ``x <- x + step * sign(grad_x CE(model(x), y))`` that push
    the image away from its label.

``explain_shift``
    Sign steps on a shift objective that reorders the GRAD-CAM map while the
    label stays put. The default objective weights every map pixel by its
    negated, centred rank in the original map, so ascent pushes the rank
    order toward its reverse; the alternative drains the original hotspot
    and optionally pulls mass toward a target region. Once the logit margin
    of the predicted class falls below ``margin_floor``, each step is
    steered so that it does not lower the margin to first order. Any step
    that still changes the predicted label is undone and the step size
    halved.

Every iterate is clipped to the valid pixel range [0,1] and to an L-infinity
ball of radius ``linf_budget`` around the original image.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .gradcam import CamMap, cam_from_bottleneck, channel_weights, weighted_map
from .imaging import jet, montage, save_png
from .metrics import ShiftMetrics, append_csv_row, shift_metrics
from .model import MtlModel, forward

logger = logging.getLogger(__name__)

MODES = ("misclassify", "explain_shift")
OBJECTIVES = ("rank", "hotspot")


class AttackError(RuntimeError):
    pass


class DegenerateMapError(AttackError):
    """The original importance map is all zero; nothing to move. Skip the image."""


@dataclass
class AttackConfig:
    mode: str = "misclassify"
    step_size: float = 0.004
    steps: int = 25
    linf_budget: float = 0.1
    target_region: Optional[object] = None  # None, "auto", (row, col) or an [S,S] mask
    preserve_label: bool = False
    hotspot_fraction: float = 0.2
    max_halvings: int = 5
    cam_class: Optional[int] = None  # class whose map is compared; None: predicted
    objective: str = "rank"  # explain_shift objective: "rank" or "hotspot"
    margin_floor: float = 5.0  # logit margin below which steps must not lower it; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "explain_shift":
            self.preserve_label = True
        # zero step and zero budget are allowed together as a no-op attack
        if self.step_size < 0 or self.linf_budget < 0 or self.steps < 1:
            raise ValueError("need step_size >= 0, linf_budget >= 0 and steps >= 1")
        if (self.step_size == 0) != (self.linf_budget == 0):
            raise ValueError("step_size and linf_budget must both be positive (or both zero for a no-op)")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.margin_floor >= 0:
            raise ValueError(f"margin_floor must be >= 0, got {self.margin_floor}")
        if not 0 < self.hotspot_fraction <= 1:
            raise ValueError(f"hotspot_fraction must lie in (0, 1], got {self.hotspot_fraction}")


@dataclass
class AttackResult:
    original: np.ndarray
    perturbed: np.ndarray
    delta: np.ndarray
    label_before: int
    label_after: int
    confidence_before: float
    confidence_after: float
    cam_before: CamMap
    cam_after: CamMap
    metrics: ShiftMetrics
    succeeded: bool
    mode: str = "misclassify"
    loss_trace: list = field(default_factory=list)
    halvings: int = 0


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def loss_and_input_grad(model, image: np.ndarray, label: int):
    """Cross-entropy of ``model(image)`` against ``label`` and its input gradient.

    The loss is evaluated from the logits, so a saturated softmax still
    yields a usable gradient direction. Objects that provide their own
    ``loss_and_input_grad`` method (test oracles, for instance) are used
    as-is.
    """
    custom = getattr(model, "loss_and_input_grad", None)
    if custom is not None:
        return custom(image, label)
    x = ad.variable(image, dtype=model.dtype)
    out = forward(model, x, with_mask=False)
    loss = ad.logit_cross_entropy(out.logits, [label])
    ad.backward(loss)
    return float(loss.value[0]), x.grad


def logit_margin_and_grad(model, image: np.ndarray, label: int):
    """Logit of ``label`` minus the largest other logit, and its input gradient."""
    x = ad.variable(image, dtype=model.dtype)
    logits = forward(model, x, with_mask=False).logits
    z = logits.value[0]
    rival = int(np.argmax(np.where(np.arange(z.size) == label, -np.inf, z)))
    coef = np.zeros((1, z.size), dtype=z.dtype)
    coef[0, label], coef[0, rival] = 1.0, -1.0
    margin = ad.sum(ad.mul(logits, coef))
    ad.backward(margin)
    return float(margin.value[0]), x.grad


def guarded_sign(g_objective: np.ndarray, g_margin: np.ndarray) -> np.ndarray:
    """Sign step for the objective that does not lower the margin to first order.

    Starts from ``sign(g_objective)``. If that step would lower the margin,
    the conflicting pixels cheapest for the objective per unit of margin
    (smallest ``|g_objective| / |g_margin|``) follow ``sign(g_margin)``
    instead, just enough of them to make ``g_margin . step >= 0``. This is
    ``sign(g_objective + mu * g_margin)`` for the smallest adequate ``mu``.
    """
    go = np.asarray(g_objective, dtype=np.float64).ravel()
    gm = np.asarray(g_margin, dtype=np.float64).ravel()
    step = np.sign(go)
    deficit = -(gm @ step)
    if deficit <= 0:
        return step.reshape(np.shape(g_objective))
    conflict = np.nonzero((step * gm <= 0) & (gm != 0))[0]
    order = conflict[np.argsort(np.abs(go[conflict]) / np.abs(gm[conflict]), kind="stable")]
    # switching a pixel from -sign(gm) to +sign(gm) gains 2|gm|; from 0, |gm|
    gain = np.cumsum(np.abs(gm[order]) * (1 + (step[order] != 0)))
    k = min(int(np.searchsorted(gain, deficit)) + 1, order.size)
    step[order[:k]] = np.sign(gm[order[:k]])
    return step.reshape(np.shape(g_objective))


def _clip_ball(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Clip ``x`` so that ``|x - center| <= radius`` holds exactly in floating point."""
    x = np.clip(x, center - radius, center + radius)
    # center +- radius can round so that x - center lands an ulp past the
    # radius; step such pixels back toward the center
    over = np.abs(x - center) > radius
    while over.any():
        x[over] = np.nextafter(x[over], center[over])
        over = np.abs(x - center) > radius
    return x


def _sign_step(x: np.ndarray, step: float, direction: np.ndarray) -> np.ndarray:
    """``x + step * direction`` with every pixel moving by at most ``step``."""
    return _clip_ball(x + step * direction, x, step)


def _project(x: np.ndarray, original: np.ndarray, budget: Optional[float]) -> np.ndarray:
    if budget is not None:
        x = _clip_ball(x, original, budget)
    return np.clip(x, 0.0, 1.0)


def fgsm_step(model, image, label: int, step_size: float, original=None, linf_budget: Optional[float] = None):
    """One signed-gradient ascent step on the classification loss.

    Returns the new image, clipped to [0,1] and, when ``linf_budget`` is
    given, to the L-infinity ball around ``original`` (default ``image``).
    """
    image = np.asarray(image, dtype=np.float64)
    original = image if original is None else original
    if step_size == 0:
        return _project(image.copy(), original, linf_budget)
    _, grad = loss_and_input_grad(model, image, label)
    if not np.all(np.isfinite(grad)):
        raise AttackError("input gradient contains non-finite values")
    return _project(_sign_step(image, step_size, ad.sign(grad)), original, linf_budget)


def hotspot_mask(cam: CamMap, fraction: float = 0.2) -> np.ndarray:
    """Boolean mask of the top ``fraction`` of pixels of a map."""
    flat = cam.values.ravel()
    k = max(1, int(round(fraction * flat.size)))
    order = np.argsort(-flat, kind="stable")[:k]
    mask = np.zeros(flat.size, dtype=bool)
    mask[order] = True
    return mask.reshape(cam.values.shape)


def auto_target(cam: CamMap, fraction: float = 0.2) -> np.ndarray:
    """The ``fraction`` of pixels farthest from the hotspot's centre of mass."""
    hot = hotspot_mask(cam, fraction)
    n, m = hot.shape
    rows, cols = np.nonzero(hot)
    cy, cx = rows.mean(), cols.mean()
    yy, xx = np.mgrid[0:n, 0:m]
    dist = np.hypot(yy - cy, xx - cx).ravel()
    k = max(1, int(round(fraction * dist.size)))
    mask = np.zeros(dist.size)
    mask[np.argsort(-dist, kind="stable")[:k]] = 1.0
    return mask.reshape(n, m)


def rank_weights(cam: CamMap) -> np.ndarray:
    """Negated, standardised average ranks of a map's pixels.

    Ascent on ``sum(map * rank_weights)`` lowers the hottest pixels and raises
    the coolest, which drives the map's rank order toward its reverse and so
    its Spearman correlation with the original down. Tied pixels share a
    weight; a constant map gives all zeros.
    """
    r = rankdata(cam.values.ravel(), method="average")
    r = r - r.mean()
    scale = r.std()
    return (-r / scale if scale > 0 else r).reshape(cam.values.shape)


def _region_mask(target_region, size: int, cam: Optional[CamMap] = None) -> Optional[np.ndarray]:
    if target_region is None:
        return None
    if isinstance(target_region, str):
        if target_region != "auto":
            raise ValueError(f"unknown target_region {target_region!r}; use 'auto', a point or a mask")
        if cam is None:
            raise ValueError("target_region='auto' needs the original map")
        return auto_target(cam)
    arr = np.asarray(target_region, dtype=np.float64)
    if arr.shape == (2,):
        m = np.zeros((size, size))
        m[int(arr[0]), int(arr[1])] = 1.0
        return m
    if arr.shape in ((size, size), (size, size, 1)):
        return arr.reshape(size, size)
    raise ValueError(f"target_region must be a (row, col) point or a {size}x{size} mask, got shape {arr.shape}")


def shift_objective(model: MtlModel, image, original_cam: CamMap, target_region=None, hotspot=None,
                    objective: str = "rank") -> ad.Node:
    """Scalar whose ascent moves importance away from where the original map has it.

    ``sum(map * weights)`` where ``map`` is the unnormalised, pre-ReLU
    channel-weighted activation at input resolution. The channel weights are
    taken at the current image and held fixed. ``weights`` is
    :func:`rank_weights` of the original map for ``objective="rank"`` and
    ``-hotspot`` for ``objective="hotspot"``; a ``target_region`` adds itself
    to either (``"auto"`` uses :func:`auto_target` of the original map).
    """
    if original_cam.degenerate:
        raise DegenerateMapError("original importance map is all zero; skip this image")
    size = model.config.input_size
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    x = image if isinstance(image, ad.Node) else ad.constant(np.asarray(image, dtype=model.dtype))
    out = forward(model, x, with_mask=False)
    alpha = channel_weights(model, out.bottleneck.value, original_cam.target_class)
    m = weighted_map(out.bottleneck, alpha)
    factor = size // m.value.shape[1]
    up = ad.reshape(ad.upsample(m, factor), (size, size))
    if objective == "rank":
        weights = rank_weights(original_cam)
    else:
        weights = -np.asarray(hotspot_mask(original_cam) if hotspot is None else hotspot, dtype=np.float64)
    target = _region_mask(target_region, size, original_cam)
    if target is not None:
        weights = weights + target
    return ad.sum(ad.mul(up, weights.astype(up.value.dtype)))


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------


def _predict_one(model, image):
    """Label, confidence, bottleneck and logit margin of one image."""
    out = forward(model, image, with_mask=False)
    probs = out.probs.value
    z = np.ravel(out.logits.value)
    label = int(np.argmax(probs))
    margin = float(z[label] - np.max(np.delete(z, label)))
    return label, float(np.max(probs)), out.bottleneck.value, margin


def run_attack(model: MtlModel, image, config: Optional[AttackConfig] = None, label: Optional[int] = None) -> AttackResult:
    """Attack one image and report labels, confidences and map displacement.

    ``label`` is the true class for ``misclassify`` mode; the predicted
    class is used when it is not given. Maps are computed for the predicted
    class unless ``config.cam_class`` fixes one. In ``explain_shift`` mode an
    all-zero original map leaves the image untouched and the attack is
    reported as unsuccessful.
    """
    config = config or AttackConfig()
    original = np.asarray(image, dtype=np.float64)
    if original.shape != (model.config.input_size,) * 2 + (1,):
        raise ad.ShapeError(f"run_attack: image shape {original.shape} does not match the model input")
    label_before, conf_before, bottleneck, margin = _predict_one(model, original)
    fixed = config.cam_class
    cam_before = cam_from_bottleneck(model, bottleneck, label_before if fixed is None else fixed)
    budget = config.linf_budget
    x = original.copy()
    trace = []
    halvings = 0

    if config.step_size > 0 and config.mode == "misclassify":
        y = label_before if label is None else int(label)
        for _ in range(config.steps):
            loss, _ = loss_and_input_grad(model, x, y)
            trace.append(loss)
            x = fgsm_step(model, x, y, config.step_size, original=original, linf_budget=budget)
        trace.append(loss_and_input_grad(model, x, y)[0])
    elif config.step_size > 0 and config.mode == "explain_shift" and not cam_before.degenerate:
        hot = hotspot_mask(cam_before, config.hotspot_fraction)
        step = config.step_size
        taken = 0
        while taken < config.steps:
            xv = ad.variable(x)
            obj = shift_objective(model, xv, cam_before, config.target_region, hotspot=hot,
                                  objective=config.objective)
            ad.backward(obj)
            grad = xv.grad
            if not np.all(np.isfinite(grad)):
                raise AttackError("shift-objective gradient contains non-finite values")
            trace.append(float(obj.value[0]))
            if margin < config.margin_floor:
                direction = guarded_sign(grad, logit_margin_and_grad(model, x, label_before)[1])
            else:
                direction = ad.sign(grad)
            candidate = _project(_sign_step(x, step, direction), original, budget)
            label_c, _, _, margin_c = _predict_one(model, candidate)
            if label_c != label_before:
                halvings += 1
                if halvings > config.max_halvings:
                    break
                step /= 2.0
                continue
            x, margin = candidate, margin_c
            taken += 1

    perturbed = x
    delta = perturbed - original
    label_after, conf_after, bottleneck_after, _ = _predict_one(model, perturbed)
    cam_after = cam_from_bottleneck(model, bottleneck_after, label_after if fixed is None else fixed)
    metrics = shift_metrics(cam_before, cam_after, linf_delta=float(np.abs(delta).max()))
    if config.mode == "misclassify":
        succeeded = label_after != label_before
    else:
        rho = metrics.rank_correlation
        succeeded = label_after == label_before and rho is not None and rho < 0.5
    return AttackResult(
        original=original,
        perturbed=perturbed,
        delta=delta,
        label_before=label_before,
        label_after=label_after,
        confidence_before=conf_before,
        confidence_after=conf_after,
        cam_before=cam_before,
        cam_after=cam_after,
        metrics=metrics,
        succeeded=bool(succeeded),
        mode=config.mode,
        loss_trace=trace,
        halvings=halvings,
    )


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def csv_row(result: AttackResult, image_id: str) -> dict:
    m = result.metrics
    return {
        "image_id": image_id,
        "mode": result.mode,
        "label_before": result.label_before,
        "label_after": result.label_after,
        "conf_before": result.confidence_before,
        "conf_after": result.confidence_after,
        "rho": m.rank_correlation,
        "topk": m.topk_overlap,
        "com_px": m.com_displacement,
        "linf": m.linf_delta,
    }


def save_result(result: AttackResult, out_dir, image_id: str, csv_path=None) -> Path:
    """Write the per-image panel files and append a row to ``attacks.csv``.

    ``delta.png`` maps ``[-scale, +scale]`` linearly onto ``[0, 255]``; the
    scale is stored in ``metadata.json`` so ``value = (2 * px / 255 - 1) * scale``.
    """
    out_dir = Path(out_dir)
    d = out_dir / image_id.replace("/", "__")
    d.mkdir(parents=True, exist_ok=True)
    scale = float(np.abs(result.delta).max()) or 1.0
    save_png(result.original, d / "original.png")
    save_png(result.perturbed, d / "perturbed.png")
    save_png((result.delta / scale + 1.0) / 2.0, d / "delta.png")
    save_png(jet(result.cam_before.values), d / "cam_before.png")
    save_png(jet(result.cam_after.values), d / "cam_after.png")
    panel = montage(
        [result.original, jet(result.cam_before.values), result.perturbed, jet(result.cam_after.values)], cols=2
    )
    save_png(panel, d / "montage.png")
    meta = {
        "image_id": image_id,
        "mode": result.mode,
        "succeeded": result.succeeded,
        "label_before": result.label_before,
        "label_after": result.label_after,
        "confidence_before": result.confidence_before,
        "confidence_after": result.confidence_after,
        "delta_png": {"scale": scale, "decode": "value = (2 * px / 255 - 1) * scale"},
        "metrics": asdict(result.metrics),
        "halvings": result.halvings,
    }
    (d / "metadata.json").write_text(json.dumps(meta, indent=1))
    append_csv_row(csv_path or out_dir / "attacks.csv", csv_row(result, image_id))
    return d
