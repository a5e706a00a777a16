"""Synthetic ultrasound phantoms, on-disk corpora, augmentation and splitting.

Corpus layout (real or synthetic)::

    root/benign/<name>.png        root/benign/<name>_mask.png
    root/malignant/<name>.png     root/malignant/<name>_mask.png
    root/normal/<name>.png        (ignored unless include_normal=True)

BMP images are accepted alongside PNG. Masks are optional; several
``<name>_mask_<k>.png`` files are merged by union.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

BENIGN, MALIGNANT = 0, 1
LABEL_NAMES = {BENIGN: "benign", MALIGNANT: "malignant"}
SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".png", ".bmp")


class CorruptImageWarning(UserWarning):
    pass


class MissingMaskWarning(UserWarning):
    pass


class EmptyCorpusError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # [S,S,1], values in [0,1]
    label: int
    mask: np.ndarray  # [S,S,1], values in {0,1}
    origin: str = "synthetic"
    split: Optional[str] = None
    source_id: str = ""
    aug_params: Optional[dict] = None
    corpus: str = ""


@dataclass
class PhantomSpec:
    size: int = 64
    speckle_scale: float = 0.25
    # lesion semi-axes as fractions of the image side
    benign_axes: Tuple[float, float] = (0.18, 0.24)
    malignant_axes: Tuple[float, float] = (0.09, 0.13)
    min_aspect: float = 0.8  # minor/major axis ratio lower bound
    intensity_drop: Tuple[float, float] = (0.55, 0.8)
    spicule_count: Tuple[int, int] = (6, 12)
    spicule_length: Tuple[float, float] = (0.7, 1.0)  # relative to the local radius
    spicule_halfwidth: float = 0.16  # radians
    roughness: float = 0.12
    margin: int = 4
    seed: int = 0

    def max_reach(self) -> float:
        benign = self.benign_axes[1]
        malignant = self.malignant_axes[1] * (1 + self.roughness) * (1 + self.spicule_length[1])
        return max(benign, malignant) * self.size

    def validate(self) -> None:
        for name in ("benign_axes", "malignant_axes"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if not 0 < self.min_aspect <= 1:
            raise ValueError(f"min_aspect must lie in (0, 1], got {self.min_aspect}")
        if not self.spicule_count[0] <= self.spicule_count[1]:
            raise ValueError(f"spicule_count range is empty: {self.spicule_count}")
        reach = self.max_reach()
        if reach + self.margin > self.size / 2:
            raise ValueError(
                f"lesion reach {reach:.1f}px plus {self.margin}px margin does not fit in a {self.size}px image"
            )


@dataclass
class Dataset:
    train: List[Sample] = field(default_factory=list)
    val: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)
    assignment: Dict[str, str] = field(default_factory=dict)

    def all(self) -> List[Sample]:
        return self.train + self.val + self.test

    def manifest(self) -> List[dict]:
        return [
            {
                "source_id": s.source_id,
                "origin": s.origin,
                "corpus": s.corpus,
                "label": int(s.label),
                "split": s.split,
                "augmentation": s.aug_params,
            }
            for s in self.all()
        ]

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=1))


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


def _lesion_radius(spec: PhantomSpec, label: int, rng: np.random.Generator):
    """Polar radius function r(phi) of the lesion boundary, in pixels."""
    s = spec.size
    a = rng.uniform(*(spec.benign_axes if label == BENIGN else spec.malignant_axes)) * s
    b = rng.uniform(spec.min_aspect, 1.0) * a
    tilt = rng.uniform(0, np.pi)

    def ellipse(phi):
        c, sn = np.cos(phi - tilt), np.sin(phi - tilt)
        return a * b / np.sqrt((b * c) ** 2 + (a * sn) ** 2)

    if label == BENIGN:
        return ellipse

    n = int(rng.integers(spec.spicule_count[0], spec.spicule_count[1] + 1))
    base = rng.uniform(0, 2 * np.pi)
    angles = base + 2 * np.pi * (np.arange(n) + rng.uniform(-0.25, 0.25, n)) / n
    lengths = rng.uniform(*spec.spicule_length, n)
    harmonics = rng.integers(3, 8, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    amps = rng.uniform(0.3, 1.0, size=3)
    amps = spec.roughness * amps / amps.sum()

    def spiculated(phi):
        r = ellipse(phi)
        rough = 1 + sum(amp * np.sin(k * phi + ph) for amp, k, ph in zip(amps, harmonics, phases))
        r = r * rough
        spikes = np.zeros_like(phi)
        for ang, ln in zip(angles, lengths):
            d = np.angle(np.exp(1j * (phi - ang)))
            spikes = np.maximum(spikes, ln * np.clip(1 - np.abs(d) / spec.spicule_halfwidth, 0, None))
        return r * (1 + spikes)

    return spiculated


def _smooth_field(rng, size, sigma, amp):
    f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    f /= f.std() + 1e-12
    return amp * f


def generate_phantom(spec: PhantomSpec, label: int, source_id: str = "") -> Sample:
    """Speckled tissue with one hypoechoic lesion; deterministic from ``spec.seed``.

    Benign lesions are smooth ellipses, malignant ones carry spicules and a
    rough boundary. The mask is the exact lesion support.
    """
    spec.validate()
    if label not in LABEL_NAMES:
        raise ValueError(f"label must be 0 (benign) or 1 (malignant), got {label}")
    rng = np.random.default_rng([spec.seed, label])
    s = spec.size
    radius = _lesion_radius(spec, label, rng)
    # same placement range for both classes so position carries no label cue
    lo = spec.max_reach() + spec.margin
    cy, cx = rng.uniform(lo, s - 1 - lo, size=2)
    rows, cols = np.indices((s, s), dtype=np.float64)
    dy, dx = rows - cy, cols - cx
    dist = np.hypot(dy, dx)
    inside = dist <= radius(np.arctan2(dy, dx))
    inside[int(round(cy)), int(round(cx))] = True
    # thin spicule tips can detach on the pixel grid; keep the main body
    comp, ncomp = ndimage.label(inside, structure=np.ones((3, 3)))
    if ncomp > 1:
        inside = comp == comp[int(round(cy)), int(round(cx))]

    tissue = 0.55 + _smooth_field(rng, s, s / 8, 0.06) + 0.1 * (rows / s - 0.5)
    drop = rng.uniform(*spec.intensity_drop)
    lesion = ndimage.gaussian_filter(inside.astype(np.float64), 0.6)
    echo = tissue * (1 - drop * lesion)
    speckle = rng.rayleigh(spec.speckle_scale, size=(s, s))
    speckle = ndimage.gaussian_filter(speckle, 0.5)
    factor = 1 + (speckle - speckle.mean()) / max(speckle.std(), 1e-12) * spec.speckle_scale * math.sqrt((4 - math.pi) / 2)
    image = np.clip(echo * factor, 0.0, 1.0)
    return Sample(
        image=image[..., None],
        label=int(label),
        mask=inside.astype(np.float64)[..., None],
        origin="synthetic",
        source_id=source_id or f"phantom-{spec.seed}-{label}",
        corpus="synthetic",
    )


def generate_corpus(n_per_class: int, spec: Optional[PhantomSpec] = None, seed: int = 0) -> List[Sample]:
    """``n_per_class`` benign then ``n_per_class`` malignant phantoms."""
    spec = spec or PhantomSpec()
    out = []
    for label in (BENIGN, MALIGNANT):
        for i in range(n_per_class):
            sid = f"{LABEL_NAMES[label]}/phantom_{i:05d}"
            sub = replace(spec, seed=int(np.random.SeedSequence([seed, label, i]).generate_state(1)[0]))
            out.append(generate_phantom(sub, label, source_id=sid))
    return out


# ---------------------------------------------------------------------------
# corpus I/O
# ---------------------------------------------------------------------------


def _to_uint8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(a)[..., 0] * 255), 0, 255).astype(np.uint8)


def export_corpus(samples: Iterable[Sample], root) -> Path:
    """Write samples in the on-disk corpus layout."""
    root = Path(root)
    for s in samples:
        folder = root / LABEL_NAMES[s.label]
        folder.mkdir(parents=True, exist_ok=True)
        stem = Path(s.source_id).name or f"sample_{id(s)}"
        Image.fromarray(_to_uint8(s.image), mode="L").save(folder / f"{stem}.png")
        Image.fromarray(_to_uint8(s.mask), mode="L").save(folder / f"{stem}_mask.png")
    return root


def _read_gray(path: Path, size: int, resample) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        g = im.convert("L")
    if g.size != (size, size):
        g = g.convert("F").resize((size, size), resample)
        arr = np.asarray(g, dtype=np.float64)
    else:
        arr = np.asarray(g, dtype=np.float64)
    return np.clip(arr / 255.0, 0.0, 1.0)


def load_corpus(root, size: int = 64, include_normal: bool = False) -> List[Sample]:
    """Read a corpus directory into Samples resized to ``size`` x ``size``.

    Images are resized bilinearly and rescaled to [0,1]; masks use nearest
    neighbour and are binarised. Unreadable files are skipped with a
    :class:`CorruptImageWarning`. With ``include_normal`` the ``normal``
    folder is read as benign-side negatives with empty masks.
    """
    root = Path(root)
    folders = [("benign", BENIGN), ("malignant", MALIGNANT)]
    if include_normal:
        folders.append(("normal", BENIGN))
    samples: List[Sample] = []
    skipped = 0
    for folder, label in folders:
        d = root / folder
        if not d.is_dir():
            continue
        for path in sorted(d.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES or "_mask" in path.stem:
                continue
            try:
                image = _read_gray(path, size, Image.BILINEAR)
            except Exception as exc:  # PIL raises a zoo of types for bad files
                skipped += 1
                warnings.warn(f"skipping unreadable image {path}: {exc}", CorruptImageWarning, stacklevel=2)
                continue
            mask_paths = sorted(
                p for p in d.iterdir()
                if p.stem == f"{path.stem}_mask" or p.stem.startswith(f"{path.stem}_mask_")
            )
            mask = np.zeros((size, size))
            for mp in mask_paths:
                try:
                    mask = np.maximum(mask, _read_gray(mp, size, Image.NEAREST) > 0.5)
                except Exception as exc:
                    warnings.warn(f"unreadable mask {mp}: {exc}", MissingMaskWarning, stacklevel=2)
            if not mask_paths and folder != "normal":
                warnings.warn(f"no mask for {path}; using an empty mask", MissingMaskWarning, stacklevel=2)
            samples.append(
                Sample(
                    image=image[..., None],
                    label=label,
                    mask=mask.astype(np.float64)[..., None],
                    origin=str(path),
                    source_id=f"{folder}/{path.stem}",
                    corpus=str(root),
                )
            )
    if skipped:
        logger.warning("%s: skipped %d unreadable image(s)", root, skipped)
    if not samples:
        raise EmptyCorpusError(f"no readable images found under {root}")
    return samples


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def draw_augmentation(rng: np.random.Generator, size: int, rotation_deg: float = 5.0, shift_frac: float = 0.1) -> dict:
    return {
        "flip": bool(rng.random() < 0.5),
        "rotation_deg": float(rng.uniform(-rotation_deg, rotation_deg)),
        "shift": [float(v) for v in rng.uniform(-shift_frac, shift_frac, size=2) * size],
    }


def apply_transform(array: np.ndarray, params: dict, order: int) -> np.ndarray:
    """Horizontal flip, then rotation about the centre and a (dy, dx) shift.

    ``order`` is 1 for images, 0 for masks. Images fill out-of-frame pixels
    from the nearest edge pixel; masks fill with 0.
    """
    out = array[..., 0] if array.ndim == 3 else array
    if params.get("flip"):
        out = out[:, ::-1]
    theta = math.radians(params.get("rotation_deg", 0.0))
    dy, dx = params.get("shift", (0.0, 0.0))
    if theta != 0.0 or dy != 0.0 or dx != 0.0:
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        centre = (np.array(out.shape, dtype=np.float64) - 1) / 2
        # output pixel o samples input at rot @ (o - centre - shift) + centre
        offset = centre - rot @ (centre + np.array([dy, dx]))
        mode = "constant" if order == 0 else "nearest"
        out = ndimage.affine_transform(out, rot, offset=offset, order=order, mode=mode, cval=0.0)
        if order == 0:
            out = (out > 0.5).astype(array.dtype)
        else:
            out = np.clip(out, 0.0, 1.0)
    out = np.ascontiguousarray(out, dtype=array.dtype)
    return out[..., None] if array.ndim == 3 else out


def augment(sample: Sample, seed: int = 0, index: int = 0, copies: int = 4) -> List[Sample]:
    """``copies`` randomly transformed variants of ``sample``.

    Each variant draws its own flip (p=0.5), rotation in [-5, 5] degrees and
    height/width shifts in [-10%, 10%]. Deterministic in (seed, index).
    """
    rng = np.random.default_rng([seed, index])
    size = sample.image.shape[0]
    out = []
    for k in range(copies):
        params = draw_augmentation(rng, size)
        out.append(
            replace(
                sample,
                image=apply_transform(sample.image, params, order=1),
                mask=apply_transform(sample.mask, params, order=0),
                aug_params={**params, "copy": k},
            )
        )
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split(samples: Sequence[Sample], fractions=(0.70, 0.10, 0.20), seed: int = 0) -> Dataset:
    """Stratified split by source image.

    Every sample sharing a ``source_id`` lands in the same split, so
    augmented copies never leak across train/val/test.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    by_label: Dict[int, List[str]] = {}
    source_label: Dict[str, int] = {}
    for s in samples:
        sid = s.source_id
        if sid in source_label:
            if source_label[sid] != s.label:
                raise ValueError(f"source {sid!r} appears with two labels")
            continue
        source_label[sid] = s.label
        by_label.setdefault(s.label, []).append(sid)

    rng = np.random.default_rng(seed)
    assignment: Dict[str, str] = {}
    for label in sorted(by_label):
        sources = sorted(by_label[label])
        if len(sources) < 3:
            raise ValueError(f"class {label} has {len(sources)} source image(s); at least 3 are needed to stratify")
        order = rng.permutation(len(sources))
        n = len(sources)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        for rank, i in enumerate(order):
            if rank < n_train:
                assignment[sources[i]] = "train"
            elif rank < n_train + n_val:
                assignment[sources[i]] = "val"
            else:
                assignment[sources[i]] = "test"

    ds = Dataset(assignment=assignment)
    for s in samples:
        which = assignment[s.source_id]
        getattr(ds, which).append(replace(s, split=which))
    return ds


def prepare_dataset(sources: Sequence[Sample], fractions=(0.70, 0.10, 0.20), seed: int = 0, copies: int = 4) -> Dataset:
    """Split source images, then replace each training source by its augmentations."""
    ds = split(sources, fractions, seed)
    augmented = []
    for i, s in enumerate(ds.train):
        augmented.extend(augment(s, seed=seed, index=i, copies=copies))
    ds.train = augmented
    return ds
