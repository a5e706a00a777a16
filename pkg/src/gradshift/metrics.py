"""Classification quality and importance-map displacement measures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

# Marker for ratios whose denominator is zero. ``None`` keeps it distinct
# from a legitimate 0.0 and serialises to an empty CSV cell / JSON null.
NA = None

CSV_HEADER = ["image_id", "mode", "label_before", "label_after", "conf_before", "conf_after", "rho", "topk", "com_px", "linf"]


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]


@dataclass(frozen=True)
class ShiftMetrics:
    rank_correlation: Optional[float]
    topk_overlap: float
    com_displacement: float
    linf_delta: float = 0.0
    degenerate: bool = False


def classification_metrics(predictions, labels, positive: int = 1) -> ClassificationMetrics:
    """Accuracy, sensitivity and specificity with malignant (1) as positive."""
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.shape != true.shape:
        raise ValueError(f"predictions ({pred.shape}) and labels ({true.shape}) differ in length")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction list")
    tp = int(((pred == positive) & (true == positive)).sum())
    fn = int(((pred != positive) & (true == positive)).sum())
    tn = int(((pred != positive) & (true != positive)).sum())
    fp = int(((pred == positive) & (true != positive)).sum())
    return ClassificationMetrics(
        accuracy=float((pred == true).mean()),
        sensitivity=tp / (tp + fn) if tp + fn else NA,
        specificity=tn / (tn + fp) if tn + fp else NA,
    )


def _values(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def spearman(a, b) -> Optional[float]:
    """Spearman rank correlation with average ranks for ties.

    Returns ``NA`` when either input is constant.
    """
    ra = rankdata(np.ravel(a), method="average")
    rb = rankdata(np.ravel(b), method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        return NA
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def topk_indices(m: np.ndarray, k: int) -> np.ndarray:
    # stable sort so ties break by flat index, deterministically
    return np.argsort(-np.ravel(m), kind="stable")[:k]


def topk_overlap(a, b, fraction: float = 0.05) -> float:
    a, b = _values(a), _values(b)
    k = max(1, int(round(fraction * a.size)))
    inter = np.intersect1d(topk_indices(a, k), topk_indices(b, k))
    return len(inter) / k


def center_of_mass(m) -> tuple:
    """Importance-weighted (row, col) centroid; the image centre for an all-zero map."""
    m = _values(m)
    total = m.sum()
    if total <= 0:
        return ((m.shape[0] - 1) / 2.0, (m.shape[1] - 1) / 2.0)
    rows, cols = np.indices(m.shape)
    return (float((rows * m).sum() / total), float((cols * m).sum() / total))


def shift_metrics(before, after, linf_delta: float = 0.0, topk_fraction: float = 0.05) -> ShiftMetrics:
    a, b = _values(before), _values(after)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    degenerate = not (a.max() > 0 and b.max() > 0)
    rho = NA if degenerate else spearman(a, b)
    ca, cb = center_of_mass(a), center_of_mass(b)
    return ShiftMetrics(
        rank_correlation=rho,
        topk_overlap=topk_overlap(a, b, topk_fraction),
        com_displacement=math.hypot(ca[0] - cb[0], ca[1] - cb[1]),
        linf_delta=float(linf_delta),
        degenerate=degenerate,
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_csv_row(path, row: dict) -> None:
    """Append one row to an attack metrics CSV, writing the header if new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        w.writerow([_fmt(row.get(k)) for k in CSV_HEADER])


def read_csv_rows(path) -> list:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)
