"""Ground-truth preparation and the KL / CC / NSS / AUC evaluation metrics.

Conventions locked here (the literature varies):
  * KL uses the MIT-benchmark form with epsilon 1e-7, computed as
    gt-vs-prediction after normalizing both maps to sum 1.
  * CC is plain Pearson correlation over pixels.
  * NSS z-scores with the population standard deviation.
  * AUC is the Judd variant: thresholds at the saliency values observed at
    fixations, non-fixated pixels as negatives, trapezoidal area.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import MetricError, ShapeError

KL_EPS = 1e-7


@dataclass
class FixationMap:
    """Discrete gaze landing points; duplicates mean multiple observers."""

    width: int
    height: int
    points: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        for x, y in self.points:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ShapeError(f"fixation ({x},{y}) outside "
                                 f"{self.width}x{self.height}")

    def count_map(self) -> np.ndarray:
        """Per-pixel fixation counts, (H, W)."""
        counts = np.zeros((self.height, self.width))
        for x, y in self.points:
            counts[y, x] += 1.0
        return counts

    def mask(self) -> np.ndarray:
        return self.count_map() > 0


@dataclass
class SaliencyMap:
    """Nonnegative continuous attention density."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"saliency map must be 2-D, got "
                             f"{self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("saliency map must be finite")
        if np.any(self.values < 0):
            raise ShapeError("saliency map must be nonnegative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


MapLike = Union[SaliencyMap, np.ndarray]


def _values(m: MapLike) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, SaliencyMap) else m,
                      dtype=np.float64)


def _as_distribution(v: np.ndarray, name: str) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        raise MetricError(f"{name} map sums to zero, cannot normalize")
    return v / total


def gaussian_density(fix: FixationMap, sigma: float) -> SaliencyMap:
    """Sum of isotropic Gaussians at the fixations, normalized to sum 1.

    Each Gaussian is truncated at 4 sigma.
    """
    if sigma <= 0:
        raise MetricError(f"sigma must be positive, got {sigma}")
    if not fix.points:
        raise MetricError("cannot smooth an empty fixation list")
    out = np.zeros((fix.height, fix.width))
    radius = int(np.ceil(4.0 * sigma))
    span = np.arange(-radius, radius + 1)
    kernel = np.exp(-(span[:, None] ** 2 + span[None, :] ** 2)
                    / (2.0 * sigma * sigma))
    for x, y in fix.points:
        y0, y1 = max(0, y - radius), min(fix.height, y + radius + 1)
        x0, x1 = max(0, x - radius), min(fix.width, x + radius + 1)
        out[y0:y1, x0:x1] += kernel[y0 - y + radius:y1 - y + radius,
                                    x0 - x + radius:x1 - x + radius]
    return SaliencyMap(out / out.sum())


def kl_div(gt: MapLike, pred: MapLike) -> float:
    """KL divergence of prediction from ground truth (gt || pred)."""
    g, p = _values(gt), _values(pred)
    if g.shape != p.shape:
        raise ShapeError(f"map shapes differ: {g.shape} vs {p.shape}")
    g = _as_distribution(g, "ground-truth")
    p = _as_distribution(p, "prediction")
    return float(np.sum(g * np.log(g / (p + KL_EPS) + KL_EPS)))


def cc(a: MapLike, b: MapLike) -> float:
    """Pearson linear correlation coefficient over all pixels."""
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise ShapeError(f"map shapes differ: {av.shape} vs {bv.shape}")
    ac = av - av.mean()
    bc = bv - bv.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0:
        raise MetricError("correlation undefined for zero-variance input")
    return float((ac * bc).sum() / denom)


def nss(pred: MapLike, fix: FixationMap) -> float:
    """Mean z-scored (population std) saliency at the fixation points."""
    p = _values(pred)
    if p.shape != (fix.height, fix.width):
        raise ShapeError(f"prediction {p.shape} does not match fixations "
                         f"{(fix.height, fix.width)}")
    if not fix.points:
        raise MetricError("NSS needs at least one fixation")
    std = p.std()
    if std == 0:
        raise MetricError("NSS undefined for a constant map")
    z = (p - p.mean()) / std
    return float(np.mean([z[y, x] for x, y in fix.points]))


def auc_judd(pred: MapLike, fix: FixationMap) -> float:
    """ROC area with fixated pixels as positives (Judd variant).

    Thresholds sweep the saliency values at fixations; ties contribute
    the diagonal chord, so a constant map scores exactly 0.5.
    """
    p = _values(pred)
    if p.shape != (fix.height, fix.width):
        raise ShapeError(f"prediction {p.shape} does not match fixations "
                         f"{(fix.height, fix.width)}")
    if not fix.points:
        raise MetricError("AUC needs at least one fixation")
    fixated = fix.mask()
    n_fix = int(fixated.sum())
    n_neg = fixated.size - n_fix
    if n_neg == 0:
        raise MetricError("AUC undefined when every pixel is fixated")
    pos = p[fixated]
    neg = p[~fixated]
    thresholds = np.unique(pos)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        tpr.append(float((pos >= t).mean()))
        fpr.append(float((neg >= t).mean()))
    tpr.append(1.0)
    fpr.append(1.0)
    return float(np.trapezoid(tpr, fpr))


# -- fixation CSV ------------------------------------------------------------

def read_fixations_csv(path, width: int, height: int) -> FixationMap:
    """Load a fixation list from a "x,y" CSV in pixel coordinates."""
    points: List[Tuple[int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["x", "y"]:
            raise MetricError(f"{path}: expected header 'x,y', got {header}")
        for row in reader:
            if not row:
                continue
            points.append((int(row[0]), int(row[1])))
    return FixationMap(width=width, height=height, points=points)


def write_fixations_csv(path, fix: FixationMap):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        writer.writerows(fix.points)
