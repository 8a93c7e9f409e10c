"""
Pixel-wise Saffron regression metrics and the mean-concentration regression.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DegenerateRegressionError, EmptyRegionError
from src.core.imaging import BinaryMask, ConcentrationMap, check_same_shape

logger = logging.getLogger(__name__)

SAFFRON_THRESHOLD = 0.05
DICE_THRESHOLDS: Tuple[float, ...] = tuple(k / 20 for k in range(20))


@dataclass
class MetricReport:
    mae: float
    mae_s: Optional[float]
    mae_b: Optional[float]
    mdice: float
    dice_s: float
    n_pixels: int
    n_saffron: int = 0
    n_background: int = 0
    thresholds: Tuple[float, ...] = DICE_THRESHOLDS

    def as_dict(self) -> Dict[str, object]:
        return {
            "mae": self.mae,
            "mae_s": self.mae_s,
            "mae_b": self.mae_b,
            "mdice": self.mdice,
            "dice_s": self.dice_s,
            "n_pixels": self.n_pixels,
            "n_saffron": self.n_saffron,
            "n_background": self.n_background,
        }


@dataclass
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    points: List[Tuple[float, float]] = field(default_factory=list)


def _values(cmap) -> np.ndarray:
    if isinstance(cmap, ConcentrationMap):
        return cmap.values()
    return np.asarray(cmap, dtype=np.float64)


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _values(pred), _values(gt)
    check_same_shape(p.shape, g.shape)
    return p, g


def mae(pred, gt, mask: Optional[BinaryMask] = None) -> float:
    p, g = _pair(pred, gt)
    if mask is None:
        region = np.ones(p.shape, dtype=bool)
    else:
        region = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
        check_same_shape(p.shape, region.shape)
    if not region.any():
        raise EmptyRegionError("empty mask: MAE is undefined")
    return float(np.mean(np.abs(p[region] - g[region])))


def mae_split(
    pred, gt, threshold: float = SAFFRON_THRESHOLD
) -> Tuple[Optional[float], Optional[float]]:
    """MAE over Saffron pixels (gt > threshold) and over the rest; None marks an empty region"""
    p, g = _pair(pred, gt)
    saffron = g > threshold
    mae_s = float(np.mean(np.abs(p[saffron] - g[saffron]))) if saffron.any() else None
    background = ~saffron
    mae_b = float(np.mean(np.abs(p[background] - g[background]))) if background.any() else None
    return mae_s, mae_b


def dice_at(pred, gt, t: float) -> float:
    if t < 0:
        raise ValueError(f"Dice threshold must be >= 0, got {t}")
    p, g = _pair(pred, gt)
    a = p > t
    b = g > t
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def mdice(pred, gt, thresholds: Sequence[float] = DICE_THRESHOLDS) -> float:
    return float(np.mean([dice_at(pred, gt, t) for t in thresholds]))


def evaluate_pair(pred, gt, threshold: float = SAFFRON_THRESHOLD) -> MetricReport:
    p, g = _pair(pred, gt)
    mae_s, mae_b = mae_split(p, g, threshold)
    n_saffron = int((g > threshold).sum())
    return MetricReport(
        mae=mae(p, g),
        mae_s=mae_s,
        mae_b=mae_b,
        mdice=mdice(p, g),
        dice_s=dice_at(p, g, 0.0),
        n_pixels=int(p.size),
        n_saffron=n_saffron,
        n_background=int(p.size) - n_saffron,
    )


def evaluate_pairs(pairs: Sequence[Tuple[object, object]], threshold: float = SAFFRON_THRESHOLD) -> MetricReport:
    """Metrics over the pooled pixels of every pair, in the given order"""
    if not pairs:
        raise EmptyRegionError("no prediction pairs to evaluate")
    preds, gts = [], []
    for pred, gt in pairs:
        p, g = _pair(pred, gt)
        preds.append(p.ravel())
        gts.append(g.ravel())
    return evaluate_pair(np.concatenate(preds), np.concatenate(gts), threshold)


def split_regions(cmap, grid: int) -> List[np.ndarray]:
    """Split a map into grid x grid regions, row-major"""
    if grid < 1:
        raise ValueError(f"Region grid must be >= 1, got {grid}")
    values = _values(cmap)
    rows = np.array_split(np.arange(values.shape[0]), grid)
    cols = np.array_split(np.arange(values.shape[1]), grid)
    return [values[np.ix_(r, c)] for r in rows for c in cols if r.size and c.size]


def report_values(
    report: MetricReport,
    regression: Optional[RegressionFit] = None,
    threshold: float = SAFFRON_THRESHOLD,
) -> Dict[str, object]:
    """Ordered report fields, absent metrics as None"""
    values: Dict[str, object] = dict(report.as_dict())
    values["saffron_threshold"] = threshold
    values["dice_thresholds"] = list(report.thresholds)
    if regression is not None:
        values["regression_slope"] = regression.slope
        values["regression_intercept"] = regression.intercept
        values["regression_r2"] = regression.r2
        values["regression_regions"] = len(regression.points)
    return values


def region_pairs(pairs: Sequence[Tuple[object, object]], grid: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Matching grid x grid regions of every (pred, gt) pair, in pair order"""
    regions = []
    for pred, gt in pairs:
        p, g = _pair(pred, gt)
        regions.extend(zip(split_regions(p, grid), split_regions(g, grid)))
    return regions


def mean_concentration_regression(regions: Sequence[Tuple[object, object]]) -> RegressionFit:
    """Least-squares fit of mean ground truth on mean prediction over regions"""
    if len(regions) < 2:
        raise DegenerateRegressionError("degenerate regression: need at least 2 regions")
    points = []
    for pred, gt in regions:
        p, g = _pair(pred, gt)
        points.append((float(np.mean(p)), float(np.mean(g))))
    x = np.array([pt[0] for pt in points])
    y = np.array([pt[1] for pt in points])
    x_centered = x - x.mean()
    sxx = float(np.sum(x_centered * x_centered))
    if sxx <= 0:
        raise DegenerateRegressionError("degenerate regression: all mean predictions are equal")
    slope = float(np.sum(x_centered * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residual = y - (slope * x + intercept)
    ss_res = float(np.sum(residual * residual))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    logger.debug("Regression over %d regions: slope=%.4f r2=%.4f", len(points), slope, r2)
    return RegressionFit(slope=slope, intercept=intercept, r2=r2, points=points)
