"""
Class weighting, the weighted MSE loss and the weighted least-squares fit of
the linear Saffron baseline.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence, Tuple

import numpy as np

from src.core.errors import EmptyRegionError
from src.core.imaging import DEFAULT_ILLUMINANT, ConcentrationMap, RgbImage, check_same_shape
from src.engines.linear_predictor import (
    DEFAULT_WINDOW,
    LinearSaffronPredictor,
    extract_features,
)
from src.interfaces.predictor import FEATURE_NAMES, ClassWeights, LinearSaffronModel

logger = logging.getLogger(__name__)

DEGENERATE_WEIGHT = 1e-6
RIDGE_PENALTY = 1e-6
MAX_NORMAL_CONDITION = 1e12


def _values(cmap) -> np.ndarray:
    if isinstance(cmap, ConcentrationMap):
        return cmap.values()
    return np.asarray(cmap, dtype=np.float64)


def compute_class_weights(training_maps: Sequence[ConcentrationMap]) -> ClassWeights:
    """Each class is weighted by the pixel proportion of the other class (H_S > 0 is Saffron)"""
    if not training_maps:
        raise EmptyRegionError("no training maps to compute class weights from")
    positives = 0
    total = 0
    for cmap in training_maps:
        values = _values(cmap)
        positives += int(np.count_nonzero(values > 0))
        total += values.size
    if total == 0:
        raise EmptyRegionError("training maps hold no pixels")

    p_s = positives / total
    w_saffron, w_background = 1.0 - p_s, p_s
    if w_saffron <= 0 or w_background <= 0:
        logger.warning(
            "All training pixels belong to one class (saffron fraction %.3f); "
            "using weight %g for the empty class", p_s, DEGENERATE_WEIGHT,
        )
        w_saffron = w_saffron if w_saffron > 0 else DEGENERATE_WEIGHT
        w_background = w_background if w_background > 0 else DEGENERATE_WEIGHT
    return ClassWeights(w_saffron=w_saffron, w_background=w_background)


def pixel_weights(gt: np.ndarray, w: ClassWeights) -> np.ndarray:
    return np.where(gt > 0, w.w_saffron, w.w_background)


def wmse_loss(pred, gt, w: ClassWeights) -> float:
    p, g = _values(pred), _values(gt)
    check_same_shape(p.shape, g.shape)
    diff = p - g
    return float(np.mean(pixel_weights(g, w) * diff * diff))


def _normal_terms(
    pair: Tuple[RgbImage, ConcentrationMap], w: ClassWeights, k: int, i0: int
) -> Tuple[np.ndarray, np.ndarray, float]:
    he, gt = pair
    target = _values(gt)
    check_same_shape(he.shape, target.shape)
    features = extract_features(he, k, i0).reshape(-1, len(FEATURE_NAMES))
    design = np.hstack([features, np.ones((features.shape[0], 1))])
    y = target.reshape(-1)
    weights = pixel_weights(y, w)
    weighted = design * weights[:, None]
    return weighted.T @ design, weighted.T @ y, float(weights.sum())


def fit_linear_baseline(
    pairs: Sequence[Tuple[RgbImage, ConcentrationMap]],
    w: ClassWeights,
    k: int = DEFAULT_WINDOW,
    i0: int = DEFAULT_ILLUMINANT,
    jobs: int = 1,
) -> LinearSaffronModel:
    """
    Weighted least squares of the Saffron target on the pixel features plus a
    bias. Per-pair normal-equation sums are reduced in pair order, so the
    result does not depend on `jobs`.
    """
    if not pairs:
        raise EmptyRegionError("no training pairs to fit the baseline on")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"Feature window must be a positive odd integer, got {k}")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        terms = list(executor.map(lambda pair: _normal_terms(pair, w, k, i0), pairs))

    size = len(FEATURE_NAMES) + 1
    gram = np.zeros((size, size))
    moment = np.zeros(size)
    total_weight = 0.0
    for a, b, weight in terms:
        gram += a
        moment += b
        total_weight += weight
    # the weighted-mean system has the same solution and a scale-free ridge
    gram /= total_weight
    moment /= total_weight

    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > MAX_NORMAL_CONDITION:
        logger.warning(
            "Normal matrix is singular (condition %.3g); falling back to ridge penalty %g",
            condition, RIDGE_PENALTY,
        )
        gram = gram + RIDGE_PENALTY * np.eye(size)
    coefficients = np.linalg.solve(gram, moment)
    logger.info("Fitted linear baseline on %d pairs (window %d)", len(pairs), k)
    return LinearSaffronModel(coefficients=coefficients, window=k, class_weights=w)


def predict(model: LinearSaffronModel, he: RgbImage, i0: int = DEFAULT_ILLUMINANT) -> ConcentrationMap:
    return LinearSaffronPredictor(model, i0).predict(he)
