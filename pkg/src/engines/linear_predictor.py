import logging
from typing import Any, Dict

import numpy as np
from scipy.ndimage import uniform_filter

from src.core.errors import FeatureSpecError
from src.core.imaging import DEFAULT_ILLUMINANT, ConcentrationMap, RgbImage, rgb_to_od
from src.interfaces.predictor import FEATURE_NAMES, ISaffronPredictor, LinearSaffronModel

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 9


def _check_window(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"Feature window must be a positive odd integer, got {k}")


def od_features(od: np.ndarray, k: int = DEFAULT_WINDOW) -> np.ndarray:
    """
    Per-pixel features of an HxWx3 OD array: the OD itself, then the mean and
    standard deviation of each channel over the k x k neighborhood
    (reflect-padded). Returns HxWx9 in FEATURE_NAMES order.
    """
    _check_window(k)
    od = np.asarray(od, dtype=np.float64)
    if od.ndim != 3 or od.shape[2] != 3:
        raise ValueError(f"OD array must be HxWx3, got shape {od.shape}")
    size = (k, k, 1)
    mean = uniform_filter(od, size=size, mode="reflect")
    mean_sq = uniform_filter(od * od, size=size, mode="reflect")
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    return np.concatenate([od, mean, std], axis=2)


def extract_features(he: RgbImage, k: int = DEFAULT_WINDOW, i0: int = DEFAULT_ILLUMINANT) -> np.ndarray:
    return od_features(rgb_to_od(he, i0).data, k)


def check_model(model: LinearSaffronModel) -> None:
    if tuple(model.features) != FEATURE_NAMES:
        raise FeatureSpecError(
            f"feature-spec mismatch: model features {list(model.features)}, expected {list(FEATURE_NAMES)}"
        )
    if model.window < 1 or model.window % 2 == 0:
        raise FeatureSpecError(f"feature-spec mismatch: window {model.window} is not odd")


def apply_model(model: LinearSaffronModel, features: np.ndarray) -> np.ndarray:
    """Dot product plus bias, negatives clamped to zero; no upper clamp"""
    raw = features @ model.weights + model.bias
    return np.maximum(raw, 0.0)


class LinearSaffronPredictor(ISaffronPredictor):
    """Pixel-wise linear Saffron predictor over local OD statistics"""

    def __init__(self, model: LinearSaffronModel, illuminant: int = DEFAULT_ILLUMINANT):
        check_model(model)
        self.model = model
        self.illuminant = illuminant

    def predict(self, he: RgbImage) -> ConcentrationMap:
        features = extract_features(he, self.model.window, self.illuminant)
        return ConcentrationMap(apply_model(self.model, features))

    def get_model_info(self) -> Dict[str, Any]:
        return {
            "name": "Linear baseline",
            "id": "linear",
            "window": self.model.window,
            "features": list(self.model.features),
        }


class ZeroSaffronPredictor(ISaffronPredictor):
    """Predicts no Saffron anywhere; reconstruction then re-renders the HE tile"""

    def predict(self, he: RgbImage) -> ConcentrationMap:
        return ConcentrationMap(np.zeros(he.shape))

    def get_model_info(self) -> Dict[str, Any]:
        return {"name": "Zero Saffron", "id": "zero"}
