from typing import Any, Dict, Optional

from src.core.imaging import DEFAULT_ILLUMINANT
from src.engines.linear_predictor import LinearSaffronPredictor, ZeroSaffronPredictor
from src.interfaces.predictor import (
    ISaffronPredictor,
    ISaffronPredictorFactory,
    LinearSaffronModel,
)


class LinearPredictorFactory(ISaffronPredictorFactory):
    """Factory for the fitted linear baseline"""

    def __init__(self, illuminant: int = DEFAULT_ILLUMINANT):
        self.illuminant = illuminant

    def create_predictor(self, model: Optional[LinearSaffronModel]) -> ISaffronPredictor:
        if model is None:
            raise ValueError("The linear predictor needs a fitted model")
        # raises FeatureSpecError for a model built on other features
        return LinearSaffronPredictor(model, self.illuminant)

    def get_predictor_info(self) -> Dict[str, Any]:
        return {
            "name": "Linear baseline",
            "id": "linear",
            "requires_model": True,
            "illuminant": self.illuminant,
        }

    def is_available(self, model: Optional[LinearSaffronModel]) -> bool:
        return model is not None


class ZeroPredictorFactory(ISaffronPredictorFactory):
    """Factory for the no-Saffron fallback"""

    def create_predictor(self, model: Optional[LinearSaffronModel]) -> ISaffronPredictor:
        return ZeroSaffronPredictor()

    def get_predictor_info(self) -> Dict[str, Any]:
        return {
            "name": "Zero Saffron",
            "id": "zero",
            "requires_model": False,
        }

    def is_available(self, model: Optional[LinearSaffronModel]) -> bool:
        return True
