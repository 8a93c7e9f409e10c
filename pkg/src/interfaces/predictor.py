from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.imaging import ConcentrationMap, RgbImage

FEATURE_NAMES: Tuple[str, ...] = (
    "od_r", "od_g", "od_b",
    "mean_r", "mean_g", "mean_b",
    "std_r", "std_g", "std_b",
)


@dataclass(frozen=True)
class ClassWeights:
    w_saffron: float
    w_background: float

    def __post_init__(self):
        if self.w_saffron <= 0 or self.w_background <= 0:
            raise ValueError("Class weights must be positive")

    def scaled(self, factor: float) -> "ClassWeights":
        return ClassWeights(self.w_saffron * factor, self.w_background * factor)


@dataclass(frozen=True)
class LinearSaffronModel:
    """Per-feature weights followed by the bias"""

    coefficients: np.ndarray
    window: int = 9
    features: Tuple[str, ...] = FEATURE_NAMES
    class_weights: Optional[ClassWeights] = None

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if coefficients.shape[0] != len(self.features) + 1:
            raise ValueError(
                f"Expected {len(self.features) + 1} coefficients, got {coefficients.shape[0]}"
            )
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def weights(self) -> np.ndarray:
        return self.coefficients[:-1]

    @property
    def bias(self) -> float:
        return float(self.coefficients[-1])


class ISaffronPredictor(ABC):
    """Abstract interface for Saffron-from-HE predictors"""

    @abstractmethod
    def predict(self, he: RgbImage) -> ConcentrationMap:
        """Predict a single-stain, non-negative Saffron map with the input's dimensions"""
        pass

    @abstractmethod
    def get_model_info(self) -> Dict[str, Any]:
        """Get information about the predictor"""
        pass


class ISaffronPredictorFactory(ABC):
    """Abstract interface for predictor factories"""

    @abstractmethod
    def create_predictor(self, model: Optional[LinearSaffronModel]) -> ISaffronPredictor:
        """Create a predictor instance"""
        pass

    @abstractmethod
    def get_predictor_info(self) -> Dict[str, Any]:
        """Get information about this predictor type"""
        pass

    @abstractmethod
    def is_available(self, model: Optional[LinearSaffronModel]) -> bool:
        """Check if this predictor can be built from the given model"""
        pass


class IPredictorRegistry(ABC):
    """Abstract interface for predictor registry"""

    @abstractmethod
    def register_predictor(
        self, name: str, factory: ISaffronPredictorFactory, priority: int = 0
    ) -> None:
        """Register a predictor factory with priority (higher = preferred)"""
        pass

    @abstractmethod
    def create_best_predictor(
        self, model: Optional[LinearSaffronModel]
    ) -> ISaffronPredictor:
        """Create the best available predictor based on priority and availability"""
        pass

    @abstractmethod
    def create_predictor_by_name(
        self, name: str, model: Optional[LinearSaffronModel]
    ) -> ISaffronPredictor:
        """Create a specific predictor by name"""
        pass

    @abstractmethod
    def get_available_predictors(
        self, model: Optional[LinearSaffronModel]
    ) -> List[Dict[str, Any]]:
        """Get list of predictors with their info and availability"""
        pass
