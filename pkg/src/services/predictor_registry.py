import logging
from typing import Any, Dict, List, Optional, Tuple

from src.interfaces.predictor import (
    IPredictorRegistry,
    ISaffronPredictor,
    ISaffronPredictorFactory,
    LinearSaffronModel,
)

logger = logging.getLogger(__name__)


class PredictorRegistry(IPredictorRegistry):
    """Registry for Saffron predictor factories with priority-based selection"""

    def __init__(self):
        self._predictors: Dict[str, Tuple[ISaffronPredictorFactory, int]] = {}

    def register_predictor(
        self, name: str, factory: ISaffronPredictorFactory, priority: int = 0
    ) -> None:
        """Register a predictor factory with priority (higher = preferred)"""
        if not isinstance(factory, ISaffronPredictorFactory):
            raise ValueError("Factory must implement ISaffronPredictorFactory interface")

        self._predictors[name] = (factory, priority)
        logger.debug("Registered predictor: %s (priority: %d)", name, priority)

    def _by_priority(self) -> List[Tuple[str, Tuple[ISaffronPredictorFactory, int]]]:
        # stable sort keeps registration order among equal priorities
        return sorted(self._predictors.items(), key=lambda x: x[1][1], reverse=True)

    def create_best_predictor(self, model: Optional[LinearSaffronModel]) -> ISaffronPredictor:
        """
        Create the best available predictor based on priority and availability.

        A supplied model that the selected factory rejects (feature-spec
        mismatch) raises; it never falls through to a lower priority.
        """
        if not self._predictors:
            raise RuntimeError("No predictors registered")

        for name, (factory, priority) in self._by_priority():
            try:
                available = factory.is_available(model)
            except Exception as e:
                logger.warning("Failed to check predictor %s: %s", name, e)
                continue
            if available:
                logger.info("Selected predictor: %s (priority: %d)", name, priority)
                return factory.create_predictor(model)
            logger.debug("Predictor %s not available", name)

        raise RuntimeError("No predictors are available")

    def create_predictor_by_name(
        self, name: str, model: Optional[LinearSaffronModel]
    ) -> ISaffronPredictor:
        """Create a specific predictor by name"""
        if name not in self._predictors:
            available = list(self._predictors.keys())
            raise ValueError(f"Predictor '{name}' not registered. Available: {available}")

        factory, _ = self._predictors[name]
        if not factory.is_available(model):
            raise RuntimeError(f"Predictor '{name}' is not available with the given model")
        return factory.create_predictor(model)

    def get_available_predictors(
        self, model: Optional[LinearSaffronModel]
    ) -> List[Dict[str, Any]]:
        """Get list of predictors with their info and availability"""
        predictors = []
        for name, (factory, priority) in self._predictors.items():
            info = factory.get_predictor_info().copy()
            info.update({"available": factory.is_available(model), "priority": priority})
            predictors.append(info)

        predictors.sort(key=lambda x: x.get("priority", 0), reverse=True)
        return predictors

    def get_registered_predictors(self) -> List[str]:
        return list(self._predictors.keys())

    def unregister_predictor(self, name: str) -> bool:
        if name in self._predictors:
            del self._predictors[name]
            logger.debug("Unregistered predictor: %s", name)
            return True
        return False
