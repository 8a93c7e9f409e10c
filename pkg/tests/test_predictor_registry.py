import numpy as np
import pytest

from src.core.errors import FeatureSpecError
from src.engines.linear_predictor import LinearSaffronPredictor, ZeroSaffronPredictor
from src.engines.predictor_factories import LinearPredictorFactory, ZeroPredictorFactory
from src.interfaces.predictor import FEATURE_NAMES, LinearSaffronModel
from src.services.predictor_registry import PredictorRegistry


@pytest.fixture
def model():
    return LinearSaffronModel(np.zeros(len(FEATURE_NAMES) + 1))


@pytest.fixture
def registry():
    registry = PredictorRegistry()
    registry.register_predictor("linear", LinearPredictorFactory(), priority=100)
    registry.register_predictor("zero", ZeroPredictorFactory(), priority=10)
    return registry


def test_best_predictor_uses_the_model(registry, model):
    assert isinstance(registry.create_best_predictor(model), LinearSaffronPredictor)


def test_falls_back_without_a_model(registry):
    assert isinstance(registry.create_best_predictor(None), ZeroSaffronPredictor)


def test_invalid_model_raises_instead_of_falling_back(registry):
    broken = LinearSaffronModel(np.zeros(len(FEATURE_NAMES) + 1), window=2)
    with pytest.raises(FeatureSpecError, match="feature-spec mismatch"):
        registry.create_best_predictor(broken)


def test_linear_factory_carries_the_illuminant(model):
    predictor = LinearPredictorFactory(illuminant=240).create_predictor(model)
    assert predictor.illuminant == 240


def test_by_name(registry, model):
    assert isinstance(registry.create_predictor_by_name("zero", model), ZeroSaffronPredictor)
    with pytest.raises(ValueError, match="not registered"):
        registry.create_predictor_by_name("unet", model)
    with pytest.raises(RuntimeError, match="not available"):
        registry.create_predictor_by_name("linear", None)


def test_available_predictors_sorted_by_priority(registry):
    predictors = registry.get_available_predictors(None)
    assert [p["id"] for p in predictors] == ["linear", "zero"]
    assert [p["available"] for p in predictors] == [False, True]


def test_empty_registry():
    with pytest.raises(RuntimeError, match="No predictors registered"):
        PredictorRegistry().create_best_predictor(None)


def test_nothing_available(model):
    registry = PredictorRegistry()
    registry.register_predictor("linear", LinearPredictorFactory())
    with pytest.raises(RuntimeError, match="No predictors are available"):
        registry.create_best_predictor(None)


def test_register_rejects_non_factories():
    with pytest.raises(ValueError):
        PredictorRegistry().register_predictor("bad", object())


def test_unregister(registry):
    assert registry.unregister_predictor("zero")
    assert not registry.unregister_predictor("zero")
    assert registry.get_registered_predictors() == ["linear"]


def test_linear_factory_needs_a_model():
    factory = LinearPredictorFactory()
    assert not factory.is_available(None)
    with pytest.raises(ValueError):
        factory.create_predictor(None)
    assert factory.get_predictor_info()["requires_model"]
