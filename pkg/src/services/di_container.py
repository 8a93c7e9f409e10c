import logging
from typing import Optional

from src.data.file_artifact_store import FileArtifactStore
from src.data.memory_artifact_store import MemoryArtifactStore
from src.engines.predictor_factories import LinearPredictorFactory, ZeroPredictorFactory
from src.engines.solvers import create_solver
from src.interfaces.artifact_store import IArtifactStore
from src.interfaces.predictor import IPredictorRegistry, ISaffronPredictor, LinearSaffronModel
from src.interfaces.registration import IRegistrar
from src.interfaces.settings import ISettingsManager
from src.interfaces.stain_estimation import IConcentrationSolver
from src.services.pipeline_service import PipelineService
from src.services.predictor_registry import PredictorRegistry
from src.services.registration import PatchRegistrar
from src.services.settings_manager import SettingsManager

logger = logging.getLogger(__name__)


class DIContainer:
    """Dependency Injection Container for managing application dependencies"""

    def __init__(self):
        # Singletons
        self._settings_manager: Optional[ISettingsManager] = None
        self._artifact_store: Optional[IArtifactStore] = None
        self._predictor_registry: Optional[IPredictorRegistry] = None
        self._registrar: Optional[IRegistrar] = None
        self._pipeline_service: Optional[PipelineService] = None

        # Configuration flags
        self._use_memory_store = False

    def configure_for_testing(self, use_memory_store: bool = True):
        """Configure container to keep artifacts in memory"""
        self._use_memory_store = use_memory_store

    def get_settings_manager(self) -> ISettingsManager:
        """Get settings manager singleton"""
        if self._settings_manager is None:
            self._settings_manager = SettingsManager()
        return self._settings_manager

    def get_artifact_store(self) -> IArtifactStore:
        """Get artifact store (in-memory or file-backed based on configuration)"""
        if self._artifact_store is None:
            if self._use_memory_store:
                logger.debug("Using in-memory artifact store")
                self._artifact_store = MemoryArtifactStore()
            else:
                self._artifact_store = FileArtifactStore()
        return self._artifact_store

    def get_predictor_registry(self) -> IPredictorRegistry:
        """Get predictor registry singleton with registered predictors"""
        if self._predictor_registry is None:
            self._predictor_registry = PredictorRegistry()
            self._register_predictors()
        return self._predictor_registry

    def _register_predictors(self):
        """Register all predictors with priorities (higher = preferred)"""
        registry = self._predictor_registry
        illuminant = int(self.get_settings_manager().get("illuminant"))
        registry.register_predictor(
            name="linear", factory=LinearPredictorFactory(illuminant), priority=100
        )
        # always available, predicts no Saffron
        registry.register_predictor(name="zero", factory=ZeroPredictorFactory(), priority=10)

    def get_predictor(self, model: Optional[LinearSaffronModel]) -> ISaffronPredictor:
        """Get the best available predictor for a model"""
        return self.get_predictor_registry().create_best_predictor(model)

    def get_registrar(self) -> IRegistrar:
        if self._registrar is None:
            s = self.get_settings_manager()
            self._registrar = PatchRegistrar(
                angle_range=float(s.get("angle_range")),
                angle_step=float(s.get("angle_step")),
                levels=int(s.get("pyramid_levels")),
                max_iters=int(s.get("affine_max_iters")),
                illuminant=int(s.get("illuminant")),
            )
        return self._registrar

    def get_solver(self) -> IConcentrationSolver:
        return create_solver(self.get_settings_manager().get("solver_mode"))

    def get_pipeline_service(self) -> PipelineService:
        """Get pipeline service with all dependencies injected"""
        if self._pipeline_service is None:
            self._pipeline_service = PipelineService(
                settings=self.get_settings_manager(),
                store=self.get_artifact_store(),
                predictor_registry=self.get_predictor_registry(),
                registrar=self.get_registrar(),
            )
        return self._pipeline_service

    def reset(self):
        """Reset all singletons (useful for testing)"""
        self._settings_manager = None
        self._artifact_store = None
        self._predictor_registry = None
        self._registrar = None
        self._pipeline_service = None
        logger.debug("DI Container reset")
