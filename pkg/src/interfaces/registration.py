from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List

from src.core.affine import AffineTransform
from src.core.imaging import RgbImage


@dataclass
class RegistrationResult:
    transform: AffineTransform
    score: float
    converged: bool
    ssd_trace: List[List[float]] = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        self.score = float(min(1.0, max(-1.0, self.score)))


class IRegistrar(ABC):
    """Abstract interface for restained pair registration"""

    @abstractmethod
    def register(self, fixed: RgbImage, moving: RgbImage) -> RegistrationResult:
        """Estimate the transform mapping moving coordinates into fixed coordinates"""
        pass
