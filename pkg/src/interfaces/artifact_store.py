from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

from src.core.affine import AffineTransform
from src.core.imaging import ConcentrationMap, RgbImage, StainMatrix
from src.interfaces.predictor import LinearSaffronModel


@dataclass
class PairRecord:
    he_path: str
    hes_path: str
    transform: AffineTransform = field(default_factory=AffineTransform.identity)
    split: str = "train"
    score: Optional[float] = None
    converged: Optional[bool] = None


@dataclass
class PredictionRecord:
    pred_path: str
    gt_path: str


class IArtifactStore(ABC):
    """Abstract interface for reading and writing pipeline artifacts"""

    @abstractmethod
    def read_rgb(self, path: str) -> RgbImage:
        """Read an 8-bit RGB tile (PNG or TIFF)"""
        pass

    @abstractmethod
    def write_rgb(self, path: str, img: RgbImage) -> None:
        """Write an RGB tile atomically"""
        pass

    @abstractmethod
    def read_cmap(self, path: str) -> ConcentrationMap:
        """Read a CMAP concentration map"""
        pass

    @abstractmethod
    def write_cmap(self, path: str, cmap: ConcentrationMap) -> None:
        """Write a CMAP concentration map atomically"""
        pass

    @abstractmethod
    def read_stain_matrix(self, path: str) -> StainMatrix:
        """Read a stain-matrix document"""
        pass

    @abstractmethod
    def write_stain_matrix(self, path: str, matrix: StainMatrix) -> None:
        """Write a stain-matrix document atomically"""
        pass

    @abstractmethod
    def read_model(self, path: str) -> LinearSaffronModel:
        """Read a baseline model document"""
        pass

    @abstractmethod
    def write_model(self, path: str, model: LinearSaffronModel) -> None:
        """Write a baseline model document atomically"""
        pass

    @abstractmethod
    def read_pairs(self, path: str) -> List[PairRecord]:
        """Read a pair manifest"""
        pass

    @abstractmethod
    def write_pairs(self, path: str, records: List[PairRecord]) -> None:
        """Write a pair manifest atomically"""
        pass

    @abstractmethod
    def read_predictions(self, path: str) -> List[PredictionRecord]:
        """Read a prediction manifest"""
        pass

    @abstractmethod
    def write_predictions(self, path: str, records: List[PredictionRecord]) -> None:
        """Write a prediction manifest atomically"""
        pass

    @abstractmethod
    def write_text(self, path: str, text: str) -> None:
        """Write a text document atomically"""
        pass

    @abstractmethod
    def exists(self, path: str) -> bool:
        """Check whether an artifact exists"""
        pass
