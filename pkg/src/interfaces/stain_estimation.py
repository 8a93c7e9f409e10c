from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.core.imaging import CANONICAL_LABELS, ConcentrationMap, OdImage, StainMatrix

INIT_REFERENCE = "reference"
INIT_RANDOM = "random"


@dataclass(frozen=True)
class SnmfConfig:
    sparsity_lambda: float = 0.1
    max_iters: int = 200
    tol: float = 1e-5
    init: str = INIT_REFERENCE
    seed: int = 0
    stain_count: int = 3
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.sparsity_lambda < 0:
            raise ValueError(f"sparsity_lambda must be >= 0, got {self.sparsity_lambda}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.init not in (INIT_REFERENCE, INIT_RANDOM):
            raise ValueError(f"init must be 'reference' or 'random', got {self.init!r}")
        if self.stain_count not in (1, 2, 3):
            raise ValueError(f"stain_count must be 1, 2 or 3, got {self.stain_count}")
        if self.labels is not None and len(self.labels) != self.stain_count:
            raise ValueError("labels must name every stain")

    def resolved_labels(self) -> Tuple[str, ...]:
        if self.labels is not None:
            return tuple(self.labels)
        return CANONICAL_LABELS[: self.stain_count]


@dataclass(frozen=True)
class PixelSample:
    od_vectors: np.ndarray
    source: np.ndarray
    tile_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        vectors = np.asarray(self.od_vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != 3:
            raise ValueError(f"OD sample must be nx3, got shape {vectors.shape}")
        if np.any(vectors < 0):
            raise ValueError("OD sample entries must be non-negative")
        object.__setattr__(self, "od_vectors", vectors)
        object.__setattr__(self, "source", np.asarray(self.source, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.od_vectors.shape[0]


@dataclass
class StainEstimate:
    matrix: StainMatrix
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


class IStainEstimator(ABC):
    """Abstract interface for stain matrix estimation"""

    @abstractmethod
    def estimate(self, sample: PixelSample) -> StainEstimate:
        """Estimate a stain matrix from sampled tissue OD vectors"""
        pass


class IConcentrationSolver(ABC):
    """Abstract interface for per-pixel concentration solvers"""

    @abstractmethod
    def solve(self, od: OdImage, w: StainMatrix) -> ConcentrationMap:
        """Solve V = W H for non-negative H"""
        pass

    @abstractmethod
    def get_name(self) -> str:
        """Solver mode name"""
        pass
