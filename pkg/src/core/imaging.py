"""
Image containers and optical-density transforms shared by every module.

Arrays are stored row-major as numpy arrays: RGB tiles as (H, W, 3) uint8,
optical densities and concentrations as (H, W, C) float64.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DimensionMismatchError

DEFAULT_ILLUMINANT = 255
DEFAULT_TISSUE_THRESHOLD = 0.15

HEMATOXYLIN = "Hematoxylin"
EOSIN = "Eosin"
SAFFRON = "Saffron"
CANONICAL_LABELS: Tuple[str, ...] = (HEMATOXYLIN, EOSIN, SAFFRON)


@dataclass(frozen=True)
class RgbImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"RGB image must be HxWx3, got shape {data.shape}")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise ValueError("RGB intensities must lie in [0, 255]")
            data = data.astype(np.uint8)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True)
class OdImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"OD image must be HxWxC, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("OD values must be finite")
        if np.any(data < 0):
            raise ValueError("OD values must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2:
            raise ValueError(f"Mask must be HxW, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def full(cls, shape: Tuple[int, int]) -> "BinaryMask":
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class ConcentrationMap:
    """Per-pixel stain densities; `scale` holds the p99 divisor per stain (1.0 if unnormalized)"""

    data: np.ndarray
    scale: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"Concentration map must be HxWxR, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("Concentrations must be finite")
        if np.any(data < 0):
            raise ValueError("Concentrations must be non-negative")
        # held at float32 precision, the precision of the on-disk format
        data = data.astype(np.float32).astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("Concentrations must be representable as float32")
        scale = self.scale
        if scale is None:
            scale = np.ones(data.shape[2])
        scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        if scale.shape != (data.shape[2],):
            raise ValueError(
                f"Expected {data.shape[2]} scale values, got {scale.shape[0]}"
            )
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("Scale values must be positive and finite")
        scale = scale.astype(np.float32).astype(np.float64)
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("Scale values must be representable as float32")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale", scale)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def stains(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def channel(self, index: int) -> "ConcentrationMap":
        return ConcentrationMap(
            self.data[:, :, index : index + 1].copy(), self.scale[index : index + 1]
        )

    def values(self) -> np.ndarray:
        """Single-stain data as an HxW array"""
        if self.stains != 1:
            raise ValueError(f"Expected a single-stain map, got {self.stains} stains")
        return self.data[:, :, 0]

    def with_scale(self, scale) -> "ConcentrationMap":
        return ConcentrationMap(self.data, scale)

    def denormalized(self) -> "ConcentrationMap":
        return ConcentrationMap(self.data * self.scale[None, None, :])


@dataclass(frozen=True)
class StainMatrix:
    """Column-normalized non-negative 3xr stain matrix with stain labels"""

    matrix: np.ndarray
    labels: Tuple[str, ...]
    illuminant: int = DEFAULT_ILLUMINANT
    p99: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        if matrix.ndim != 2 or matrix.shape[0] != 3:
            raise ValueError(f"Stain matrix must be 3xr, got shape {matrix.shape}")
        r = matrix.shape[1]
        if r not in (1, 2, 3):
            raise ValueError(f"Stain count must be 1, 2 or 3, got {r}")
        if np.any(matrix < 0):
            raise ValueError("Stain matrix entries must be non-negative")
        norms = np.linalg.norm(matrix, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"Stain matrix columns must have unit norm, got {norms}")
        labels = tuple(self.labels)
        if len(labels) != r:
            raise ValueError(f"Expected {r} labels, got {len(labels)}")
        if not 1 <= int(self.illuminant) <= 255:
            raise ValueError(f"Illuminant must lie in [1, 255], got {self.illuminant}")
        p99 = self.p99
        if p99 is not None:
            p99 = np.atleast_1d(np.asarray(p99, dtype=np.float64))
            if p99.shape != (r,):
                raise ValueError(f"Expected {r} p99 values, got {p99.shape[0]}")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "illuminant", int(self.illuminant))
        object.__setattr__(self, "p99", p99)

    @classmethod
    def from_vectors(
        cls,
        vectors: Sequence[Sequence[float]],
        labels: Sequence[str],
        illuminant: int = DEFAULT_ILLUMINANT,
    ) -> "StainMatrix":
        """Build from raw (unnormalized) OD vectors, one per stain"""
        matrix = np.asarray(vectors, dtype=np.float64).T
        return cls(matrix / np.linalg.norm(matrix, axis=0), tuple(labels), illuminant)

    @property
    def stain_count(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, label: str) -> int:
        wanted = label.lower()
        for i, name in enumerate(self.labels):
            if name.lower() == wanted:
                return i
        raise KeyError(label)

    def has_label(self, label: str) -> bool:
        try:
            self.index_of(label)
            return True
        except KeyError:
            return False

    def select(self, *labels: str) -> "StainMatrix":
        indices = [self.index_of(label) for label in labels]
        return StainMatrix(
            self.matrix[:, indices],
            tuple(self.labels[i] for i in indices),
            self.illuminant,
            None if self.p99 is None else self.p99[indices],
        )

    def with_p99(self, p99) -> "StainMatrix":
        return StainMatrix(self.matrix, self.labels, self.illuminant, p99)


def _check_illuminant(i0: int) -> None:
    if not 1 <= int(i0) <= 255:
        raise ValueError(f"Illuminant i0 must lie in [1, 255], got {i0}")


def rgb_to_od(img: RgbImage, i0: int = DEFAULT_ILLUMINANT) -> OdImage:
    """Beer-Lambert optical density; zero intensities are clamped to 1"""
    _check_illuminant(i0)
    intensities = np.maximum(img.data.astype(np.float64), 1.0)
    od = -np.log(intensities / float(i0))
    # intensities brighter than the illuminant carry no stain
    return OdImage(np.maximum(od, 0.0))


def od_to_rgb(od: OdImage, i0: int = DEFAULT_ILLUMINANT) -> RgbImage:
    if od.channels != 3:
        raise ValueError(f"OD image must have 3 channels, got {od.channels}")
    _check_illuminant(i0)
    return RgbImage(od_array_to_rgb(od.data, i0))


def od_array_to_rgb(od: np.ndarray, i0: int = DEFAULT_ILLUMINANT) -> np.ndarray:
    intensities = float(i0) * np.exp(-od)
    # round half up
    return np.clip(np.floor(intensities + 0.5), 0, 255).astype(np.uint8)


def tissue_mask(od: OdImage, threshold: float = DEFAULT_TISSUE_THRESHOLD) -> BinaryMask:
    if threshold < 0:
        raise ValueError(f"Tissue threshold must be non-negative, got {threshold}")
    return BinaryMask(od.data.mean(axis=2) > threshold)


def to_gray_od(img: RgbImage, i0: int = DEFAULT_ILLUMINANT) -> np.ndarray:
    """Mean optical density per pixel as an HxW array"""
    return rgb_to_od(img, i0).data.mean(axis=2)


def check_same_shape(*shapes: Tuple[int, int]) -> None:
    first = tuple(shapes[0])
    for other in shapes[1:]:
        if tuple(other) != first:
            raise DimensionMismatchError(f"Dimension mismatch: {first} vs {tuple(other)}")
