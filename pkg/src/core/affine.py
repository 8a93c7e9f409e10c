from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

DETERMINANT_BOUNDS = (0.5, 2.0)


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix [a b tx; c d ty] mapping moving (x, y, 1) into fixed coordinates (pixels)"""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape == (3, 3):
            matrix = matrix[:2]
        if matrix.shape != (2, 3):
            raise ValueError(f"Affine matrix must be 2x3, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("Affine coefficients must be finite")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3)[:2])

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    @classmethod
    def rotation(
        cls, degrees: float, center: Tuple[float, float] = (0.0, 0.0), scale: float = 1.0
    ) -> "AffineTransform":
        """Rotation (and isotropic scaling) about `center` given as (x, y)"""
        theta = np.deg2rad(degrees)
        cos, sin = scale * np.cos(theta), scale * np.sin(theta)
        linear = np.array([[cos, -sin], [sin, cos]])
        cx, cy = center
        offset = np.array([cx, cy]) - linear @ np.array([cx, cy])
        return cls(np.column_stack([linear, offset]))

    @classmethod
    def from_coefficients(cls, coefficients: Sequence[float]) -> "AffineTransform":
        """Coefficients ordered a, b, tx, c, d, ty"""
        values = [float(v) for v in coefficients]
        if len(values) != 6:
            raise ValueError(f"Expected 6 affine coefficients, got {len(values)}")
        return cls(np.array(values).reshape(2, 3))

    def coefficients(self) -> Tuple[float, ...]:
        return tuple(float(v) for v in self.matrix.reshape(-1))

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    def determinant(self) -> float:
        return float(np.linalg.det(self.linear))

    def is_plausible(self) -> bool:
        low, high = DETERMINANT_BOUNDS
        return low <= self.determinant() <= high

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(3)[:2]))

    def compose(self, first: "AffineTransform") -> "AffineTransform":
        """Transform applying `first` then self"""
        return AffineTransform(self.homogeneous() @ first.homogeneous())

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.homogeneous()))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map Nx2 (x, y) points"""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return points @ self.linear.T + self.offset


def image_corners(shape: Tuple[int, int]) -> np.ndarray:
    height, width = shape
    return np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [0.0, height - 1.0], [width - 1.0, height - 1.0]]
    )


def corner_error(
    estimated: AffineTransform, reference: AffineTransform, shape: Tuple[int, int]
) -> float:
    """Mean displacement (pixels) between two transforms over the image corners"""
    corners = image_corners(shape)
    return float(
        np.mean(np.linalg.norm(estimated.apply(corners) - reference.apply(corners), axis=1))
    )
