"""
Virtual HES reconstruction from an HE tile and a predicted Saffron map.

The HE tile is deconvolved with its two-stain matrix, Eosin is zeroed where
the predicted Saffron dominates it, and the image is re-rendered through the
concatenated [W_HE, W_S] matrix.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.imaging import (
    EOSIN,
    HEMATOXYLIN,
    SAFFRON,
    ConcentrationMap,
    RgbImage,
    StainMatrix,
    check_same_shape,
    od_array_to_rgb,
    rgb_to_od,
)
from src.engines.solvers import MODE_PINV, create_solver

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class ReconstructionConfig:
    w_he: StainMatrix
    w_s: StainMatrix
    epsilon: float = DEFAULT_EPSILON
    # compare H_E / saffron scale against the normalized prediction
    compare_normalized: bool = True
    saffron_scale: Optional[float] = None
    solver_mode: str = MODE_PINV

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.w_he.stain_count != 2:
            raise ValueError("w_he must hold exactly the Hematoxylin and Eosin columns")
        self.w_he.index_of(HEMATOXYLIN)
        self.w_he.index_of(EOSIN)
        if self.w_s.stain_count != 1:
            raise ValueError("w_s must hold a single Saffron column")
        if self.saffron_scale is not None and self.saffron_scale <= 0:
            raise ValueError(f"saffron_scale must be positive, got {self.saffron_scale}")

    @classmethod
    def from_matrices(
        cls, w_he: StainMatrix, w_hes: StainMatrix, **kwargs
    ) -> "ReconstructionConfig":
        """Pick H/E from the HE matrix and the Saffron column of any HES matrix"""
        return cls(w_he=w_he.select(HEMATOXYLIN, EOSIN), w_s=w_hes.select(SAFFRON), **kwargs)


def suppression_mask(h_e: np.ndarray, h_s_hat: np.ndarray, epsilon: float) -> np.ndarray:
    return h_s_hat > h_e + epsilon


def suppress_eosin(
    h_e: ConcentrationMap, h_s_hat: ConcentrationMap, epsilon: float = DEFAULT_EPSILON
) -> ConcentrationMap:
    """Zero Eosin wherever the Saffron estimate exceeds it by more than epsilon"""
    check_same_shape(h_e.shape, h_s_hat.shape)
    eosin = h_e.values()
    suppressed = np.where(suppression_mask(eosin, h_s_hat.values(), epsilon), 0.0, eosin)
    return ConcentrationMap(suppressed, h_e.scale)


def deconvolve_he(he: RgbImage, w_he: StainMatrix, mode: str = MODE_PINV) -> ConcentrationMap:
    od = rgb_to_od(he, w_he.illuminant)
    return create_solver(mode).solve(od, w_he)


def rerender_he(he: RgbImage, w_he: StainMatrix, mode: str = MODE_PINV) -> RgbImage:
    """Two-stain re-rendering of an HE tile through its own deconvolution"""
    h = deconvolve_he(he, w_he, mode)
    od = h.data @ w_he.matrix.T
    return RgbImage(od_array_to_rgb(od, w_he.illuminant))


def reconstruct_hes(
    he: RgbImage, h_s_hat: ConcentrationMap, cfg: ReconstructionConfig
) -> RgbImage:
    check_same_shape(he.shape, h_s_hat.shape)
    saffron_hat = h_s_hat.values()
    saffron_scale = (
        cfg.saffron_scale if cfg.saffron_scale is not None else float(h_s_hat.scale[0])
    )

    h = deconvolve_he(he, cfg.w_he, cfg.solver_mode).data.copy()
    e = cfg.w_he.index_of(EOSIN)
    eosin = h[:, :, e]
    eosin_cmp = eosin / saffron_scale if cfg.compare_normalized else eosin
    suppressed = suppression_mask(eosin_cmp, saffron_hat, cfg.epsilon)
    h[:, :, e] = np.where(suppressed, 0.0, eosin)
    logger.debug("Eosin suppressed on %d of %d pixels", int(suppressed.sum()), suppressed.size)

    od = h @ cfg.w_he.matrix.T
    od = od + (saffron_hat * saffron_scale)[:, :, None] * cfg.w_s.matrix[:, 0]
    return RgbImage(od_array_to_rgb(od, cfg.w_he.illuminant))
