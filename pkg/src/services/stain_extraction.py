"""
Slide-level stain estimation and Saffron ground-truth extraction.

One stain matrix is estimated per slide from tissue pixels sampled across a
set of tiles; concentrations are then solved per tile and normalized by the
99th-percentile pseudo maximum.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from src.core.errors import EmptyRegionError, NoSaffronColumnError, NoTissueError
from src.core.imaging import (
    DEFAULT_TISSUE_THRESHOLD,
    SAFFRON,
    BinaryMask,
    ConcentrationMap,
    OdImage,
    RgbImage,
    StainMatrix,
    check_same_shape,
    rgb_to_od,
    tissue_mask,
)
from src.engines.snmf_estimator import SnmfStainEstimator
from src.engines.solvers import MODE_PINV, create_solver
from src.interfaces.stain_estimation import PixelSample, SnmfConfig, StainEstimate

logger = logging.getLogger(__name__)

P99 = 99.0


def sample_tissue_pixels(
    tiles: Sequence[RgbImage],
    mask_threshold: float = DEFAULT_TISSUE_THRESHOLD,
    n_target: int = 100_000,
    seed: int = 0,
    i0: int = 255,
    tile_ids: Optional[Sequence[str]] = None,
) -> PixelSample:
    """Seeded uniform draw of up to n_target tissue OD vectors across tiles"""
    vectors: List[np.ndarray] = []
    sources: List[np.ndarray] = []
    for index, tile in enumerate(tiles):
        od = rgb_to_od(tile, i0)
        mask = tissue_mask(od, mask_threshold)
        tissue = od.data[mask.data]
        vectors.append(tissue)
        sources.append(np.full(tissue.shape[0], index, dtype=np.int64))

    total = sum(v.shape[0] for v in vectors)
    if total == 0:
        raise NoTissueError("no tissue found: every pixel is background")

    pool = np.concatenate(vectors)
    source = np.concatenate(sources)
    rng = np.random.default_rng(seed)
    count = min(n_target, total)
    chosen = np.sort(rng.choice(total, size=count, replace=False))
    logger.info("Sampled %d of %d tissue pixels from %d tiles", count, total, len(tiles))
    ids = tuple(tile_ids) if tile_ids is not None else tuple(str(i) for i in range(len(tiles)))
    return PixelSample(pool[chosen], source[chosen], ids)


def estimate_stain_matrix(sample: PixelSample, cfg: SnmfConfig) -> StainEstimate:
    return SnmfStainEstimator(cfg).estimate(sample)


def solve_concentrations(od: OdImage, w: StainMatrix, mode: str = MODE_PINV) -> ConcentrationMap:
    return create_solver(mode).solve(od, w)


def percentile_scale(values: np.ndarray) -> float:
    """99th-percentile order statistic; 1.0 when it is zero"""
    if values.size == 0:
        raise EmptyRegionError("empty mask: no pixels to normalize over")
    scale = float(np.percentile(values, P99, method="higher"))
    return scale if scale > 0 else 1.0


def slide_p99_scale(
    cmaps: Sequence[ConcentrationMap], masks: Sequence[BinaryMask]
) -> np.ndarray:
    """Per-stain p99 over the union of tissue pixels of every tile of a slide"""
    if not cmaps:
        raise EmptyRegionError("empty slide: no tiles to normalize over")
    stains = cmaps[0].stains
    pooled = [
        np.concatenate([c.data[:, :, s][m.data] for c, m in zip(cmaps, masks)])
        for s in range(stains)
    ]
    return np.array([percentile_scale(values) for values in pooled])


def normalize_p99(
    cmap: ConcentrationMap, mask: BinaryMask, scale: Optional[np.ndarray] = None
) -> ConcentrationMap:
    """Divide each stain by its p99 over mask pixels (or by a precomputed slide scale)"""
    check_same_shape(cmap.shape, mask.shape)
    if mask.count == 0:
        raise EmptyRegionError("empty mask: no pixels to normalize over")
    if scale is None:
        scale = np.array(
            [percentile_scale(cmap.data[:, :, s][mask.data]) for s in range(cmap.stains)]
        )
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
    return ConcentrationMap(cmap.data / scale[None, None, :], scale)


def extract_saffron(
    hes: RgbImage,
    w_hes: StainMatrix,
    mask: Optional[BinaryMask] = None,
    mode: str = MODE_PINV,
    scale: Optional[float] = None,
) -> ConcentrationMap:
    """Normalized Saffron channel of an HES tile"""
    if not w_hes.has_label(SAFFRON):
        raise NoSaffronColumnError(f"no saffron column among stain labels {w_hes.labels}")
    od = rgb_to_od(hes, w_hes.illuminant)
    if mask is None:
        mask = tissue_mask(od)
    check_same_shape(od.shape, mask.shape)
    if mask.count == 0:
        logger.warning("Tissue mask is empty; normalizing over every pixel")
        mask = BinaryMask.full(od.shape)

    concentrations = solve_concentrations(od, w_hes, mode)
    saffron = concentrations.channel(w_hes.index_of(SAFFRON))
    return normalize_p99(saffron, mask, None if scale is None else [scale])
